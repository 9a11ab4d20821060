#include <vector>

#include "soat/cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return soat::cli::run(args);
}
