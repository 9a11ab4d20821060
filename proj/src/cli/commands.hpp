#pragma once

#include <string>
#include <vector>

#include "soat/util/kvconfig.hpp"

namespace soat::cli {

// One CLI11 string option bound to a config key; applied to the KvConfig only
// when the user passed it, so precedence is flag > file > default.
struct KeyedOption {
  std::string flag;
  std::string key;
  std::string value;
  void* handle = nullptr;
};

int cmd_gen_env(const std::vector<std::string>& args);
int cmd_train(const std::vector<std::string>& args);
int cmd_eval(const std::vector<std::string>& args);
int cmd_ablate(const std::vector<std::string>& args);
int cmd_verify(const std::vector<std::string>& args);

// Shared helpers (cli.cpp).
void write_config_echo(const std::string& out_dir, const util::KvConfig& kv);
void consume_run_keys(util::KvConfig& kv);

}  // namespace soat::cli
