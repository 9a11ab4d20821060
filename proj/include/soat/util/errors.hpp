#pragma once

#include <stdexcept>
#include <string>

namespace soat::util {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad run configuration: unknown keys, invalid flag values, shape/config mismatches
// caught at setup time.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed or missing input files, version mismatches, split violations.
struct DataError : Error {
  using Error::Error;
};

// NaN/Inf encountered, degenerate masks, non-finite losses.
struct NumericError : Error {
  using Error::Error;
};

// Process exit codes used by the CLI.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
  kExitVerifyFailed = 5,
};

}  // namespace soat::util
