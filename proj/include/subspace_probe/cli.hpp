#pragma once

#include <string>
#include <vector>

namespace subspace_probe {

/// Process exit codes. Stable across releases.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitDataset = 2,
  kExitProbe = 3,
  kExitIntervene = 4,
  kExitValidate = 5,
};

/// Entry point of the `subspace-probe` tool. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace subspace_probe
