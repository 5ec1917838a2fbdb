// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace icao {

enum ExitCode : int { kExitOk = 0, kExitData = 1, kExitConfig = 2, kExitRuntime = 3 };

struct CommandResult {
  int exit_code = kExitOk;
  std::string summary;
  std::vector<std::filesystem::path> artifacts;
};

/// Runs one icaoctl invocation; args[0] is the program name. Failures are reported on `err` as
/// a single line "error[data|config|runtime]: message".
CommandResult dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace icao
