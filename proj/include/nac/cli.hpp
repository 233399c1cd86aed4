#pragma once

#include <iosfwd>

namespace nac {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitMissingFile = 2, kExitBadConfig = 3 };

/// Entry point for `nac_cli train|eval|prune|export-graph`.
int run_cli(int argc, char** argv);

}  // namespace nac
