#pragma once

#include <ostream>

namespace share {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Entry point of the share_ssm tool. Subcommands: train, eval, ablate, search,
// energy, spectra, neuron. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace share
