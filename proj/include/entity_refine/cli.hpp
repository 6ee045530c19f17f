#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace entity_refine {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitBackend = 2;
inline constexpr int kExitIo = 3;

/// Subcommands run, eval, synth-bench and viz. `args` excludes the program name.
/// Never throws; failures are reported on `err` and mapped to an exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace entity_refine
