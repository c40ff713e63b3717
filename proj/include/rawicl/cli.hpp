#pragma once

#include <iosfwd>

namespace rawicl {

enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitConfig = 2, kExitCompile = 3 };

/// Entry point of the `rawicl` tool: subcommands compile, verify, metrics, probe.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rawicl
