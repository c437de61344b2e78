#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace voxwave::cli {

enum ExitCode : int { ok = 0, usage = 1, io = 2, integrity = 3, divergence = 4 };

/// Runs one command line (args[0] is the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace voxwave::cli
