#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace depthprune {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Lines "total ...", "valid ...", "fraction ...%" for a partition.
std::string format_space_report(std::size_t n_layers, std::size_t block_size, std::size_t keep);

/// Runs one command. `args` excludes the program name. Data goes to `out`
/// or to files; every message goes to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace depthprune
