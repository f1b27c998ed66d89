#pragma once

// Command-line front end. Exit codes: 0 ok, 1 I/O or usage failure,
// 2 configuration error, 3 numeric failure.

#include <ostream>
#include <string>
#include <vector>

namespace photon {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

// args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace photon
