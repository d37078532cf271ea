#pragma once

// Command-line front end. Exit codes: 0 success, 1 usage/config/IO error,
// 3 a run diverged.

#include <iosfwd>
#include <string>
#include <vector>

#include "adacontrast/adapt.hpp"

namespace adacontrast::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitDiverged = 3;

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Report label for a configuration, e.g. "adacontrast", "entropy_min",
// "ablation#2_online".
std::string method_label(const AdaptConfig& config);

}  // namespace adacontrast::cli
