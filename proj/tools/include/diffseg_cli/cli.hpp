#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace diffseg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitInternal = 4;

/// Runs one command line (without the program name). Never throws; errors are
/// reported on `err` and mapped to the exit codes above.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// $DIFFSEG_OUT when set and non-empty, otherwise "diffseg_out".
std::filesystem::path default_output_root();

/// "lo:hi[:step]" over 0-based step indices, hi inclusive; returns the
/// 1-based timesteps lo+1, lo+1+step, ... Throws ConfigError when the range
/// leaves 0..steps-1.
std::vector<int> parse_t_grid(std::string_view spec, int steps);

/// Smoothing window that covers about 51 of `steps` timesteps on a grid of
/// `points` entries: odd, >= 1, <= points.
int auto_smoothing_window(std::size_t points, int steps);

}  // namespace diffseg::cli
