#pragma once

#include <filesystem>
#include <vector>

namespace diffseg {

/// Per-timestep noise levels for t = 1..T (stored 0-based at index t-1).
struct DiffusionSchedule {
  int steps = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  double beta(int t) const { return betas.at(static_cast<std::size_t>(t - 1)); }
  double alpha(int t) const { return alphas.at(static_cast<std::size_t>(t - 1)); }
  /// Cumulative product up to t; alpha_bar(0) == 1 by convention.
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars.at(static_cast<std::size_t>(t - 1)); }
};

inline constexpr int kDefaultSteps = 1000;
inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;

/// Betas linearly spaced over [beta_start, beta_end], both inclusive.
DiffusionSchedule linear_schedule(int steps = kDefaultSteps, double beta_start = kDefaultBetaStart,
                                  double beta_end = kDefaultBetaEnd);

/// Builds a schedule from explicit betas, each in (0, 1).
DiffusionSchedule schedule_from_betas(std::vector<double> betas);

/// CSV with columns t,beta,alpha,alpha_bar.
void write_schedule_csv(const DiffusionSchedule& schedule, const std::filesystem::path& path);

}  // namespace diffseg
