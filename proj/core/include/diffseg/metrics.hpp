#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "diffseg/diffusion.hpp"
#include "diffseg/schedule.hpp"

namespace diffseg {

/// |pred ∩ gt| / |pred ∪ gt| for binary {0,1} masks; 1.0 when both are empty.
double iou(std::span<const double> pred, std::span<const double> gt);

struct CalibrationBin {
  double confidence = 0.0;  // mean confidence of the bin's pixels
  double accuracy = 0.0;
  std::size_t count = 0;
};

struct CalibrationReport {
  double ece = 0.0;
  std::vector<CalibrationBin> bins;
};

inline constexpr int kDefaultEceBins = 10;

/// Expected calibration error. Each pixel's confidence max(p, 1-p) is binned
/// into equal-width bins over [0.5, 1]; the prediction is p >= 0.5. Empty bins
/// contribute nothing.
CalibrationReport ece(std::span<const double> prob, std::span<const double> gt, int bins = kDefaultEceBins);

/// Per-timestep scalar curve.
struct TimestepProfile {
  std::vector<int> t_grid;  // sorted timesteps
  std::vector<double> values;
  int smoothing_window = 1;
  std::string label;

  void validate() const;
};

inline constexpr int kDefaultSmoothingWindow = 51;

/// Centred moving average; the window shrinks symmetrically at the edges.
TimestepProfile smooth(const TimestepProfile& profile, int window);

/// CSV with columns t,value,smoothed_value.
void write_profile_csv(const TimestepProfile& raw, const TimestepProfile& smoothed, const std::filesystem::path& path);
/// Returns (raw, smoothed) read back from write_profile_csv output.
std::pair<TimestepProfile, TimestepProfile> read_profile_csv(const std::filesystem::path& path);

/// Minimum mean-squared error for estimating x0 in {-1,+1} with P(+1) =
/// prior_p from x_t = sqrt(abar) x0 + sqrt(1-abar) eps. Gauss-Legendre
/// quadrature of the posterior-mean error over the noise.
double bayes_pixel_mmse(double prior_p, double alpha_bar);
double bayes_pixel_mmse(double prior_p, const DiffusionSchedule& sched, int t);

struct FingerprintRow {
  std::string label;
  int t_half = 0;
  bool converged = false;
  double terminal_value = 0.0;
  /// Least-squares rise over the last 10% of the grid, relative to the terminal value.
  double tail_rise = 0.0;
};

struct FingerprintSummary {
  std::vector<FingerprintRow> rows;  // input order
  std::vector<std::string> order_by_t_half;  // ascending; ties keep input order
};

inline constexpr double kHalfThreshold = 0.5;
inline constexpr double kConvergenceTolerance = 0.05;

/// t_half: first grid timestep whose value reaches half the terminal value.
/// All profiles must share one t_grid.
FingerprintSummary fingerprint(const std::vector<TimestepProfile>& profiles,
                               double convergence_tolerance = kConvergenceTolerance);

/// CSV with columns kind,t_half,converged,terminal_value.
void write_fingerprint_csv(const FingerprintSummary& summary, const std::filesystem::path& path);

inline constexpr double kDefaultWeightFloor = 0.05;

/// Timestep weights from the slope of a (smoothed) error profile. The profile
/// is linearly interpolated onto 1..steps, forward-differenced, clipped at
/// zero, scaled so the steepest rise is 1, offset by `floor`, and normalized
/// to mean 1. `steps == 0` uses the last grid timestep.
TimestepWeights derivative_weights(const TimestepProfile& profile, double floor = kDefaultWeightFloor, int steps = 0);

}  // namespace diffseg
