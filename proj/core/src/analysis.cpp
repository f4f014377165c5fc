#include <gsl/gsl_integration.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>

#include "diffseg/csv.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/metrics.hpp"

namespace diffseg {

void TimestepProfile::validate() const {
  if (t_grid.size() != values.size()) throw ConfigError("profile grid and values differ in length");
  if (!std::is_sorted(t_grid.begin(), t_grid.end())) throw ConfigError("profile grid must be sorted");
  for (double v : values) {
    if (!std::isfinite(v)) throw DataError("profile values must be finite");
  }
}

TimestepProfile smooth(const TimestepProfile& profile, int window) {
  profile.validate();
  if (window < 1 || window % 2 == 0) throw ConfigError("smoothing window must be odd and positive");
  const auto n = profile.values.size();
  if (static_cast<std::size_t>(window) > n) {
    throw ConfigError("smoothing window " + std::to_string(window) + " exceeds profile length " + std::to_string(n));
  }
  const auto half = static_cast<std::size_t>(window / 2);
  TimestepProfile out = profile;
  out.smoothing_window = window;
  for (std::size_t i = 0; i < n; ++i) {
    // Truncate symmetrically so the window stays centred on i.
    const std::size_t reach = std::min({half, i, n - 1 - i});
    double acc = 0.0;
    for (std::size_t j = i - reach; j <= i + reach; ++j) acc += profile.values[j];
    out.values[i] = acc / static_cast<double>(2 * reach + 1);
  }
  return out;
}

void write_profile_csv(const TimestepProfile& raw, const TimestepProfile& smoothed, const std::filesystem::path& path) {
  if (raw.t_grid != smoothed.t_grid) throw ConfigError("raw and smoothed profiles use different grids");
  CsvTable table({"t", "value", "smoothed_value"});
  for (std::size_t i = 0; i < raw.t_grid.size(); ++i) {
    table.add_row({std::to_string(raw.t_grid[i]), format_double(raw.values[i]), format_double(smoothed.values[i])});
  }
  table.write(path);
}

std::pair<TimestepProfile, TimestepProfile> read_profile_csv(const std::filesystem::path& path) {
  const auto table = CsvTable::read(path);
  const auto tc = table.column("t"), vc = table.column("value"), sc = table.column("smoothed_value");
  TimestepProfile raw, sm;
  raw.label = sm.label = path.stem().string();
  for (const auto& row : table.rows()) {
    const auto t = static_cast<int>(parse_int(row[tc]));
    raw.t_grid.push_back(t);
    sm.t_grid.push_back(t);
    raw.values.push_back(parse_double(row[vc]));
    sm.values.push_back(parse_double(row[sc]));
  }
  if (raw.t_grid.empty()) throw FormatError(path.string() + ": profile has no rows");
  try {
    raw.validate();
    sm.validate();
  } catch (const Error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return {std::move(raw), std::move(sm)};
}

double bayes_pixel_mmse(double prior_p, double alpha_bar) {
  if (!(prior_p > 0.0 && prior_p < 1.0)) throw ConfigError("bayes_pixel_mmse: prior must lie in (0,1)");
  if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw ConfigError("bayes_pixel_mmse: alpha_bar must lie in [0,1]");
  if (alpha_bar == 1.0) return 0.0;
  const double a = std::sqrt(alpha_bar);
  const double s = std::sqrt(1.0 - alpha_bar);
  const double bias = 0.5 * std::log(prior_p / (1.0 - prior_p));

  // Composite Gauss-Legendre over the standard-normal noise, one pass per class.
  constexpr int kPanels = 16;
  constexpr std::size_t kNodes = 32;
  constexpr double kReach = 12.0;
  std::unique_ptr<gsl_integration_glfixed_table, decltype(&gsl_integration_glfixed_table_free)> table(
      gsl_integration_glfixed_table_alloc(kNodes), &gsl_integration_glfixed_table_free);
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  double mmse = 0.0;
  for (double x0 : {1.0, -1.0}) {
    const double weight = x0 > 0 ? prior_p : 1.0 - prior_p;
    double integral = 0.0;
    for (int k = 0; k < kPanels; ++k) {
      const double lo = -kReach + 2.0 * kReach * k / kPanels;
      const double hi = lo + 2.0 * kReach / kPanels;
      for (std::size_t i = 0; i < kNodes; ++i) {
        double eps = 0.0, w = 0.0;
        gsl_integration_glfixed_point(lo, hi, i, &eps, &w, table.get());
        const double x = a * x0 + s * eps;
        const double posterior_mean = std::tanh(a * x / (s * s) + bias);
        const double err = x0 - posterior_mean;
        integral += w * inv_sqrt_2pi * std::exp(-0.5 * eps * eps) * err * err;
      }
    }
    mmse += weight * integral;
  }
  return mmse;
}

double bayes_pixel_mmse(double prior_p, const DiffusionSchedule& sched, int t) {
  if (t < 0 || t > sched.steps) throw ConfigError("bayes_pixel_mmse: timestep out of range");
  return bayes_pixel_mmse(prior_p, sched.alpha_bar(t));
}

FingerprintSummary fingerprint(const std::vector<TimestepProfile>& profiles, double convergence_tolerance) {
  if (profiles.empty()) throw ConfigError("fingerprint needs at least one profile");
  for (const auto& p : profiles) {
    p.validate();
    if (p.t_grid != profiles.front().t_grid) throw ConfigError("fingerprint profiles must share one t_grid");
    if (p.t_grid.size() < 2) throw ConfigError("fingerprint profiles need at least two points");
  }
  FingerprintSummary out;
  for (const auto& p : profiles) {
    FingerprintRow row;
    row.label = p.label;
    row.terminal_value = p.values.back();
    const double threshold = kHalfThreshold * row.terminal_value;
    row.t_half = p.t_grid.back();
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      if (p.values[i] >= threshold) {
        row.t_half = p.t_grid[i];
        break;
      }
    }
    // Least-squares slope over the last 10% of the grid (at least two points).
    const std::size_t n = p.t_grid.size();
    const std::size_t tail = std::max<std::size_t>(2, n / 10);
    double mt = 0.0, mv = 0.0;
    for (std::size_t i = n - tail; i < n; ++i) {
      mt += p.t_grid[i];
      mv += p.values[i];
    }
    mt /= static_cast<double>(tail);
    mv /= static_cast<double>(tail);
    double cov = 0.0, var = 0.0;
    for (std::size_t i = n - tail; i < n; ++i) {
      cov += (p.t_grid[i] - mt) * (p.values[i] - mv);
      var += (p.t_grid[i] - mt) * (p.t_grid[i] - mt);
    }
    const double slope = var > 0.0 ? cov / var : 0.0;
    const double span = p.t_grid.back() - p.t_grid[n - tail];
    const double scale = std::abs(row.terminal_value) > 0.0 ? std::abs(row.terminal_value) : 1.0;
    row.tail_rise = slope * span / scale;
    row.converged = row.tail_rise < convergence_tolerance;
    out.rows.push_back(std::move(row));
  }
  std::vector<std::size_t> order(out.rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out.rows[a].t_half < out.rows[b].t_half; });
  for (auto i : order) out.order_by_t_half.push_back(out.rows[i].label);
  return out;
}

void write_fingerprint_csv(const FingerprintSummary& summary, const std::filesystem::path& path) {
  CsvTable table({"kind", "t_half", "converged", "terminal_value"});
  for (const auto& r : summary.rows) {
    table.add_row({r.label, std::to_string(r.t_half), r.converged ? "1" : "0", format_double(r.terminal_value)});
  }
  table.write(path);
}

TimestepWeights derivative_weights(const TimestepProfile& profile, double floor, int steps) {
  profile.validate();
  if (profile.t_grid.size() < 2) throw ConfigError("derivative_weights needs a profile of length >= 2");
  if (!(floor > 0.0) || !std::isfinite(floor)) throw ConfigError("derivative_weights floor must be positive");
  if (steps == 0) steps = profile.t_grid.back();
  if (steps < 2) throw ConfigError("derivative_weights needs at least two timesteps");

  // Linear interpolation onto every timestep 1..steps, constant beyond the grid ends.
  const auto& g = profile.t_grid;
  const auto& v = profile.values;
  std::vector<double> dense(static_cast<std::size_t>(steps));
  std::size_t k = 0;
  for (int t = 1; t <= steps; ++t) {
    double value;
    if (t <= g.front()) {
      value = v.front();
    } else if (t >= g.back()) {
      value = v.back();
    } else {
      while (g[k + 1] < t) ++k;
      const double f = static_cast<double>(t - g[k]) / static_cast<double>(g[k + 1] - g[k]);
      value = v[k] + f * (v[k + 1] - v[k]);
    }
    dense[static_cast<std::size_t>(t - 1)] = value;
  }

  std::vector<double> w(dense.size());
  for (std::size_t i = 0; i + 1 < dense.size(); ++i) w[i] = std::max(dense[i + 1] - dense[i], 0.0);
  w.back() = w[w.size() - 2];
  const double peak = *std::max_element(w.begin(), w.end());
  double total = 0.0;
  for (auto& x : w) {
    x = (peak > 0.0 ? x / peak : 0.0) + floor;
    total += x;
  }
  const double m = total / static_cast<double>(w.size());
  for (auto& x : w) x /= m;
  return TimestepWeights(std::move(w));
}

}  // namespace diffseg
