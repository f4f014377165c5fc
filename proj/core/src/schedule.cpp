#include "diffseg/schedule.hpp"

#include <cmath>

#include "diffseg/csv.hpp"
#include "diffseg/errors.hpp"

namespace diffseg {

DiffusionSchedule schedule_from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ConfigError("schedule needs at least one step");
  DiffusionSchedule s;
  s.steps = static_cast<int>(betas.size());
  s.alphas.reserve(betas.size());
  s.alpha_bars.reserve(betas.size());
  double running = 1.0;
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("beta values must lie in (0, 1)");
    s.alphas.push_back(1.0 - b);
    running *= 1.0 - b;
    s.alpha_bars.push_back(running);
  }
  s.betas = std::move(betas);
  return s;
}

DiffusionSchedule linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 2) throw ConfigError("linear_schedule needs T >= 2");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("linear_schedule needs 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  const double span = beta_end - beta_start;
  for (int i = 0; i < steps; ++i) {
    betas[static_cast<std::size_t>(i)] = beta_start + span * static_cast<double>(i) / static_cast<double>(steps - 1);
  }
  betas.back() = beta_end;
  return schedule_from_betas(std::move(betas));
}

void write_schedule_csv(const DiffusionSchedule& schedule, const std::filesystem::path& path) {
  CsvTable table({"t", "beta", "alpha", "alpha_bar"});
  for (int t = 1; t <= schedule.steps; ++t) {
    table.add_row({std::to_string(t), format_double(schedule.beta(t)), format_double(schedule.alpha(t)),
                   format_double(schedule.alpha_bar(t))});
  }
  table.write(path);
}

}  // namespace diffseg
