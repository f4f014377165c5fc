#include "diffseg/profile.hpp"

#include <algorithm>
#include <string>

#include "diffseg/encoding.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/ops.hpp"
#include "diffseg/rng.hpp"

namespace diffseg {

const char* to_string(Objective o) {
  switch (o) {
    case Objective::eq1: return "eq1";
    case Objective::eq2: return "eq2";
    case Objective::eq3: return "eq3";
  }
  return "?";
}

Objective objective_from_string(std::string_view s) {
  if (s == "eq1") return Objective::eq1;
  if (s == "eq2") return Objective::eq2;
  if (s == "eq3") return Objective::eq3;
  throw ConfigError("unknown objective '" + std::string(s) + "' (expected eq1, eq2, eq3)");
}

std::vector<int> make_grid(int lo, int hi, int step) {
  if (step < 1 || hi < lo) throw ConfigError("grid needs lo <= hi and step >= 1");
  std::vector<int> out;
  for (int t = lo; t <= hi; t += step) out.push_back(t);
  return out;
}

namespace {

void check_inputs(std::span<const MaskImagePair> data, const DiffusionSchedule& sched, std::span<const int> t_grid,
                  const ProfileOptions& options) {
  if (t_grid.empty()) throw ConfigError("profile needs a non-empty t_grid");
  if (data.empty()) throw ConfigError("profile needs at least one sample");
  if (options.n_eval < 1 || options.max_batch < 1) throw ConfigError("profile needs n_eval >= 1 and max_batch >= 1");
  if (!std::is_sorted(t_grid.begin(), t_grid.end())) throw ConfigError("profile t_grid must be sorted");
  for (int t : t_grid) {
    if (t < 1 || t > sched.steps) {
      throw ConfigError("profile timestep " + std::to_string(t) + " outside 1.." + std::to_string(sched.steps));
    }
  }
}

// Calls `chunk(indices, rng)` over n_eval draws split into batches and averages the returned per-chunk sums.
template <class Chunk>
double average_over_draws(std::size_t data_size, int t, const ProfileOptions& options, Chunk chunk) {
  Rng rng(mix_seed(options.seed, static_cast<std::uint64_t>(t)));
  double total = 0.0;
  std::size_t count = 0;
  for (int start = 0; start < options.n_eval; start += options.max_batch) {
    const int stop = std::min(options.n_eval, start + options.max_batch);
    std::vector<std::size_t> idx;
    for (int i = start; i < stop; ++i) idx.push_back(static_cast<std::size_t>(i) % data_size);
    const auto [sum, n] = chunk(idx, rng);
    total += sum;
    count += n;
  }
  return total / static_cast<double>(count);
}

TimestepProfile make_profile(std::span<const int> t_grid, std::string label) {
  TimestepProfile p;
  p.t_grid.assign(t_grid.begin(), t_grid.end());
  p.values.reserve(t_grid.size());
  p.label = std::move(label);
  return p;
}

}  // namespace

TimestepProfile profile_mask_error(const Denoiser& model, std::span<const MaskImagePair> data,
                                   const DiffusionSchedule& sched, std::span<const int> t_grid, bool conditioned,
                                   const ProfileOptions& options) {
  check_inputs(data, sched, t_grid, options);
  if (conditioned != model.conditional()) {
    throw ConfigError(conditioned ? "conditioned profile requested for an unconditional model"
                                  : "unconditioned profile requested for a conditional model");
  }
  if (model.prediction() == Prediction::logits) throw ConfigError("mask error profile needs a diffusion model");
  NoGradGuard no_grad;
  auto profile = make_profile(t_grid, conditioned ? "conditioned" : "unconditioned");
  for (int t : t_grid) {
    profile.values.push_back(average_over_draws(data.size(), t, options, [&](const auto& idx, Rng& rng) {
      const auto x0 = encode_masks(data, idx);
      const auto y = conditioned ? encode_images(data, idx) : Tensor();
      const auto eps = randn(x0.shape(), rng);
      const std::vector<int> ts(idx.size(), t);
      const auto x_t = forward_sample(x0, ts, eps, sched);
      const auto out = model.predict(x_t, ts, y);
      const auto x0_hat = model.prediction() == Prediction::mask ? out : eps_to_x0(x_t, out, ts, sched);
      double sum = 0.0;
      for (std::size_t i = 0; i < x0.numel(); ++i) {
        const double d = x0.data()[i] - std::clamp(x0_hat.data()[i], -1.0, 1.0);
        sum += d * d;
      }
      return std::pair{sum, x0.numel()};
    }));
  }
  return profile;
}

TimestepProfile profile_training_loss(const Denoiser& model, std::span<const MaskImagePair> data, Objective objective,
                                      const DiffusionSchedule& sched, std::span<const int> t_grid,
                                      const ProfileOptions& options) {
  check_inputs(data, sched, t_grid, options);
  const bool wants_condition = objective == Objective::eq3;
  if (model.conditional() != wants_condition) {
    throw ConfigError(std::string("objective ") + to_string(objective) +
                      (wants_condition ? " needs a conditional model" : " needs an unconditional model"));
  }
  const auto expected = objective == Objective::eq2 ? Prediction::mask : Prediction::epsilon;
  if (model.prediction() != expected) {
    throw ConfigError(std::string("objective ") + to_string(objective) + " needs a model predicting " +
                      to_string(expected));
  }
  NoGradGuard no_grad;
  auto profile = make_profile(t_grid, to_string(objective));
  for (int t : t_grid) {
    profile.values.push_back(average_over_draws(data.size(), t, options, [&](const auto& idx, Rng& rng) {
      const auto x0 = objective == Objective::eq1 ? encode_images(data, idx) : encode_masks(data, idx);
      const auto eps = randn(x0.shape(), rng);
      const std::vector<int> ts(idx.size(), t);
      Tensor loss;
      switch (objective) {
        case Objective::eq1: loss = epsilon_loss(model, x0, Tensor(), ts, eps, sched); break;
        case Objective::eq2: loss = x0_loss(model, x0, ts, eps, sched); break;
        case Objective::eq3: loss = epsilon_loss(model, x0, encode_images(data, idx), ts, eps, sched); break;
      }
      return std::pair{loss.item() * static_cast<double>(idx.size()), idx.size()};
    }));
  }
  return profile;
}

}  // namespace diffseg
