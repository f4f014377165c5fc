#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "diffseg/rng.hpp"
#include "diffseg/schedule.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {

/// What a denoiser's output estimates.
enum class Prediction { epsilon, mask, logits };

const char* to_string(Prediction p);
Prediction prediction_from_string(std::string_view s);

/// Anything that maps (x_t, t, y) to an estimate. `y` may be undefined for
/// unconditional use; `t` holds one timestep per batch sample.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Tensor predict(const Tensor& x_t, std::span<const int> t, const Tensor& y) const = 0;
  virtual Prediction prediction() const = 0;
  virtual bool conditional() const = 0;
};

/// Adapts a callable to the Denoiser interface (oracles, test doubles).
class FunctionDenoiser final : public Denoiser {
 public:
  using Fn = std::function<Tensor(const Tensor&, std::span<const int>, const Tensor&)>;
  FunctionDenoiser(Fn fn, Prediction prediction, bool conditional)
      : fn_(std::move(fn)), prediction_(prediction), conditional_(conditional) {}
  Tensor predict(const Tensor& x_t, std::span<const int> t, const Tensor& y) const override { return fn_(x_t, t, y); }
  Prediction prediction() const override { return prediction_; }
  bool conditional() const override { return conditional_; }

 private:
  Fn fn_;
  Prediction prediction_;
  bool conditional_;
};

/// Per-timestep loss weights w[t-1], non-negative with mean 1.
struct TimestepWeights {
  std::vector<double> weights;

  /// Validates finiteness, non-negativity, and mean 1 within 1e-9.
  explicit TimestepWeights(std::vector<double> w);
  double at(int t) const { return weights.at(static_cast<std::size_t>(t - 1)); }
  std::size_t size() const { return weights.size(); }
};

/// CSV with columns t,weight.
void write_weights_csv(const TimestepWeights& weights, const std::filesystem::path& path);
TimestepWeights read_weights_csv(const std::filesystem::path& path);

/// Closed-form x_t = sqrt(abar) x0 + sqrt(1 - abar) eps for an explicit abar in [0,1].
Tensor forward_sample(const Tensor& x0, const Tensor& eps, double alpha_bar);
/// Batched forward process; t[b] in 1..T applies to sample b along axis 0.
Tensor forward_sample(const Tensor& x0, std::span<const int> t, const Tensor& eps, const DiffusionSchedule& sched);
Tensor forward_sample(const Tensor& x0, int t, const Tensor& eps, const DiffusionSchedule& sched);

/// x0 = (x_t - sqrt(1 - abar) eps) / sqrt(abar). Throws SingularityError when abar == 0.
Tensor eps_to_x0(const Tensor& x_t, const Tensor& eps_hat, std::span<const int> t, const DiffusionSchedule& sched);
/// eps = (x_t - sqrt(abar) x0) / sqrt(1 - abar). Throws SingularityError when abar == 1.
Tensor x0_to_eps(const Tensor& x_t, const Tensor& x0_hat, std::span<const int> t, const DiffusionSchedule& sched);
Tensor eps_to_x0(const Tensor& x_t, const Tensor& eps_hat, double alpha_bar);
Tensor x0_to_eps(const Tensor& x_t, const Tensor& x0_hat, double alpha_bar);

/// weights[t] * || eps - model(x_t, t, y) ||^2, averaged over elements and batch.
/// Pass an undefined `y` for the unconditional objective.
Tensor epsilon_loss(const Denoiser& model, const Tensor& x0, const Tensor& y, std::span<const int> t,
                    const Tensor& eps, const DiffusionSchedule& sched, const TimestepWeights* weights = nullptr);

/// weights[t] * || x0 - model(x_t, t) ||^2 with no condition input.
Tensor x0_loss(const Denoiser& model, const Tensor& x0, std::span<const int> t, const Tensor& eps,
               const DiffusionSchedule& sched, const TimestepWeights* weights = nullptr);

struct SampleOptions {
  /// Clamp the intermediate x0 estimate to [-1, 1].
  bool clamp_x0 = true;
};

/// Ancestral sampling from t = T down to 1 with sigma_t^2 = beta_t and no noise
/// at the last step. `predict` must match model.prediction() (epsilon or mask).
Tensor ddpm_sample(const Denoiser& model, Prediction predict, const Shape& shape, const Tensor& y,
                   const DiffusionSchedule& sched, Rng& rng, SampleOptions options = {});

/// Uniform timestep in 1..T.
int sample_timestep(Rng& rng, int steps);

}  // namespace diffseg
