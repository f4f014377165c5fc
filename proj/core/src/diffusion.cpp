#include "diffseg/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "diffseg/csv.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/ops.hpp"

namespace diffseg {

const char* to_string(Prediction p) {
  switch (p) {
    case Prediction::epsilon: return "epsilon";
    case Prediction::mask: return "mask";
    case Prediction::logits: return "logits";
  }
  return "?";
}

Prediction prediction_from_string(std::string_view s) {
  if (s == "epsilon") return Prediction::epsilon;
  if (s == "mask") return Prediction::mask;
  if (s == "logits") return Prediction::logits;
  throw ConfigError("unknown prediction kind '" + std::string(s) + "'");
}

TimestepWeights::TimestepWeights(std::vector<double> w) : weights(std::move(w)) {
  if (weights.empty()) throw ConfigError("timestep weights are empty");
  double total = 0.0;
  for (double v : weights) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("timestep weights must be finite and non-negative");
    total += v;
  }
  const double m = total / static_cast<double>(weights.size());
  if (std::abs(m - 1.0) > 1e-9) throw ConfigError("timestep weights must have mean 1, got " + format_double(m));
}

void write_weights_csv(const TimestepWeights& weights, const std::filesystem::path& path) {
  CsvTable table({"t", "weight"});
  for (std::size_t i = 0; i < weights.size(); ++i) {
    table.add_row({std::to_string(i + 1), format_double(weights.weights[i])});
  }
  table.write(path);
}

TimestepWeights read_weights_csv(const std::filesystem::path& path) {
  const auto table = CsvTable::read(path);
  const auto tc = table.column("t");
  const auto wc = table.column("weight");
  std::vector<double> w;
  w.reserve(table.rows().size());
  for (std::size_t i = 0; i < table.rows().size(); ++i) {
    const auto& row = table.rows()[i];
    if (parse_int(row[tc]) != static_cast<long long>(i + 1)) throw FormatError("weights csv: t must run 1..T");
    w.push_back(parse_double(row[wc]));
  }
  try {
    return TimestepWeights(std::move(w));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("weights csv: ") + e.what());
  }
}

namespace {

void check_timesteps(std::span<const int> t, const Tensor& x, const DiffusionSchedule& sched) {
  if (x.rank() < 1 || t.size() != x.dim(0)) throw ShapeError("need one timestep per sample along axis 0");
  for (int v : t) {
    if (v < 1 || v > sched.steps) {
      throw ConfigError("timestep " + std::to_string(v) + " outside 1.." + std::to_string(sched.steps));
    }
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// out[b] = ca(b) * a[b] + cb(b) * b[b] per sample.
template <class CoefA, class CoefB>
Tensor per_sample_combine(const Tensor& a, const Tensor& b, std::size_t batch, CoefA ca, CoefB cb) {
  const std::size_t per = a.numel() / batch;
  std::vector<double> out(a.numel());
  for (std::size_t s = 0; s < batch; ++s) {
    const double wa = ca(s), wb = cb(s);
    for (std::size_t i = 0; i < per; ++i) {
      out[s * per + i] = wa * a.values()[s * per + i] + wb * b.values()[s * per + i];
    }
  }
  return Tensor::from(a.shape(), std::move(out));
}

std::vector<double> sample_weights(std::span<const int> t, const TimestepWeights* weights,
                                   const DiffusionSchedule& sched) {
  std::vector<double> w(t.size(), 1.0);
  if (!weights) return w;
  if (weights->size() != static_cast<std::size_t>(sched.steps)) {
    throw ConfigError("timestep weights cover " + std::to_string(weights->size()) + " steps, schedule has " +
                      std::to_string(sched.steps));
  }
  for (std::size_t i = 0; i < t.size(); ++i) w[i] = weights->at(t[i]);
  return w;
}

}  // namespace

Tensor forward_sample(const Tensor& x0, const Tensor& eps, double alpha_bar) {
  require_same(x0, eps, "forward_sample");
  if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw ConfigError("alpha_bar must lie in [0,1]");
  const double a = std::sqrt(alpha_bar), s = std::sqrt(1.0 - alpha_bar);
  return per_sample_combine(x0, eps, 1, [a](std::size_t) { return a; }, [s](std::size_t) { return s; });
}

Tensor forward_sample(const Tensor& x0, std::span<const int> t, const Tensor& eps, const DiffusionSchedule& sched) {
  require_same(x0, eps, "forward_sample");
  check_timesteps(t, x0, sched);
  return per_sample_combine(
      x0, eps, t.size(), [&](std::size_t b) { return std::sqrt(sched.alpha_bar(t[b])); },
      [&](std::size_t b) { return std::sqrt(1.0 - sched.alpha_bar(t[b])); });
}

Tensor forward_sample(const Tensor& x0, int t, const Tensor& eps, const DiffusionSchedule& sched) {
  if (x0.rank() < 1) throw ShapeError("forward_sample needs a batch axis");
  std::vector<int> ts(x0.dim(0), t);
  return forward_sample(x0, ts, eps, sched);
}

Tensor eps_to_x0(const Tensor& x_t, const Tensor& eps_hat, double alpha_bar) {
  require_same(x_t, eps_hat, "eps_to_x0");
  if (alpha_bar <= 0.0) throw SingularityError("eps_to_x0: alpha_bar is zero");
  const double inv = 1.0 / std::sqrt(alpha_bar), s = std::sqrt(1.0 - alpha_bar);
  return per_sample_combine(x_t, eps_hat, 1, [inv](std::size_t) { return inv; },
                            [inv, s](std::size_t) { return -s * inv; });
}

Tensor x0_to_eps(const Tensor& x_t, const Tensor& x0_hat, double alpha_bar) {
  require_same(x_t, x0_hat, "x0_to_eps");
  if (alpha_bar >= 1.0) throw SingularityError("x0_to_eps: 1 - alpha_bar is zero");
  const double inv = 1.0 / std::sqrt(1.0 - alpha_bar), a = std::sqrt(alpha_bar);
  return per_sample_combine(x_t, x0_hat, 1, [inv](std::size_t) { return inv; },
                            [inv, a](std::size_t) { return -a * inv; });
}

Tensor eps_to_x0(const Tensor& x_t, const Tensor& eps_hat, std::span<const int> t, const DiffusionSchedule& sched) {
  require_same(x_t, eps_hat, "eps_to_x0");
  check_timesteps(t, x_t, sched);
  for (int v : t) {
    if (sched.alpha_bar(v) <= 0.0) throw SingularityError("eps_to_x0: alpha_bar is zero");
  }
  return per_sample_combine(
      x_t, eps_hat, t.size(), [&](std::size_t b) { return 1.0 / std::sqrt(sched.alpha_bar(t[b])); },
      [&](std::size_t b) { return -std::sqrt(1.0 - sched.alpha_bar(t[b])) / std::sqrt(sched.alpha_bar(t[b])); });
}

Tensor x0_to_eps(const Tensor& x_t, const Tensor& x0_hat, std::span<const int> t, const DiffusionSchedule& sched) {
  require_same(x_t, x0_hat, "x0_to_eps");
  check_timesteps(t, x_t, sched);
  for (int v : t) {
    if (sched.alpha_bar(v) >= 1.0) throw SingularityError("x0_to_eps: 1 - alpha_bar is zero");
  }
  return per_sample_combine(
      x_t, x0_hat, t.size(), [&](std::size_t b) { return 1.0 / std::sqrt(1.0 - sched.alpha_bar(t[b])); },
      [&](std::size_t b) { return -std::sqrt(sched.alpha_bar(t[b])) / std::sqrt(1.0 - sched.alpha_bar(t[b])); });
}

Tensor epsilon_loss(const Denoiser& model, const Tensor& x0, const Tensor& y, std::span<const int> t,
                    const Tensor& eps, const DiffusionSchedule& sched, const TimestepWeights* weights) {
  const auto x_t = forward_sample(x0, t, eps, sched);
  const auto pred = model.predict(x_t, t, y);
  return mse_loss(pred, eps, sample_weights(t, weights, sched));
}

Tensor x0_loss(const Denoiser& model, const Tensor& x0, std::span<const int> t, const Tensor& eps,
               const DiffusionSchedule& sched, const TimestepWeights* weights) {
  const auto x_t = forward_sample(x0, t, eps, sched);
  const auto pred = model.predict(x_t, t, Tensor{});
  return mse_loss(pred, x0, sample_weights(t, weights, sched));
}

Tensor ddpm_sample(const Denoiser& model, Prediction predict, const Shape& shape, const Tensor& y,
                   const DiffusionSchedule& sched, Rng& rng, SampleOptions options) {
  if (predict == Prediction::logits) throw ConfigError("ddpm_sample: logits models are not diffusion models");
  if (model.prediction() != predict) {
    throw ConfigError(std::string("ddpm_sample: requested ") + to_string(predict) + " sampling but model predicts " +
                      to_string(model.prediction()));
  }
  if (shape.empty()) throw ShapeError("ddpm_sample needs a batch axis");
  NoGradGuard no_grad;
  const std::size_t batch = shape[0];
  const std::size_t n = numel_of(shape);
  auto x = randn(shape, rng);
  for (int t = sched.steps; t >= 1; --t) {
    const std::vector<int> ts(batch, t);
    const auto out = model.predict(x, ts, y);
    if (out.shape() != shape) throw ShapeError("ddpm_sample: model output shape " + shape_str(out.shape()));
    Buffer x0_hat = predict == Prediction::mask ? out.values() : eps_to_x0(x, out, ts, sched).values();
    if (options.clamp_x0) {
      for (auto& v : x0_hat) v = std::clamp(v, -1.0, 1.0);
    }
    const double abar = sched.alpha_bar(t);
    const double abar_prev = sched.alpha_bar(t - 1);
    const double beta = sched.beta(t);
    const double coef_x0 = std::sqrt(abar_prev) * beta / (1.0 - abar);
    const double coef_xt = std::sqrt(sched.alpha(t)) * (1.0 - abar_prev) / (1.0 - abar);
    Buffer next(n);
    for (std::size_t i = 0; i < n; ++i) next[i] = coef_x0 * x0_hat[i] + coef_xt * x.values()[i];
    if (t > 1) {
      const double sigma = std::sqrt(beta);
      std::normal_distribution<double> dist(0.0, 1.0);
      for (auto& v : next) v += sigma * dist(rng);
    }
    x = Tensor::from(shape, std::move(next));
  }
  return x;
}

int sample_timestep(Rng& rng, int steps) {
  if (steps < 1) throw ConfigError("sample_timestep needs T >= 1");
  return uniform_int(rng, 1, steps);
}

}  // namespace diffseg
