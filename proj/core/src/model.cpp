#include "diffseg/model.hpp"

#include <algorithm>
#include <cmath>

#include "diffseg/errors.hpp"
#include "diffseg/ops.hpp"
#include "diffseg/spectral.hpp"

namespace diffseg {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::concat: return "concat";
    case Variant::encoder_sum: return "encoder_sum";
    case Variant::ff_parser: return "ff_parser";
  }
  return "?";
}

Variant variant_from_string(std::string_view s) {
  if (s == "concat") return Variant::concat;
  if (s == "encoder_sum") return Variant::encoder_sum;
  if (s == "ff_parser") return Variant::ff_parser;
  throw ConfigError("unknown model variant '" + std::string(s) + "' (expected concat, encoder_sum, ff_parser)");
}

void ModelConfig::validate() const {
  if (depth < 1) throw ConfigError("model depth must be >= 1");
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0) throw ConfigError("time_embed_dim must be even and >= 2");
  if (image_channels < 0 || mask_channels < 1) throw ConfigError("channel counts out of range");
  if (steps < 1) throw ConfigError("model steps must be >= 1");
  if (image_size < 1 || image_size % (1 << depth) != 0) {
    throw ConfigError("image size " + std::to_string(image_size) + " is not divisible by 2^depth = " +
                      std::to_string(1 << depth));
  }
}

int ModelConfig::input_channels() const {
  return mask_channels + (variant == Variant::concat ? image_channels : 0);
}

std::vector<double> sinusoidal_time_embedding(int t, int dim, int steps) {
  if (dim < 2 || dim % 2 != 0) throw ConfigError("time embedding dimension must be even and >= 2");
  if (steps < 1) throw ConfigError("time embedding needs T >= 1");
  const int half = dim / 2;
  std::vector<double> e(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double frac = half > 1 ? static_cast<double>(i) / static_cast<double>(half - 1) : 0.0;
    const double freq = std::pow(static_cast<double>(steps), -frac);
    e[static_cast<std::size_t>(2 * i)] = std::sin(t * freq);
    e[static_cast<std::size_t>(2 * i + 1)] = std::cos(t * freq);
  }
  return e;
}

std::size_t DenoiserModel::add_param(std::string name, Shape shape, double stddev, Rng* rng, double fill) {
  std::vector<double> v(numel_of(shape), fill);
  if (rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& x : v) x = dist(*rng);
  }
  params_.push_back({std::move(name), Tensor::from(std::move(shape), std::move(v), true)});
  return params_.size() - 1;
}

DenoiserModel::Conv DenoiserModel::add_conv(const std::string& name, int in, int out, int k, int stride, int pad,
                                            Rng& rng, double gain) {
  const auto fan_in = static_cast<double>(in * k * k);
  Conv c{};
  c.weight = add_param(name + ".w",
                       {static_cast<std::size_t>(out), static_cast<std::size_t>(in), static_cast<std::size_t>(k),
                        static_cast<std::size_t>(k)},
                       gain * std::sqrt(2.0 / fan_in), &rng);
  c.bias = add_param(name + ".b", {static_cast<std::size_t>(out)}, 0.0, nullptr);
  c.stride = stride;
  c.pad = pad;
  return c;
}

DenoiserModel::Linear DenoiserModel::add_linear(const std::string& name, int in, int out, Rng& rng) {
  Linear l{};
  l.weight = add_param(name + ".w", {static_cast<std::size_t>(in), static_cast<std::size_t>(out)},
                       std::sqrt(2.0 / static_cast<double>(in)), &rng);
  l.bias = add_param(name + ".b", {static_cast<std::size_t>(out)}, 0.0, nullptr);
  return l;
}

DenoiserModel::ResBlock DenoiserModel::add_block(const std::string& name, int channels, Rng& rng) {
  ResBlock b{};
  b.conv1 = add_conv(name + ".conv1", channels, channels, 3, 1, 1, rng);
  b.time = add_linear(name + ".time", config_.time_embed_dim, channels, rng);
  b.conv2 = add_conv(name + ".conv2", channels, channels, 3, 1, 1, rng);
  return b;
}

DenoiserModel DenoiserModel::build(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  return build(config, rng);
}

DenoiserModel DenoiserModel::build(const ModelConfig& config, Rng& rng) {
  config.validate();
  DenoiserModel m;
  m.config_ = config;
  const int c = config.base_channels;
  const bool image_branch = config.conditional() && config.variant != Variant::concat;
  auto channels = [c](int level) { return c << level; };

  m.time_mlp_ = m.add_linear("time_mlp", config.time_embed_dim, config.time_embed_dim, rng);
  m.stem_ = m.add_conv("stem", config.input_channels(), c, 3, 1, 1, rng);
  if (image_branch) m.image_stem_ = m.add_conv("image.stem", config.image_channels, c, 3, 1, 1, rng);

  m.levels_.resize(static_cast<std::size_t>(config.depth));
  for (int i = 0; i < config.depth; ++i) {
    auto& lv = m.levels_[static_cast<std::size_t>(i)];
    const std::string prefix = "level" + std::to_string(i);
    const int ch = channels(i);
    lv.enc = m.add_block(prefix + ".enc", ch, rng);
    if (image_branch) {
      lv.image_conv = m.add_conv(prefix + ".image.conv", ch, ch, 3, 1, 1, rng);
      if (config.variant == Variant::ff_parser) {
        const auto s = static_cast<std::size_t>(config.image_size >> i);
        lv.gate = m.add_param(prefix + ".image.gate", {static_cast<std::size_t>(ch), s, s}, 0.0, nullptr, 1.0);
      }
      if (i + 1 < config.depth) lv.image_down = m.add_conv(prefix + ".image.down", ch, channels(i + 1), 2, 2, 0, rng);
    }
    lv.down = m.add_conv(prefix + ".down", ch, channels(i + 1), 2, 2, 0, rng);
  }
  m.mid_ = m.add_block("mid", channels(config.depth), rng);
  for (int i = config.depth - 1; i >= 0; --i) {
    auto& lv = m.levels_[static_cast<std::size_t>(i)];
    const std::string prefix = "level" + std::to_string(i);
    lv.merge = m.add_conv(prefix + ".merge", channels(i + 1) + channels(i), channels(i), 3, 1, 1, rng);
    lv.dec = m.add_block(prefix + ".dec", channels(i), rng);
  }
  // Small output gain keeps the initial prediction near zero.
  m.out_ = m.add_conv("out", c, config.mask_channels, 3, 1, 1, rng, 0.02);
  return m;
}

Tensor DenoiserModel::apply(const Conv& c, const Tensor& x) const {
  return conv2d(x, p(c.weight), c.stride, c.pad, p(c.bias));
}

Tensor DenoiserModel::apply(const Linear& l, const Tensor& x) const {
  return add_rowwise(matmul(x, p(l.weight)), p(l.bias));
}

Tensor DenoiserModel::apply(const ResBlock& b, const Tensor& x, const Tensor& time) const {
  auto r = apply(b.conv1, x);
  r = silu(add_channelwise(r, apply(b.time, time)));
  r = apply(b.conv2, r);
  return silu(add(x, r));
}

Tensor DenoiserModel::forward(const Tensor& x_t, std::span<const int> t, const Tensor& y) const {
  const auto& cfg = config_;
  const auto size = static_cast<std::size_t>(cfg.image_size);
  if (x_t.rank() != 4 || x_t.dim(1) != static_cast<std::size_t>(cfg.mask_channels) || x_t.dim(2) != size ||
      x_t.dim(3) != size) {
    throw ShapeError("model input " + shape_str(x_t.shape()) + " does not match config (" +
                     std::to_string(cfg.mask_channels) + " x " + std::to_string(cfg.image_size) + "^2)");
  }
  const std::size_t batch = x_t.dim(0);
  if (t.size() != batch) throw ShapeError("need one timestep per sample");
  if (cfg.conditional()) {
    if (!y.defined()) throw ConfigError("conditional model called without a condition image");
    if (y.rank() != 4 || y.dim(0) != batch || y.dim(1) != static_cast<std::size_t>(cfg.image_channels) ||
        y.dim(2) != size || y.dim(3) != size) {
      throw ShapeError("condition image " + shape_str(y.shape()) + " does not match config");
    }
  } else if (y.defined()) {
    throw ConfigError("unconditional model given a condition image");
  }

  const auto dim = static_cast<std::size_t>(cfg.time_embed_dim);
  std::vector<double> emb;
  emb.reserve(batch * dim);
  for (int ti : t) {
    const auto e = sinusoidal_time_embedding(ti, cfg.time_embed_dim, cfg.steps);
    emb.insert(emb.end(), e.begin(), e.end());
  }
  const auto time = silu(apply(time_mlp_, Tensor::from({batch, dim}, std::move(emb))));

  const bool image_branch = cfg.conditional() && cfg.variant != Variant::concat;
  Tensor h = apply(stem_, cfg.variant == Variant::concat && cfg.conditional() ? concat_channels(x_t, y) : x_t);
  Tensor g = image_branch ? silu(apply(image_stem_, y)) : Tensor{};

  std::vector<Tensor> skips;
  skips.reserve(levels_.size());
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    const auto& lv = levels_[i];
    h = apply(lv.enc, h, time);
    if (image_branch) {
      auto feat = silu(apply(lv.image_conv, g));
      h = add(h, cfg.variant == Variant::ff_parser ? spectral_gate(feat, p(lv.gate)) : feat);
      if (i + 1 < levels_.size()) g = silu(apply(lv.image_down, feat));
    }
    skips.push_back(h);
    h = apply(lv.down, h);
  }
  h = apply(mid_, h, time);
  for (std::size_t i = levels_.size(); i-- > 0;) {
    const auto& lv = levels_[i];
    h = silu(apply(lv.merge, concat_channels(upsample2x(h), skips[i])));
    h = apply(lv.dec, h, time);
  }
  return apply(out_, h);
}

std::vector<Tensor> DenoiserModel::parameter_tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& np : params_) out.push_back(np.tensor);
  return out;
}

std::size_t DenoiserModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& np : params_) n += np.tensor.numel();
  return n;
}

const Tensor& DenoiserModel::parameter(std::string_view name) const {
  for (const auto& np : params_) {
    if (np.name == name) return np.tensor;
  }
  throw ShapeError("no parameter named '" + std::string(name) + "'");
}

void DenoiserModel::assign_parameters(const std::vector<NamedParameter>& values) {
  if (values.size() != params_.size()) {
    throw ShapeError("expected " + std::to_string(params_.size()) + " parameters, got " + std::to_string(values.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& dst = params_[i];
    const auto& src = values[i];
    if (src.name != dst.name) throw ShapeError("parameter " + std::to_string(i) + " is '" + src.name + "', expected '" + dst.name + "'");
    if (src.tensor.shape() != dst.tensor.shape()) {
      throw ShapeError("parameter '" + dst.name + "' has shape " + shape_str(src.tensor.shape()) + ", expected " +
                       shape_str(dst.tensor.shape()));
    }
    std::copy(src.tensor.data().begin(), src.tensor.data().end(), dst.tensor.mutable_data().begin());
  }
}

DenoiserModel DenoiserModel::clone() const {
  DenoiserModel m = *this;
  for (auto& np : m.params_) np.tensor = np.tensor.clone();
  return m;
}

}  // namespace diffseg
