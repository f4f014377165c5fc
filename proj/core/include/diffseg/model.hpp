#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "diffseg/diffusion.hpp"
#include "diffseg/rng.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {

/// How the conditioning image enters the network.
enum class Variant {
  concat,       ///< image stacked onto the noisy input channels
  encoder_sum,  ///< separate image encoder, features added at every resolution level
  ff_parser,    ///< as encoder_sum, with image features filtered by a learned spectral gate
};

const char* to_string(Variant v);
Variant variant_from_string(std::string_view s);

struct ModelConfig {
  Variant variant = Variant::concat;
  int base_channels = 16;
  int depth = 2;
  int time_embed_dim = 32;
  /// 0 builds an unconditional network with no image path.
  int image_channels = 1;
  int mask_channels = 1;
  int image_size = 32;
  /// Diffusion length; scales the time embedding frequencies.
  int steps = 1000;
  Prediction prediction = Prediction::epsilon;

  /// Throws ConfigError on an unusable configuration.
  void validate() const;
  bool conditional() const { return image_channels > 0; }
  int input_channels() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Interleaved sin/cos features of t at geometric frequencies from 1 down to 1/T.
/// Entry 2i is sin(t w_i), entry 2i+1 is cos(t w_i).
std::vector<double> sinusoidal_time_embedding(int t, int dim, int steps);

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

/// Miniature UNet denoiser eps_theta(x_t, t, y).
class DenoiserModel final : public Denoiser {
 public:
  /// He-initialized weights drawn from `rng`; identical seeds give identical models.
  static DenoiserModel build(const ModelConfig& config, Rng& rng);
  static DenoiserModel build(const ModelConfig& config, std::uint64_t seed);

  /// Output has the shape of x_t. `y` is required iff the model is conditional.
  Tensor forward(const Tensor& x_t, std::span<const int> t, const Tensor& y) const;

  Tensor predict(const Tensor& x_t, std::span<const int> t, const Tensor& y) const override {
    return forward(x_t, t, y);
  }
  Prediction prediction() const override { return config_.prediction; }
  bool conditional() const override { return config_.conditional(); }

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::vector<Tensor> parameter_tensors() const;
  /// Total number of scalar parameters.
  std::size_t parameter_count() const;
  /// Throws ShapeError if the name is unknown.
  const Tensor& parameter(std::string_view name) const;

  /// Deep copy with independent parameter storage.
  DenoiserModel clone() const;

  /// Overwrites parameter values; names and shapes must match exactly
  /// (ShapeError otherwise).
  void assign_parameters(const std::vector<NamedParameter>& values);

 private:
  struct Conv {
    std::size_t weight, bias;
    int stride, pad;
  };
  struct Linear {
    std::size_t weight, bias;
  };
  struct ResBlock {
    Conv conv1, conv2;
    Linear time;
  };
  struct Level {
    ResBlock enc;
    Conv down;
    Conv merge;  // decoder: upsampled + skip -> level channels
    ResBlock dec;
    // Image branch (encoder_sum / ff_parser only).
    Conv image_conv;
    Conv image_down;
    std::size_t gate = 0;
  };

  DenoiserModel() = default;
  std::size_t add_param(std::string name, Shape shape, double stddev, Rng* rng, double fill = 0.0);
  Conv add_conv(const std::string& name, int in, int out, int k, int stride, int pad, Rng& rng, double gain = 1.0);
  Linear add_linear(const std::string& name, int in, int out, Rng& rng);
  ResBlock add_block(const std::string& name, int channels, Rng& rng);

  Tensor apply(const Conv& c, const Tensor& x) const;
  Tensor apply(const Linear& l, const Tensor& x) const;
  Tensor apply(const ResBlock& b, const Tensor& x, const Tensor& time) const;
  const Tensor& p(std::size_t index) const { return params_[index].tensor; }

  ModelConfig config_;
  std::vector<NamedParameter> params_;
  Linear time_mlp_{};
  Conv stem_{};
  Conv image_stem_{};
  std::vector<Level> levels_;
  ResBlock mid_{};
  Conv out_{};
};

}  // namespace diffseg
