#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "diffseg/checkpoint.hpp"
#include "diffseg/csv.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/model.hpp"
#include "diffseg/ops.hpp"
#include "diffseg/spectral.hpp"
#include "support/gradcheck.hpp"
#include "support/tempdir.hpp"

namespace diffseg {
namespace {

constexpr Variant kVariants[] = {Variant::concat, Variant::encoder_sum, Variant::ff_parser};

ModelConfig small_config(Variant v, int image_channels = 1) {
  ModelConfig c;
  c.variant = v;
  c.base_channels = 4;
  c.depth = 2;
  c.time_embed_dim = 8;
  c.image_size = 8;
  c.image_channels = image_channels;
  return c;
}

// Independent count of the miniature UNet: stem, per-level encoder block and
// 2x2 downsampling, bottleneck block, per-level merge conv and decoder block,
// output conv, time MLP, plus the image branch for the non-concat variants.
std::size_t expected_parameter_count(const ModelConfig& c) {
  auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return out * in * k * k + out; };
  auto linear = [](std::size_t in, std::size_t out) { return in * out + out; };
  const auto e = static_cast<std::size_t>(c.time_embed_dim);
  auto block = [&](std::size_t ch) { return 2 * conv(ch, ch, 3) + linear(e, ch); };
  auto ch = [&](int level) { return static_cast<std::size_t>(c.base_channels) << level; };
  const auto img = static_cast<std::size_t>(c.image_channels);
  const auto mask = static_cast<std::size_t>(c.mask_channels);
  const bool branch = img > 0 && c.variant != Variant::concat;

  std::size_t n = linear(e, e);
  n += conv(mask + (c.variant == Variant::concat ? img : 0), ch(0), 3);
  if (branch) n += conv(img, ch(0), 3);
  for (int i = 0; i < c.depth; ++i) {
    n += block(ch(i)) + conv(ch(i), ch(i + 1), 2);
    n += conv(ch(i + 1) + ch(i), ch(i), 3) + block(ch(i));
    if (branch) {
      n += conv(ch(i), ch(i), 3);
      if (i + 1 < c.depth) n += conv(ch(i), ch(i + 1), 2);
      if (c.variant == Variant::ff_parser) {
        const auto s = static_cast<std::size_t>(c.image_size >> i);
        n += ch(i) * s * s;
      }
    }
  }
  n += block(ch(c.depth));
  n += conv(ch(0), mask, 3);
  return n;
}

TEST(Model, ParameterCountsMatchArchitecture) {
  for (auto v : kVariants) {
    for (int img : {0, 1}) {
      const auto cfg = small_config(v, img);
      EXPECT_EQ(DenoiserModel::build(cfg, 1).parameter_count(), expected_parameter_count(cfg)) << to_string(v);
    }
  }
}

TEST(Model, ParameterCountRegressionConstants) {
  // Desk-scale configuration used by the experiments.
  auto cfg = [](Variant v) {
    ModelConfig c;
    c.variant = v;
    c.base_channels = 8;
    c.depth = 2;
    c.time_embed_dim = 16;
    c.image_size = 16;
    return c;
  };
  EXPECT_EQ(DenoiserModel::build(cfg(Variant::concat), 1).parameter_count(), 43241u);
  EXPECT_EQ(DenoiserModel::build(cfg(Variant::encoder_sum), 1).parameter_count(), 46681u);
  EXPECT_EQ(DenoiserModel::build(cfg(Variant::ff_parser), 1).parameter_count(), 49753u);
}

TEST(Model, SameSeedSameParameters) {
  for (auto v : kVariants) {
    const auto a = DenoiserModel::build(small_config(v), 42);
    const auto b = DenoiserModel::build(small_config(v), 42);
    const auto c = DenoiserModel::build(small_config(v), 43);
    bool differs = false;
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
      EXPECT_EQ(a.parameters()[i].tensor.values(), b.parameters()[i].tensor.values());
      differs |= a.parameters()[i].tensor.values() != c.parameters()[i].tensor.values();
    }
    EXPECT_TRUE(differs);
  }
}

TEST(Model, OutputShapeEqualsInputShape) {
  Rng rng(1);
  const std::vector<int> t{1, 500, 1000};
  for (auto v : kVariants) {
    const auto m = DenoiserModel::build(small_config(v), 1);
    const auto x = randn({3, 1, 8, 8}, rng);
    const auto y = randn({3, 1, 8, 8}, rng);
    EXPECT_EQ(m.forward(x, t, y).shape(), x.shape());
    const auto u = DenoiserModel::build(small_config(v, 0), 1);
    EXPECT_EQ(u.forward(x, t, {}).shape(), x.shape());
  }
}

TEST(Model, ConditionSensitivity) {
  Rng rng(2);
  const std::vector<int> t{300, 300};
  for (auto v : kVariants) {
    const auto m = DenoiserModel::build(small_config(v), 3);
    const auto x = randn({2, 1, 8, 8}, rng);
    const auto y = randn({2, 1, 8, 8}, rng);
    auto y2 = y.clone();
    y2.mutable_data()[10] += 0.5;
    const auto a = m.forward(x, t, y), b = m.forward(x, t, y2);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) diff += std::abs(a.data()[i] - b.data()[i]);
    EXPECT_GT(diff, 1e-8) << to_string(v);
  }
}

TEST(Model, ConditionPresenceIsChecked) {
  Rng rng(3);
  const std::vector<int> t{1};
  const auto x = randn({1, 1, 8, 8}, rng);
  EXPECT_THROW(DenoiserModel::build(small_config(Variant::concat), 1).forward(x, t, {}), ConfigError);
  EXPECT_THROW(DenoiserModel::build(small_config(Variant::concat, 0), 1).forward(x, t, x), ConfigError);
  EXPECT_THROW(DenoiserModel::build(small_config(Variant::concat), 1).forward(randn({1, 1, 4, 4}, rng), t, x),
               ShapeError);
}

TEST(Model, InvalidConfigs) {
  auto c = small_config(Variant::concat);
  c.image_size = 6;  // not divisible by 2^depth
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config(Variant::concat);
  c.time_embed_dim = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(variant_from_string("unet"), ConfigError);
  EXPECT_EQ(variant_from_string("ff_parser"), Variant::ff_parser);
}

TEST(Model, EveryParameterReceivesGradient) {
  Rng rng(4);
  const std::vector<int> t{5, 400, 990};
  for (auto v : kVariants) {
    const auto m = DenoiserModel::build(small_config(v), 5);
    const auto x = randn({3, 1, 8, 8}, rng);
    const auto y = randn({3, 1, 8, 8}, rng);
    testing::random_projection(m.forward(x, t, y), 6).backward();
    for (const auto& p : m.parameters()) {
      double norm = 0.0;
      for (double g : p.tensor.grad()) norm += g * g;
      EXPECT_GT(norm, 0.0) << to_string(v) << " " << p.name;
    }
  }
}

TEST(Model, CompositeForwardMatchesFiniteDifferences) {
  Rng rng(7);
  ModelConfig c = small_config(Variant::ff_parser);
  c.base_channels = 2;
  c.depth = 1;
  c.image_size = 4;
  c.time_embed_dim = 4;
  const auto m = DenoiserModel::build(c, 8);
  auto x = testing::random_leaf({2, 1, 4, 4}, rng);
  const auto y = randn({2, 1, 4, 4}, rng);
  const std::vector<int> t{3, 700};
  auto inputs = m.parameter_tensors();
  inputs.push_back(x);
  EXPECT_LT(testing::gradcheck(inputs, [&] { return testing::random_projection(m.forward(x, t, y), 9); }, 1e-6),
            1e-3);
}

TEST(Model, CloneIsIndependentAndAssignChecksShapes) {
  const auto a = DenoiserModel::build(small_config(Variant::concat), 1);
  auto b = a.clone();
  b.parameter_tensors()[0].mutable_data()[0] += 1.0;
  EXPECT_NE(a.parameters()[0].tensor.data()[0], b.parameters()[0].tensor.data()[0]);
  b.assign_parameters(a.parameters());
  EXPECT_EQ(a.parameters()[0].tensor.data()[0], b.parameters()[0].tensor.data()[0]);
  const auto other = DenoiserModel::build(small_config(Variant::encoder_sum), 1);
  EXPECT_THROW(b.assign_parameters(other.parameters()), ShapeError);
  EXPECT_THROW(a.parameter("nope"), ShapeError);
}

TEST(TimeEmbedding, ZeroTimestep) {
  const auto e = sinusoidal_time_embedding(0, 16, 1000);
  for (std::size_t i = 0; i < e.size(); i += 2) {
    EXPECT_EQ(e[i], 0.0);
    EXPECT_EQ(e[i + 1], 1.0);
  }
  EXPECT_THROW(sinusoidal_time_embedding(1, 5, 1000), ConfigError);
}

TEST(TimeEmbedding, DistinctTimestepsAreSeparated) {
  constexpr int kSteps = 64;
  for (int a = 0; a <= kSteps; ++a) {
    const auto ea = sinusoidal_time_embedding(a, 8, kSteps);
    for (int b = a + 1; b <= kSteps; ++b) {
      const auto eb = sinusoidal_time_embedding(b, 8, kSteps);
      double d = 0.0;
      for (std::size_t i = 0; i < ea.size(); ++i) d += (ea[i] - eb[i]) * (ea[i] - eb[i]);
      EXPECT_GT(d, 1e-6) << a << " vs " << b;
    }
  }
}

TEST(SpectralGate, ZeroGateGivesZero) {
  Rng rng(10);
  const auto y = spectral_gate(randn({2, 3, 8, 8}, rng), Tensor::zeros({3, 8, 8}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(SpectralGate, GateGradientOnEightByEight) {
  Rng rng(11);
  const auto x = randn({2, 2, 8, 8}, rng);
  auto gate = testing::random_leaf({2, 8, 8}, rng);
  EXPECT_LT(testing::gradcheck({gate}, [&] { return testing::random_projection(spectral_gate(x, gate), 12); }), 1e-3);
}

TEST(SpectralGate, UnbatchedInput) {
  Rng rng(13);
  const auto x = randn({2, 4, 4}, rng);
  const auto y = spectral_gate(x, Tensor::full({2, 4, 4}, 1.0));
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-12);
}

class CheckpointTest : public ::testing::Test {
 protected:
  testing::TempDir dir;
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  Rng rng(14);
  const std::vector<int> t{2, 600};
  const auto x = randn({2, 1, 8, 8}, rng);
  const auto y = randn({2, 1, 8, 8}, rng);
  for (auto v : kVariants) {
    auto cfg = small_config(v);
    cfg.prediction = Prediction::mask;
    const auto m = DenoiserModel::build(cfg, 15);
    const auto path = dir / (std::string(to_string(v)) + ".ckpt");
    save_checkpoint(m, path);
    const auto back = load_checkpoint(path, v);
    EXPECT_EQ(back.config(), cfg);
    EXPECT_EQ(read_checkpoint_config(path), cfg);
    ASSERT_EQ(back.parameters().size(), m.parameters().size());
    for (std::size_t i = 0; i < m.parameters().size(); ++i) {
      EXPECT_EQ(back.parameters()[i].name, m.parameters()[i].name);
      EXPECT_EQ(back.parameters()[i].tensor.values(), m.parameters()[i].tensor.values());
    }
    EXPECT_EQ(back.forward(x, t, y).values(), m.forward(x, t, y).values());
  }
}

TEST_F(CheckpointTest, WrongVariantIsFormatError) {
  save_checkpoint(DenoiserModel::build(small_config(Variant::concat), 1), dir / "m.ckpt");
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt", Variant::ff_parser), FormatError);
}

TEST_F(CheckpointTest, CorruptFilesAreFormatErrors) {
  save_checkpoint(DenoiserModel::build(small_config(Variant::concat), 1), dir / "m.ckpt");
  auto bytes = read_file(dir / "m.ckpt");

  auto write = [&](const std::string& name, const std::string& data) {
    std::ofstream(dir / name, std::ios::binary) << data;
    return dir / name;
  };
  EXPECT_THROW(load_checkpoint(write("trunc.ckpt", bytes.substr(0, bytes.size() / 2))), FormatError);
  EXPECT_THROW(load_checkpoint(write("trail.ckpt", bytes + "x")), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(load_checkpoint(write("magic.ckpt", bad_magic)), FormatError);
  auto bad_version = bytes;
  bad_version[8] = static_cast<char>(kCheckpointVersion + 1);
  EXPECT_THROW(load_checkpoint(write("version.ckpt", bad_version)), FormatError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST(Prediction, StringRoundTrip) {
  for (auto p : {Prediction::epsilon, Prediction::mask, Prediction::logits}) {
    EXPECT_EQ(prediction_from_string(to_string(p)), p);
  }
  EXPECT_THROW(prediction_from_string("x0"), ConfigError);
}

}  // namespace
}  // namespace diffseg
