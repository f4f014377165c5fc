#include <gtest/gtest.h>

#include <cmath>

#include "diffseg/errors.hpp"
#include "diffseg/ops.hpp"
#include "diffseg/optim.hpp"
#include "diffseg/spectral.hpp"
#include "support/gradcheck.hpp"

namespace diffseg {
namespace {

using testing::gradcheck;
using testing::random_leaf;
using testing::random_projection;

TEST(Elementwise, AddsAndBroadcasts) {
  const auto a = Tensor::from({2}, {1.0, 2.0});
  const auto b = Tensor::from({2}, {3.0, 4.0});
  EXPECT_EQ(add(a, b).values(), (Buffer{4.0, 6.0}));
  EXPECT_EQ(sub(a, Tensor::scalar(1.0)).values(), (Buffer{0.0, 1.0}));
  EXPECT_THROW(add(a, Tensor::from({3}, {1.0, 2.0, 3.0})), ShapeError);
}

TEST(Elementwise, SquareGradient) {
  auto x = Tensor::scalar(3.0, true);
  mul(x, x).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Elementwise, ScaleByZero) {
  auto x = Tensor::from({2}, {1.0, -1.0}, true);
  const auto y = scale(x, 0.0);
  EXPECT_EQ(y.values(), (Buffer{0.0, 0.0}));
  sum_all(y).backward();
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  Rng rng(1);
  auto a = random_leaf({3, 4}, rng);
  auto b = random_leaf({3, 4}, rng);
  auto s = random_leaf({}, rng);
  for (auto kind : {ElementwiseKind::add, ElementwiseKind::sub, ElementwiseKind::mul}) {
    EXPECT_LT(gradcheck({a, b}, [&] { return random_projection(elementwise(kind, a, b), 2); }), 1e-4);
    EXPECT_LT(gradcheck({a, s}, [&] { return random_projection(elementwise(kind, a, s), 3); }), 1e-4);
  }
  EXPECT_LT(gradcheck({a}, [&] { return random_projection(scale(a, -2.5), 4); }), 1e-4);
}

TEST(Matmul, IdentityAndArithmetic) {
  const auto eye = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  const auto v = Tensor::from({2, 1}, {5.0, -7.0});
  EXPECT_EQ(matmul(eye, v).values(), v.values());
  const auto m = Tensor::from({2, 2}, {1.0, 2.0, 3.0, 4.0});
  const auto ones = Tensor::from({2, 1}, {1.0, 1.0});
  EXPECT_EQ(matmul(m, ones).values(), (Buffer{3.0, 7.0}));
  EXPECT_THROW(matmul(m, Tensor::zeros({3, 1})), ShapeError);
}

TEST(Matmul, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  auto a = random_leaf({4, 5}, rng);
  auto b = random_leaf({5, 3}, rng);
  EXPECT_LT(gradcheck({a, b}, [&] { return random_projection(matmul(a, b), 6); }), 1e-4);
}

TEST(Conv2d, PointwiseIdentity) {
  Rng rng(2);
  const auto x = randn({2, 1, 4, 5}, rng);
  const auto k = Tensor::full({1, 1, 1, 1}, 1.0);
  EXPECT_EQ(conv2d(x, k, 1, 0).values(), x.values());
}

TEST(Conv2d, WindowSumOnConstantInput) {
  const auto x = Tensor::full({1, 1, 5, 5}, 1.0);
  const auto k = Tensor::full({1, 1, 3, 3}, 1.0);
  const auto y = conv2d(x, k, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 5, 5}));
  for (int r = 1; r < 4; ++r)
    for (int c = 1; c < 4; ++c) EXPECT_EQ(y.data()[static_cast<std::size_t>(r * 5 + c)], 9.0);
  EXPECT_EQ(y.data()[0], 4.0);  // corner sees a 2x2 window
}

TEST(Conv2d, RejectsNonIntegralExtent) {
  EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 3, 3}), 2, 1), ShapeError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 1, 3, 3}), 1, 1), ShapeError);
}

TEST(Conv2d, MatchesDirectLoop) {
  Rng rng(9);
  const auto x = randn({2, 3, 7, 7}, rng);
  const auto k = randn({4, 3, 3, 3}, rng);
  const auto bias = randn({4}, rng);
  const auto y = conv2d(x, k, 2, 1, bias);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 4, 4}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t f = 0; f < 4; ++f)
      for (long oy = 0; oy < 4; ++oy)
        for (long ox = 0; ox < 4; ++ox) {
          double acc = bias.data()[f];
          for (std::size_t c = 0; c < 3; ++c)
            for (long i = 0; i < 3; ++i)
              for (long j = 0; j < 3; ++j) {
                const long iy = oy * 2 + i - 1, ix = ox * 2 + j - 1;
                if (iy < 0 || ix < 0 || iy >= 7 || ix >= 7) continue;
                acc += x.data()[((b * 3 + c) * 7 + static_cast<std::size_t>(iy)) * 7 + static_cast<std::size_t>(ix)] *
                       k.data()[((f * 3 + c) * 3 + static_cast<std::size_t>(i)) * 3 + static_cast<std::size_t>(j)];
              }
          EXPECT_NEAR(y.data()[((b * 4 + f) * 4 + static_cast<std::size_t>(oy)) * 4 + static_cast<std::size_t>(ox)],
                      acc, 1e-12);
        }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(3);
  auto x = random_leaf({2, 3, 6, 6}, rng);
  auto k = random_leaf({4, 3, 3, 3}, rng);
  auto bias = random_leaf({4}, rng);
  EXPECT_LT(gradcheck({x, k, bias}, [&] { return random_projection(conv2d(x, k, 1, 1, bias), 7); }), 1e-4);
  auto odd = random_leaf({1, 3, 7, 7}, rng);
  EXPECT_LT(gradcheck({odd, k}, [&] { return random_projection(conv2d(odd, k, 2, 1), 8); }), 1e-4);
  auto k1 = random_leaf({2, 3, 1, 1}, rng);
  EXPECT_LT(gradcheck({x, k1}, [&] { return random_projection(conv2d(x, k1, 1, 0), 9); }), 1e-4);
}

TEST(Nonlinear, KnownValues) {
  EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  auto x = Tensor::scalar(-2.0, true);
  const auto y = relu(x);
  EXPECT_EQ(y.item(), 0.0);
  y.backward();
  EXPECT_EQ(x.grad()[0], 0.0);
  auto z = Tensor::scalar(0.0, true);
  relu(z).backward();
  EXPECT_EQ(z.grad()[0], 0.0);
}

TEST(Nonlinear, SiluGradientAtRandomPoints) {
  Rng rng(4);
  auto x = random_leaf({10}, rng, 2.0);
  EXPECT_LT(gradcheck({x}, [&] { return random_projection(silu(x), 10); }), 1e-5);
  EXPECT_LT(gradcheck({x}, [&] { return random_projection(sigmoid(x), 11); }), 1e-5);
}

TEST(Reduce, MeanSumAndGradient) {
  auto x = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
  const auto m = mean_all(x);
  EXPECT_DOUBLE_EQ(m.item(), 2.0);
  m.backward();
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0 / 3.0);
  const std::vector<std::size_t> none;
  EXPECT_EQ(sum(x, none).values(), x.values());
  const std::vector<std::size_t> bad{1};
  EXPECT_THROW(sum(x, bad), ShapeError);
}

TEST(Reduce, AxesGradientsMatchFiniteDifferences) {
  Rng rng(12);
  auto x = random_leaf({2, 3, 4}, rng);
  const std::vector<std::size_t> axes{0, 2};
  const auto r = sum(x, axes);
  EXPECT_EQ(r.shape(), (Shape{3}));
  EXPECT_LT(gradcheck({x}, [&] { return random_projection(sum(x, axes), 13); }), 1e-4);
  EXPECT_LT(gradcheck({x}, [&] { return random_projection(mean(x, axes), 14); }), 1e-4);
}

TEST(Plumbing, ReshapeConcatUpsampleChannelwiseGradients) {
  Rng rng(15);
  auto a = random_leaf({2, 2, 3, 3}, rng);
  auto b = random_leaf({2, 1, 3, 3}, rng);
  auto v = random_leaf({2, 2}, rng);
  auto m = random_leaf({4, 3}, rng);
  auto r = random_leaf({3}, rng);
  EXPECT_LT(gradcheck({a, b}, [&] { return random_projection(concat_channels(a, b), 16); }), 1e-4);
  EXPECT_LT(gradcheck({a}, [&] { return random_projection(upsample2x(a), 17); }), 1e-4);
  EXPECT_LT(gradcheck({a, v}, [&] { return random_projection(add_channelwise(a, v), 18); }), 1e-4);
  EXPECT_LT(gradcheck({m, r}, [&] { return random_projection(add_rowwise(m, r), 19); }), 1e-4);
  EXPECT_LT(gradcheck({a}, [&] { return random_projection(reshape(a, {6, 6}), 20); }), 1e-4);
}

TEST(MseLoss, ValuesAndGradient) {
  const auto z = Tensor::from({2}, {0.0, 0.0});
  EXPECT_DOUBLE_EQ(mse_loss(z, z).item(), 0.0);
  EXPECT_DOUBLE_EQ(mse_loss(z, Tensor::from({2}, {1.0, 1.0})).item(), 1.0);
  EXPECT_THROW(mse_loss(z, Tensor::zeros({3})), ShapeError);

  Rng rng(21);
  auto p = random_leaf({3, 4}, rng);
  const auto t = randn({3, 4}, rng);
  p.zero_grad();
  mse_loss(p, t).backward();
  for (std::size_t i = 0; i < p.numel(); ++i) {
    EXPECT_NEAR(p.grad()[i], 2.0 * (p.data()[i] - t.data()[i]) / 12.0, 1e-15);
  }
  EXPECT_LT(gradcheck({p}, [&] { return mse_loss(p, t); }), 1e-4);
  const std::vector<double> w{0.5, 2.0, 0.5};
  EXPECT_LT(gradcheck({p}, [&] { return mse_loss(p, t, w); }), 1e-4);
}

// Straight scalar re-implementation of the loss definition.
double reference_dice_ce(std::span<const double> logits, std::span<const double> target, std::size_t batch,
                         double mix) {
  const std::size_t per = logits.size() / batch;
  double dice = 0.0, ce = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    double inter = 0.0, ps = 0.0, ts = 0.0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-logits[i]));
      inter += p * target[i];
      ps += p;
      ts += target[i];
      ce += -(target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p));
    }
    dice += 1.0 - (2.0 * inter + kDiceSmoothing) / (ps + ts + kDiceSmoothing);
  }
  return mix * dice / static_cast<double>(batch) + (1.0 - mix) * ce / static_cast<double>(logits.size());
}

TEST(DiceCeLoss, MatchesScalarReference) {
  Rng rng(22);
  auto logits = random_leaf({3, 1, 4, 4}, rng, 2.0);
  auto target = Tensor::zeros({3, 1, 4, 4});
  for (auto& v : target.mutable_data()) v = uniform01(rng) < 0.4 ? 1.0 : 0.0;
  for (double mix : {0.0, 0.5, 1.0}) {
    EXPECT_NEAR(dice_ce_loss(logits, target, mix).item(), reference_dice_ce(logits.data(), target.data(), 3, mix),
                1e-12);
  }
  EXPECT_LT(gradcheck({logits}, [&] { return dice_ce_loss(logits, target, 0.5); }), 1e-4);
}

TEST(DiceCeLoss, PerfectLogitsNearZero) {
  auto target = Tensor::from({1, 1, 2, 2}, {1.0, 0.0, 1.0, 0.0});
  auto logits = Tensor::from({1, 1, 2, 2}, {40.0, -40.0, 40.0, -40.0});
  EXPECT_NEAR(dice_ce_loss(logits, target).item(), 0.0, 1e-12);
  EXPECT_THROW(dice_ce_loss(logits, Tensor::full({1, 1, 2, 2}, 0.5)), DataError);
  EXPECT_THROW(dice_ce_loss(logits, target, 1.5), ConfigError);
}

TEST(Backward, IdentityDisconnectedAndNonScalar) {
  auto x = Tensor::scalar(2.0, true);
  x.backward();
  EXPECT_EQ(x.grad()[0], 1.0);

  auto a = Tensor::from({2}, {1.0, 2.0}, true);
  auto unused = Tensor::from({2}, {1.0, 2.0}, true);
  sum_all(a).backward();
  EXPECT_EQ(unused.grad()[0], 0.0);
  EXPECT_THROW(a.backward(), ShapeError);
}

TEST(Backward, AccumulatesAcrossCallsAndIsDeterministic) {
  Rng rng(23);
  auto x = random_leaf({1, 2, 5, 5}, rng);
  auto k = random_leaf({3, 2, 3, 3}, rng);
  const auto loss = mean_all(relu(conv2d(x, k, 1, 1)));
  loss.backward();
  const std::vector<double> first(k.grad().begin(), k.grad().end());
  loss.backward();
  for (std::size_t i = 0; i < first.size(); ++i) EXPECT_DOUBLE_EQ(k.grad()[i], 2.0 * first[i]);
  k.zero_grad();
  loss.backward();
  for (std::size_t i = 0; i < first.size(); ++i) EXPECT_EQ(k.grad()[i], first[i]);
}

TEST(Backward, CompositeNetMatchesFiniteDifferences) {
  Rng rng(24);
  auto x = random_leaf({2, 2, 6, 6}, rng);
  auto k1 = random_leaf({4, 2, 3, 3}, rng, 0.5);
  auto k2 = random_leaf({1, 4, 3, 3}, rng, 0.5);
  auto loss = [&] { return mean_all(relu(conv2d(silu(conv2d(x, k1, 1, 1)), k2, 1, 1))); };
  EXPECT_LT(gradcheck({x, k1, k2}, loss), 1e-3);
}

TEST(SpectralGate, UnitGateIsIdentityAndMatchesDft) {
  Rng rng(25);
  const auto x = randn({2, 3, 4, 8}, rng);
  const auto ones = Tensor::full({3, 4, 8}, 1.0);
  const auto y = spectral_gate(x, ones);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-12);

  // Naive oracle: DFT, multiply, inverse DFT, real part.
  auto gate = randn({3, 4, 8}, rng);
  const auto g = spectral_gate(x, gate);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t c = 0; c < 3; ++c) {
      const auto plane = x.data().subspan((b * 3 + c) * 32, 32);
      auto spec = dft2(plane, 4, 8);
      for (std::size_t i = 0; i < 32; ++i) spec[i] *= gate.data()[c * 32 + i];
      const auto back = idft2_real(spec, 4, 8);
      for (std::size_t i = 0; i < 32; ++i) EXPECT_NEAR(g.data()[(b * 3 + c) * 32 + i], back[i], 1e-12);
    }
  }
}

TEST(SpectralGate, GradientsMatchFiniteDifferences) {
  Rng rng(26);
  auto x = random_leaf({2, 2, 4, 4}, rng);
  auto gate = random_leaf({2, 4, 4}, rng);
  EXPECT_LT(gradcheck({x, gate}, [&] { return random_projection(spectral_gate(x, gate), 27); }), 1e-4);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  auto p = Tensor::from({2}, {1.0, -2.0}, true);
  std::vector<Tensor> params{p};
  AdamState state;
  adam_step(params, {}, state);
  EXPECT_EQ(p.values(), (Buffer{1.0, -2.0}));
}

TEST(Adam, DescendsQuadratic) {
  auto x = Tensor::scalar(1.0, true);
  Adam opt({x}, {.lr = 0.1});
  mul(x, x).backward();
  opt.step();
  EXPECT_LT(x.item(), 1.0);
  EXPECT_EQ(x.grad()[0], 0.0);
  for (int i = 0; i < 199; ++i) {
    mul(x, x).backward();
    opt.step();
  }
  EXPECT_LT(std::abs(x.item()), 1e-2);
}

TEST(Adam, MissingGradientIsStateError) {
  std::vector<Tensor> params{Tensor::scalar(1.0)};
  AdamState state;
  EXPECT_THROW(adam_step(params, {}, state), StateError);
}

TEST(Adam, MatchesHandComputedFirstStep) {
  auto x = Tensor::scalar(0.5, true);
  Adam opt({x}, {.lr = 0.01});
  scale(x, 3.0).backward();  // gradient 3
  opt.step();
  // m_hat = 3, v_hat = 9 after bias correction.
  EXPECT_NEAR(x.item(), 0.5 - 0.01 * 3.0 / (3.0 + 1e-8), 1e-15);
}

}  // namespace
}  // namespace diffseg
