#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "diffseg/csv.hpp"
#include "diffseg/diffusion.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/metrics.hpp"
#include "diffseg/ops.hpp"
#include "support/tempdir.hpp"

namespace diffseg {
namespace {

TEST(LinearSchedule, EndpointsAndMonotonicity) {
  const auto s = linear_schedule();
  ASSERT_EQ(s.steps, 1000);
  EXPECT_DOUBLE_EQ(s.betas.front(), 1e-4);
  EXPECT_DOUBLE_EQ(s.betas.back(), 0.02);
  for (int t = 2; t <= s.steps; ++t) {
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    EXPECT_NEAR(s.beta(t) - s.beta(t - 1), (0.02 - 1e-4) / 999.0, 1e-15);
  }
  EXPECT_EQ(s.alpha_bar(0), 1.0);
}

TEST(LinearSchedule, TerminalAlphaBarMatchesDirectProduct) {
  const auto s = linear_schedule();
  double product = 1.0;
  for (int i = 0; i < 1000; ++i) product *= 1.0 - (1e-4 + (0.02 - 1e-4) * i / 999.0);
  EXPECT_NEAR(s.alpha_bar(1000), product, 1e-15);
  // Regression constant from the loop above.
  EXPECT_NEAR(s.alpha_bar(1000), 4.035829765e-05, 1e-13);
}

TEST(LinearSchedule, UnitPartitionOfSignalAndNoise) {
  const auto s = linear_schedule();
  for (int t = 1; t <= s.steps; ++t) {
    const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1.0 - s.alpha_bar(t));
    EXPECT_NEAR(a * a + b * b, 1.0, 4e-16);
  }
}

TEST(LinearSchedule, RejectsInvalidBounds) {
  EXPECT_THROW(linear_schedule(1), ConfigError);
  EXPECT_THROW(linear_schedule(10, 0.0, 0.02), ConfigError);
  EXPECT_THROW(linear_schedule(10, 0.03, 0.02), ConfigError);
  EXPECT_THROW(linear_schedule(10, 1e-4, 1.0), ConfigError);
  EXPECT_THROW(schedule_from_betas({}), ConfigError);
}

TEST(LinearSchedule, CsvHasOneRowPerStep) {
  testing::TempDir dir;
  write_schedule_csv(linear_schedule(20), dir / "s.csv");
  const auto table = CsvTable::read(dir / "s.csv");
  EXPECT_EQ(table.header(), (std::vector<std::string>{"t", "beta", "alpha", "alpha_bar"}));
  EXPECT_EQ(table.rows().size(), 20u);
}

TEST(ForwardSample, Limits) {
  Rng rng(1);
  const auto x0 = randn({2, 1, 3, 3}, rng);
  const auto eps = randn({2, 1, 3, 3}, rng);
  EXPECT_EQ(forward_sample(x0, eps, 1.0).values(), x0.values());
  EXPECT_EQ(forward_sample(x0, eps, 0.0).values(), eps.values());
  EXPECT_THROW(forward_sample(x0, eps, 1.5), ConfigError);
}

TEST(ForwardSample, RejectsBadTimestepsAndShapes) {
  const auto s = linear_schedule(10);
  const auto x0 = Tensor::zeros({2, 4});
  EXPECT_THROW(forward_sample(x0, 0, x0, s), ConfigError);
  EXPECT_THROW(forward_sample(x0, 11, x0, s), ConfigError);
  EXPECT_THROW(forward_sample(x0, 1, Tensor::zeros({2, 3}), s), ShapeError);
  const std::vector<int> one{1};
  EXPECT_THROW(forward_sample(x0, one, x0, s), ShapeError);
}

TEST(ForwardSample, PerSampleTimesteps) {
  const auto s = linear_schedule();
  const auto x0 = Tensor::full({2, 3}, 1.0);
  const auto eps = Tensor::full({2, 3}, 0.5);
  const std::vector<int> t{1, 500};
  const auto xt = forward_sample(x0, t, eps, s);
  for (std::size_t b = 0; b < 2; ++b) {
    const double expect = std::sqrt(s.alpha_bar(t[b])) + 0.5 * std::sqrt(1.0 - s.alpha_bar(t[b]));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(xt.data()[b * 3 + i], expect);
  }
}

TEST(ForwardSample, MonteCarloMomentsWithinThreeStandardErrors) {
  const auto s = linear_schedule();
  const double x0v = 0.7;
  const std::size_t n = 10000;
  Rng rng(2024);
  for (int t : {1, 250, 500, 750, 1000}) {
    const auto x0 = Tensor::full({n, 1}, x0v);
    const auto xt = forward_sample(x0, t, randn({n, 1}, rng), s);
    double mean = 0.0;
    for (double v : xt.data()) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xt.data()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n - 1);
    const double true_var = 1.0 - s.alpha_bar(t);
    const double se_mean = std::sqrt(true_var / static_cast<double>(n));
    const double se_var = true_var * std::sqrt(2.0 / static_cast<double>(n - 1));
    EXPECT_LT(std::abs(mean - std::sqrt(s.alpha_bar(t)) * x0v), 3.0 * se_mean) << "t=" << t;
    EXPECT_LT(std::abs(var - true_var), 3.0 * se_var) << "t=" << t;
  }
}

TEST(Conversions, RoundTripAndExactInverse) {
  const auto s = linear_schedule();
  Rng rng(3);
  const auto x0 = randn({4, 1, 3, 3}, rng);
  const auto eps = randn({4, 1, 3, 3}, rng);
  const std::vector<int> t{1, 10, 500, 1000};
  const auto xt = forward_sample(x0, t, eps, s);
  const auto back = eps_to_x0(xt, x0_to_eps(xt, x0, t, s), t, s);
  for (std::size_t i = 0; i < x0.numel(); ++i) EXPECT_NEAR(back.data()[i], x0.data()[i], 1e-10);
  const auto direct = eps_to_x0(xt, eps, t, s);
  for (std::size_t i = 0; i < x0.numel(); ++i) EXPECT_NEAR(direct.data()[i], x0.data()[i], 1e-10);
}

TEST(Conversions, PerturbationSensitivity) {
  const auto s = linear_schedule();
  Rng rng(4);
  for (int t : {5, 200, 900}) {
    const std::vector<int> ts{t};
    const auto xt = randn({1, 16}, rng);
    const auto e1 = randn({1, 16}, rng);
    const auto delta = randn({1, 16}, rng);
    const auto e2 = add(e1, scale(delta, 1e-3));
    const auto d = sub(eps_to_x0(xt, e2, ts, s), eps_to_x0(xt, e1, ts, s));
    const double factor = std::sqrt(1.0 - s.alpha_bar(t)) / std::sqrt(s.alpha_bar(t));
    for (std::size_t i = 0; i < 16; ++i) {
      EXPECT_NEAR(d.data()[i], -factor * 1e-3 * delta.data()[i], 1e-9 * (1.0 + factor));
    }
  }
}

TEST(Conversions, SingularCoefficients) {
  const auto x = Tensor::zeros({1, 2});
  EXPECT_THROW(eps_to_x0(x, x, 0.0), SingularityError);
  EXPECT_THROW(x0_to_eps(x, x, 1.0), SingularityError);
}

// Fixed x0 and eps held by the test; the oracle returns exactly the target.
struct Fixture {
  DiffusionSchedule sched = linear_schedule();
  Rng rng{5};
  Tensor x0 = randn({3, 1, 4, 4}, rng);
  Tensor eps = randn({3, 1, 4, 4}, rng);
  std::vector<int> t{1, 300, 1000};
};

TEST(EpsilonLoss, OracleAndZeroModel) {
  Fixture f;
  FunctionDenoiser oracle([&](const Tensor&, std::span<const int>, const Tensor&) { return f.eps; },
                          Prediction::epsilon, false);
  EXPECT_EQ(epsilon_loss(oracle, f.x0, {}, f.t, f.eps, f.sched).item(), 0.0);

  FunctionDenoiser zero([](const Tensor& x, std::span<const int>, const Tensor&) { return Tensor::zeros(x.shape()); },
                        Prediction::epsilon, false);
  double sq = 0.0;
  for (double v : f.eps.data()) sq += v * v;
  EXPECT_NEAR(epsilon_loss(zero, f.x0, {}, f.t, f.eps, f.sched).item(), sq / static_cast<double>(f.eps.numel()),
              1e-12);
}

TEST(EpsilonLoss, PassesConditionThrough) {
  Fixture f;
  const auto y = Tensor::full({3, 1, 4, 4}, 0.25);
  bool saw_y = false;
  FunctionDenoiser probe(
      [&](const Tensor& x, std::span<const int>, const Tensor& cond) {
        saw_y = cond.defined() && cond.data()[0] == 0.25;
        return Tensor::zeros(x.shape());
      },
      Prediction::epsilon, true);
  epsilon_loss(probe, f.x0, y, f.t, f.eps, f.sched);
  EXPECT_TRUE(saw_y);
}

TEST(EpsilonLoss, WeightedLossScalesPerSample) {
  Fixture f;
  FunctionDenoiser zero([](const Tensor& x, std::span<const int>, const Tensor&) { return Tensor::zeros(x.shape()); },
                        Prediction::epsilon, false);
  TimestepProfile rising{{1, 500, 1000}, {0.0, 0.2, 1.0}, 1, "p"};
  const auto w = derivative_weights(rising, 0.05, 1000);
  const std::size_t per = 16;
  double expect = 0.0;
  for (std::size_t b = 0; b < 3; ++b) {
    const std::vector<int> tb{f.t[b]};
    const auto xb = Tensor::from({1, 1, 4, 4}, f.x0.data().subspan(b * per, per));
    const auto eb = Tensor::from({1, 1, 4, 4}, f.eps.data().subspan(b * per, per));
    const double plain = epsilon_loss(zero, xb, {}, tb, eb, f.sched).item();
    const double weighted = epsilon_loss(zero, xb, {}, tb, eb, f.sched, &w).item();
    EXPECT_NEAR(weighted, w.at(f.t[b]) * plain, 1e-12);
    expect += w.at(f.t[b]) * plain / 3.0;
  }
  EXPECT_NEAR(epsilon_loss(zero, f.x0, {}, f.t, f.eps, f.sched, &w).item(), expect, 1e-12);
}

TEST(EpsilonLoss, WeightsMustCoverSchedule) {
  Fixture f;
  FunctionDenoiser zero([](const Tensor& x, std::span<const int>, const Tensor&) { return Tensor::zeros(x.shape()); },
                        Prediction::epsilon, false);
  const TimestepWeights short_w(std::vector<double>(10, 1.0));
  EXPECT_THROW(epsilon_loss(zero, f.x0, {}, f.t, f.eps, f.sched, &short_w), ConfigError);
  EXPECT_THROW(epsilon_loss(zero, f.x0, {}, f.t, Tensor::zeros({3, 1, 4, 3}), f.sched), ShapeError);
}

TEST(X0Loss, PerfectModelAndDatasetMean) {
  Fixture f;
  FunctionDenoiser perfect([&](const Tensor&, std::span<const int>, const Tensor&) { return f.x0; },
                           Prediction::mask, false);
  EXPECT_EQ(x0_loss(perfect, f.x0, f.t, f.eps, f.sched).item(), 0.0);

  // Dataset statistics oracle: predicting the pixelwise mean mask leaves the
  // pixelwise population variance.
  Rng rng(6);
  auto masks = Tensor::zeros({8, 1, 4, 4});
  for (auto& v : masks.mutable_data()) v = uniform01(rng) < 0.3 ? 1.0 : -1.0;
  std::vector<double> m(16, 0.0);
  for (std::size_t b = 0; b < 8; ++b)
    for (std::size_t i = 0; i < 16; ++i) m[i] += masks.data()[b * 16 + i] / 8.0;
  double variance = 0.0;
  for (std::size_t b = 0; b < 8; ++b)
    for (std::size_t i = 0; i < 16; ++i) variance += std::pow(masks.data()[b * 16 + i] - m[i], 2) / 128.0;
  FunctionDenoiser mean_model(
      [&](const Tensor& x, std::span<const int>, const Tensor&) {
        auto out = Tensor::zeros(x.shape());
        for (std::size_t b = 0; b < x.dim(0); ++b)
          for (std::size_t i = 0; i < 16; ++i) out.mutable_data()[b * 16 + i] = m[i];
        return out;
      },
      Prediction::mask, false);
  const std::vector<int> t(8, 400);
  EXPECT_NEAR(x0_loss(mean_model, masks, t, randn({8, 1, 4, 4}, rng), f.sched).item(), variance, 1e-12);
}

TEST(X0Loss, IdentityModelAtFirstStep) {
  const auto s = linear_schedule();
  Rng rng(7);
  const std::size_t n = 20000;
  auto x0 = Tensor::zeros({n, 1});
  for (auto& v : x0.mutable_data()) v = uniform01(rng) < 0.4 ? 1.0 : -1.0;
  const auto eps = randn({n, 1}, rng);
  FunctionDenoiser identity([](const Tensor& x, std::span<const int>, const Tensor&) { return x; }, Prediction::mask,
                            false);
  const std::vector<int> t(n, 1);
  double e_eps2 = 0.0, e_x02 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    e_eps2 += eps.data()[i] * eps.data()[i] / static_cast<double>(n);
    e_x02 += x0.data()[i] * x0.data()[i] / static_cast<double>(n);
  }
  const double ab = s.alpha_bar(1);
  const double closed = (1.0 - ab) * e_eps2 + std::pow(1.0 - std::sqrt(ab), 2) * e_x02;
  EXPECT_NEAR(x0_loss(identity, x0, t, eps, s).item(), closed, 0.02 * closed);
}

TEST(DdpmSample, SingleStepChainReturnsOneShotEstimate) {
  const auto s = schedule_from_betas({0.3});
  FunctionDenoiser shrink([](const Tensor& x, std::span<const int>, const Tensor&) { return scale(x, 0.4); },
                          Prediction::mask, false);
  Rng rng(8);
  const auto sample = ddpm_sample(shrink, Prediction::mask, {2, 1, 3, 3}, {}, s, rng);
  Rng replay(8);
  const auto x_T = randn({2, 1, 3, 3}, replay);
  for (std::size_t i = 0; i < x_T.numel(); ++i) {
    EXPECT_NEAR(sample.data()[i], std::clamp(0.4 * x_T.data()[i], -1.0, 1.0), 1e-15);
  }
}

TEST(DdpmSample, OracleRecoversTargetAndIsDeterministic) {
  const auto s = linear_schedule(50, 1e-3, 0.2);
  auto target = Tensor::from({1, 1, 2, 2}, {1.0, -1.0, -1.0, 1.0});
  FunctionDenoiser mask_oracle([&](const Tensor&, std::span<const int>, const Tensor&) { return target; },
                               Prediction::mask, false);
  Rng rng(9);
  const auto x = ddpm_sample(mask_oracle, Prediction::mask, {1, 1, 2, 2}, {}, s, rng);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(x.data()[i], target.data()[i], 1e-12);

  // Epsilon model that always reports the exact noise for that target.
  FunctionDenoiser eps_oracle(
      [&](const Tensor& xt, std::span<const int> t, const Tensor&) { return x0_to_eps(xt, target, t, s); },
      Prediction::epsilon, false);
  Rng a(10), b(10);
  const auto sa = ddpm_sample(eps_oracle, Prediction::epsilon, {1, 1, 2, 2}, {}, s, a);
  const auto sb = ddpm_sample(eps_oracle, Prediction::epsilon, {1, 1, 2, 2}, {}, s, b);
  EXPECT_EQ(sa.values(), sb.values());
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(sa.data()[i], target.data()[i], 1e-9);
}

TEST(DdpmSample, PredictionMismatchIsConfigError) {
  const auto s = linear_schedule(10);
  FunctionDenoiser eps_model([](const Tensor& x, std::span<const int>, const Tensor&) { return x; },
                             Prediction::epsilon, false);
  Rng rng(11);
  EXPECT_THROW(ddpm_sample(eps_model, Prediction::mask, {1, 1, 2, 2}, {}, s, rng), ConfigError);
  EXPECT_THROW(ddpm_sample(eps_model, Prediction::logits, {1, 1, 2, 2}, {}, s, rng), ConfigError);
}

TEST(SampleTimestep, DegenerateAndReproducible) {
  Rng rng(12);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_timestep(rng, 1), 1);
  Rng a(13), b(13);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_timestep(a, 1000), sample_timestep(b, 1000));
  EXPECT_THROW(sample_timestep(rng, 0), ConfigError);
}

TEST(SampleTimestep, ChiSquareUniformity) {
  constexpr int kSteps = 20;
  constexpr int kDraws = 100000;
  Rng rng(14);
  std::vector<int> counts(kSteps, 0);
  for (int i = 0; i < kDraws; ++i) {
    const int t = sample_timestep(rng, kSteps);
    ASSERT_GE(t, 1);
    ASSERT_LE(t, kSteps);
    ++counts[static_cast<std::size_t>(t - 1)];
  }
  const double expected = static_cast<double>(kDraws) / kSteps;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 36.191);  // chi-square critical value, 19 dof, alpha 0.01
}

TEST(TimestepWeights, Validation) {
  EXPECT_NO_THROW(TimestepWeights(std::vector<double>{0.5, 1.5}));
  EXPECT_THROW(TimestepWeights(std::vector<double>{}), ConfigError);
  EXPECT_THROW(TimestepWeights(std::vector<double>{1.0, 2.0}), ConfigError);
  EXPECT_THROW(TimestepWeights(std::vector<double>{-1.0, 3.0}), ConfigError);
  EXPECT_THROW(TimestepWeights(std::vector<double>{NAN, 1.0}), ConfigError);
}

TEST(TimestepWeights, CsvRoundTripAndMeanCheckOnLoad) {
  testing::TempDir dir;
  const TimestepWeights w(std::vector<double>{0.25, 1.75, 1.0, 1.0});
  write_weights_csv(w, dir / "w.csv");
  EXPECT_EQ(read_weights_csv(dir / "w.csv").weights, w.weights);
  std::ofstream(dir / "bad.csv") << "t,weight\n1,1\n2,2\n";
  EXPECT_THROW(read_weights_csv(dir / "bad.csv"), FormatError);
  std::ofstream(dir / "gap.csv") << "t,weight\n1,1\n3,1\n";
  EXPECT_THROW(read_weights_csv(dir / "gap.csv"), FormatError);
}

}  // namespace
}  // namespace diffseg
