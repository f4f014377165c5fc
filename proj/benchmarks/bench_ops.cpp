#include <benchmark/benchmark.h>

#include "diffseg/metrics.hpp"
#include "diffseg/ops.hpp"
#include "diffseg/rng.hpp"
#include "diffseg/spectral.hpp"

namespace {

using namespace diffseg;

// Args: channels, spatial size.
void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  Rng rng(1);
  const auto x = randn({16, c, s, s}, rng);
  const auto k = randn({c, c, 3, 3}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, 1, 1));
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_Conv2dForward)->Args({8, 16})->Args({16, 32})->Args({32, 32})->Unit(benchmark::kMicrosecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  Rng rng(2);
  auto x = randn({16, c, s, s}, rng);
  auto k = Tensor::from({c, c, 3, 3}, randn({c, c, 3, 3}, rng).values(), true);
  for (auto _ : state) {
    k.zero_grad();
    sum_all(conv2d(x, k, 1, 1)).backward();
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_Conv2dBackward)->Args({8, 16})->Args({16, 32})->Unit(benchmark::kMicrosecond);

void BM_SpectralGate(benchmark::State& state) {
  const auto s = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  const auto x = randn({16, 8, s, s}, rng);
  const auto gate = Tensor::full({8, s, s}, 1.0);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(spectral_gate(x, gate));
}
BENCHMARK(BM_SpectralGate)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMicrosecond);

void BM_BayesPixelMmse(benchmark::State& state) {
  double ab = 0.5;
  for (auto _ : state) {
    benchmark::DoNotOptimize(bayes_pixel_mmse(0.3, ab));
    ab = ab > 0.9 ? 0.1 : ab + 1e-3;
  }
}
BENCHMARK(BM_BayesPixelMmse);

}  // namespace
