#include <benchmark/benchmark.h>

#include <vector>

#include "diffseg/model.hpp"
#include "diffseg/ops.hpp"
#include "diffseg/optim.hpp"
#include "diffseg/rng.hpp"

namespace {

using namespace diffseg;

ModelConfig config(int variant, int size) {
  ModelConfig c;
  c.variant = static_cast<Variant>(variant);
  c.base_channels = 8;
  c.image_size = size;
  return c;
}

// Args: variant (0 concat, 1 encoder_sum, 2 ff_parser), image size.
void BM_ModelForward(benchmark::State& state) {
  const auto c = config(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  const auto model = DenoiserModel::build(c, 1);
  const auto s = static_cast<std::size_t>(c.image_size);
  Rng rng(2);
  const auto x = randn({16, 1, s, s}, rng), y = randn({16, 1, s, s}, rng);
  const std::vector<int> t(16, 500);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, t, y));
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_ModelForward)->ArgsProduct({{0, 1, 2}, {16, 32}})->Unit(benchmark::kMillisecond);

// One Adam training step: forward, MSE, backward, update.
void BM_TrainStep(benchmark::State& state) {
  const auto c = config(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  auto model = DenoiserModel::build(c, 1);
  Adam adam(model.parameter_tensors(), AdamOptions{});
  const auto s = static_cast<std::size_t>(c.image_size);
  Rng rng(3);
  const auto x = randn({16, 1, s, s}, rng), y = randn({16, 1, s, s}, rng), eps = randn({16, 1, s, s}, rng);
  const std::vector<int> t(16, 500);
  for (auto _ : state) {
    adam.zero_grad();
    mse_loss(model.forward(x, t, y), eps).backward();
    adam.step();
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_TrainStep)->ArgsProduct({{0, 2}, {16, 32}})->Unit(benchmark::kMillisecond);

}  // namespace
