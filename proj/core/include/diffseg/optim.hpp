#pragma once

#include <cstdint>
#include <vector>

#include "diffseg/tensor.hpp"

namespace diffseg {

struct AdamOptions {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment buffers, one pair per parameter tensor.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update on every parameter, followed by zeroing the
/// gradients. Throws StateError when a parameter carries no gradient buffer.
void adam_step(std::vector<Tensor>& params, const AdamOptions& options, AdamState& state);

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), options_(options) {}

  void step() { adam_step(params_, options_, state_); }
  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }
  const AdamOptions& options() const { return options_; }
  const AdamState& state() const { return state_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  AdamState state_;
};

}  // namespace diffseg
