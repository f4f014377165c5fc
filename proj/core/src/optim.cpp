#include "diffseg/optim.hpp"

#include <cmath>

#include "diffseg/errors.hpp"

namespace diffseg {

void adam_step(std::vector<Tensor>& params, const AdamOptions& options, AdamState& state) {
  for (const auto& p : params) {
    if (!p.defined() || !p.requires_grad() || p.grad().size() != p.numel()) {
      throw StateError("adam_step: parameter has no gradient buffer");
    }
  }
  if (state.m.empty()) {
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  } else if (state.m.size() != params.size()) {
    throw StateError("adam_step: optimizer state does not match parameter list");
  }

  ++state.step;
  const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_data();
    auto grads = params[k].mutable_grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grads[i];
      m[i] = options.beta1 * m[i] + (1.0 - options.beta1) * g;
      v[i] = options.beta2 * v[i] + (1.0 - options.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      values[i] -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
      grads[i] = 0.0;
    }
  }
}

}  // namespace diffseg
