#pragma once

#include <span>
#include <vector>

#include "diffseg/tensor.hpp"

namespace diffseg {

// Elementwise arithmetic. The second operand must match the first's shape or
// hold a single element, which is broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

enum class ElementwiseKind { add, sub, mul };
Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);

/// 2-D cross-correlation over NCHW input with an FCkhkw kernel. The optional
/// bias has shape [F].
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad, const Tensor& bias = {});

enum class Activation { relu, silu, sigmoid };
Tensor nonlinear(Activation kind, const Tensor& x);
inline Tensor relu(const Tensor& x) { return nonlinear(Activation::relu, x); }
inline Tensor silu(const Tensor& x) { return nonlinear(Activation::silu, x); }
inline Tensor sigmoid(const Tensor& x) { return nonlinear(Activation::sigmoid, x); }

enum class Reduction { sum, mean };
/// Reduces over `axes` (removed from the result shape). An empty list is the
/// identity.
Tensor reduce(Reduction kind, const Tensor& x, std::span<const std::size_t> axes);
Tensor sum(const Tensor& x, std::span<const std::size_t> axes);
Tensor mean(const Tensor& x, std::span<const std::size_t> axes);
/// Reductions over every axis, returning a scalar.
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

/// x[M,N] + b[N]
Tensor add_rowwise(const Tensor& x, const Tensor& bias);
/// x[B,C,H,W] + v[B,C], broadcast over the spatial extent.
Tensor add_channelwise(const Tensor& x, const Tensor& v);
/// Concatenates NCHW tensors along C.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Nearest-neighbour 2x upsampling of NCHW input.
Tensor upsample2x(const Tensor& x);

/// Mean of squared differences over all elements.
Tensor mse_loss(const Tensor& pred, const Tensor& target);
/// Per-sample weighted variant: mean over the batch (axis 0) of
/// weight[b] * mean squared error of sample b.
Tensor mse_loss(const Tensor& pred, const Tensor& target, std::span<const double> sample_weights);

inline constexpr double kDiceSmoothing = 1.0;

/// mix * soft Dice loss + (1 - mix) * binary cross-entropy, both from logits.
/// Dice is computed per sample (axis 0) with additive smoothing kDiceSmoothing
/// and averaged; cross-entropy is averaged over every element.
Tensor dice_ce_loss(const Tensor& logits, const Tensor& target_mask, double mix = 0.5);

}  // namespace diffseg
