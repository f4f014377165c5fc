#pragma once

#include <complex>
#include <span>
#include <vector>

#include "diffseg/tensor.hpp"

namespace diffseg {

/// Naive 2-D DFT of a row-major H x W real plane.
std::vector<std::complex<double>> dft2(std::span<const double> plane, std::size_t height, std::size_t width);
/// Inverse of dft2, keeping only the real part.
std::vector<double> idft2_real(std::span<const std::complex<double>> spectrum, std::size_t height,
                               std::size_t width);

/// Frequency-domain feature parser: per channel, multiply the 2-D spectrum by
/// a real gate and transform back, dropping the imaginary residue.
/// `feature` is [B,C,H,W] or [C,H,W]; `gate` is [C,H,W]. Differentiable in both.
Tensor spectral_gate(const Tensor& feature, const Tensor& gate);

}  // namespace diffseg
