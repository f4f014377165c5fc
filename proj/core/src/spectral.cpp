#include "diffseg/spectral.hpp"

#include <Eigen/Core>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "diffseg/errors.hpp"

namespace diffseg {

namespace {

using CMat = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Symmetric DFT matrix F[k][n] = exp(-2 pi i k n / N).
const CMat& dft_matrix(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, CMat> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  CMat f(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      // Reduce k*j mod n first so the angle stays exact for large products.
      const double angle = -2.0 * std::numbers::pi * static_cast<double>((k * j) % n) / static_cast<double>(n);
      f(static_cast<long>(k), static_cast<long>(j)) = {std::cos(angle), std::sin(angle)};
    }
  }
  return cache.emplace(n, std::move(f)).first->second;
}

}  // namespace

std::vector<std::complex<double>> dft2(std::span<const double> plane, std::size_t height, std::size_t width) {
  if (plane.size() != height * width) throw ShapeError("dft2: plane size mismatch");
  const auto& fh = dft_matrix(height);
  const auto& fw = dft_matrix(width);
  Eigen::Map<const RMat> x(plane.data(), static_cast<long>(height), static_cast<long>(width));
  CMat z = fh * x.cast<std::complex<double>>() * fw;
  return {z.data(), z.data() + z.size()};
}

std::vector<double> idft2_real(std::span<const std::complex<double>> spectrum, std::size_t height,
                               std::size_t width) {
  if (spectrum.size() != height * width) throw ShapeError("idft2_real: spectrum size mismatch");
  const CMat ah = dft_matrix(height).conjugate() / static_cast<double>(height);
  const CMat aw = dft_matrix(width).conjugate() / static_cast<double>(width);
  Eigen::Map<const CMat> z(spectrum.data(), static_cast<long>(height), static_cast<long>(width));
  RMat x = (ah * z * aw).real();
  return {x.data(), x.data() + x.size()};
}

Tensor spectral_gate(const Tensor& feature, const Tensor& gate) {
  if (gate.rank() != 3) throw ShapeError("spectral_gate: gate must be [C,H,W]");
  const bool batched = feature.rank() == 4;
  if (!batched && feature.rank() != 3) throw ShapeError("spectral_gate: feature must be [B,C,H,W] or [C,H,W]");
  const std::size_t off = batched ? 1 : 0;
  const std::size_t batch = batched ? feature.dim(0) : 1;
  const std::size_t c = feature.dim(off), h = feature.dim(off + 1), w = feature.dim(off + 2);
  if (gate.dim(0) != c || gate.dim(1) != h || gate.dim(2) != w) {
    throw ShapeError("spectral_gate: gate " + shape_str(gate.shape()) + " does not match feature " +
                     shape_str(feature.shape()));
  }
  const long hl = static_cast<long>(h), wl = static_cast<long>(w);
  const std::size_t plane = h * w;

  const auto& fh = dft_matrix(h);
  const auto& fw = dft_matrix(w);
  const CMat ah = fh.conjugate() / static_cast<double>(h);
  const CMat aw = fw.conjugate() / static_cast<double>(w);

  Buffer out(feature.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * plane;
      Eigen::Map<const RMat> x(feature.data().data() + base, hl, wl);
      Eigen::Map<const RMat> g(gate.data().data() + ch * plane, hl, wl);
      CMat z = fh * x.cast<std::complex<double>>() * fw;
      z.array() *= g.array().cast<std::complex<double>>();
      Eigen::Map<RMat>(out.data() + base, hl, wl) = (ah * z * aw).real();
    }
  }

  return Tensor::make_result(feature.shape(), std::move(out), {feature, gate},
                             [batch, c, h, w](detail::Node& self) {
    auto& nf = *self.inputs[0];
    auto& ng = *self.inputs[1];
    const long hl = static_cast<long>(h), wl = static_cast<long>(w);
    const std::size_t plane = h * w;
    const auto& fh = dft_matrix(h);
    const auto& fw = dft_matrix(w);
    const CMat ah = fh.conjugate() / static_cast<double>(h);
    const CMat aw = fw.conjugate() / static_cast<double>(w);
    const bool want_f = nf.requires_grad && !nf.grad.empty();
    const bool want_g = ng.requires_grad && !ng.grad.empty();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = (b * c + ch) * plane;
        Eigen::Map<const RMat> gout(self.grad.data() + base, hl, wl);
        Eigen::Map<const RMat> gate_m(ng.value.data() + ch * plane, hl, wl);
        // Adjoint of the synthesis step (A and B are symmetric).
        CMat m = ah * gout.cast<std::complex<double>>() * aw;
        if (want_g) {
          Eigen::Map<const RMat> x(nf.value.data() + base, hl, wl);
          CMat z = fh * x.cast<std::complex<double>>() * fw;
          Eigen::Map<RMat>(ng.grad.data() + ch * plane, hl, wl) += (z.array() * m.array()).real().matrix();
        }
        if (want_f) {
          m.array() *= gate_m.array().cast<std::complex<double>>();
          Eigen::Map<RMat>(nf.grad.data() + base, hl, wl) += (fh * m * fw).real();
        }
      }
    }
  });
}

}  // namespace diffseg
