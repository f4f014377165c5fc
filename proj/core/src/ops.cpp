#include "diffseg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "diffseg/errors.hpp"

namespace diffseg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using CMapRow = Eigen::Map<const RowMat>;

bool wants_grad(const detail::Node& n) { return n.requires_grad && !n.grad.empty(); }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b) {
  const bool broadcast = b.numel() == 1 && a.shape() != b.shape();
  if (!broadcast) require_same_shape(a, b, "elementwise");
  const auto n = a.numel();
  const auto& av = a.values();
  const auto& bv = b.values();
  Buffer out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double bi = broadcast ? bv[0] : bv[i];
    switch (kind) {
      case ElementwiseKind::add: out[i] = av[i] + bi; break;
      case ElementwiseKind::sub: out[i] = av[i] - bi; break;
      case ElementwiseKind::mul: out[i] = av[i] * bi; break;
    }
  }
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [kind, broadcast](detail::Node& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    const auto n = self.grad.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = self.grad[i];
      const std::size_t j = broadcast ? 0 : i;
      double da = g, db = 0.0;
      switch (kind) {
        case ElementwiseKind::add: db = g; break;
        case ElementwiseKind::sub: db = -g; break;
        case ElementwiseKind::mul:
          da = g * nb.value[j];
          db = g * na.value[i];
          break;
      }
      if (wants_grad(na)) na.grad[i] += da;
      if (wants_grad(nb)) nb.grad[j] += db;
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::mul, a, b); }

Tensor scale(const Tensor& a, double factor) {
  Buffer out(a.values());
  for (auto& v : out) v *= factor;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [factor](detail::Node& self) {
    auto& na = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) na.grad[i] += factor * self.grad[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects rank-2 operands");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Buffer out(m * n);
  MapRow(out.data(), m, n).noalias() = CMapRow(a.data().data(), m, k) * CMapRow(b.data().data(), k, n);
  return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    CMapRow g(self.grad.data(), m, n);
    if (wants_grad(na)) MapRow(na.grad.data(), m, k).noalias() += g * CMapRow(nb.value.data(), k, n).transpose();
    if (wants_grad(nb)) MapRow(nb.grad.data(), k, n).noalias() += CMapRow(na.value.data(), m, k).transpose() * g;
  });
}

namespace {

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t filters, kh, kw;
  std::size_t out_h, out_w;
  int stride, pad;

  std::size_t col_rows() const { return channels * kh * kw; }
  std::size_t col_cols() const { return out_h * out_w; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// Output columns ox whose input column ox*stride + j - pad lies inside [0, width).
std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t j) {
  const long stride = g.stride, pad = g.pad, off = static_cast<long>(j) - pad;
  const long lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  const long last = static_cast<long>(g.width) - 1 - off;
  const long hi = last < 0 ? 0 : std::min<long>(static_cast<long>(g.out_w), last / stride + 1);
  return {static_cast<std::size_t>(std::min(lo, hi)), static_cast<std::size_t>(hi)};
}

void im2col(const ConvGeometry& g, const double* img, double* col) {
  const std::size_t cols = g.col_cols();
  const auto stride = static_cast<std::size_t>(g.stride);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = col + ((c * g.kh + i) * g.kw + j) * cols;
        const auto [lo, hi] = valid_columns(g, j);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride + static_cast<long>(i) - g.pad;
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = img + static_cast<long>((c * g.height + static_cast<std::size_t>(iy)) * g.width + j) - g.pad;
          std::fill(dst, dst + lo, 0.0);
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride];
          std::fill(dst + hi, dst + g.out_w, 0.0);
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, double* img) {
  const std::size_t cols = g.col_cols();
  const auto stride = static_cast<std::size_t>(g.stride);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((c * g.kh + i) * g.kw + j) * cols;
        const auto [lo, hi] = valid_columns(g, j);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride + static_cast<long>(i) - g.pad;
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          double* dst = img + static_cast<long>((c * g.height + static_cast<std::size_t>(iy)) * g.width + j) - g.pad;
          const double* src = row + oy * g.out_w;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * stride] += src[ox];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad, const Tensor& bias) {
  if (input.rank() != 4 || kernel.rank() != 4) throw ShapeError("conv2d expects NCHW input and FCkhkw kernel");
  if (stride < 1 || pad < 0) throw ShapeError("conv2d stride must be >= 1 and pad >= 0");
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.channels = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.filters = kernel.dim(0);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  g.stride = stride;
  g.pad = pad;
  if (kernel.dim(1) != g.channels) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(input.shape()) + ", kernel " +
                     shape_str(kernel.shape()));
  }
  const std::size_t span_h = g.height + 2 * static_cast<std::size_t>(pad);
  const std::size_t span_w = g.width + 2 * static_cast<std::size_t>(pad);
  if (g.kh > span_h || g.kw > span_w) throw ShapeError("conv2d kernel larger than padded input");
  if ((span_h - g.kh) % static_cast<std::size_t>(stride) != 0 ||
      (span_w - g.kw) % static_cast<std::size_t>(stride) != 0) {
    throw ShapeError("conv2d output extent is not integral for input " + shape_str(input.shape()));
  }
  g.out_h = (span_h - g.kh) / static_cast<std::size_t>(stride) + 1;
  g.out_w = (span_w - g.kw) / static_cast<std::size_t>(stride) + 1;
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.filters)) {
    throw ShapeError("conv2d bias must have shape [F]");
  }

  const std::size_t rows = g.col_rows(), cols = g.col_cols();
  const std::size_t in_stride = g.channels * g.height * g.width;
  const std::size_t out_stride = g.filters * cols;
  Buffer out(g.batch * out_stride);
  Buffer col(g.is_pointwise() ? 0 : rows * cols);
  CMapRow k(kernel.data().data(), g.filters, rows);
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* src = input.data().data() + b * in_stride;
    if (!g.is_pointwise()) {
      im2col(g, src, col.data());
      src = col.data();
    }
    MapRow o(out.data() + b * out_stride, g.filters, cols);
    o.noalias() = k * CMapRow(src, rows, cols);
    if (bias.defined()) {
      for (std::size_t f = 0; f < g.filters; ++f) o.row(f).array() += bias.values()[f];
    }
  }

  std::vector<Tensor> inputs{input, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result({g.batch, g.filters, g.out_h, g.out_w}, std::move(out), std::move(inputs),
                             [g](detail::Node& self) {
    auto& ni = *self.inputs[0];
    auto& nk = *self.inputs[1];
    detail::Node* nb = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    const std::size_t rows = g.col_rows(), cols = g.col_cols();
    const std::size_t in_stride = g.channels * g.height * g.width;
    const std::size_t out_stride = g.filters * cols;
    Buffer col(g.is_pointwise() ? 0 : rows * cols);
    Buffer dcol(g.is_pointwise() ? 0 : rows * cols);
    CMapRow k(nk.value.data(), g.filters, rows);
    for (std::size_t b = 0; b < g.batch; ++b) {
      CMapRow gb(self.grad.data() + b * out_stride, g.filters, cols);
      if (wants_grad(nk)) {
        const double* src = ni.value.data() + b * in_stride;
        if (!g.is_pointwise()) {
          im2col(g, src, col.data());
          src = col.data();
        }
        MapRow(nk.grad.data(), g.filters, rows).noalias() += gb * CMapRow(src, rows, cols).transpose();
      }
      if (wants_grad(ni)) {
        if (g.is_pointwise()) {
          MapRow(ni.grad.data() + b * in_stride, rows, cols).noalias() += k.transpose() * gb;
        } else {
          MapRow(dcol.data(), rows, cols).noalias() = k.transpose() * gb;
          col2im_add(g, dcol.data(), ni.grad.data() + b * in_stride);
        }
      }
      if (nb && wants_grad(*nb)) {
        for (std::size_t f = 0; f < g.filters; ++f) nb->grad[f] += gb.row(f).sum();
      }
    }
  });
}

Tensor nonlinear(Activation kind, const Tensor& x) {
  const auto& xv = x.values();
  Buffer out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    switch (kind) {
      case Activation::relu: out[i] = xv[i] > 0.0 ? xv[i] : 0.0; break;
      case Activation::silu: out[i] = xv[i] * stable_sigmoid(xv[i]); break;
      case Activation::sigmoid: out[i] = stable_sigmoid(xv[i]); break;
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [kind](detail::Node& self) {
    auto& nx = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = nx.value[i];
      double d = 0.0;
      switch (kind) {
        case Activation::relu: d = v > 0.0 ? 1.0 : 0.0; break;
        case Activation::silu: {
          const double s = stable_sigmoid(v);
          d = s * (1.0 + v * (1.0 - s));
          break;
        }
        case Activation::sigmoid: d = self.value[i] * (1.0 - self.value[i]); break;
      }
      nx.grad[i] += d * self.grad[i];
    }
  });
}

Tensor reduce(Reduction kind, const Tensor& x, std::span<const std::size_t> axes) {
  const auto& shape = x.shape();
  std::vector<bool> reduced(shape.size(), false);
  for (auto a : axes) {
    if (a >= shape.size()) throw ShapeError("reduce axis " + std::to_string(a) + " out of range for " + shape_str(shape));
    if (reduced[a]) throw ShapeError("reduce axis " + std::to_string(a) + " repeated");
    reduced[a] = true;
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (reduced[d]) count *= shape[d];
    else out_shape.push_back(shape[d]);
  }

  // Map each input element to its output slot via an odometer over the input.
  const std::size_t n = x.numel();
  std::vector<std::size_t> target(n);
  {
    std::vector<std::size_t> out_strides(shape.size(), 0);
    std::size_t s = 1;
    for (std::size_t d = shape.size(); d-- > 0;) {
      if (!reduced[d]) {
        out_strides[d] = s;
        s *= shape[d];
      }
    }
    std::vector<std::size_t> idx(shape.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t t = 0;
      for (std::size_t d = 0; d < shape.size(); ++d) t += idx[d] * out_strides[d];
      target[i] = t;
      for (std::size_t d = shape.size(); d-- > 0;) {
        if (++idx[d] < shape[d]) break;
        idx[d] = 0;
      }
    }
  }

  const double factor = kind == Reduction::mean ? 1.0 / static_cast<double>(count) : 1.0;
  Buffer out(numel_of(out_shape), 0.0);
  for (std::size_t i = 0; i < n; ++i) out[target[i]] += x.values()[i];
  for (auto& v : out) v *= factor;
  return Tensor::make_result(std::move(out_shape), std::move(out), {x},
                             [target = std::move(target), factor](detail::Node& self) {
    auto& nx = *self.inputs[0];
    for (std::size_t i = 0; i < target.size(); ++i) nx.grad[i] += factor * self.grad[target[i]];
  });
}

Tensor sum(const Tensor& x, std::span<const std::size_t> axes) { return reduce(Reduction::sum, x, axes); }
Tensor mean(const Tensor& x, std::span<const std::size_t> axes) { return reduce(Reduction::mean, x, axes); }

namespace {
std::vector<std::size_t> all_axes(const Tensor& x) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return axes;
}
}  // namespace

Tensor sum_all(const Tensor& x) { return sum(x, all_axes(x)); }
Tensor mean_all(const Tensor& x) { return mean(x, all_axes(x)); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  return Tensor::make_result(std::move(shape), x.values(), {x}, [](detail::Node& self) {
    auto& nx = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) nx.grad[i] += self.grad[i];
  });
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("add_rowwise expects [M,N] + [N], got " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  }
  const auto m = x.dim(0), n = x.dim(1);
  Buffer out(x.values());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.values()[j];
  return Tensor::make_result(x.shape(), std::move(out), {x, bias}, [m, n](detail::Node& self) {
    auto& nx = *self.inputs[0];
    auto& nb = *self.inputs[1];
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double g = self.grad[i * n + j];
        if (wants_grad(nx)) nx.grad[i * n + j] += g;
        if (wants_grad(nb)) nb.grad[j] += g;
      }
    }
  });
}

Tensor add_channelwise(const Tensor& x, const Tensor& v) {
  if (x.rank() != 4 || v.rank() != 2 || v.dim(0) != x.dim(0) || v.dim(1) != x.dim(1)) {
    throw ShapeError("add_channelwise expects [B,C,H,W] + [B,C], got " + shape_str(x.shape()) + " + " +
                     shape_str(v.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t hw = x.dim(2) * x.dim(3);
  Buffer out(x.values());
  for (std::size_t p = 0; p < planes; ++p) {
    const double add = v.values()[p];
    for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] += add;
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, v}, [planes, hw](detail::Node& self) {
    auto& nx = *self.inputs[0];
    auto& nv = *self.inputs[1];
    for (std::size_t p = 0; p < planes; ++p) {
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        const double g = self.grad[p * hw + i];
        acc += g;
        if (wants_grad(nx)) nx.grad[p * hw + i] += g;
      }
      if (wants_grad(nv)) nv.grad[p] += acc;
    }
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0);
  const std::size_t sa = a.dim(1) * a.dim(2) * a.dim(3);
  const std::size_t sb = b.dim(1) * b.dim(2) * b.dim(3);
  Buffer out(batch * (sa + sb));
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(a.values().begin() + static_cast<long>(n * sa), sa, out.begin() + static_cast<long>(n * (sa + sb)));
    std::copy_n(b.values().begin() + static_cast<long>(n * sb), sb, out.begin() + static_cast<long>(n * (sa + sb) + sa));
  }
  return Tensor::make_result({batch, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)}, std::move(out), {a, b},
                             [batch, sa, sb](detail::Node& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    for (std::size_t n = 0; n < batch; ++n) {
      const double* g = self.grad.data() + n * (sa + sb);
      if (wants_grad(na))
        for (std::size_t i = 0; i < sa; ++i) na.grad[n * sa + i] += g[i];
      if (wants_grad(nb))
        for (std::size_t i = 0; i < sb; ++i) nb.grad[n * sb + i] += g[sa + i];
    }
  });
}

Tensor upsample2x(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("upsample2x expects NCHW input");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Buffer out(planes * 4 * h * w);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        out[(p * 2 * h + y) * 2 * w + xx] = x.values()[(p * h + y / 2) * w + xx / 2];
  return Tensor::make_result({x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(out), {x},
                             [planes, h, w](detail::Node& self) {
    auto& nx = *self.inputs[0];
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xx = 0; xx < 2 * w; ++xx)
          nx.grad[(p * h + y / 2) * w + xx / 2] += self.grad[(p * 2 * h + y) * 2 * w + xx];
  });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  const auto n = pred.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.values()[i] - target.values()[i];
    acc += d * d;
  }
  return Tensor::make_result({}, {acc / static_cast<double>(n)}, {pred, target}, [n](detail::Node& self) {
    auto& np = *self.inputs[0];
    auto& nt = *self.inputs[1];
    const double g = self.grad[0] * 2.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = np.value[i] - nt.value[i];
      if (wants_grad(np)) np.grad[i] += g * d;
      if (wants_grad(nt)) nt.grad[i] -= g * d;
    }
  });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target, std::span<const double> sample_weights) {
  require_same_shape(pred, target, "mse_loss");
  if (pred.rank() < 1 || sample_weights.size() != pred.dim(0)) {
    throw ShapeError("mse_loss: need one weight per sample along axis 0");
  }
  const std::size_t batch = pred.dim(0);
  const std::size_t per = pred.numel() / batch;
  Buffer weights(sample_weights.begin(), sample_weights.end());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const double d = pred.values()[b * per + i] - target.values()[b * per + i];
      acc += d * d;
    }
    total += weights[b] * acc / static_cast<double>(per);
  }
  return Tensor::make_result({}, {total / static_cast<double>(batch)}, {pred, target},
                             [batch, per, weights = std::move(weights)](detail::Node& self) {
    auto& np = *self.inputs[0];
    auto& nt = *self.inputs[1];
    for (std::size_t b = 0; b < batch; ++b) {
      const double g = self.grad[0] * weights[b] * 2.0 / static_cast<double>(per * batch);
      for (std::size_t i = 0; i < per; ++i) {
        const std::size_t k = b * per + i;
        const double d = np.value[k] - nt.value[k];
        if (wants_grad(np)) np.grad[k] += g * d;
        if (wants_grad(nt)) nt.grad[k] -= g * d;
      }
    }
  });
}

Tensor dice_ce_loss(const Tensor& logits, const Tensor& target_mask, double mix) {
  require_same_shape(logits, target_mask, "dice_ce_loss");
  if (mix < 0.0 || mix > 1.0) throw ConfigError("dice_ce_loss mix must lie in [0,1]");
  if (logits.rank() < 1) throw ShapeError("dice_ce_loss needs a batch axis");
  for (double g : target_mask.values()) {
    if (g != 0.0 && g != 1.0) throw DataError("dice_ce_loss target must be binary {0,1}");
  }
  const std::size_t batch = logits.dim(0);
  const std::size_t n = logits.numel();
  const std::size_t per = n / batch;
  const auto& lv = logits.values();
  const auto& gv = target_mask.values();

  Buffer prob(n);
  double ce = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double l = lv[i];
    prob[i] = stable_sigmoid(l);
    ce += std::max(l, 0.0) - l * gv[i] + std::log1p(std::exp(-std::abs(l)));
  }
  ce /= static_cast<double>(n);

  // Per-sample intersection and denominator for the soft Dice term.
  Buffer inter(batch, 0.0), denom(batch, 0.0);
  double dice = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < per; ++i) {
      inter[b] += prob[b * per + i] * gv[b * per + i];
      denom[b] += prob[b * per + i] + gv[b * per + i];
    }
    dice += 1.0 - (2.0 * inter[b] + kDiceSmoothing) / (denom[b] + kDiceSmoothing);
  }
  dice /= static_cast<double>(batch);

  const double loss = mix * dice + (1.0 - mix) * ce;
  return Tensor::make_result({}, {loss}, {logits},
                             [mix, batch, per, n, prob = std::move(prob), inter = std::move(inter),
                              denom = std::move(denom), target = gv](detail::Node& self) {
    auto& nl = *self.inputs[0];
    const double g = self.grad[0];
    for (std::size_t b = 0; b < batch; ++b) {
      const double num = 2.0 * inter[b] + kDiceSmoothing;
      const double den = denom[b] + kDiceSmoothing;
      for (std::size_t i = 0; i < per; ++i) {
        const std::size_t k = b * per + i;
        const double p = prob[k];
        const double d_dice_dp = -(2.0 * target[k] * den - num) / (den * den) / static_cast<double>(batch);
        const double d_ce_dl = (p - target[k]) / static_cast<double>(n);
        nl.grad[k] += g * (mix * d_dice_dp * p * (1.0 - p) + (1.0 - mix) * d_ce_dl);
      }
    }
  });
}

}  // namespace diffseg
