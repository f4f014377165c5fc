#include "diffseg/encoding.hpp"

#include <algorithm>

#include "diffseg/errors.hpp"

namespace diffseg {
namespace {

template <class Get>
Tensor stack(std::size_t count, Get get) {
  if (count == 0) throw ShapeError("cannot encode an empty batch");
  const Image& first = get(0);
  const auto plane = first.size();
  std::vector<double> values;
  values.reserve(count * plane);
  for (std::size_t b = 0; b < count; ++b) {
    const Image& img = get(b);
    if (!img.same_shape(first)) throw ShapeError("batch images differ in size");
    values.insert(values.end(), img.pixels.begin(), img.pixels.end());
  }
  return Tensor::from({count, 1, static_cast<std::size_t>(first.height), static_cast<std::size_t>(first.width)},
                      std::move(values));
}

void to_signed(Tensor& t) {
  for (auto& v : t.mutable_data()) v = 2.0 * v - 1.0;
}

}  // namespace

Tensor encode_masks(std::span<const MaskImagePair> data, std::span<const std::size_t> indices) {
  auto t = stack(indices.size(), [&](std::size_t b) -> const Image& { return data[indices[b]].mask; });
  to_signed(t);
  return t;
}

Tensor encode_images(std::span<const MaskImagePair> data, std::span<const std::size_t> indices) {
  auto t = stack(indices.size(), [&](std::size_t b) -> const Image& { return data[indices[b]].image; });
  to_signed(t);
  return t;
}

Tensor encode_images(std::span<const Image> images) {
  auto t = stack(images.size(), [&](std::size_t b) -> const Image& { return images[b]; });
  to_signed(t);
  return t;
}

Image decode_unit(const Tensor& x, std::size_t b) {
  if (x.rank() != 4 || x.dim(1) != 1) throw ShapeError("decode_unit expects [B,1,H,W], got " + shape_str(x.shape()));
  const int h = static_cast<int>(x.dim(2)), w = static_cast<int>(x.dim(3));
  Image out(h, w);
  const auto src = x.data().subspan(b * out.size(), out.size());
  std::transform(src.begin(), src.end(), out.pixels.begin(),
                 [](double v) { return std::clamp(0.5 * (v + 1.0), 0.0, 1.0); });
  return out;
}

}  // namespace diffseg
