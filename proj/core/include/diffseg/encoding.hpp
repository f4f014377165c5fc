#pragma once

#include <span>
#include <vector>

#include "diffseg/dataset.hpp"
#include "diffseg/image.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {

/// Masks {0,1} -> {-1,+1}, stacked as [B,1,H,W].
Tensor encode_masks(std::span<const MaskImagePair> data, std::span<const std::size_t> indices);
/// Images [0,1] -> [-1,1] via 2y - 1, stacked as [B,1,H,W].
Tensor encode_images(std::span<const MaskImagePair> data, std::span<const std::size_t> indices);
Tensor encode_images(std::span<const Image> images);

/// Plane b of a [B,1,H,W] tensor, mapped from [-1,1] to [0,1] and clipped.
Image decode_unit(const Tensor& x, std::size_t b);

}  // namespace diffseg
