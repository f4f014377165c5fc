#pragma once

#include <filesystem>

#include "diffseg/image.hpp"

namespace diffseg {

/// Binary 8-bit PGM ("P5", maxval 255). Values must lie in [0,1]
/// (DataError otherwise) and are rounded to the nearest of 256 levels.
void save_pgm(const std::filesystem::path& path, const Image& image);

/// Accepts P5 files with maxval <= 255 and '#' comments in the header.
/// Values are scaled by 1/maxval. Malformed or truncated files raise FormatError.
Image load_pgm(const std::filesystem::path& path);

}  // namespace diffseg
