#include "diffseg/pgm.hpp"

#include <cctype>
#include <cmath>
#include <string>

#include "diffseg/csv.hpp"
#include "diffseg/errors.hpp"

namespace diffseg {

void save_pgm(const std::filesystem::path& path, const Image& image) {
  if (image.height < 1 || image.width < 1 || image.size() != static_cast<std::size_t>(image.height) * static_cast<std::size_t>(image.width)) {
    throw DataError("save_pgm: empty or inconsistent image");
  }
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = image.pixels[i];
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("save_pgm: value outside [0,1] at index " + std::to_string(i));
    out[header + i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  write_file_atomic(path, out);
}

namespace {

class HeaderParser {
 public:
  explicit HeaderParser(const std::string& data) : data_(data) {}

  int next_int() {
    skip_space_and_comments();
    if (pos_ >= data_.size() || !std::isdigit(static_cast<unsigned char>(data_[pos_]))) {
      throw FormatError("pgm header: expected a number");
    }
    long v = 0;
    while (pos_ < data_.size() && std::isdigit(static_cast<unsigned char>(data_[pos_]))) {
      v = v * 10 + (data_[pos_++] - '0');
      if (v > 1'000'000) throw FormatError("pgm header: value too large");
    }
    return static_cast<int>(v);
  }

  std::size_t raster_start() {
    if (pos_ >= data_.size() || !std::isspace(static_cast<unsigned char>(data_[pos_]))) {
      throw FormatError("pgm header: missing separator before raster");
    }
    return pos_ + 1;
  }

  std::size_t pos_ = 2;

 private:
  void skip_space_and_comments() {
    while (pos_ < data_.size()) {
      const char c = data_[pos_];
      if (c == '#') {
        while (pos_ < data_.size() && data_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }
  const std::string& data_;
};

}  // namespace

Image load_pgm(const std::filesystem::path& path) {
  const auto data = read_file(path);
  if (data.size() < 2 || data[0] != 'P' || data[1] != '5') throw FormatError(path.string() + ": not a binary PGM (P5)");
  HeaderParser p(data);
  const int width = p.next_int();
  const int height = p.next_int();
  const int maxval = p.next_int();
  if (width < 1 || height < 1) throw FormatError(path.string() + ": bad dimensions");
  if (maxval < 1 || maxval > 255) throw FormatError(path.string() + ": only 8-bit PGM is supported");
  const std::size_t start = p.raster_start();
  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (data.size() < start + n) throw FormatError(path.string() + ": truncated raster");
  Image img(height, width);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = static_cast<unsigned char>(data[start + i]);
    if (v > maxval) throw FormatError(path.string() + ": sample exceeds maxval");
    img.pixels[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

}  // namespace diffseg
