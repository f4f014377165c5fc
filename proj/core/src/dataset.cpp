#include "diffseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "diffseg/csv.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/pgm.hpp"

namespace diffseg {

const char* to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::lesion: return "lesion";
    case DatasetKind::nuclei: return "nuclei";
    case DatasetKind::tumor: return "tumor";
  }
  return "?";
}

DatasetKind dataset_kind_from_string(std::string_view s) {
  if (s == "lesion") return DatasetKind::lesion;
  if (s == "nuclei") return DatasetKind::nuclei;
  if (s == "tumor") return DatasetKind::tumor;
  throw ConfigError("unknown dataset kind '" + std::string(s) + "' (expected lesion, nuclei, tumor)");
}

void DatasetSpec::validate() const {
  if (count < 1) throw ConfigError("dataset count must be >= 1");
  if (size < 4 || size > 64 || (size & (size - 1)) != 0) throw ConfigError("dataset size must be a power of two in [4, 64]");
}

namespace {

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Star-convex blob: r(theta) = R (1 + sum_k a_k cos(k theta + phi_k)), k = 2..4.
void draw_star_blob(Image& mask, double cy, double cx, double radius, Rng& rng, double value = 1.0) {
  double amp[3], phase[3];
  for (int k = 0; k < 3; ++k) {
    amp[k] = uniform(rng, 0.0, 0.12);
    phase[k] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  }
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
      const double theta = std::atan2(dy, dx);
      double r = 1.0;
      for (int k = 0; k < 3; ++k) r += amp[k] * std::cos((k + 2) * theta + phase[k]);
      if (std::hypot(dy, dx) <= radius * r) mask.at(y, x) = value;
    }
  }
}

void draw_ellipse(Image& mask, double cy, double cx, double a, double b, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - std::max(a, b) - 1)));
  const int y1 = std::min(mask.height - 1, static_cast<int>(std::ceil(cy + std::max(a, b) + 1)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - std::max(a, b) - 1)));
  const int x1 = std::min(mask.width - 1, static_cast<int>(std::ceil(cx + std::max(a, b) + 1)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
      const double u = (dx * c + dy * s) / a, v = (-dx * s + dy * c) / b;
      if (u * u + v * v <= 1.0) mask.at(y, x) = 1.0;
    }
  }
  // Every nucleus covers at least the pixel holding its centre.
  const int py = std::clamp(static_cast<int>(cy), 0, mask.height - 1);
  const int px = std::clamp(static_cast<int>(cx), 0, mask.width - 1);
  mask.at(py, px) = 1.0;
}

Rng sample_rng(const DatasetSpec& spec, int index, std::uint64_t stream) {
  return Rng(mix_seed(mix_seed(spec.seed, static_cast<std::uint64_t>(index)), stream));
}

std::string sample_id(DatasetKind kind, int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", index);
  return std::string(to_string(kind)) + "_" + buf;
}

template <class MaskFn>
std::vector<MaskImagePair> generate_with(const DatasetSpec& spec, DatasetKind expected, MaskFn make_mask) {
  spec.validate();
  if (spec.kind != expected) {
    throw ConfigError(std::string("dataset spec kind is ") + to_string(spec.kind) + ", generator expects " +
                      to_string(expected));
  }
  std::vector<MaskImagePair> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    auto shape_rng = sample_rng(spec, i, 0);
    auto render_rng = sample_rng(spec, i, 1);
    Image mask = make_mask(shape_rng);
    Image image = render_condition_image(mask, render_rng, spec.render);
    out.push_back({std::move(mask), std::move(image), sample_id(spec.kind, i)});
  }
  return out;
}

}  // namespace

std::vector<MaskImagePair> gen_lesion(const DatasetSpec& spec) {
  const auto& p = spec.lesion;
  const double n = spec.size;
  return generate_with(spec, DatasetKind::lesion, [&](Rng& rng) {
    Image mask(spec.size, spec.size);
    const double cy = n / 2 + uniform(rng, -p.center_jitter, p.center_jitter) * n;
    const double cx = n / 2 + uniform(rng, -p.center_jitter, p.center_jitter) * n;
    const double area = uniform(rng, p.min_area, p.max_area) * n * n;
    draw_star_blob(mask, cy, cx, std::sqrt(area / std::numbers::pi), rng);
    return mask;
  });
}

std::vector<MaskImagePair> gen_nuclei(const DatasetSpec& spec) {
  const auto& p = spec.nuclei;
  const double n = spec.size;
  const double scale = n / static_cast<double>(p.reference_size);
  return generate_with(spec, DatasetKind::nuclei, [&](Rng& rng) {
    Image mask(spec.size, spec.size);
    const int count = uniform_int(rng, p.min_count, p.max_count);
    for (int k = 0; k < count; ++k) {
      const double cy = uniform(rng, 0.0, n), cx = uniform(rng, 0.0, n);
      const double a = uniform(rng, p.min_radius, p.max_radius) * scale;
      const double b = uniform(rng, p.min_radius, p.max_radius) * scale;
      draw_ellipse(mask, cy, cx, a, b, uniform(rng, 0.0, std::numbers::pi));
    }
    return mask;
  });
}

std::vector<MaskImagePair> gen_tumor(const DatasetSpec& spec) {
  const auto& p = spec.tumor;
  const double n = spec.size;
  return generate_with(spec, DatasetKind::tumor, [&](Rng& rng) {
    Image mask(spec.size, spec.size);
    const double mode = uniform01(rng);
    if (mode < p.empty_prob) return mask;
    if (mode < p.empty_prob + p.full_prob) {
      // One dominant cluster over most of the field plus up to two satellites.
      double radius = uniform(rng, 0.55, 0.75) * n;
      const double cy = n / 2 + uniform(rng, -0.15, 0.15) * n;
      const double cx = n / 2 + uniform(rng, -0.15, 0.15) * n;
      draw_star_blob(mask, cy, cx, radius, rng);
      while (foreground_fraction(mask) <= 0.5) {
        radius *= 1.1;
        draw_star_blob(mask, cy, cx, radius, rng);
      }
      const int extra = uniform_int(rng, 0, 2);
      for (int k = 0; k < extra; ++k) {
        const double r = std::sqrt(uniform(rng, p.min_cluster_area, p.max_cluster_area) * n * n / std::numbers::pi);
        draw_star_blob(mask, uniform(rng, 0.0, n), uniform(rng, 0.0, n), r, rng);
      }
      return mask;
    }
    const int clusters = uniform_int(rng, 1, p.max_clusters);
    for (int k = 0; k < clusters; ++k) {
      const double r = std::sqrt(uniform(rng, p.min_cluster_area, p.max_cluster_area) * n * n / std::numbers::pi);
      const double cy = uniform(rng, 0.5 * r, n - 0.5 * r);
      const double cx = uniform(rng, 0.5 * r, n - 0.5 * r);
      draw_star_blob(mask, cy, cx, r, rng);
    }
    return mask;
  });
}

std::vector<MaskImagePair> generate(const DatasetSpec& spec) {
  switch (spec.kind) {
    case DatasetKind::lesion: return gen_lesion(spec);
    case DatasetKind::nuclei: return gen_nuclei(spec);
    case DatasetKind::tumor: return gen_tumor(spec);
  }
  throw ConfigError("unknown dataset kind");
}

Image render_condition_image(const Image& mask, Rng& rng, const RenderParams& params) {
  for (double v : mask.pixels) {
    if (v != 0.0 && v != 1.0) throw DataError("render_condition_image: mask must be binary");
  }
  // Low-frequency field: bilinear upsampling of a coarse 5x5 Gaussian grid.
  constexpr int kGrid = 5;
  double grid[kGrid][kGrid];
  for (auto& row : grid)
    for (auto& g : row) g = standard_normal(rng);

  Image img(mask.height, mask.width);
  std::normal_distribution<double> noise(0.0, params.noise_sigma);
  for (int y = 0; y < mask.height; ++y) {
    const double gy = (y + 0.5) / mask.height * (kGrid - 1);
    const int y0 = std::min(static_cast<int>(gy), kGrid - 2);
    const double fy = gy - y0;
    for (int x = 0; x < mask.width; ++x) {
      const double gx = (x + 0.5) / mask.width * (kGrid - 1);
      const int x0 = std::min(static_cast<int>(gx), kGrid - 2);
      const double fx = gx - x0;
      const double tex = (1 - fy) * ((1 - fx) * grid[y0][x0] + fx * grid[y0][x0 + 1]) +
                         fy * ((1 - fx) * grid[y0 + 1][x0] + fx * grid[y0 + 1][x0 + 1]);
      const double v = params.base_level + params.texture_amplitude * tex + params.contrast * mask.at(y, x) + noise(rng);
      img.at(y, x) = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

std::pair<std::vector<MaskImagePair>, std::vector<MaskImagePair>> split_train_val(
    const std::vector<MaskImagePair>& data, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  const auto n = data.size();
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  if (n_train == 0 || n_train == n) {
    throw ConfigError("split of " + std::to_string(n) + " items at ratio " + format_double(ratio) +
                      " leaves one side empty");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::pair<std::vector<MaskImagePair>, std::vector<MaskImagePair>> out;
  for (std::size_t i = 0; i < n; ++i) (i < n_train ? out.first : out.second).push_back(data[order[i]]);
  return out;
}

std::vector<int> component_areas(const Image& mask, bool four_connected) {
  std::vector<int> label(mask.size(), 0);
  std::vector<int> areas;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const auto idx = static_cast<std::size_t>(y * mask.width + x);
      if (mask.pixels[idx] < 0.5 || label[idx]) continue;
      const int id = static_cast<int>(areas.size()) + 1;
      int area = 0;
      label[idx] = id;
      stack.emplace_back(y, x);
      while (!stack.empty()) {
        auto [cy, cx] = stack.back();
        stack.pop_back();
        ++area;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if ((dy == 0 && dx == 0) || (four_connected && dy != 0 && dx != 0)) continue;
            const int ny = cy + dy, nx = cx + dx;
            if (ny < 0 || nx < 0 || ny >= mask.height || nx >= mask.width) continue;
            const auto n = static_cast<std::size_t>(ny * mask.width + nx);
            if (mask.pixels[n] >= 0.5 && !label[n]) {
              label[n] = id;
              stack.emplace_back(ny, nx);
            }
          }
        }
      }
      areas.push_back(area);
    }
  }
  return areas;
}

double foreground_fraction(const Image& mask) {
  if (mask.pixels.empty()) return 0.0;
  double fg = 0.0;
  for (double v : mask.pixels) fg += v >= 0.5 ? 1.0 : 0.0;
  return fg / static_cast<double>(mask.size());
}

void write_dataset(const std::filesystem::path& dir, const std::vector<DatasetEntry>& entries) {
  CsvTable manifest({"id", "split", "kind"});
  for (const auto& e : entries) {
    save_pgm(dir / (e.pair.id + "_img.pgm"), e.pair.image);
    save_pgm(dir / (e.pair.id + "_mask.pgm"), e.pair.mask);
    manifest.add_row({e.pair.id, e.split, e.kind});
  }
  manifest.write(dir / "manifest.csv");
}

namespace {
MaskImagePair load_pair(const std::filesystem::path& dir, const std::string& id) {
  MaskImagePair p;
  p.id = id;
  p.image = load_pgm(dir / (id + "_img.pgm"));
  p.mask = load_pgm(dir / (id + "_mask.pgm"));
  if (!p.image.same_shape(p.mask)) throw FormatError("image and mask of '" + id + "' differ in shape");
  for (auto& v : p.mask.pixels) v = v >= 0.5 ? 1.0 : 0.0;
  return p;
}
}  // namespace

std::vector<DatasetEntry> read_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " not found");
  std::vector<DatasetEntry> out;
  const auto manifest_path = dir / "manifest.csv";
  if (std::filesystem::exists(manifest_path)) {
    const auto table = CsvTable::read(manifest_path);
    const auto ic = table.column("id"), sc = table.column("split"), kc = table.column("kind");
    for (const auto& row : table.rows()) out.push_back({load_pair(dir, row[ic]), row[sc], row[kc]});
  } else {
    std::vector<std::string> ids;
    for (const auto& f : std::filesystem::directory_iterator(dir)) {
      const auto name = f.path().filename().string();
      constexpr std::string_view suffix = "_img.pgm";
      if (name.size() > suffix.size() && name.ends_with(suffix)) {
        auto id = name.substr(0, name.size() - suffix.size());
        if (std::filesystem::exists(dir / (id + "_mask.pgm"))) ids.push_back(std::move(id));
      }
    }
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids) out.push_back({load_pair(dir, id), "", ""});
  }
  if (out.empty()) throw IoError("dataset directory " + dir.string() + " holds no image/mask pairs");
  return out;
}

std::vector<MaskImagePair> select_split(const std::vector<DatasetEntry>& entries, std::string_view split) {
  std::vector<MaskImagePair> out;
  for (const auto& e : entries) {
    if (split.empty() || e.split == split) out.push_back(e.pair);
  }
  return out;
}

}  // namespace diffseg
