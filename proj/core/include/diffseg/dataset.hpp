#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "diffseg/image.hpp"
#include "diffseg/rng.hpp"

namespace diffseg {

/// A binary mask x0 and the image y that conditions it.
struct MaskImagePair {
  Image mask;   // values in {0,1}
  Image image;  // values in [0,1]
  std::string id;
};

enum class DatasetKind { lesion, nuclei, tumor };

const char* to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(std::string_view s);

/// One central star-convex blob per image.
struct LesionParams {
  double min_area = 0.15;    // fraction of the image
  double max_area = 0.50;
  double center_jitter = 0.10;  // max offset from the centre, fraction of the extent
};

/// Many small ellipses. Radii are in pixels at a 64 px reference extent and
/// scale linearly with the image size.
struct NucleiParams {
  int min_count = 10;
  int max_count = 40;
  double min_radius = 2.0;
  double max_radius = 4.0;
  int reference_size = 64;
};

/// Mixture of empty images, mid-size clusters, and near-full coverage.
struct TumorParams {
  double empty_prob = 0.2;
  double full_prob = 0.2;
  int max_clusters = 5;
  double min_cluster_area = 0.02;
  double max_cluster_area = 0.12;
};

/// Rendering of the conditioning image from a mask.
struct RenderParams {
  double base_level = 0.35;
  double texture_amplitude = 0.08;
  double contrast = 0.3;
  double noise_sigma = 0.1;
};

struct DatasetSpec {
  DatasetKind kind = DatasetKind::lesion;
  int count = 64;
  int size = 32;
  std::uint64_t seed = 0;
  LesionParams lesion;
  NucleiParams nuclei;
  TumorParams tumor;
  RenderParams render;

  void validate() const;
};

std::vector<MaskImagePair> gen_lesion(const DatasetSpec& spec);
std::vector<MaskImagePair> gen_nuclei(const DatasetSpec& spec);
std::vector<MaskImagePair> gen_tumor(const DatasetSpec& spec);
/// Dispatches on spec.kind.
std::vector<MaskImagePair> generate(const DatasetSpec& spec);

/// Base texture (smooth random field) + contrast on foreground + pixel noise,
/// clipped to [0,1].
Image render_condition_image(const Image& mask, Rng& rng, const RenderParams& params = {});

/// Deterministic shuffle, then the first round(ratio * n) items go to train.
/// Throws ConfigError when either side would be empty.
std::pair<std::vector<MaskImagePair>, std::vector<MaskImagePair>> split_train_val(
    const std::vector<MaskImagePair>& data, double ratio, std::uint64_t seed);

/// Areas of connected foreground components (8-connectivity unless `four` is set).
std::vector<int> component_areas(const Image& mask, bool four_connected = false);
double foreground_fraction(const Image& mask);

struct DatasetEntry {
  MaskImagePair pair;
  std::string split;  // "train", "val", or empty
  std::string kind;
};

/// Writes <id>_img.pgm / <id>_mask.pgm for every entry plus manifest.csv
/// (id,split,kind).
void write_dataset(const std::filesystem::path& dir, const std::vector<DatasetEntry>& entries);

/// Reads a dataset directory. With a manifest.csv the listed ids are loaded in
/// order; otherwise every <id>_img.pgm with a matching mask is ingested (sorted
/// by id, empty split). Masks are thresholded at 0.5.
std::vector<DatasetEntry> read_dataset(const std::filesystem::path& dir);

/// Entries whose split equals `split`, or all entries when `split` is empty.
std::vector<MaskImagePair> select_split(const std::vector<DatasetEntry>& entries, std::string_view split);

}  // namespace diffseg
