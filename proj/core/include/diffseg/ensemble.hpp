#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "diffseg/dataset.hpp"
#include "diffseg/image.hpp"
#include "diffseg/metrics.hpp"
#include "diffseg/model.hpp"
#include "diffseg/schedule.hpp"

namespace diffseg {

struct EnsembleResult {
  Image mean;    // [0,1]
  Image std;     // population standard deviation over members
  Image binary;  // mean > 0.5
  std::vector<Image> members;
};

/// Ensemble sizes matching the dataset kinds: nuclei 25, lesion 10, tumor 5.
int ensemble_preset(DatasetKind kind);
/// Accepts "nuclei"/"lesion"/"tumor" or a positive integer.
int parse_ensemble_size(std::string_view text);

/// Member-wise mean, standard deviation, and threshold in member order.
EnsembleResult aggregate_members(std::vector<Image> members);

/// n stochastic predictions per image, each mapped to [0,1]. Logits models
/// (E1) see fresh standard-normal noise at t = 0 and are passed through a
/// sigmoid; epsilon/mask models (E2) run the full reverse chain and map the
/// final x0 from [-1,1]. Images are processed in chunks of at most
/// `max_batch` member evaluations. Throws ConfigError for n < 1 or an
/// unconditional model.
std::vector<EnsembleResult> ensemble_predict(const Denoiser& model, std::span<const Image> images, int n,
                                             const DiffusionSchedule& sched, Rng& rng, int max_batch = 256);
EnsembleResult ensemble_predict(const Denoiser& model, const Image& image, int n, const DiffusionSchedule& sched,
                                Rng& rng);

struct SegmentationReport {
  std::vector<double> iou;  // per image
  double mean_iou = 0.0;
  CalibrationReport calibration;  // pooled over all pixels of all images
  std::vector<EnsembleResult> predictions;
};

SegmentationReport evaluate_segmentation(const Denoiser& model, std::span<const MaskImagePair> data, int n,
                                         const DiffusionSchedule& sched, Rng& rng);

}  // namespace diffseg
