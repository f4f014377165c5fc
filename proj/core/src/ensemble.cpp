#include "diffseg/ensemble.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <string>

#include "diffseg/encoding.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/ops.hpp"

namespace diffseg {

int ensemble_preset(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::nuclei: return 25;
    case DatasetKind::lesion: return 10;
    case DatasetKind::tumor: return 5;
  }
  return 1;
}

int parse_ensemble_size(std::string_view text) {
  for (auto kind : {DatasetKind::nuclei, DatasetKind::lesion, DatasetKind::tumor}) {
    if (text == to_string(kind)) return ensemble_preset(kind);
  }
  int n = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
  if (ec != std::errc() || end != text.data() + text.size() || n < 1) {
    throw ConfigError("ensemble size must be a positive integer or nuclei/lesion/tumor, got '" + std::string(text) +
                      "'");
  }
  return n;
}

EnsembleResult aggregate_members(std::vector<Image> members) {
  if (members.empty()) throw ConfigError("ensemble needs at least one member");
  const auto& first = members.front();
  EnsembleResult r;
  r.mean = Image(first.height, first.width);
  r.std = Image(first.height, first.width);
  r.binary = Image(first.height, first.width);
  const double n = static_cast<double>(members.size());
  for (const auto& m : members) {
    if (!m.same_shape(first)) throw ShapeError("ensemble members differ in size");
    for (std::size_t i = 0; i < m.size(); ++i) r.mean.pixels[i] += m.pixels[i];
  }
  for (auto& v : r.mean.pixels) v /= n;
  for (const auto& m : members) {
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double d = m.pixels[i] - r.mean.pixels[i];
      r.std.pixels[i] += d * d;
    }
  }
  for (std::size_t i = 0; i < r.std.size(); ++i) {
    r.std.pixels[i] = std::sqrt(r.std.pixels[i] / n);
    r.binary.pixels[i] = r.mean.pixels[i] > 0.5 ? 1.0 : 0.0;
  }
  r.members = std::move(members);
  return r;
}

std::vector<EnsembleResult> ensemble_predict(const Denoiser& model, std::span<const Image> images, int n,
                                             const DiffusionSchedule& sched, Rng& rng, int max_batch) {
  if (n < 1) throw ConfigError("ensemble size must be >= 1, got " + std::to_string(n));
  if (!model.conditional()) throw ConfigError("ensemble prediction needs an image-conditioned model");
  if (images.empty()) return {};
  NoGradGuard no_grad;
  const auto& first = images.front();
  const std::size_t h = static_cast<std::size_t>(first.height), w = static_cast<std::size_t>(first.width);
  const std::size_t per_chunk = std::max<std::size_t>(1, static_cast<std::size_t>(max_batch) / static_cast<std::size_t>(n));

  std::vector<EnsembleResult> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += per_chunk) {
    const std::size_t stop = std::min(images.size(), start + per_chunk);
    // Row r of the batch is member (r % n) of image start + r / n.
    std::vector<Image> repeated;
    for (std::size_t i = start; i < stop; ++i) {
      if (!images[i].same_shape(first)) throw ShapeError("ensemble images differ in size");
      for (int k = 0; k < n; ++k) repeated.push_back(images[i]);
    }
    const auto y = encode_images(repeated);
    const Shape shape{repeated.size(), 1, h, w};
    Tensor prob;
    if (model.prediction() == Prediction::logits) {
      const auto noise = randn(shape, rng);
      const std::vector<int> t0(repeated.size(), 0);
      prob = sigmoid(model.predict(noise, t0, y));
      for (auto& v : prob.mutable_data()) v = 2.0 * v - 1.0;
    } else {
      prob = ddpm_sample(model, model.prediction(), shape, y, sched, rng);
    }
    for (std::size_t i = 0; i < stop - start; ++i) {
      std::vector<Image> members;
      for (int k = 0; k < n; ++k) members.push_back(decode_unit(prob, i * static_cast<std::size_t>(n) + k));
      out.push_back(aggregate_members(std::move(members)));
    }
  }
  return out;
}

EnsembleResult ensemble_predict(const Denoiser& model, const Image& image, int n, const DiffusionSchedule& sched,
                                Rng& rng) {
  return std::move(ensemble_predict(model, std::span<const Image>(&image, 1), n, sched, rng).front());
}

SegmentationReport evaluate_segmentation(const Denoiser& model, std::span<const MaskImagePair> data, int n,
                                         const DiffusionSchedule& sched, Rng& rng) {
  if (data.empty()) throw ConfigError("evaluation needs at least one sample");
  std::vector<Image> images;
  for (const auto& p : data) images.push_back(p.image);
  SegmentationReport report;
  report.predictions = ensemble_predict(model, images, n, sched, rng);
  std::vector<double> prob, gt;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& pred = report.predictions[i];
    report.iou.push_back(iou(pred.binary.pixels, data[i].mask.pixels));
    prob.insert(prob.end(), pred.mean.pixels.begin(), pred.mean.pixels.end());
    gt.insert(gt.end(), data[i].mask.pixels.begin(), data[i].mask.pixels.end());
  }
  double total = 0.0;
  for (double v : report.iou) total += v;
  report.mean_iou = total / static_cast<double>(report.iou.size());
  report.calibration = ece(prob, gt);
  return report;
}

}  // namespace diffseg
