#include "diffseg/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "diffseg/errors.hpp"

namespace diffseg {

namespace {
void check_binary(std::span<const double> m, const char* what) {
  for (double v : m) {
    if (v != 0.0 && v != 1.0) throw DataError(std::string(what) + ": mask must be binary {0,1}");
  }
}
}  // namespace

double iou(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size()) throw ShapeError("iou: mask sizes differ");
  check_binary(pred, "iou");
  check_binary(gt, "iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] == 1.0, b = gt[i] == 1.0;
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

CalibrationReport ece(std::span<const double> prob, std::span<const double> gt, int bins) {
  if (prob.size() != gt.size()) throw ShapeError("ece: size mismatch");
  if (bins < 1) throw ConfigError("ece: need at least one bin");
  check_binary(gt, "ece");
  std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0), correct(static_cast<std::size_t>(bins), 0.0);
  std::vector<std::size_t> count(static_cast<std::size_t>(bins), 0);
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double p = prob[i];
    if (!(p >= 0.0 && p <= 1.0)) throw DataError("ece: probability outside [0,1]");
    const bool predicted = p >= 0.5;
    const double conf = predicted ? p : 1.0 - p;
    auto b = static_cast<std::size_t>((conf - 0.5) / 0.5 * bins);
    b = std::min(b, static_cast<std::size_t>(bins - 1));
    conf_sum[b] += conf;
    correct[b] += (predicted == (gt[i] == 1.0)) ? 1.0 : 0.0;
    ++count[b];
  }
  CalibrationReport r;
  r.bins.resize(static_cast<std::size_t>(bins));
  const auto total = static_cast<double>(prob.size());
  for (std::size_t b = 0; b < r.bins.size(); ++b) {
    if (count[b] == 0) continue;
    const auto n = static_cast<double>(count[b]);
    r.bins[b] = {conf_sum[b] / n, correct[b] / n, count[b]};
    r.ece += n / total * std::abs(r.bins[b].accuracy - r.bins[b].confidence);
  }
  return r;
}

}  // namespace diffseg
