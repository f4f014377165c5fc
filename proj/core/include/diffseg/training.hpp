#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "diffseg/dataset.hpp"
#include "diffseg/diffusion.hpp"
#include "diffseg/model.hpp"
#include "diffseg/optim.hpp"
#include "diffseg/schedule.hpp"

namespace diffseg {

/// E1 feed-forward segmentation, E2 diffusion segmentation (eps, conditional),
/// E3 mask recovery (x0, unconditional), E4 image generation (eps, unconditional).
enum class Experiment { e1, e2, e3, e4 };

const char* to_string(Experiment e);
Experiment experiment_from_string(std::string_view s);

/// Model layout each experiment expects (conditioning and prediction target).
ModelConfig model_config_for(Experiment e, ModelConfig base = {});

inline constexpr int kDefaultBatchSize = 16;
inline constexpr int kDefaultTrainSteps = 5000;
inline constexpr double kDefaultDiceMix = 0.5;

struct TrainConfig {
  Experiment experiment = Experiment::e2;
  ModelConfig model = model_config_for(Experiment::e2);
  int diffusion_steps = kDefaultSteps;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;
  AdamOptions adam;
  int batch_size = kDefaultBatchSize;
  int steps = kDefaultTrainSteps;
  std::uint64_t seed = 0;
  std::optional<TimestepWeights> weights;
  int ensemble_n = 10;
  double dice_mix = kDefaultDiceMix;
  /// Mean training loss is logged every `log_every` steps (and at the end).
  int log_every = 100;
  /// Validation (ensemble IoU/ECE) every `val_every` steps; 0 = only after the
  /// last step. Skipped for E3/E4 and when no validation data is given.
  int val_every = 0;
  /// Ensemble size used for validation; 0 uses ensemble_n.
  int val_ensemble_n = 0;

  /// Throws ConfigError for steps < 1, lr <= 0, or a model that does not fit the experiment.
  void validate() const;
  DiffusionSchedule schedule() const;
};

struct LogEntry {
  int step = 0;
  double loss = 0.0;
  std::optional<double> val_iou;
  std::optional<double> val_ece;
};

struct RunRecord {
  std::vector<LogEntry> log;
  double wall_seconds = 0.0;
  std::filesystem::path checkpoint;
};

struct TrainResult {
  DenoiserModel model;
  RunRecord record;
};

/// One training batch: x0 (masks or images), condition y (maybe undefined),
/// per-sample timesteps, and the noise.
struct Batch {
  Tensor x0;
  Tensor y;
  std::vector<int> t;
  Tensor eps;
};

/// Draws `batch_size` samples with replacement plus t ~ U{1..T} and eps ~ N(0,1).
/// E1 draws t = 0 and eps serves as the noise input.
Batch draw_batch(std::span<const MaskImagePair> data, Experiment e, int batch_size, int steps, Rng& rng);

/// The experiment's training loss on one batch, for any denoiser.
Tensor batch_loss(const Denoiser& model, Experiment e, const Batch& batch, const DiffusionSchedule& sched,
                  const TimestepWeights* weights = nullptr, double dice_mix = kDefaultDiceMix);

/// Each regime throws ConfigError when config.experiment does not match.
TrainResult train_feedforward(const TrainConfig& config, std::span<const MaskImagePair> data,
                              std::span<const MaskImagePair> val = {});
TrainResult train_diffusion_seg(const TrainConfig& config, std::span<const MaskImagePair> data,
                                std::span<const MaskImagePair> val = {});
TrainResult train_mask_recovery(const TrainConfig& config, std::span<const MaskImagePair> data);
TrainResult train_image_gen(const TrainConfig& config, std::span<const MaskImagePair> data);
/// Dispatches on config.experiment.
TrainResult train(const TrainConfig& config, std::span<const MaskImagePair> data,
                  std::span<const MaskImagePair> val = {});

/// CSV with columns step,loss,val_iou,val_ece; missing validation fields are empty.
void write_run_record_csv(const RunRecord& record, const std::filesystem::path& path);
RunRecord read_run_record_csv(const std::filesystem::path& path);

}  // namespace diffseg
