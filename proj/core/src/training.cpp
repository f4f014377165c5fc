#include "diffseg/training.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include "diffseg/csv.hpp"
#include "diffseg/encoding.hpp"
#include "diffseg/ensemble.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/ops.hpp"

namespace diffseg {

const char* to_string(Experiment e) {
  switch (e) {
    case Experiment::e1: return "e1";
    case Experiment::e2: return "e2";
    case Experiment::e3: return "e3";
    case Experiment::e4: return "e4";
  }
  return "?";
}

Experiment experiment_from_string(std::string_view s) {
  if (s == "e1" || s == "E1") return Experiment::e1;
  if (s == "e2" || s == "E2") return Experiment::e2;
  if (s == "e3" || s == "E3") return Experiment::e3;
  if (s == "e4" || s == "E4") return Experiment::e4;
  throw ConfigError("unknown experiment '" + std::string(s) + "' (expected e1, e2, e3, e4)");
}

ModelConfig model_config_for(Experiment e, ModelConfig base) {
  switch (e) {
    case Experiment::e1:
      base.prediction = Prediction::logits;
      if (base.image_channels == 0) base.image_channels = 1;
      break;
    case Experiment::e2:
      base.prediction = Prediction::epsilon;
      if (base.image_channels == 0) base.image_channels = 1;
      break;
    case Experiment::e3:
      base.prediction = Prediction::mask;
      base.image_channels = 0;
      break;
    case Experiment::e4:
      base.prediction = Prediction::epsilon;
      base.image_channels = 0;
      break;
  }
  return base;
}

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("training steps must be >= 1");
  if (!(adam.lr > 0.0) || !std::isfinite(adam.lr)) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (log_every < 1) throw ConfigError("log interval must be >= 1");
  if (val_every < 0 || val_ensemble_n < 0 || ensemble_n < 1) throw ConfigError("invalid validation settings");
  if (!(dice_mix >= 0.0 && dice_mix <= 1.0)) throw ConfigError("dice mix must lie in [0,1]");
  model.validate();
  const auto expected = model_config_for(experiment, model);
  if (expected.conditional() != model.conditional()) {
    throw ConfigError(std::string(to_string(experiment)) +
                      (model.conditional() ? " trains without image conditioning" : " needs image conditioning"));
  }
  if (expected.prediction != model.prediction) {
    throw ConfigError(std::string(to_string(experiment)) + " trains a model predicting " +
                      to_string(expected.prediction) + ", config says " + to_string(model.prediction));
  }
  if (model.steps != diffusion_steps) throw ConfigError("model time embedding length differs from diffusion steps");
  if (weights) {
    if (experiment == Experiment::e1) throw ConfigError("timestep weights do not apply to e1");
    if (static_cast<int>(weights->size()) != diffusion_steps) {
      throw ConfigError("timestep weights cover " + std::to_string(weights->size()) + " steps, schedule has " +
                        std::to_string(diffusion_steps));
    }
  }
}

DiffusionSchedule TrainConfig::schedule() const { return linear_schedule(diffusion_steps, beta_start, beta_end); }

Batch draw_batch(std::span<const MaskImagePair> data, Experiment e, int batch_size, int steps, Rng& rng) {
  if (data.empty()) throw ConfigError("training data is empty");
  std::vector<std::size_t> idx(static_cast<std::size_t>(batch_size));
  for (auto& i : idx) i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(data.size()) - 1));
  Batch b;
  b.x0 = e == Experiment::e4 ? encode_images(data, idx) : encode_masks(data, idx);
  if (e == Experiment::e1 || e == Experiment::e2) b.y = encode_images(data, idx);
  b.t.resize(idx.size());
  for (auto& t : b.t) t = e == Experiment::e1 ? 0 : sample_timestep(rng, steps);
  b.eps = randn(b.x0.shape(), rng);
  return b;
}

Tensor batch_loss(const Denoiser& model, Experiment e, const Batch& batch, const DiffusionSchedule& sched,
                  const TimestepWeights* weights, double dice_mix) {
  switch (e) {
    case Experiment::e1: {
      const auto logits = model.predict(batch.eps, batch.t, batch.y);
      auto target = batch.x0.detach().clone();
      for (auto& v : target.mutable_data()) v = v > 0.0 ? 1.0 : 0.0;
      return dice_ce_loss(logits, target, dice_mix);
    }
    case Experiment::e2: return epsilon_loss(model, batch.x0, batch.y, batch.t, batch.eps, sched, weights);
    case Experiment::e3: return x0_loss(model, batch.x0, batch.t, batch.eps, sched, weights);
    case Experiment::e4: return epsilon_loss(model, batch.x0, Tensor(), batch.t, batch.eps, sched, weights);
  }
  throw ConfigError("unknown experiment");
}

namespace {

TrainResult run(const TrainConfig& config, Experiment expected, std::span<const MaskImagePair> data,
                std::span<const MaskImagePair> val) {
  if (config.experiment != expected) {
    throw ConfigError(std::string("config is for ") + to_string(config.experiment) + ", trainer runs " +
                      to_string(expected));
  }
  config.validate();
  if (data.empty()) throw ConfigError("training data is empty");
  const auto start = std::chrono::steady_clock::now();
  const auto sched = config.schedule();

  auto model = DenoiserModel::build(config.model, derive_seed(config.seed, "model"));
  Rng rng(derive_seed(config.seed, "batches"));
  Adam optimizer(model.parameter_tensors(), config.adam);
  const TimestepWeights* weights = config.weights ? &*config.weights : nullptr;
  const bool validate_seg = !val.empty() && (expected == Experiment::e1 || expected == Experiment::e2);
  const int val_n = config.val_ensemble_n > 0 ? config.val_ensemble_n : config.ensemble_n;

  TrainResult result{model, {}};
  double interval_loss = 0.0;
  int interval_count = 0;
  for (int step = 1; step <= config.steps; ++step) {
    const auto batch = draw_batch(data, expected, config.batch_size, config.diffusion_steps, rng);
    const auto loss = batch_loss(model, expected, batch, sched, weights, config.dice_mix);
    const double value = loss.item();
    if (!std::isfinite(value)) throw Error("training loss became non-finite at step " + std::to_string(step));
    loss.backward();
    optimizer.step();
    interval_loss += value;
    ++interval_count;

    const bool last = step == config.steps;
    const bool do_val = validate_seg && (last || (config.val_every > 0 && step % config.val_every == 0));
    if (last || step % config.log_every == 0 || do_val) {
      LogEntry entry{step, interval_loss / interval_count, std::nullopt, std::nullopt};
      interval_loss = 0.0;
      interval_count = 0;
      if (do_val) {
        Rng val_rng(mix_seed(derive_seed(config.seed, "validation"), static_cast<std::uint64_t>(step)));
        const auto report = evaluate_segmentation(model, val, val_n, sched, val_rng);
        entry.val_iou = report.mean_iou;
        entry.val_ece = report.calibration.ece;
      }
      result.record.log.push_back(entry);
    }
  }
  result.model = std::move(model);
  result.record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace

TrainResult train_feedforward(const TrainConfig& config, std::span<const MaskImagePair> data,
                              std::span<const MaskImagePair> val) {
  return run(config, Experiment::e1, data, val);
}

TrainResult train_diffusion_seg(const TrainConfig& config, std::span<const MaskImagePair> data,
                                std::span<const MaskImagePair> val) {
  return run(config, Experiment::e2, data, val);
}

TrainResult train_mask_recovery(const TrainConfig& config, std::span<const MaskImagePair> data) {
  return run(config, Experiment::e3, data, {});
}

TrainResult train_image_gen(const TrainConfig& config, std::span<const MaskImagePair> data) {
  return run(config, Experiment::e4, data, {});
}

TrainResult train(const TrainConfig& config, std::span<const MaskImagePair> data, std::span<const MaskImagePair> val) {
  switch (config.experiment) {
    case Experiment::e1: return train_feedforward(config, data, val);
    case Experiment::e2: return train_diffusion_seg(config, data, val);
    case Experiment::e3: return train_mask_recovery(config, data);
    case Experiment::e4: return train_image_gen(config, data);
  }
  throw ConfigError("unknown experiment");
}

void write_run_record_csv(const RunRecord& record, const std::filesystem::path& path) {
  CsvTable table({"step", "loss", "val_iou", "val_ece"});
  for (const auto& e : record.log) {
    table.add_row({std::to_string(e.step), format_double(e.loss), e.val_iou ? format_double(*e.val_iou) : "",
                   e.val_ece ? format_double(*e.val_ece) : ""});
  }
  table.write(path);
}

RunRecord read_run_record_csv(const std::filesystem::path& path) {
  const auto table = CsvTable::read(path);
  const auto sc = table.column("step"), lc = table.column("loss"), ic = table.column("val_iou"),
             ec = table.column("val_ece");
  RunRecord record;
  for (const auto& row : table.rows()) {
    LogEntry e;
    e.step = static_cast<int>(parse_int(row[sc]));
    e.loss = parse_double(row[lc]);
    if (!row[ic].empty()) e.val_iou = parse_double(row[ic]);
    if (!row[ec].empty()) e.val_ece = parse_double(row[ec]);
    record.log.push_back(e);
  }
  return record;
}

}  // namespace diffseg
