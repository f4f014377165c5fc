#include "diffseg_cli/cli.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <map>
#include <optional>
#include <ostream>
#include <set>

#include "diffseg/checkpoint.hpp"
#include "diffseg/csv.hpp"
#include "diffseg/dataset.hpp"
#include "diffseg/ensemble.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/metrics.hpp"
#include "diffseg/pgm.hpp"
#include "diffseg/profile.hpp"
#include "diffseg/training.hpp"
#include "diffseg_cli/svg.hpp"

#ifndef DIFFSEG_VERSION
#define DIFFSEG_VERSION "0.0.0"
#endif

namespace diffseg::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::filesystem::path default_output_root() {
  const char* env = std::getenv("DIFFSEG_OUT");
  if (env && *env) return env;
  return "diffseg_out";
}

std::vector<int> parse_t_grid(std::string_view spec, int steps) {
  std::vector<long long> parts;
  std::size_t start = 0;
  while (true) {
    const auto colon = spec.find(':', start);
    const auto field = spec.substr(start, colon == std::string_view::npos ? std::string_view::npos : colon - start);
    try {
      parts.push_back(parse_int(field));
    } catch (const FormatError&) {
      throw ConfigError("t grid '" + std::string(spec) + "' must look like lo:hi[:step]");
    }
    if (colon == std::string_view::npos) break;
    start = colon + 1;
  }
  if (parts.size() < 2 || parts.size() > 3) throw ConfigError("t grid '" + std::string(spec) + "' must look like lo:hi[:step]");
  const long long lo = parts[0], hi = parts[1], step = parts.size() == 3 ? parts[2] : 1;
  if (lo < 0 || hi >= steps || lo > hi || step < 1) {
    throw ConfigError("t grid '" + std::string(spec) + "' must satisfy 0 <= lo <= hi < " + std::to_string(steps) +
                      " and step >= 1");
  }
  return make_grid(static_cast<int>(lo) + 1, static_cast<int>(hi) + 1, static_cast<int>(step));
}

int auto_smoothing_window(std::size_t points, int steps) {
  const double span = static_cast<double>(kDefaultSmoothingWindow) * static_cast<double>(points) / steps;
  int w = static_cast<int>(std::lround(span));
  if (w % 2 == 0) --w;
  w = std::max(w, 1);
  const int max_odd = static_cast<int>(points % 2 == 1 ? points : points - 1);
  return std::min(w, std::max(max_odd, 1));
}

namespace {

// Only options given on the command line are recorded; the manifest's config
// block holds the fully resolved settings.
// Options whose values are file system paths; the manifest stores them absolute.
const std::set<std::string> kPathOptions = {"--data", "--checkpoint", "--weights", "--profile", "--run"};

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json recorded_options(const CLI::App& sub) {
  json out = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names.front() == "help") continue;
    const std::string name = "--" + names.front();
    if (opt->get_expected_max() == 0) {
      if (opt->count() > 0) out[name] = true;
      continue;
    }
    if (opt->count() == 0) continue;
    std::vector<std::string> values = opt->results();
    if (kPathOptions.count(name)) {
      for (auto& v : values) v = fs::absolute(v).lexically_normal().string();
    }
    if (opt->get_items_expected_max() > 1) {
      out[name] = values;
    } else {
      out[name] = values.back();
    }
  }
  return out;
}

struct Context {
  std::uint64_t seed = 0;
  fs::path out_dir;
  std::string command;
  json options;
  std::ostream* out = nullptr;
};

void write_manifest(const Context& ctx, const json& config, const std::vector<std::string>& outputs) {
  json m;
  m["command"] = ctx.command;
  m["tool_version"] = DIFFSEG_VERSION;
  m["seed"] = ctx.seed;
  m["options"] = ctx.options;
  m["config"] = config;
  m["out_dir"] = fs::absolute(ctx.out_dir).lexically_normal().string();
  m["outputs"] = outputs;
  m["started_at"] = utc_now();
  write_file_atomic(ctx.out_dir / "manifest.json", m.dump(2) + "\n");
}

void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

std::vector<MaskImagePair> load_split(const fs::path& dir, const std::string& requested, const char* preferred,
                                      std::string* used = nullptr) {
  const auto entries = read_dataset(dir);
  std::string split = requested;
  if (split.empty()) {
    const bool has = std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.split == preferred; });
    split = has ? preferred : "";
  } else if (split == "all") {
    split.clear();
  }
  auto data = select_split(entries, split);
  if (data.empty()) throw DataError("dataset " + dir.string() + " has no entries in split '" + split + "'");
  for (const auto& p : data) {
    if (!p.image.same_shape(data.front().image)) throw DataError("dataset " + dir.string() + " mixes image sizes");
  }
  if (used) *used = split.empty() ? "all" : split;
  return data;
}

std::string dataset_kind_label(const fs::path& dir) {
  const auto entries = read_dataset(dir);
  return entries.empty() || entries.front().kind.empty() ? dir.filename().string() : entries.front().kind;
}

json model_json(const ModelConfig& m) {
  return json{{"variant", to_string(m.variant)},   {"base_channels", m.base_channels},
              {"depth", m.depth},                  {"time_embed_dim", m.time_embed_dim},
              {"image_channels", m.image_channels}, {"mask_channels", m.mask_channels},
              {"image_size", m.image_size},        {"steps", m.steps},
              {"prediction", to_string(m.prediction)}};
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string kind;
  int count = 64;
  int size = 32;
  double train_ratio = 0.75;
};

void cmd_gen_data(const Context& ctx, const GenDataArgs& a) {
  DatasetSpec spec;
  spec.kind = dataset_kind_from_string(a.kind);
  spec.count = a.count;
  spec.size = a.size;
  spec.seed = derive_seed(ctx.seed, "data");
  spec.validate();
  if (!(a.train_ratio > 0.0 && a.train_ratio <= 1.0)) throw ConfigError("--train-ratio must lie in (0, 1]");

  const auto pairs = generate(spec);
  std::vector<DatasetEntry> entries;
  std::set<std::string> train_ids;
  if (a.train_ratio < 1.0) {
    const auto [train, val] = split_train_val(pairs, a.train_ratio, derive_seed(ctx.seed, "split"));
    for (const auto& p : train) train_ids.insert(p.id);
  }
  std::vector<std::string> outputs{"manifest.csv"};
  for (const auto& p : pairs) {
    const std::string split = a.train_ratio < 1.0 ? (train_ids.count(p.id) ? "train" : "val") : "train";
    entries.push_back({p, split, a.kind});
    outputs.push_back(p.id + "_img.pgm");
    outputs.push_back(p.id + "_mask.pgm");
  }
  json config{{"kind", a.kind},
              {"count", a.count},
              {"size", a.size},
              {"train_ratio", a.train_ratio},
              {"data_seed", spec.seed}};
  write_manifest(ctx, config, outputs);
  write_dataset(ctx.out_dir, entries);
  *ctx.out << "wrote " << pairs.size() << " " << a.kind << " pairs (" << a.size << "x" << a.size << ") to "
           << ctx.out_dir.string() << "\n";
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string experiment;
  std::string variant = "concat";
  std::string data;
  int steps = kDefaultTrainSteps;
  double lr = AdamOptions{}.lr;
  int batch_size = kDefaultBatchSize;
  int base_channels = 16;
  int depth = 2;
  int time_embed_dim = 32;
  int diffusion_steps = kDefaultSteps;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;
  std::string weights;
  std::string ensemble_n = "10";
  double dice_mix = kDefaultDiceMix;
  int log_every = 100;
  int val_every = 0;
  int val_n = 1;
  bool no_val = false;
  bool conditioned = false;
  bool unconditioned = false;
  bool variant_given = false;
};

void cmd_train(const Context& ctx, const TrainArgs& a) {
  TrainConfig cfg;
  cfg.experiment = experiment_from_string(a.experiment);
  const bool conditional = cfg.experiment == Experiment::e1 || cfg.experiment == Experiment::e2;
  if (a.conditioned && !conditional) {
    throw ConfigError(a.experiment + " trains without image conditioning; --conditioned is not allowed");
  }
  if (a.unconditioned && conditional) {
    throw ConfigError(a.experiment + " trains with image conditioning; --unconditioned is not allowed");
  }
  if (a.variant_given && !conditional) {
    throw ConfigError(a.experiment + " has no conditioning path; --variant does not apply");
  }
  std::string split;
  const auto data = load_split(a.data, "", "train", &split);
  std::vector<MaskImagePair> val;
  if (!a.no_val && conditional) {
    const auto entries = read_dataset(a.data);
    val = select_split(entries, "val");
    if (std::any_of(entries.begin(), entries.end(), [](const auto& e) { return e.split == "val"; }) == false) val.clear();
  }

  ModelConfig model;
  model.variant = variant_from_string(a.variant);
  model.base_channels = a.base_channels;
  model.depth = a.depth;
  model.time_embed_dim = a.time_embed_dim;
  model.image_size = data.front().image.height;
  model.steps = a.diffusion_steps;
  cfg.model = model_config_for(cfg.experiment, model);
  cfg.diffusion_steps = a.diffusion_steps;
  cfg.beta_start = a.beta_start;
  cfg.beta_end = a.beta_end;
  cfg.adam.lr = a.lr;
  cfg.batch_size = a.batch_size;
  cfg.steps = a.steps;
  cfg.seed = derive_seed(ctx.seed, "train");
  cfg.ensemble_n = parse_ensemble_size(a.ensemble_n);
  cfg.dice_mix = a.dice_mix;
  cfg.log_every = a.log_every;
  cfg.val_every = a.val_every;
  cfg.val_ensemble_n = a.val_n;
  if (!a.weights.empty()) cfg.weights = read_weights_csv(a.weights);
  cfg.validate();
  if (data.front().image.height != data.front().image.width) throw DataError("training images must be square");

  json config{{"experiment", to_string(cfg.experiment)},
              {"model", model_json(cfg.model)},
              {"schedule", {{"steps", cfg.diffusion_steps}, {"beta_start", cfg.beta_start}, {"beta_end", cfg.beta_end}}},
              {"optimizer", "adam"},
              {"lr", cfg.adam.lr},
              {"beta1", cfg.adam.beta1},
              {"beta2", cfg.adam.beta2},
              {"eps", cfg.adam.eps},
              {"batch_size", cfg.batch_size},
              {"steps", cfg.steps},
              {"train_seed", cfg.seed},
              {"weights", a.weights.empty() ? json(nullptr) : json(fs::absolute(a.weights).lexically_normal().string())},
              {"ensemble_n", cfg.ensemble_n},
              {"dice_mix", cfg.dice_mix},
              {"train_split", split},
              {"train_samples", data.size()},
              {"val_samples", val.size()}};
  write_manifest(ctx, config, {"run.csv", "model.ckpt"});
  auto result = train(cfg, data, val);
  result.record.checkpoint = ctx.out_dir / "model.ckpt";
  save_checkpoint(result.model, result.record.checkpoint);
  write_run_record_csv(result.record, ctx.out_dir / "run.csv");
  const auto& last = result.record.log.back();
  *ctx.out << to_string(cfg.experiment) << ": " << cfg.steps << " steps, final loss " << format_double(last.loss);
  if (last.val_iou) *ctx.out << ", val IoU " << format_double(*last.val_iou) << ", val ECE " << format_double(*last.val_ece);
  *ctx.out << "\n";
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split;
  std::string ensemble_n = "10";
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;
};

void cmd_eval(const Context& ctx, const EvalArgs& a) {
  const auto model = load_checkpoint(a.checkpoint);
  const auto& mc = model.config();
  if (!mc.conditional()) throw ConfigError("checkpoint " + a.checkpoint + " is unconditional; eval needs an e1 or e2 model");
  std::string split;
  const auto data = load_split(a.data, a.split, "val", &split);
  if (data.front().image.height != mc.image_size || data.front().image.width != mc.image_size) {
    throw ConfigError("checkpoint expects " + std::to_string(mc.image_size) + "x" + std::to_string(mc.image_size) +
                      " images, dataset has " + std::to_string(data.front().image.height) + "x" +
                      std::to_string(data.front().image.width));
  }
  const int n = parse_ensemble_size(a.ensemble_n);
  const auto sched = linear_schedule(mc.steps, a.beta_start, a.beta_end);

  std::vector<std::string> outputs{"summary.csv"};
  for (const auto& p : data) {
    for (const char* suffix : {"_mean.pgm", "_std.pgm", "_mask.pgm"}) outputs.push_back("maps/" + p.id + suffix);
  }
  json config{{"checkpoint", fs::absolute(a.checkpoint).lexically_normal().string()},
              {"model", model_json(mc)},
              {"split", split},
              {"samples", data.size()},
              {"ensemble_n", n},
              {"eval_seed", derive_seed(ctx.seed, "eval")}};
  write_manifest(ctx, config, outputs);

  Rng rng(derive_seed(ctx.seed, "eval"));
  const auto report = evaluate_segmentation(model, data, n, sched, rng);
  CsvTable summary({"id", "iou"});
  for (std::size_t i = 0; i < data.size(); ++i) {
    summary.add_row({data[i].id, format_double(report.iou[i])});
    const auto& pred = report.predictions[i];
    save_pgm(ctx.out_dir / "maps" / (data[i].id + "_mean.pgm"), pred.mean);
    save_pgm(ctx.out_dir / "maps" / (data[i].id + "_std.pgm"), pred.std);
    save_pgm(ctx.out_dir / "maps" / (data[i].id + "_mask.pgm"), pred.binary);
  }
  summary.add_row({"mean_iou", format_double(report.mean_iou)});
  summary.add_row({"ece", format_double(report.calibration.ece)});
  summary.write(ctx.out_dir / "summary.csv");
  *ctx.out << "mean IoU " << format_double(report.mean_iou) << ", ECE " << format_double(report.calibration.ece)
           << " over " << data.size() << " images (n=" << n << ")\n";
}

// ---------------------------------------------------------------- profile

struct ProfileArgs {
  std::vector<std::string> checkpoints;
  std::vector<std::string> data;
  std::vector<std::string> labels;
  std::string t_grid = "0:999:10";
  std::string measure = "mask-error";
  std::string split;
  int n_eval = 64;
  int smooth_window = 0;
  bool fingerprint = false;
  bool conditioned = false;
  bool unconditioned = false;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;
};

std::string safe_label(std::string s) {
  for (auto& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  }
  return s;
}

Objective objective_for(const ModelConfig& m) {
  if (m.prediction == Prediction::mask) return Objective::eq2;
  if (m.prediction == Prediction::epsilon) return m.conditional() ? Objective::eq3 : Objective::eq1;
  throw ConfigError("e1 (logits) checkpoints have no diffusion loss profile");
}

void cmd_profile(const Context& ctx, const ProfileArgs& a) {
  const bool mask_error = a.measure == "mask-error";
  if (a.data.size() != 1 && a.data.size() != a.checkpoints.size()) {
    throw ConfigError("give one --data for all checkpoints or one per --checkpoint");
  }
  if (!a.labels.empty() && a.labels.size() != a.checkpoints.size()) {
    throw ConfigError("give one --label per --checkpoint");
  }
  if (a.fingerprint && !mask_error) throw ConfigError("--fingerprint needs --measure mask-error");

  struct Curve {
    std::string label;
    TimestepProfile raw, smoothed;
  };
  std::vector<Curve> curves;
  std::optional<int> steps;
  std::vector<int> grid;
  int window = 0;
  std::vector<DenoiserModel> models;
  for (const auto& path : a.checkpoints) models.push_back(load_checkpoint(path));
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& mc = models[i].config();
    if (steps && *steps != mc.steps) throw ConfigError("checkpoints use different diffusion lengths");
    steps = mc.steps;
    if (a.conditioned && !mc.conditional()) throw ConfigError(a.checkpoints[i] + " is unconditional but --conditioned was given");
    if (a.unconditioned && mc.conditional()) throw ConfigError(a.checkpoints[i] + " is conditional but --unconditioned was given");
  }
  grid = parse_t_grid(a.t_grid, *steps);
  window = a.smooth_window > 0 ? a.smooth_window : auto_smoothing_window(grid.size(), *steps);
  const auto sched = linear_schedule(*steps, a.beta_start, a.beta_end);

  std::vector<std::string> labels;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& dir = a.data.size() == 1 ? a.data.front() : a.data[i];
    std::string label = !a.labels.empty()   ? a.labels[i]
                        : a.fingerprint     ? dataset_kind_label(dir)
                                            : fs::path(a.checkpoints[i]).stem().string();
    labels.push_back(safe_label(label));
  }
  // Duplicate labels are averaged in fingerprint mode and disambiguated otherwise.
  if (!a.fingerprint) {
    std::map<std::string, int> seen;
    for (auto& l : labels) {
      if (seen[l]++ > 0) l += "_" + std::to_string(seen[l] - 1);
    }
  }
  std::vector<std::string> unique_labels;
  for (const auto& l : labels) {
    if (std::find(unique_labels.begin(), unique_labels.end(), l) == unique_labels.end()) unique_labels.push_back(l);
  }
  std::vector<std::string> outputs;
  for (const auto& l : unique_labels) outputs.push_back("profile_" + l + ".csv");
  const std::string plot_name = a.fingerprint ? "fingerprint.svg" : (mask_error ? "mask_error.svg" : "loss.svg");
  outputs.push_back(plot_name);
  if (a.fingerprint) outputs.push_back("fingerprint.csv");
  json config{{"measure", a.measure},
              {"t_grid", grid.size()},
              {"t_first", grid.front()},
              {"t_last", grid.back()},
              {"smoothing_window", window},
              {"n_eval", a.n_eval},
              {"profile_seed", derive_seed(ctx.seed, "profile")},
              {"labels", labels}};
  write_manifest(ctx, config, outputs);

  ProfileOptions opts;
  opts.n_eval = a.n_eval;
  opts.seed = derive_seed(ctx.seed, "profile");
  std::map<std::string, std::pair<TimestepProfile, int>> sums;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& dir = a.data.size() == 1 ? a.data.front() : a.data[i];
    const auto data = load_split(dir, a.split, "val");
    const auto& mc = models[i].config();
    if (data.front().image.height != mc.image_size) {
      throw ConfigError(a.checkpoints[i] + " expects " + std::to_string(mc.image_size) + " px images, " + dir +
                        " has " + std::to_string(data.front().image.height));
    }
    auto p = mask_error ? profile_mask_error(models[i], data, sched, grid, mc.conditional(), opts)
                        : profile_training_loss(models[i], data, objective_for(mc), sched, grid, opts);
    auto& [acc, count] = sums[labels[i]];
    if (count == 0) {
      acc = p;
    } else {
      for (std::size_t k = 0; k < acc.values.size(); ++k) acc.values[k] += p.values[k];
    }
    ++count;
  }
  std::vector<Series> series;
  std::vector<TimestepProfile> smoothed_all;
  for (const auto& l : unique_labels) {
    auto [raw, count] = sums[l];
    for (auto& v : raw.values) v /= count;
    raw.label = l;
    const auto sm = smooth(raw, window);
    write_profile_csv(raw, sm, ctx.out_dir / ("profile_" + l + ".csv"));
    Series s{l, {}, sm.values};
    for (int t : sm.t_grid) s.x.push_back(t);
    series.push_back(std::move(s));
    smoothed_all.push_back(sm);
  }
  PlotSpec spec;
  spec.title = a.fingerprint ? "Smoothed mask prediction error per dataset"
               : mask_error  ? "Smoothed mask prediction error"
                             : "Smoothed training loss";
  spec.y_label = mask_error ? "MSE(x0, x0_hat)" : "loss";
  write_text(ctx.out_dir / plot_name, line_plot_svg(spec, series));
  if (a.fingerprint) {
    const auto summary = fingerprint(smoothed_all);
    write_fingerprint_csv(summary, ctx.out_dir / "fingerprint.csv");
    *ctx.out << "t_half order:";
    for (const auto& l : summary.order_by_t_half) *ctx.out << " " << l;
    *ctx.out << "\n";
  }
  *ctx.out << "profiled " << models.size() << " checkpoint(s) at " << grid.size() << " timesteps (window " << window
           << ")\n";
}

// ---------------------------------------------------------------- weights

struct WeightsArgs {
  std::string profile;
  double floor = kDefaultWeightFloor;
  int steps = kDefaultSteps;
  std::string column = "smoothed";
};

void cmd_weights(const Context& ctx, const WeightsArgs& a) {
  const auto [raw, smoothed] = read_profile_csv(a.profile);
  const auto& source = a.column == "raw" ? raw : smoothed;
  json config{{"profile", fs::absolute(a.profile).lexically_normal().string()},
              {"column", a.column},
              {"floor", a.floor},
              {"steps", a.steps}};
  write_manifest(ctx, config, {"weights.csv"});
  const auto w = derivative_weights(source, a.floor, a.steps);
  write_weights_csv(w, ctx.out_dir / "weights.csv");
  const auto [lo, hi] = std::minmax_element(w.weights.begin(), w.weights.end());
  *ctx.out << "wrote " << w.size() << " weights (min " << format_double(*lo) << ", max " << format_double(*hi)
           << ")\n";
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  std::vector<std::string> profiles;
  std::vector<std::string> runs;
  std::string title = "diffseg report";
};

void cmd_report(const Context& ctx, const ReportArgs& a) {
  if (a.profiles.empty() && a.runs.empty()) throw ConfigError("report needs at least one --profile or --run");
  std::vector<std::string> outputs;
  if (!a.profiles.empty()) outputs.push_back("profiles.svg");
  if (!a.runs.empty()) outputs.push_back("training_loss.svg");
  write_manifest(ctx, json{{"title", a.title}}, outputs);
  if (!a.profiles.empty()) {
    std::vector<Series> series;
    for (const auto& path : a.profiles) {
      const auto [raw, sm] = read_profile_csv(path);
      Series s{fs::path(path).stem().string(), {}, sm.values};
      for (int t : sm.t_grid) s.x.push_back(t);
      series.push_back(std::move(s));
    }
    PlotSpec spec{a.title + ": smoothed profiles", "t", "value"};
    write_text(ctx.out_dir / "profiles.svg", line_plot_svg(spec, series));
  }
  if (!a.runs.empty()) {
    std::vector<Series> series;
    for (const auto& path : a.runs) {
      const auto record = read_run_record_csv(path);
      if (record.log.empty()) throw FormatError(path + ": run record has no rows");
      Series s{fs::path(path).parent_path().filename().string(), {}, {}};
      if (s.label.empty()) s.label = fs::path(path).stem().string();
      for (const auto& e : record.log) {
        s.x.push_back(e.step);
        s.y.push_back(e.loss);
      }
      series.push_back(std::move(s));
    }
    PlotSpec spec{a.title + ": training loss", "step", "loss"};
    write_text(ctx.out_dir / "training_loss.svg", line_plot_svg(spec, series));
  }
  *ctx.out << "wrote " << outputs.size() << " plot(s) to " << ctx.out_dir.string() << "\n";
}

// ---------------------------------------------------------------- dispatch

std::vector<std::string> replay_args(const fs::path& manifest_path, const std::string& out_override) {
  json m;
  try {
    m = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  try {
    std::vector<std::string> args{"--seed", std::to_string(m.at("seed").get<std::uint64_t>()),
                                  m.at("command").get<std::string>()};
    if (args.back() == "replay") throw FormatError("a replay manifest cannot be replayed");
    for (const auto& [name, value] : m.at("options").items()) {
      if (value.is_boolean()) {
        if (value.get<bool>()) args.push_back(name);
      } else if (value.is_array()) {
        for (const auto& v : value) {
          args.push_back(name);
          args.push_back(v.get<std::string>());
        }
      } else {
        args.push_back(name);
        args.push_back(value.get<std::string>());
      }
    }
    args.push_back("--out");
    args.push_back(out_override.empty() ? m.at("out_dir").get<std::string>() : out_override);
    return args;
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
}

int run_parsed(const std::vector<std::string>& args, std::ostream& out, int depth) {
  CLI::App app{"diffseg: desk-scale diffusion segmentation laboratory", "diffseg"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", DIFFSEG_VERSION);
  std::uint64_t seed = 0;
  std::string out_dir;
  app.add_option("--seed", seed, "Root seed; every subsystem derives its own stream from it");
  app.add_option("--out", out_dir, "Output directory (default: $DIFFSEG_OUT/<command>)");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic mask/image dataset");
  gen_cmd->add_option("--kind", gen.kind, "lesion, nuclei, or tumor")
      ->required()
      ->check(CLI::IsMember({"lesion", "nuclei", "tumor"}));
  gen_cmd->add_option("--count", gen.count)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--size", gen.size, "Square extent in pixels (power of two, 4..64)");
  gen_cmd->add_option("--train-ratio", gen.train_ratio, "Fraction labelled train; the rest is val");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a denoiser under one of the regimes e1..e4");
  train_cmd->add_option("--experiment", tr.experiment)->required()->check(CLI::IsMember({"e1", "e2", "e3", "e4"}));
  auto* variant_opt = train_cmd->add_option("--variant", tr.variant)
                          ->check(CLI::IsMember({"concat", "encoder_sum", "ff_parser"}));
  train_cmd->add_option("--data", tr.data, "Dataset directory from gen-data")->required();
  train_cmd->add_option("--steps", tr.steps);
  train_cmd->add_option("--lr", tr.lr);
  train_cmd->add_option("--batch-size", tr.batch_size);
  train_cmd->add_option("--base-channels", tr.base_channels);
  train_cmd->add_option("--depth", tr.depth);
  train_cmd->add_option("--time-embed-dim", tr.time_embed_dim);
  train_cmd->add_option("--diffusion-steps", tr.diffusion_steps);
  train_cmd->add_option("--beta-start", tr.beta_start);
  train_cmd->add_option("--beta-end", tr.beta_end);
  train_cmd->add_option("--weights", tr.weights, "Timestep weights CSV from the weights command");
  train_cmd->add_option("--ensemble-n", tr.ensemble_n, "Ensemble size or preset (nuclei, lesion, tumor)");
  train_cmd->add_option("--dice-mix", tr.dice_mix);
  train_cmd->add_option("--log-every", tr.log_every);
  train_cmd->add_option("--val-every", tr.val_every, "Validation interval in steps; 0 validates after the last step");
  train_cmd->add_option("--val-n", tr.val_n, "Ensemble size used for validation");
  auto* no_val = train_cmd->add_flag("--no-val", tr.no_val, "Skip validation");
  auto* val_every_opt = train_cmd->get_option("--val-every");
  no_val->excludes(val_every_opt);
  auto* tc = train_cmd->add_flag("--conditioned", tr.conditioned);
  auto* tu = train_cmd->add_flag("--unconditioned", tr.unconditioned);
  tc->excludes(tu);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Ensemble evaluation: IoU, ECE, mean/std maps");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--data", ev.data)->required();
  eval_cmd->add_option("--split", ev.split, "train, val, or all (default: val when present)");
  eval_cmd->add_option("--ensemble-n", ev.ensemble_n, "Ensemble size or preset (nuclei 25, lesion 10, tumor 5)");
  eval_cmd->add_option("--beta-start", ev.beta_start);
  eval_cmd->add_option("--beta-end", ev.beta_end);

  ProfileArgs pr;
  auto* prof_cmd = app.add_subcommand("profile", "Per-timestep mask error or loss profiles");
  prof_cmd->add_option("--checkpoint", pr.checkpoints)->required();
  prof_cmd->add_option("--data", pr.data)->required();
  prof_cmd->add_option("--label", pr.labels);
  prof_cmd->add_option("--t-grid", pr.t_grid, "lo:hi[:step] over 0-based step indices");
  prof_cmd->add_option("--measure", pr.measure)->check(CLI::IsMember({"mask-error", "loss"}));
  prof_cmd->add_option("--split", pr.split);
  prof_cmd->add_option("--n-eval", pr.n_eval);
  prof_cmd->add_option("--smooth-window", pr.smooth_window, "Odd window in grid points; 0 picks one");
  prof_cmd->add_flag("--fingerprint", pr.fingerprint, "Average per dataset kind and summarise t_half");
  auto* pc = prof_cmd->add_flag("--conditioned", pr.conditioned);
  auto* pu = prof_cmd->add_flag("--unconditioned", pr.unconditioned);
  pc->excludes(pu);
  prof_cmd->add_option("--beta-start", pr.beta_start);
  prof_cmd->add_option("--beta-end", pr.beta_end);

  WeightsArgs wa;
  auto* weights_cmd = app.add_subcommand("weights", "Timestep weights from a profile's slope");
  weights_cmd->add_option("--profile", wa.profile)->required();
  weights_cmd->add_option("--floor", wa.floor);
  weights_cmd->add_option("--steps", wa.steps, "Diffusion length the weights cover");
  weights_cmd->add_option("--column", wa.column)->check(CLI::IsMember({"smoothed", "raw"}));

  ReportArgs ra;
  auto* report_cmd = app.add_subcommand("report", "SVG plots from profile and run CSVs");
  report_cmd->add_option("--profile", ra.profiles);
  report_cmd->add_option("--run", ra.runs);
  report_cmd->add_option("--title", ra.title);

  std::string manifest;
  auto* replay_cmd = app.add_subcommand("replay", "Re-run the command recorded in a manifest.json");
  replay_cmd->add_option("manifest", manifest)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    // help() descends into the selected subcommand.
    out << app.help();
    return kExitOk;
  }
  tr.variant_given = variant_opt->count() > 0;

  CLI::App* sub = app.get_subcommands().front();
  if (sub == replay_cmd) {
    if (depth > 0) throw ConfigError("replay cannot be nested");
    return run_parsed(replay_args(manifest, out_dir), out, depth + 1);
  }

  Context ctx;
  ctx.seed = seed;
  ctx.command = sub->get_name();
  ctx.out_dir = out_dir.empty() ? default_output_root() / ctx.command : fs::path(out_dir);
  ctx.options = recorded_options(*sub);
  ctx.out = &out;
  std::error_code ec;
  fs::create_directories(ctx.out_dir, ec);
  if (ec) throw IoError("cannot create " + ctx.out_dir.string() + ": " + ec.message());

  if (sub == gen_cmd) cmd_gen_data(ctx, gen);
  else if (sub == train_cmd) cmd_train(ctx, tr);
  else if (sub == eval_cmd) cmd_eval(ctx, ev);
  else if (sub == prof_cmd) cmd_profile(ctx, pr);
  else if (sub == weights_cmd) cmd_weights(ctx, wa);
  else if (sub == report_cmd) cmd_report(ctx, ra);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return run_parsed(args, out, 0);
  } catch (const CLI::CallForVersion&) {
    out << DIFFSEG_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace diffseg::cli
