#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pacecast/baselines.hpp"
#include "pacecast/config.hpp"
#include "pacecast/evalcal.hpp"
#include "pacecast/grammar.hpp"
#include "pacecast/model.hpp"
#include "pacecast/report.hpp"
#include "pacecast/synthdata.hpp"
#include "pacecast/train.hpp"

namespace pacecast {

namespace fs = std::filesystem;

// ----------------------------- run directories -----------------------------

// Every subcommand writes a self-describing run directory: resolved config,
// metrics tables, plots and a free-form log. Metrics tables never contain
// wall-clock values, so identical runs are byte-identical.
class RunDir {
 public:
  RunDir(const Config& cfg, const std::string& out) : root_(out) {
    fs::create_directories(root_);
    std::ofstream rc(root_ / "resolved_config.txt");
    if (!rc) throw DataError("cannot write resolved config under '" + out + "'");
    rc << cfg.dump();
    log_.open(root_ / "log.txt");
  }

  const fs::path& root() const { return root_; }
  std::string path(const std::string& name) const { return (root_ / name).string(); }

  void note(const std::string& line) {
    log_ << line << "\n";
    log_.flush();
  }

 private:
  fs::path root_;
  std::ofstream log_;
};

// ----------------------------- data plumbing -----------------------------

struct PipelineData {
  std::vector<RunnerHistory> histories;
  std::vector<Split> splits;
  Vocabulary vocab;
  std::string manifest_hash_value;
};

inline SplitRatios split_ratios_from(const Config& cfg) {
  SplitRatios r;
  r.train = cfg.get_double("data.split.train");
  r.val = cfg.get_double("data.split.val");
  r.test = cfg.get_double("data.split.test");
  return r;
}

inline std::vector<Split> compute_splits(const Config& cfg,
                                         const std::vector<RunnerHistory>& histories) {
  std::vector<std::string> ids;
  ids.reserve(histories.size());
  for (const auto& h : histories) ids.push_back(h.runner_id);
  return split_entities(ids, split_ratios_from(cfg), cfg.get_u64("data.split_seed"));
}

inline PipelineData load_pipeline_data(const Config& cfg) {
  PipelineData pd;
  const auto& path = cfg.get_string("data.path");
  if (path.empty()) throw ConfigError("data.path not set");
  pd.histories = read_dataset_jsonl(path);
  if (pd.histories.empty()) throw DataError("dataset '" + path + "' is empty");
  pd.splits = compute_splits(cfg, pd.histories);
  const auto& manifest = cfg.get_string("data.manifest_path");
  if (manifest.empty()) throw ConfigError("data.manifest_path not set");
  pd.vocab = load_manifest(manifest);
  pd.manifest_hash_value = manifest_hash(pd.vocab);
  return pd;
}

struct WindowSet {
  std::vector<EncodedWindow> windows;
  std::vector<double> labels;
  std::vector<int> runner_index;
  std::vector<int> target_index;
  int dropped = 0;
};

inline std::uint64_t example_shuffle_seed(std::uint64_t base, const std::string& runner_id,
                                          int target_index) {
  return splitmix64(base ^ fnv1a64(runner_id) ^
                    (0x517f1edeULL + static_cast<std::uint64_t>(target_index)));
}

// Encodes every (runner, target) example of one split. Examples whose values
// fall outside the fitted bin support are dropped and counted; the caller
// logs the count.
inline WindowSet encode_split(const PipelineData& pd, Split which, AblationMode mode,
                              int max_events, std::uint64_t shuffle_base) {
  WindowSet out;
  for (std::size_t ri = 0; ri < pd.histories.size(); ++ri) {
    if (pd.splits[ri] != which) continue;
    const auto& h = pd.histories[ri];
    for (int t = 1; t < static_cast<int>(h.events.size()); ++t) {
      WindowOptions opts;
      opts.max_events = max_events;
      opts.ablation = mode;
      opts.shuffle_seed = example_shuffle_seed(shuffle_base, h.runner_id, t);
      try {
        auto w = encode_window(h, t, pd.vocab, opts, static_cast<int>(ri));
        out.labels.push_back(w.label_value);
        out.runner_index.push_back(static_cast<int>(ri));
        out.target_index.push_back(t);
        out.windows.push_back(std::move(w));
      } catch (const DataError&) {
        ++out.dropped;
      }
    }
  }
  return out;
}

inline std::vector<WindowInput> to_inputs(const WindowSet& ws, const Vocabulary& vocab,
                                          const ModelConfig& mcfg) {
  std::vector<WindowInput> inputs;
  inputs.reserve(ws.windows.size());
  for (const auto& w : ws.windows) inputs.push_back(window_to_input(w, vocab, mcfg));
  return inputs;
}

inline std::vector<double> split_train_paces(const PipelineData& pd) {
  std::vector<double> paces;
  for (std::size_t ri = 0; ri < pd.histories.size(); ++ri) {
    if (pd.splits[ri] != Split::train) continue;
    for (const auto& ev : pd.histories[ri].events) paces.push_back(ev.pace_s);
  }
  return paces;
}

// ----------------------------- config -> structs -----------------------------

inline GeneratorConfig generator_config_from(const Config& cfg) {
  GeneratorConfig g;
  g.n_runners = cfg.get_int("gen.n_runners");
  g.min_events = cfg.get_int("gen.min_events");
  g.max_events = cfg.get_int("gen.max_events");
  g.baseline_pace_mean = cfg.get_double("gen.baseline_pace_mean");
  g.baseline_pace_sd = cfg.get_double("gen.baseline_pace_sd");
  g.trend_slope_mean = cfg.get_double("gen.trend_slope_mean");
  g.trend_slope_sd = cfg.get_double("gen.trend_slope_sd");
  g.temp_threshold_c = cfg.get_double("gen.temp_threshold_c");
  g.temp_coeff = cfg.get_double("gen.temp_coeff");
  g.humidity_coeff = cfg.get_double("gen.humidity_coeff");
  g.wind_coeff = cfg.get_double("gen.wind_coeff");
  g.rain_penalty = cfg.get_double("gen.rain_penalty");
  g.other_conditions_penalty = cfg.get_double("gen.other_conditions_penalty");
  g.gender_offset_f = cfg.get_double("gen.gender_offset_f");
  g.gender_offset_m = cfg.get_double("gen.gender_offset_m");
  g.age_coeff = cfg.get_double("gen.age_coeff");
  g.distance_ref_m = cfg.get_double("gen.distance_ref_m");
  g.distance_exponent = cfg.get_double("gen.distance_exponent");
  g.distance_coeff = cfg.get_double("gen.distance_coeff");
  g.gap_mean_weeks = cfg.get_double("gen.gap_mean_weeks");
  g.noise_sd = cfg.get_double("gen.noise_sd");
  g.seed = cfg.get_u64("gen.seed");
  return g;
}

inline SmoothingConfig smoothing_config_from(const Config& cfg) {
  SmoothingConfig s;
  s.mode = smoothing_mode_from_string(cfg.get_string("smoothing.mode"));
  s.sigma = cfg.get_double("smoothing.sigma");
  s.sigma_floor = cfg.get_double("smoothing.sigma_floor");
  s.k = cfg.get_double("smoothing.k");
  s.anneal_steps = cfg.get_int("smoothing.anneal_steps");
  s.anneal_start_scale = cfg.get_double("smoothing.anneal_start_scale");
  s.validate();
  return s;
}

inline TrainConfig train_config_from(const Config& cfg) {
  TrainConfig t;
  t.batch_size = cfg.get_int("train.batch_size");
  t.base_lr = cfg.get_double("train.base_lr");
  t.weight_decay = cfg.get_double("train.weight_decay");
  t.beta1 = cfg.get_double("train.beta1");
  t.beta2 = cfg.get_double("train.beta2");
  t.adam_eps = cfg.get_double("train.adam_eps");
  t.max_steps = cfg.get_int("train.max_steps");
  t.eval_interval = cfg.get_int("train.eval_interval");
  t.val_max_examples = cfg.get_int("train.val_max_examples");
  t.grad_clip = cfg.get_double("train.grad_clip");
  t.select = select_from_string(cfg.get_string("train.select"));
  t.seed = cfg.get_u64("train.seed");
  t.validate();
  return t;
}

inline ModelConfig model_config_from(const Config& cfg, const Vocabulary& vocab,
                                     AblationMode ablation) {
  ModelConfig m;
  m.n_layers = cfg.get_int("model.n_layers");
  m.n_heads = cfg.get_int("model.n_heads");
  m.d_model = cfg.get_int("model.d_model");
  m.d_ff = cfg.get_int("model.d_ff");
  m.dropout = cfg.get_double("model.dropout");
  m.window_capacity = window_capacity(cfg.get_int("model.max_events"), ablation);
  m.vocab_size = vocab.vocab_size();
  m.pace_bin_count = vocab.feature("pace").bins.bin_count();
  m.input_embedding = input_embedding_from_string(cfg.get_string("model.input_embedding"));
  m.soft_embed_sigma_floor = cfg.get_double("model.soft_embed_sigma_floor");
  m.soft_embed_k = cfg.get_double("model.soft_embed_k");
  m.validate();
  return m;
}

// ----------------------------- gen-data -----------------------------

struct GenDataSummary {
  std::string data_path;
  std::string truth_path;
  int n_runners = 0;
  std::int64_t n_events = 0;
};

inline GenDataSummary run_gen_data(const Config& cfg, const std::string& out_dir) {
  RunDir run(cfg, out_dir);
  auto gcfg = generator_config_from(cfg);
  auto data = generate(gcfg);
  GenDataSummary s;
  s.data_path = run.path("data.jsonl");
  s.truth_path = run.path("truth.json");
  write_dataset_jsonl(s.data_path, data.histories);
  save_ground_truth(s.truth_path, data.truth);
  s.n_runners = static_cast<int>(data.histories.size());
  for (const auto& h : data.histories) s.n_events += static_cast<std::int64_t>(h.events.size());
  run.note("generated " + std::to_string(s.n_runners) + " runners, " +
           std::to_string(s.n_events) + " events");
  return s;
}

// ----------------------------- fit-bins -----------------------------

inline constexpr const char* kBinsFormat = "pacecast-bins";

inline void save_bins(const std::string& path, const std::map<std::string, BinSpec>& specs) {
  nlohmann::json features = nlohmann::json::object();
  for (const auto& [name, spec] : specs) features[name] = binspec_to_json(spec);
  nlohmann::json j{{"format", kBinsFormat}, {"version", 1}, {"features", std::move(features)}};
  std::ofstream out(path);
  if (!out) throw DataError("save_bins: cannot open '" + path + "'");
  out << j.dump(2) << "\n";
}

inline std::map<std::string, BinSpec> load_bins(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_bins: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("load_bins: parse error in '" + path + "': " + e.what());
  }
  if (j.value("format", "") != kBinsFormat)
    throw DataError("load_bins: '" + path + "' is not a bins file");
  std::map<std::string, BinSpec> out;
  for (const auto& [name, jspec] : j.at("features").items()) out[name] = binspec_from_json(jspec);
  return out;
}

// Balanced bins are fitted on training-split events only, so counts are
// training occupancy and evaluation splits stay untouched.
inline std::string run_fit_bins(const Config& cfg, const std::string& out_dir) {
  RunDir run(cfg, out_dir);
  auto histories = read_dataset_jsonl(cfg.get_string("data.path"));
  auto splits = compute_splits(cfg, histories);

  std::map<std::string, std::vector<double>> columns;
  for (std::size_t ri = 0; ri < histories.size(); ++ri) {
    if (splits[ri] != Split::train) continue;
    for (const auto& ev : histories[ri].events) {
      columns["temperature"].push_back(ev.temperature_c);
      columns["humidity"].push_back(ev.humidity_pct);
      columns["wind"].push_back(ev.wind_kph);
      columns["feels_like"].push_back(ev.feels_like_c);
      columns["pace"].push_back(ev.pace_s);
    }
  }
  if (columns["pace"].empty()) throw DataError("run_fit_bins: no training-split events");

  std::map<std::string, BinSpec> specs;
  for (auto& [name, values] : columns) {
    const int target = cfg.get_int("bins." + name + ".target_bins");
    const double cap = cfg.get_double("bins." + name + ".width_cap");
    specs[name] = fit_balanced(name, values, target, cap);
    run.note("fit " + name + ": " + std::to_string(specs[name].bin_count()) + " bins over " +
             std::to_string(values.size()) + " training values");
  }
  const std::string path = run.path("bins.json");
  save_bins(path, specs);
  return path;
}

// ----------------------------- build-vocab -----------------------------

inline std::string run_build_vocab(const Config& cfg, const std::string& out_dir) {
  RunDir run(cfg, out_dir);
  auto specs = load_bins(cfg.get_string("data.bins_path"));
  VocabularyBuildConfig vcfg;
  vcfg.cadence_cap = cfg.get_int("vocab.cadence_cap");
  vcfg.age_cap = cfg.get_int("vocab.age_cap");
  auto vocab = build_vocabulary(specs, vcfg);
  const std::string path = run.path("manifest.json");
  save_manifest(path, vocab);
  run.note("vocabulary: " + std::to_string(vocab.vocab_size()) + " tokens, manifest hash " +
           manifest_hash(vocab));
  return path;
}

// ----------------------------- train -----------------------------

struct TrainRunSummary {
  int best_mae_step = 0;
  double best_mae_metric = 0.0;
  int best_ks_step = 0;
  double best_ks_metric = 0.0;
  double final_loss = 0.0;
  bool diverged = false;
  int n_train = 0;
  int n_val = 0;
  std::string ckpt_best_mae, ckpt_best_ks, ckpt_final;
};

namespace detail {

inline void write_training_log(const std::string& path, const std::vector<TrainLogRow>& rows) {
  CsvTable t;
  t.header = {"step", "loss", "val_median_mae", "val_ks"};
  for (const auto& r : rows) {
    t.add_row({std::to_string(r.step), std::isfinite(r.loss) ? fmt_full(r.loss) : "",
               r.evaluated ? fmt_full(r.val_median_mae) : "",
               r.evaluated ? fmt_full(r.val_ks) : ""});
  }
  write_csv(path, t);
}

}  // namespace detail

inline TrainRunSummary run_train(const Config& cfg, const std::string& out_dir) {
  RunDir run(cfg, out_dir);
  const auto t0 = std::chrono::steady_clock::now();

  auto pd = load_pipeline_data(cfg);
  const auto ablation = ablation_from_string(cfg.get_string("ablation.mode"));
  const int max_events = cfg.get_int("model.max_events");
  const auto tcfg = train_config_from(cfg);
  const auto smoothing = smoothing_config_from(cfg);
  const auto mcfg = model_config_from(cfg, pd.vocab, ablation);
  const auto& pace_bins = pd.vocab.feature("pace").bins;

  auto train_set = encode_split(pd, Split::train, ablation, max_events, tcfg.seed);
  auto val_set = encode_split(pd, Split::val, ablation, max_events, tcfg.seed);
  if (train_set.windows.empty()) throw DataError("run_train: no training windows");
  run.note("train windows: " + std::to_string(train_set.windows.size()) + " (dropped " +
           std::to_string(train_set.dropped) + ")");
  run.note("val windows: " + std::to_string(val_set.windows.size()) + " (dropped " +
           std::to_string(val_set.dropped) + ")");

  TrainingData data;
  data.train_inputs = to_inputs(train_set, pd.vocab, mcfg);
  data.train_labels = train_set.labels;
  data.val_inputs = to_inputs(val_set, pd.vocab, mcfg);
  data.val_labels = val_set.labels;
  data.pace_bins = &pace_bins;
  if (smoothing.anneal_steps == 0) {
    data.train_targets.reserve(train_set.labels.size());
    for (double y : train_set.labels)
      data.train_targets.push_back(gaussian_integrated_target(y, pace_bins, smoothing));
  }

  Transformer<float> model(mcfg, tcfg.seed);
  run.note("model parameters: " + std::to_string(model.total_parameters()));
  auto result = train_model(model, tcfg, smoothing, data);

  fs::create_directories(run.root() / "checkpoints");
  TrainRunSummary s;
  s.n_train = static_cast<int>(train_set.windows.size());
  s.n_val = static_cast<int>(val_set.windows.size());
  s.diverged = result.diverged;
  s.final_loss = result.final_loss;

  auto tjson = train_config_to_json(tcfg);
  tjson["ablation"] = to_string(ablation);
  tjson["max_events"] = max_events;
  tjson["smoothing"] = {{"mode", to_string(smoothing.mode)},
                        {"sigma", smoothing.sigma},
                        {"sigma_floor", smoothing.sigma_floor},
                        {"k", smoothing.k},
                        {"anneal_steps", smoothing.anneal_steps},
                        {"anneal_start_scale", smoothing.anneal_start_scale}};

  auto save_snapshot = [&](const ParameterSnapshot& snap, const std::string& mode,
                           const std::string& file) {
    Transformer<float> snap_model(mcfg, tcfg.seed);
    snap.restore(snap_model);
    CheckpointSelection sel{mode, snap.step, snap.metric};
    const std::string path = (run.root() / "checkpoints" / file).string();
    save_checkpoint(path, mcfg, tjson, pd.manifest_hash_value, sel, snap_model.params());
    return path;
  };
  s.ckpt_best_mae = save_snapshot(result.best_mae, "best_median_mae", "best_mae.ckpt");
  s.ckpt_best_ks = save_snapshot(result.best_ks, "best_ks", "best_ks.ckpt");
  {
    CheckpointSelection sel{"final", result.log.empty() ? 0 : result.log.back().step,
                            result.final_loss};
    s.ckpt_final = (run.root() / "checkpoints" / "final.ckpt").string();
    save_checkpoint(s.ckpt_final, mcfg, tjson, pd.manifest_hash_value, sel, model.params());
  }
  s.best_mae_step = result.best_mae.step;
  s.best_mae_metric = result.best_mae.metric;
  s.best_ks_step = result.best_ks.step;
  s.best_ks_metric = result.best_ks.metric;

  detail::write_training_log(run.path("training_log.csv"), result.log);
  {
    CsvTable t;
    t.header = {"key", "value"};
    t.add_row({"manifest_hash", pd.manifest_hash_value});
    t.add_row({"n_train_windows", std::to_string(s.n_train)});
    t.add_row({"n_val_windows", std::to_string(s.n_val)});
    t.add_row({"dropped_train", std::to_string(train_set.dropped)});
    t.add_row({"dropped_val", std::to_string(val_set.dropped)});
    t.add_row({"best_mae_step", std::to_string(s.best_mae_step)});
    t.add_row({"best_mae_val_median_mae", fmt_full(s.best_mae_metric)});
    t.add_row({"best_ks_step", std::to_string(s.best_ks_step)});
    t.add_row({"best_ks_val_ks", fmt_full(s.best_ks_metric)});
    t.add_row({"final_loss", fmt_full(s.final_loss)});
    t.add_row({"diverged", s.diverged ? "1" : "0"});
    write_csv(run.path("train_summary.csv"), t);
  }
  const auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  run.note("wall clock: " + fmt_g(dt, 4) + " s");

  if (result.diverged)
    throw NumericError("run_train: loss diverged at step " + std::to_string(result.diverged_step) +
                       "; best checkpoints up to that point were retained in '" +
                       (run.root() / "checkpoints").string() + "'");
  return s;
}

// ----------------------------- evaluate -----------------------------

struct EvalRunSummary {
  CalibrationReport model_report;
  SummaryErrors naive_errors;
  SummaryErrors riegel_errors;
  int n = 0;
  int dropped = 0;
  int riegel_fallbacks = 0;
};

namespace detail {

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (train|val|test)");
}

inline void write_prediction_csv(const std::string& path, const PipelineData& pd,
                                 const WindowSet& ws, const PredictionSet& preds,
                                 bool with_pit) {
  CsvTable t;
  t.header = {"runner_id", "target_index", "y_true", "mean", "median", "mode", "pit"};
  for (std::size_t i = 0; i < preds.truths.size(); ++i) {
    t.add_row({pd.histories[static_cast<std::size_t>(ws.runner_index[i])].runner_id,
               std::to_string(ws.target_index[i]), fmt_full(preds.truths[i]),
               fmt_full(preds.mean[i]), fmt_full(preds.median[i]), fmt_full(preds.mode[i]),
               with_pit ? fmt_full(preds.pits[i]) : ""});
  }
  write_csv(path, t);
}

inline void write_calibration_tables(const RunDir& run, const CalibrationReport& report) {
  {
    CsvTable t;
    t.header = {"pit"};
    for (double u : report.pit_samples) t.add_row({fmt_full(u)});
    write_csv(run.path("pit_samples.csv"), t);
  }
  {
    CsvTable t;
    t.header = {"uniform_q", "model_q"};
    for (const auto& q : report.qq) t.add_row({fmt_full(q.uniform_q), fmt_full(q.model_q)});
    write_csv(run.path("qq.csv"), t);
  }
  {
    CsvTable t;
    t.header = {"bin_lo", "bin_hi", "count", "fraction"};
    const int nb = static_cast<int>(report.occupancy.size());
    for (int b = 0; b < nb; ++b) {
      const double lo = static_cast<double>(b) / nb;
      const double hi = static_cast<double>(b + 1) / nb;
      t.add_row({fmt_full(lo), fmt_full(hi), std::to_string(report.occupancy[static_cast<std::size_t>(b)]),
                 fmt_full(static_cast<double>(report.occupancy[static_cast<std::size_t>(b)]) /
                          std::max<std::int64_t>(1, report.n))});
    }
    write_csv(run.path("occupancy.csv"), t);
  }
  {
    CsvTable t;
    t.header = {"decile", "truth_lo", "truth_hi", "n", "ks"};
    for (std::size_t d = 0; d < report.deciles.size(); ++d) {
      const auto& dr = report.deciles[d];
      t.add_row({std::to_string(d), fmt_full(dr.truth_lo), fmt_full(dr.truth_hi),
                 std::to_string(dr.n), fmt_full(dr.ks)});
    }
    write_csv(run.path("deciles.csv"), t);
  }
  {
    CsvTable t;
    t.header = {"decile", "uniform_q", "model_q"};
    for (std::size_t d = 0; d < report.deciles.size(); ++d)
      for (const auto& q : report.deciles[d].qq)
        t.add_row({std::to_string(d), fmt_full(q.uniform_q), fmt_full(q.model_q)});
    write_csv(run.path("deciles_qq.csv"), t);
  }
}

inline void render_calibration_plots(const fs::path& dir, const CalibrationReport& report) {
  fs::create_directories(dir);
  {
    PlotSeries s;
    s.name = "model";
    for (const auto& q : report.qq) s.points.emplace_back(q.uniform_q, q.model_q);
    svg_line_chart((dir / "qq.svg").string(), "Q-Q: PIT quantiles vs uniform", "uniform quantile",
                   "model quantile", {s}, true);
  }
  {
    std::vector<std::string> labels;
    std::vector<double> values;
    const int nb = static_cast<int>(report.occupancy.size());
    for (int b = 0; b < nb; ++b) {
      labels.push_back(fmt_g(static_cast<double>(b) / nb, 2));
      values.push_back(static_cast<double>(report.occupancy[static_cast<std::size_t>(b)]));
    }
    svg_bar_chart((dir / "occupancy.svg").string(), "PIT quantile occupancy", "PIT bin", labels,
                  values);
  }
  {
    std::vector<PlotSeries> series;
    for (std::size_t d = 0; d < report.deciles.size(); ++d) {
      PlotSeries s;
      s.name = "decile " + std::to_string(d);
      for (const auto& q : report.deciles[d].qq) s.points.emplace_back(q.uniform_q, q.model_q);
      series.push_back(std::move(s));
    }
    svg_line_chart((dir / "deciles.svg").string(), "Decile-stratified Q-Q", "uniform quantile",
                   "model quantile", series, true);
  }
}

inline std::string metrics_row_predictor(CsvTable& t, const std::string& name,
                                         const std::string& selection, std::int64_t n, int dropped,
                                         const SummaryErrors& e, std::optional<double> ks) {
  t.add_row({name, selection, std::to_string(n), std::to_string(dropped), fmt_full(e.mean.mae),
             fmt_full(e.median.mae), fmt_full(e.mode.mae), fmt_full(e.mean.rmse),
             fmt_full(e.median.rmse), fmt_full(e.mode.rmse), ks ? fmt_full(*ks) : ""});
  return name;
}

}  // namespace detail

// Resolves a checkpoint path: a directory means "pick by train.select".
inline std::string resolve_checkpoint_path(const Config& cfg) {
  std::string path = cfg.get_string("data.checkpoint_path");
  if (path.empty()) throw ConfigError("data.checkpoint_path not set (a train run directory or .ckpt file)");
  if (fs::is_directory(path)) {
    const auto select = select_from_string(cfg.get_string("train.select"));
    const char* file = select == CheckpointSelect::best_median_mae ? "best_mae.ckpt" : "best_ks.ckpt";
    const auto direct = fs::path(path) / file;
    const auto nested = fs::path(path) / "checkpoints" / file;
    path = fs::exists(nested) ? nested.string() : direct.string();
  }
  if (!fs::exists(path)) throw DataError("checkpoint '" + path + "' does not exist");
  return path;
}

inline EvalRunSummary run_evaluate(const Config& cfg, const std::string& out_dir) {
  RunDir run(cfg, out_dir);
  auto pd = load_pipeline_data(cfg);
  const auto ckpt_path = resolve_checkpoint_path(cfg);
  auto ckpt = load_checkpoint(ckpt_path);

  // fail fast on manifest mismatch: the checkpoint must have been trained
  // against exactly this vocabulary
  if (ckpt.manifest_hash != pd.manifest_hash_value)
    throw DataError("manifest mismatch: checkpoint was trained with vocabulary hash " +
                    ckpt.manifest_hash + " but '" + cfg.get_string("data.manifest_path") +
                    "' hashes to " + pd.manifest_hash_value);
  if (ckpt.model_config.vocab_size != pd.vocab.vocab_size())
    throw DataError("checkpoint vocab size does not match the manifest");

  const auto ablation = ablation_from_string(ckpt.train_config.value("ablation", "none"));
  const int max_events = ckpt.train_config.value("max_events", kDefaultMaxEvents);
  const auto shuffle_base = ckpt.train_config.value("seed", std::uint64_t{1});
  const auto which = detail::split_from_string(cfg.get_string("eval.split"));

  auto ws = encode_split(pd, which, ablation, max_events, shuffle_base);
  const int cap = cfg.get_int("eval.max_examples");
  if (cap > 0 && static_cast<int>(ws.windows.size()) > cap) {
    ws.windows.resize(static_cast<std::size_t>(cap));
    ws.labels.resize(static_cast<std::size_t>(cap));
    ws.runner_index.resize(static_cast<std::size_t>(cap));
    ws.target_index.resize(static_cast<std::size_t>(cap));
  }
  if (ws.windows.empty()) throw DataError("run_evaluate: no evaluable windows in split");
  run.note("eval windows: " + std::to_string(ws.windows.size()) + " (dropped " +
           std::to_string(ws.dropped) + ")");

  Transformer<float> model(ckpt.model_config, 0);
  restore_parameters(model, ckpt);
  const auto& pace_bins = pd.vocab.feature("pace").bins;
  auto inputs = to_inputs(ws, pd.vocab, ckpt.model_config);
  auto model_preds = evaluate_model(model, inputs, ws.labels, pace_bins);

  // point baselines over the same example set
  const auto train_paces = split_train_paces(pd);
  const double naive = naive_mean_predict(train_paces);
  RiegelConfig rcfg;
  rcfg.exponent = cfg.get_double("riegel.exponent");

  EvalRunSummary s;
  PredictionSet naive_preds, riegel_preds;
  for (std::size_t i = 0; i < ws.windows.size(); ++i) {
    const auto& h = pd.histories[static_cast<std::size_t>(ws.runner_index[i])];
    const int t = ws.target_index[i];
    const auto& ref = h.events[static_cast<std::size_t>(t - 1)];  // penultimate race
    const auto& target = h.events[static_cast<std::size_t>(t)];
    double riegel_pace;
    try {
      riegel_pace = riegel_predict(ref.distance_m, pace_to_total_time(ref.pace_s, ref.distance_m),
                                   target.distance_m, rcfg);
    } catch (const std::invalid_argument&) {
      riegel_pace = naive;  // unusable reference race
      ++s.riegel_fallbacks;
    }
    naive_preds.truths.push_back(ws.labels[i]);
    naive_preds.mean.push_back(naive);
    naive_preds.median.push_back(naive);
    naive_preds.mode.push_back(naive);
    riegel_preds.truths.push_back(ws.labels[i]);
    riegel_preds.mean.push_back(riegel_pace);
    riegel_preds.median.push_back(riegel_pace);
    riegel_preds.mode.push_back(riegel_pace);
  }

  const int deciles = cfg.get_int("eval.deciles");
  const int hist_bins = cfg.get_int("eval.histogram_bins");
  s.model_report = stratified_report(model_preds, deciles, hist_bins);
  auto naive_report = stratified_report(naive_preds, deciles, hist_bins);
  auto riegel_report = stratified_report(riegel_preds, deciles, hist_bins);
  s.naive_errors = naive_report.errors;
  s.riegel_errors = riegel_report.errors;
  s.n = static_cast<int>(ws.windows.size());
  s.dropped = ws.dropped;

  // single-valued predictors must collapse to identical summary errors
  for (const auto* e : {&s.naive_errors, &s.riegel_errors}) {
    if (e->mean.mae != e->median.mae || e->median.mae != e->mode.mae)
      throw NumericError("point-predictor summary MAEs diverged; evaluation harness is broken");
  }

  detail::write_prediction_csv(run.path("predictions_model.csv"), pd, ws, model_preds, true);
  detail::write_prediction_csv(run.path("predictions_naive_mean.csv"), pd, ws, naive_preds, false);
  detail::write_prediction_csv(run.path("predictions_riegel.csv"), pd, ws, riegel_preds, false);
  detail::write_calibration_tables(run, s.model_report);
  detail::render_calibration_plots(run.root() / "plots", s.model_report);

  CsvTable t;
  t.header = {"predictor", "selection",   "n",          "dropped",     "mae_mean", "mae_median",
              "mae_mode",  "rmse_mean",   "rmse_median", "rmse_mode",  "ks"};
  detail::metrics_row_predictor(t, "model", ckpt.selection.mode, s.model_report.n, ws.dropped,
                                s.model_report.errors, s.model_report.ks);
  detail::metrics_row_predictor(t, "naive_mean", "-", naive_report.n, ws.dropped, s.naive_errors,
                                std::nullopt);
  detail::metrics_row_predictor(t, "riegel", "-", riegel_report.n, ws.dropped, s.riegel_errors,
                                std::nullopt);
  write_csv(run.path("metrics.csv"), t);
  if (s.riegel_fallbacks > 0)
    run.note("riegel fallbacks to naive mean: " + std::to_string(s.riegel_fallbacks));
  return s;
}

}  // namespace pacecast
