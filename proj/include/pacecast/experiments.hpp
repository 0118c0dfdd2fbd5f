#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pacecast/pipeline.hpp"

namespace pacecast {

// ----------------------------- in-memory variants -----------------------------

// One trained configuration variant (ablation or smoothing), kept in memory so
// sweeps can evaluate several checkpoints without file round-trips.
struct TrainedVariant {
  ModelConfig mcfg;
  TrainConfig tcfg;
  TrainResult result;
  WindowSet eval_set;  // split chosen by the caller
  std::vector<WindowInput> eval_inputs;
};

inline TrainedVariant train_variant(const Config& cfg, const PipelineData& pd,
                                    AblationMode ablation, const SmoothingConfig& smoothing,
                                    Split eval_split, std::optional<std::uint64_t> seed_override,
                                    std::vector<TrainLogRow>* log_sink = nullptr) {
  TrainedVariant v;
  v.tcfg = train_config_from(cfg);
  if (seed_override) v.tcfg.seed = *seed_override;
  const int max_events = cfg.get_int("model.max_events");
  v.mcfg = model_config_from(cfg, pd.vocab, ablation);
  const auto& pace_bins = pd.vocab.feature("pace").bins;

  auto train_set = encode_split(pd, Split::train, ablation, max_events, v.tcfg.seed);
  auto val_set = encode_split(pd, Split::val, ablation, max_events, v.tcfg.seed);
  if (train_set.windows.empty()) throw DataError("train_variant: no training windows");

  TrainingData data;
  data.train_inputs = to_inputs(train_set, pd.vocab, v.mcfg);
  data.train_labels = train_set.labels;
  data.val_inputs = to_inputs(val_set, pd.vocab, v.mcfg);
  data.val_labels = val_set.labels;
  data.pace_bins = &pace_bins;
  if (smoothing.anneal_steps == 0) {
    data.train_targets.reserve(train_set.labels.size());
    for (double y : train_set.labels)
      data.train_targets.push_back(gaussian_integrated_target(y, pace_bins, smoothing));
  }

  Transformer<float> model(v.mcfg, v.tcfg.seed);
  v.result = train_model(model, v.tcfg, smoothing, data);
  if (v.result.diverged)
    throw NumericError("train_variant: loss diverged at step " +
                       std::to_string(v.result.diverged_step));
  if (log_sink) *log_sink = v.result.log;

  if (eval_split == Split::val) {
    v.eval_set = std::move(val_set);
  } else {
    v.eval_set = encode_split(pd, eval_split, ablation, max_events, v.tcfg.seed);
  }
  v.eval_inputs = to_inputs(v.eval_set, pd.vocab, v.mcfg);
  return v;
}

inline CalibrationReport evaluate_snapshot(const TrainedVariant& v, const ParameterSnapshot& snap,
                                           const BinSpec& pace_bins, int deciles,
                                           int histogram_bins) {
  Transformer<float> model(v.mcfg, v.tcfg.seed);
  snap.restore(model);
  auto preds = evaluate_model(model, v.eval_inputs, v.eval_set.labels, pace_bins);
  return stratified_report(preds, deciles, histogram_bins);
}

// ----------------------------- sweep-sigma -----------------------------

struct SweepRow {
  std::string model;
  std::string selection;
  CalibrationReport report;
  int selected_step = 0;
};

inline SmoothingConfig sweep_smoothing_variant(const Config& cfg, const std::string& token) {
  SmoothingConfig s = smoothing_config_from(cfg);
  if (token == "hard") {
    s.mode = SmoothingMode::hard;
  } else if (token == "adaptive") {
    s.mode = SmoothingMode::adaptive;
  } else {
    s.mode = SmoothingMode::fixed;
    try {
      std::size_t used = 0;
      s.sigma = std::stod(token, &used);
      if (used != token.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("sweep.sigmas entry '" + token + "' is not hard|adaptive|<seconds>");
    }
    if (!(s.sigma > 0.0)) throw ConfigError("sweep.sigmas fixed sigma must be > 0");
  }
  return s;
}

inline std::string sweep_variant_label(const SmoothingConfig& s) {
  switch (s.mode) {
    case SmoothingMode::hard: return "cross_entropy_sigma0";
    case SmoothingMode::adaptive: return "adaptive_sigma";
    case SmoothingMode::fixed: return "sigma=" + fmt_g(s.sigma, 6);
  }
  return "?";
}

// Table-4-style leaderboard: every smoothing variant trained under the same
// budget, reported for both the MAE-selected and the KS-selected checkpoint
// on the validation split.
inline std::vector<SweepRow> run_sweep_sigma(const Config& cfg, const std::string& out_dir) {
  RunDir run(cfg, out_dir);
  auto pd = load_pipeline_data(cfg);
  const auto& pace_bins = pd.vocab.feature("pace").bins;
  const int deciles = cfg.get_int("eval.deciles");
  const int hist_bins = cfg.get_int("eval.histogram_bins");
  const auto ablation = ablation_from_string(cfg.get_string("ablation.mode"));

  std::vector<SweepRow> rows;
  for (const auto& token : cfg.get_list("sweep.sigmas")) {
    const auto smoothing = sweep_smoothing_variant(cfg, token);
    const auto label = sweep_variant_label(smoothing);
    run.note("training sweep variant " + label);
    std::vector<TrainLogRow> log;
    auto v = train_variant(cfg, pd, ablation, smoothing, Split::val, std::nullopt, &log);
    const auto subdir = run.root() / "variants" / label;
    fs::create_directories(subdir);
    detail::write_training_log((subdir / "training_log.csv").string(), log);

    SweepRow mae_row;
    mae_row.model = label;
    mae_row.selection = "best_median_mae";
    mae_row.report = evaluate_snapshot(v, v.result.best_mae, pace_bins, deciles, hist_bins);
    mae_row.selected_step = v.result.best_mae.step;
    rows.push_back(std::move(mae_row));

    SweepRow ks_row;
    ks_row.model = label;
    ks_row.selection = "best_ks";
    ks_row.report = evaluate_snapshot(v, v.result.best_ks, pace_bins, deciles, hist_bins);
    ks_row.selected_step = v.result.best_ks.step;
    rows.push_back(std::move(ks_row));
  }

  CsvTable t;
  t.header = {"model",      "selection", "step",        "ks",        "mae_mean", "mae_median",
              "mae_mode",   "rmse_mean", "rmse_median", "rmse_mode", "n"};
  for (const auto& r : rows) {
    t.add_row({r.model, r.selection, std::to_string(r.selected_step), fmt_full(r.report.ks),
               fmt_full(r.report.errors.mean.mae), fmt_full(r.report.errors.median.mae),
               fmt_full(r.report.errors.mode.mae), fmt_full(r.report.errors.mean.rmse),
               fmt_full(r.report.errors.median.rmse), fmt_full(r.report.errors.mode.rmse),
               std::to_string(r.report.n)});
  }
  write_csv(run.path("leaderboard.csv"), t);
  return rows;
}

// ----------------------------- ablate -----------------------------

struct AblateRow {
  std::string mode;
  CalibrationReport report;
};

// Trains one model per ablation transform under the shared budget and
// evaluates each on the same split (test by default).
inline std::vector<AblateRow> run_ablate(const Config& cfg, const std::string& out_dir) {
  RunDir run(cfg, out_dir);
  auto pd = load_pipeline_data(cfg);
  const auto& pace_bins = pd.vocab.feature("pace").bins;
  const int deciles = cfg.get_int("eval.deciles");
  const int hist_bins = cfg.get_int("eval.histogram_bins");
  const auto smoothing = smoothing_config_from(cfg);
  const auto which = detail::split_from_string(cfg.get_string("eval.split"));
  const auto select = select_from_string(cfg.get_string("train.select"));

  std::vector<AblateRow> rows;
  for (const auto& mode_name : cfg.get_list("ablate.modes")) {
    const auto mode = ablation_from_string(mode_name);
    run.note("training ablation variant " + mode_name);
    std::vector<TrainLogRow> log;
    auto v = train_variant(cfg, pd, mode, smoothing, which, std::nullopt, &log);
    const auto subdir = run.root() / "variants" / mode_name;
    fs::create_directories(subdir);
    detail::write_training_log((subdir / "training_log.csv").string(), log);

    AblateRow row;
    row.mode = mode_name;
    const auto& snap =
        select == CheckpointSelect::best_median_mae ? v.result.best_mae : v.result.best_ks;
    row.report = evaluate_snapshot(v, snap, pace_bins, deciles, hist_bins);
    rows.push_back(std::move(row));
  }

  CsvTable t;
  t.header = {"mode",      "n",         "ks",          "mae_mean",  "mae_median", "mae_mode",
              "rmse_mean", "rmse_median", "rmse_mode"};
  for (const auto& r : rows) {
    t.add_row({r.mode, std::to_string(r.report.n), fmt_full(r.report.ks),
               fmt_full(r.report.errors.mean.mae), fmt_full(r.report.errors.median.mae),
               fmt_full(r.report.errors.mode.mae), fmt_full(r.report.errors.mean.rmse),
               fmt_full(r.report.errors.median.rmse), fmt_full(r.report.errors.mode.rmse)});
  }
  write_csv(run.path("ablation.csv"), t);
  return rows;
}

// ----------------------------- report -----------------------------

// Regenerates calibration tables and plots of an evaluate run from its stored
// per-example predictions; regeneration is byte-idempotent.
inline void run_report(const Config& cfg, const std::string& run_dir) {
  const fs::path root(run_dir);
  const auto pred_path = (root / "predictions_model.csv").string();
  auto table = read_csv(pred_path);
  PredictionSet preds;
  const int ci_truth = csv_column(table, "y_true");
  const int ci_mean = csv_column(table, "mean");
  const int ci_median = csv_column(table, "median");
  const int ci_mode = csv_column(table, "mode");
  const int ci_pit = csv_column(table, "pit");
  for (const auto& row : table.rows) {
    preds.truths.push_back(std::stod(row[static_cast<std::size_t>(ci_truth)]));
    preds.mean.push_back(std::stod(row[static_cast<std::size_t>(ci_mean)]));
    preds.median.push_back(std::stod(row[static_cast<std::size_t>(ci_median)]));
    preds.mode.push_back(std::stod(row[static_cast<std::size_t>(ci_mode)]));
    const auto& pit_cell = row[static_cast<std::size_t>(ci_pit)];
    if (!pit_cell.empty()) preds.pits.push_back(std::stod(pit_cell));
  }
  if (preds.truths.empty()) throw DataError("run_report: no predictions in '" + pred_path + "'");
  auto report = stratified_report(preds, cfg.get_int("eval.deciles"),
                                  cfg.get_int("eval.histogram_bins"));
  RunDir run(cfg, run_dir);  // rewrites resolved_config.txt alongside regenerated tables
  detail::write_calibration_tables(run, report);
  detail::render_calibration_plots(root / "plots", report);
}

// ----------------------------- dump-diagnostics -----------------------------

struct DiagnosticsSummary {
  int layers = 0;
  int heads = 0;
  int seq_len = 0;
  int predicted_bin = -1;
};

// Attention maps per layer/head, residual-update magnitudes per layer and the
// predicted pace histogram for one encoded window.
inline DiagnosticsSummary run_dump_diagnostics(const Config& cfg, const std::string& out_dir) {
  RunDir run(cfg, out_dir);
  auto pd = load_pipeline_data(cfg);
  const auto ckpt_path = resolve_checkpoint_path(cfg);
  auto ckpt = load_checkpoint(ckpt_path);
  if (ckpt.manifest_hash != pd.manifest_hash_value)
    throw DataError("manifest mismatch between checkpoint and data.manifest_path");

  const int runner_index = cfg.get_int("diag.runner_index");
  if (runner_index < 0 || runner_index >= static_cast<int>(pd.histories.size()))
    throw DataError("diag.runner_index out of range");
  const auto& h = pd.histories[static_cast<std::size_t>(runner_index)];
  int target_index = cfg.get_int("diag.target_index");
  if (target_index < 0) target_index = static_cast<int>(h.events.size()) - 1;

  WindowOptions opts;
  opts.max_events = ckpt.train_config.value("max_events", kDefaultMaxEvents);
  opts.ablation = ablation_from_string(ckpt.train_config.value("ablation", "none"));
  opts.shuffle_seed = example_shuffle_seed(ckpt.train_config.value("seed", std::uint64_t{1}),
                                           h.runner_id, target_index);
  auto w = encode_window(h, target_index, pd.vocab, opts, runner_index);

  Transformer<float> model(ckpt.model_config, 0);
  restore_parameters(model, ckpt);
  auto input = window_to_input(w, pd.vocab, ckpt.model_config);
  const auto logits = model.forward(input);

  const int L = model.last_seq_len();
  const int H = ckpt.model_config.n_heads;
  DiagnosticsSummary s;
  s.layers = ckpt.model_config.n_layers;
  s.heads = H;
  s.seq_len = L;

  for (int l = 0; l < ckpt.model_config.n_layers; ++l) {
    const auto& probs = model.attention_probs(l);
    for (int head = 0; head < H; ++head) {
      CsvTable t;
      t.header = {"query"};
      for (int j = 0; j < L; ++j) t.header.push_back("k" + std::to_string(j));
      for (int i = 0; i < L; ++i) {
        std::vector<std::string> row{std::to_string(i)};
        double sum = 0.0;
        for (int j = 0; j < L; ++j) {
          const double a = probs[(static_cast<std::size_t>(head) * L + i) * L + j];
          if (j > i && a != 0.0)
            throw NumericError("dump_diagnostics: non-zero attention on a masked position");
          sum += a;
          row.push_back(fmt_full(a));
        }
        if (std::abs(sum - 1.0) > 1e-5)
          throw NumericError("dump_diagnostics: attention row does not sum to 1");
        t.add_row(std::move(row));
      }
      char name[64];
      std::snprintf(name, sizeof(name), "attention_l%d_h%d.csv", l, head);
      write_csv(run.path(name), t);
    }
  }
  // final block heatmaps
  {
    const int l = ckpt.model_config.n_layers - 1;
    const auto& probs = model.attention_probs(l);
    for (int head = 0; head < H; ++head) {
      std::vector<double> vals(static_cast<std::size_t>(L) * L, 0.0);
      for (int i = 0; i < L; ++i)
        for (int j = 0; j < L; ++j)
          vals[static_cast<std::size_t>(i) * L + j] =
              probs[(static_cast<std::size_t>(head) * L + i) * L + j];
      char name[64];
      std::snprintf(name, sizeof(name), "attention_l%d_h%d.svg", l, head);
      svg_heatmap(run.path(name), "final-block attention, head " + std::to_string(head), L, L,
                  vals);
    }
  }

  {
    auto contribs = model.layer_contributions();
    CsvTable t;
    t.header = {"layer", "attention_update_l2", "ffn_update_l2"};
    std::vector<std::string> labels;
    std::vector<double> values;
    for (std::size_t l = 0; l < contribs.size(); ++l) {
      t.add_row({std::to_string(l), fmt_full(contribs[l].attention), fmt_full(contribs[l].ffn)});
      labels.push_back("L" + std::to_string(l) + " attn");
      values.push_back(contribs[l].attention);
      labels.push_back("L" + std::to_string(l) + " ffn");
      values.push_back(contribs[l].ffn);
    }
    write_csv(run.path("layer_contributions.csv"), t);
    svg_bar_chart(run.path("layer_contributions.svg"), "per-layer residual update magnitude",
                  "layer / sublayer", labels, values);
  }

  {
    double m = -std::numeric_limits<double>::infinity();
    for (float v : logits) m = std::max(m, static_cast<double>(v));
    std::vector<double> probs(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      probs[i] = std::exp(static_cast<double>(logits[i]) - m);
      z += probs[i];
    }
    double check = 0.0;
    const auto& pace_bins = pd.vocab.feature("pace").bins;
    CsvTable t;
    t.header = {"bin", "pace_lo", "pace_hi", "prob"};
    std::vector<std::string> labels;
    std::vector<double> values;
    int argmax = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      probs[i] /= z;
      check += probs[i];
      if (probs[i] > probs[static_cast<std::size_t>(argmax)]) argmax = static_cast<int>(i);
      t.add_row({std::to_string(i), fmt_full(pace_bins.edges[i]), fmt_full(pace_bins.edges[i + 1]),
                 fmt_full(probs[i])});
      labels.push_back(i % 8 == 0 ? fmt_g(pace_bins.edges[i], 4) : "");
      values.push_back(probs[i]);
    }
    if (std::abs(check - 1.0) > 1e-6)
      throw NumericError("dump_diagnostics: predicted histogram does not sum to 1");
    write_csv(run.path("pred_histogram.csv"), t);
    svg_bar_chart(run.path("pred_histogram.svg"), "predicted pace distribution", "pace bin",
                  labels, values);
    s.predicted_bin = argmax;
  }
  run.note("diagnostics for runner " + h.runner_id + " target " + std::to_string(target_index) +
           ", " + std::to_string(L) + " real tokens");
  return s;
}

}  // namespace pacecast
