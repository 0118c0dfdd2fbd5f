// pacecast CLI: pipeline orchestration from synthetic data generation through
// training, evaluation, sweeps and diagnostics. Every subcommand writes a
// self-describing run directory (resolved config, metrics tables, plots).
//
// Exit codes: 0 ok, 1 unexpected failure, 2 configuration error,
// 3 data/manifest error, 4 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "pacecast/config.hpp"
#include "pacecast/experiments.hpp"
#include "pacecast/pipeline.hpp"

namespace {

using pacecast::Config;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string profile = "desk";
  std::vector<std::string> overrides;  // key=value
  std::string data_path, manifest_path, bins_path, checkpoint_path, truth_path;
  std::string ablation, select;
  std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "config file of dotted key=value lines");
  cmd->add_option("--out", args.out_dir, "run directory to create")->required();
  cmd->add_option("--profile", args.profile, "configuration profile (desk|paper-doc)")
      ->check(CLI::IsMember({"desk", "paper-doc"}));
  cmd->add_option("--set", args.overrides, "override any config key, e.g. --set smoothing.k=2")
      ->expected(-1);
  cmd->add_option("--data", args.data_path, "dataset file (data.path)");
  cmd->add_option("--manifest", args.manifest_path, "vocabulary manifest (data.manifest_path)");
  cmd->add_option("--bins", args.bins_path, "fitted bins file (data.bins_path)");
  cmd->add_option("--checkpoint", args.checkpoint_path,
                  "checkpoint file or train run dir (data.checkpoint_path)");
  cmd->add_option("--truth", args.truth_path, "ground-truth sidecar (data.truth_path)");
  cmd->add_option("--seed", args.seed, "seed override (train.seed, or gen.seed for gen-data)");
  cmd->add_option("--ablation", args.ablation,
                  "ablation transform (none|drop_time_tokens|shuffle_events)")
      ->check(CLI::IsMember({"none", "drop_time_tokens", "shuffle_events"}));
  cmd->add_option("--select", args.select, "checkpoint selection (best_median_mae|best_ks)")
      ->check(CLI::IsMember({"best_median_mae", "best_ks"}));
}

Config build_config(const CommonArgs& args, bool seed_is_gen) {
  Config cfg = Config::defaults();
  cfg.apply_profile(args.profile);
  if (!args.config_path.empty()) cfg.load_file(args.config_path);
  cfg.apply_env();
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw pacecast::ConfigError("--set expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    if (!cfg.has(key)) throw pacecast::ConfigError("--set: unknown config key '" + key + "'");
    cfg.set(key, kv.substr(eq + 1));
  }
  if (!args.data_path.empty()) cfg.set("data.path", args.data_path);
  if (!args.manifest_path.empty()) cfg.set("data.manifest_path", args.manifest_path);
  if (!args.bins_path.empty()) cfg.set("data.bins_path", args.bins_path);
  if (!args.checkpoint_path.empty()) cfg.set("data.checkpoint_path", args.checkpoint_path);
  if (!args.truth_path.empty()) cfg.set("data.truth_path", args.truth_path);
  if (!args.ablation.empty()) cfg.set("ablation.mode", args.ablation);
  if (!args.select.empty()) cfg.set("train.select", args.select);
  if (args.seed >= 0) cfg.set(seed_is_gen ? "gen.seed" : "train.seed", std::to_string(args.seed));
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"calibrated distributional pace forecasting over tokenized race histories"};
  app.require_subcommand(1);

  CommonArgs gen_args, fit_args, vocab_args, train_args, eval_args, sweep_args, ablate_args,
      report_args, diag_args;

  auto* cmd_gen = app.add_subcommand("gen-data", "generate a synthetic trajectory dataset");
  add_common(cmd_gen, gen_args);
  auto* cmd_fit = app.add_subcommand("fit-bins", "fit balanced bins on the training split");
  add_common(cmd_fit, fit_args);
  auto* cmd_vocab = app.add_subcommand("build-vocab", "build the token vocabulary manifest");
  add_common(cmd_vocab, vocab_args);
  auto* cmd_train = app.add_subcommand("train", "train the transformer");
  add_common(cmd_train, train_args);
  auto* cmd_eval = app.add_subcommand("evaluate", "evaluate a checkpoint with baselines");
  add_common(cmd_eval, eval_args);
  auto* cmd_sweep = app.add_subcommand("sweep-sigma", "smoothing sweep leaderboard");
  add_common(cmd_sweep, sweep_args);
  auto* cmd_ablate = app.add_subcommand("ablate", "train and compare ablation transforms");
  add_common(cmd_ablate, ablate_args);
  auto* cmd_report = app.add_subcommand("report", "regenerate calibration tables and plots");
  add_common(cmd_report, report_args);
  auto* cmd_diag =
      app.add_subcommand("dump-diagnostics", "attention/activation dump for one window");
  add_common(cmd_diag, diag_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (cmd_gen->parsed()) {
      auto cfg = build_config(gen_args, true);
      auto s = pacecast::run_gen_data(cfg, gen_args.out_dir);
      std::printf("wrote %s (%d runners, %lld events)\n", s.data_path.c_str(), s.n_runners,
                  static_cast<long long>(s.n_events));
      std::printf("ground truth sidecar: %s\n", s.truth_path.c_str());
    } else if (cmd_fit->parsed()) {
      auto cfg = build_config(fit_args, false);
      auto path = pacecast::run_fit_bins(cfg, fit_args.out_dir);
      std::printf("wrote %s\n", path.c_str());
    } else if (cmd_vocab->parsed()) {
      auto cfg = build_config(vocab_args, false);
      auto path = pacecast::run_build_vocab(cfg, vocab_args.out_dir);
      std::printf("wrote %s\n", path.c_str());
    } else if (cmd_train->parsed()) {
      auto cfg = build_config(train_args, false);
      auto s = pacecast::run_train(cfg, train_args.out_dir);
      std::printf("trained on %d windows (val %d)\n", s.n_train, s.n_val);
      std::printf("best median MAE %.4f s at step %d -> %s\n", s.best_mae_metric, s.best_mae_step,
                  s.ckpt_best_mae.c_str());
      std::printf("best KS %.6f at step %d -> %s\n", s.best_ks_metric, s.best_ks_step,
                  s.ckpt_best_ks.c_str());
    } else if (cmd_eval->parsed()) {
      auto cfg = build_config(eval_args, false);
      auto s = pacecast::run_evaluate(cfg, eval_args.out_dir);
      std::printf("evaluated %d examples (%d dropped)\n", s.n, s.dropped);
      std::printf("model   : median MAE %.4f s, KS %.6f\n", s.model_report.errors.median.mae,
                  s.model_report.ks);
      std::printf("naive   : MAE %.4f s\n", s.naive_errors.median.mae);
      std::printf("riegel  : MAE %.4f s\n", s.riegel_errors.median.mae);
    } else if (cmd_sweep->parsed()) {
      auto cfg = build_config(sweep_args, false);
      auto rows = pacecast::run_sweep_sigma(cfg, sweep_args.out_dir);
      std::printf("%-26s %-16s %-10s %-10s\n", "model", "selection", "KS", "median MAE");
      for (const auto& r : rows)
        std::printf("%-26s %-16s %-10.6f %-10.4f\n", r.model.c_str(), r.selection.c_str(),
                    r.report.ks, r.report.errors.median.mae);
    } else if (cmd_ablate->parsed()) {
      auto cfg = build_config(ablate_args, false);
      auto rows = pacecast::run_ablate(cfg, ablate_args.out_dir);
      std::printf("%-20s %-10s %-12s %-10s\n", "mode", "mean MAE", "median MAE", "mode MAE");
      for (const auto& r : rows)
        std::printf("%-20s %-10.4f %-12.4f %-10.4f\n", r.mode.c_str(), r.report.errors.mean.mae,
                    r.report.errors.median.mae, r.report.errors.mode.mae);
    } else if (cmd_report->parsed()) {
      auto cfg = build_config(report_args, false);
      pacecast::run_report(cfg, report_args.out_dir);
      std::printf("regenerated calibration tables and plots under %s\n",
                  report_args.out_dir.c_str());
    } else if (cmd_diag->parsed()) {
      auto cfg = build_config(diag_args, false);
      auto s = pacecast::run_dump_diagnostics(cfg, diag_args.out_dir);
      std::printf("dumped %d layers x %d heads over %d tokens; argmax pace bin %d\n", s.layers,
                  s.heads, s.seq_len, s.predicted_bin);
    }
  } catch (const pacecast::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const pacecast::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const pacecast::NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
