#include "pacecast/synthdata.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "pacecast/baselines.hpp"
#include "pacecast/evalcal.hpp"
#include "pacecast/grammar.hpp"
#include "pacecast/quantizer.hpp"

using namespace pacecast;

namespace {

GeneratorConfig small_config() {
  GeneratorConfig cfg;
  cfg.n_runners = 200;
  cfg.seed = 77;
  return cfg;
}

std::vector<double> all_paces(const std::vector<RunnerHistory>& hs) {
  std::vector<double> out;
  for (const auto& h : hs)
    for (const auto& ev : h.events) out.push_back(ev.pace_s);
  return out;
}

}  // namespace

TEST_CASE("generate: deterministic by seed, byte-identical files") {
  auto cfg = small_config();
  auto a = generate(cfg);
  auto b = generate(cfg);
  namespace fs = std::filesystem;
  const auto pa = (fs::temp_directory_path() / "pacecast_synth_a.jsonl").string();
  const auto pb = (fs::temp_directory_path() / "pacecast_synth_b.jsonl").string();
  write_dataset_jsonl(pa, a.histories);
  write_dataset_jsonl(pb, b.histories);
  std::ifstream fa(pa), fb(pb);
  std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  CHECK_FALSE(sa.empty());
  fs::remove(pa);
  fs::remove(pb);

  cfg.seed = 78;
  auto c = generate(cfg);
  CHECK(c.histories[0].events[0].pace_s != a.histories[0].events[0].pace_s);
}

TEST_CASE("generate: every runner has at least min_events and valid cadence") {
  auto data = generate(small_config());
  REQUIRE(data.histories.size() == 200);
  for (const auto& h : data.histories) {
    CHECK(h.events.size() >= 3);
    CHECK(h.events.size() <= 10);
    CHECK(h.events.front().weeks_since_last == 0);
    CHECK(h.events.back().weeks_to_target == 0);
    for (std::size_t i = 1; i < h.events.size(); ++i) CHECK(h.events[i].weeks_since_last >= 1);
    // stored chain consistency: weeks_to_target telescopes
    for (std::size_t i = 0; i + 1 < h.events.size(); ++i)
      CHECK(h.events[i].weeks_to_target ==
            h.events[i + 1].weeks_to_target + h.events[i + 1].weeks_since_last);
  }
}

TEST_CASE("generate: degenerate config produces constant pace per runner") {
  auto cfg = small_config();
  cfg.noise_sd = 0.0;
  cfg.trend_slope_mean = 0.0;
  cfg.trend_slope_sd = 0.0;
  cfg.temp_coeff = 0.0;
  cfg.humidity_coeff = 0.0;
  cfg.wind_coeff = 0.0;
  cfg.rain_penalty = 0.0;
  cfg.other_conditions_penalty = 0.0;
  cfg.age_coeff = 0.0;
  cfg.distance_coeff = 0.0;
  cfg.gender_offset_f = 0.0;
  cfg.gender_offset_m = 0.0;
  auto data = generate(cfg);
  for (const auto& h : data.histories) {
    for (const auto& ev : h.events)
      CHECK(ev.pace_s == doctest::Approx(h.events.front().pace_s).epsilon(1e-12));
  }
}

TEST_CASE("generate: OLS on temperature excess recovers the coefficient") {
  auto cfg = small_config();
  cfg.n_runners = 1500;
  cfg.temp_coeff = 2.5;
  auto data = generate(cfg);

  // ordinary-least-squares oracle: slope of pace on x = max(0, T - T0)
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::int64_t n = 0;
  for (const auto& h : data.histories)
    for (const auto& ev : h.events) {
      const double x = std::max(0.0, ev.temperature_c - cfg.temp_threshold_c);
      sx += x;
      sy += ev.pace_s;
      sxx += x * x;
      sxy += x * ev.pace_s;
      ++n;
    }
  const double nd = static_cast<double>(n);
  const double slope = (nd * sxy - sx * sy) / (nd * sxx - sx * sx);
  // residual variance for the standard error
  const double intercept = (sy - slope * sx) / nd;
  double rss = 0;
  for (const auto& h : data.histories)
    for (const auto& ev : h.events) {
      const double x = std::max(0.0, ev.temperature_c - cfg.temp_threshold_c);
      const double r = ev.pace_s - intercept - slope * x;
      rss += r * r;
    }
  const double se = std::sqrt(rss / (nd - 2.0) / (sxx - sx * sx / nd));
  CHECK(std::abs(slope - cfg.temp_coeff) < 3.0 * se);
}

TEST_CASE("generate: emitted corpus parses through grammar ingestion and encodes") {
  auto data = generate(small_config());
  namespace fs = std::filesystem;
  const auto path = (fs::temp_directory_path() / "pacecast_synth_ingest.jsonl").string();
  write_dataset_jsonl(path, data.histories);
  auto back = read_dataset_jsonl(path);
  REQUIRE(back.size() == data.histories.size());
  fs::remove(path);

  // fit bins on the emitted corpus and encode every window without errors
  std::map<std::string, BinSpec> specs;
  std::vector<double> temps, hums, winds, feels, paces;
  for (const auto& h : back)
    for (const auto& ev : h.events) {
      temps.push_back(ev.temperature_c);
      hums.push_back(ev.humidity_pct);
      winds.push_back(ev.wind_kph);
      feels.push_back(ev.feels_like_c);
      paces.push_back(ev.pace_s);
    }
  specs["temperature"] = fit_balanced("temperature", temps, 12, 1e9);
  specs["humidity"] = fit_balanced("humidity", hums, 12, 1e9);
  specs["wind"] = fit_balanced("wind", winds, 8, 1e9);
  specs["feels_like"] = fit_balanced("feels_like", feels, 12, 1e9);
  specs["pace"] = fit_balanced("pace", paces, 48, 10.0);
  auto vocab = build_vocabulary(specs);
  int windows = 0;
  for (std::size_t ri = 0; ri < back.size(); ++ri)
    for (int t = 1; t < static_cast<int>(back[ri].events.size()); ++t) {
      auto w = encode_window(back[ri], t, vocab, {}, static_cast<int>(ri));
      CHECK(w.n_real >= 19);
      ++windows;
    }
  CHECK(windows > 400);
}

TEST_CASE("oracle_pdf: calibrated against its own sampling, KS small") {
  auto cfg = small_config();
  cfg.n_runners = 800;
  auto data = generate(cfg);
  auto paces = all_paces(data.histories);
  auto pace_bins = fit_balanced("pace", paces, 64, 10.0);

  Rng rng(404);
  std::vector<double> pits;
  for (std::size_t ri = 0; ri < data.histories.size(); ++ri) {
    const auto& h = data.histories[ri];
    for (int t = 1; t < static_cast<int>(h.events.size()); ++t) {
      auto pdf = oracle_pdf(data.truth, h, static_cast<int>(ri), t, pace_bins);
      // independent draw from the true generative law
      const double mu =
          oracle_mean(data.truth, static_cast<int>(ri), h.events[static_cast<std::size_t>(t)],
                      cumulative_weeks(h, t));
      const double y = mu + rng.normal(0.0, cfg.noise_sd);
      pits.push_back(pit(pdf, y));
    }
  }
  CHECK(pits.size() > 3000);
  CHECK(ks_statistic(pits) < 0.02);
}

TEST_CASE("oracle_pdf: halved variance is overconfident, doubled shifts mass to the middle") {
  auto cfg = small_config();
  cfg.n_runners = 600;
  auto data = generate(cfg);
  auto paces = all_paces(data.histories);
  auto pace_bins = fit_balanced("pace", paces, 64, 10.0);

  Rng rng(405);
  std::vector<double> pits_over, pits_under;
  for (std::size_t ri = 0; ri < data.histories.size(); ++ri) {
    const auto& h = data.histories[ri];
    for (int t = 1; t < static_cast<int>(h.events.size()); ++t) {
      const double mu =
          oracle_mean(data.truth, static_cast<int>(ri), h.events[static_cast<std::size_t>(t)],
                      cumulative_weeks(h, t));
      const double y = mu + rng.normal(0.0, cfg.noise_sd);
      auto over = oracle_pdf(data.truth, h, static_cast<int>(ri), t, pace_bins, 0.5);
      auto under = oracle_pdf(data.truth, h, static_cast<int>(ri), t, pace_bins, 2.0);
      pits_over.push_back(pit(over, y));
      pits_under.push_back(pit(under, y));
    }
  }
  CHECK(ks_statistic(pits_over) > 0.05);
  // overconfident: PIT mass concentrates at the extremes
  auto hist_over = detail::pit_histogram(pits_over, 10);
  auto n_over = static_cast<double>(pits_over.size());
  CHECK((hist_over.front() + hist_over.back()) / n_over > 0.25);
  // underconfident: mass concentrates in the middle bins instead
  auto hist_under = detail::pit_histogram(pits_under, 10);
  auto n_under = static_cast<double>(pits_under.size());
  const double mid_under = static_cast<double>(hist_under[4] + hist_under[5]) / n_under;
  const double mid_over = static_cast<double>(hist_over[4] + hist_over[5]) / n_over;
  CHECK(mid_under > mid_over);
  CHECK(mid_under > 0.25);
}

TEST_CASE("oracle beats the naive mean on its own corpus") {
  auto cfg = small_config();
  cfg.n_runners = 500;
  auto data = generate(cfg);
  auto paces = all_paces(data.histories);
  auto pace_bins = fit_balanced("pace", paces, 64, 10.0);
  const double naive = naive_mean_predict(paces);

  std::vector<double> oracle_preds, naive_preds, truths;
  for (std::size_t ri = 0; ri < data.histories.size(); ++ri) {
    const auto& h = data.histories[ri];
    for (int t = 1; t < static_cast<int>(h.events.size()); ++t) {
      auto pdf = oracle_pdf(data.truth, h, static_cast<int>(ri), t, pace_bins);
      oracle_preds.push_back(point_summaries(pdf).median);
      naive_preds.push_back(naive);
      truths.push_back(h.events[static_cast<std::size_t>(t)].pace_s);
    }
  }
  const double oracle_mae = mae_rmse(oracle_preds, truths).mae;
  const double naive_mae = mae_rmse(naive_preds, truths).mae;
  CHECK(oracle_mae < naive_mae);
  CHECK(oracle_mae < 0.4 * naive_mae);  // decisively better, not marginally
}

TEST_CASE("ground truth sidecar: round trip") {
  auto data = generate(small_config());
  namespace fs = std::filesystem;
  const auto path = (fs::temp_directory_path() / "pacecast_truth_test.json").string();
  save_ground_truth(path, data.truth);
  auto back = load_ground_truth(path);
  CHECK(back.runners.size() == data.truth.runners.size());
  CHECK(back.runner_ids[3] == data.truth.runner_ids[3]);
  CHECK(back.runners[5].baseline == data.truth.runners[5].baseline);
  CHECK(back.config.noise_sd == data.truth.config.noise_sd);
  fs::remove(path);
  CHECK_THROWS_AS(load_ground_truth(path), DataError);
}

TEST_CASE("generator config validation") {
  GeneratorConfig cfg;
  cfg.n_runners = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = GeneratorConfig{};
  cfg.min_events = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = GeneratorConfig{};
  cfg.gap_mean_weeks = 0.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
