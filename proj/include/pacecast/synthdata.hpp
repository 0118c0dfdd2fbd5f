#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pacecast/common.hpp"
#include "pacecast/evalcal.hpp"
#include "pacecast/grammar.hpp"

namespace pacecast {

// Synthetic trajectories with additive effects and Gaussian noise, so the
// Bayes-correct predictive distribution has a closed form.
struct GeneratorConfig {
  int n_runners = 2000;
  int min_events = 3;
  int max_events = 10;
  double baseline_pace_mean = 600.0;  // seconds per mile
  double baseline_pace_sd = 60.0;
  double trend_slope_mean = -0.5;  // s/mile per week of training
  double trend_slope_sd = 0.5;
  double temp_threshold_c = 12.0;
  double temp_coeff = 1.8;  // s per deg C above threshold
  double humidity_coeff = 0.12;
  double wind_coeff = 0.35;
  double rain_penalty = 4.0;
  double other_conditions_penalty = 1.0;
  double gender_offset_f = 12.0;
  double gender_offset_m = -12.0;
  double age_coeff = 0.2;  // s per year away from 40
  double distance_ref_m = 10000.0;
  double distance_exponent = 1.06;  // Riegel-like pace curvature
  double distance_coeff = 600.0;
  double gap_mean_weeks = 4.0;
  double noise_sd = 12.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_runners < 1) throw ConfigError("GeneratorConfig: n_runners must be positive");
    if (min_events < 2 || max_events < min_events)
      throw ConfigError("GeneratorConfig: need max_events >= min_events >= 2");
    if (!(baseline_pace_sd >= 0.0) || !(trend_slope_sd >= 0.0) || !(noise_sd >= 0.0))
      throw ConfigError("GeneratorConfig: scales must be non-negative");
    if (!(gap_mean_weeks >= 1.0)) throw ConfigError("GeneratorConfig: gap_mean_weeks must be >= 1");
    if (!(baseline_pace_mean > 0.0)) throw ConfigError("GeneratorConfig: baseline pace must be positive");
  }
};

struct RunnerTruth {
  double baseline = 0.0;
  double slope = 0.0;
};

struct GroundTruth {
  GeneratorConfig config;
  std::vector<std::string> runner_ids;
  std::vector<RunnerTruth> runners;
};

struct SynthDataset {
  std::vector<RunnerHistory> histories;
  GroundTruth truth;
};

namespace detail {

inline double distance_effect(const GeneratorConfig& cfg, double distance_m) {
  return cfg.distance_coeff *
         (std::pow(distance_m / cfg.distance_ref_m, cfg.distance_exponent - 1.0) - 1.0);
}

inline double conditions_effect(const GeneratorConfig& cfg, const std::string& conditions) {
  if (conditions == "rain") return cfg.rain_penalty;
  if (conditions == "other") return cfg.other_conditions_penalty;
  return 0.0;
}

inline double gender_effect(const GeneratorConfig& cfg, const std::string& gender) {
  if (gender == "F") return cfg.gender_offset_f;
  if (gender == "M") return cfg.gender_offset_m;
  return 0.0;
}

}  // namespace detail

// Noise-free conditional mean of the pace for one event (t_weeks is the
// cumulative training time at that event).
inline double oracle_mean(const GroundTruth& truth, int runner_index, const EventRecord& ev,
                          double t_weeks) {
  const auto& cfg = truth.config;
  const auto& r = truth.runners[static_cast<std::size_t>(runner_index)];
  return r.baseline + r.slope * t_weeks +
         cfg.temp_coeff * std::max(0.0, ev.temperature_c - cfg.temp_threshold_c) +
         cfg.humidity_coeff * ev.humidity_pct + cfg.wind_coeff * ev.wind_kph +
         detail::conditions_effect(cfg, ev.conditions) + detail::gender_effect(cfg, ev.gender) +
         cfg.age_coeff * (ev.age_years - 40.0) + detail::distance_effect(cfg, ev.distance_m);
}

inline double cumulative_weeks(const RunnerHistory& history, int event_index) {
  double t = 0.0;
  for (int i = 1; i <= event_index; ++i)
    t += history.events[static_cast<std::size_t>(i)].weeks_since_last;
  return t;
}

inline SynthDataset generate(const GeneratorConfig& cfg) {
  cfg.validate();
  SynthDataset out;
  out.truth.config = cfg;
  out.histories.reserve(static_cast<std::size_t>(cfg.n_runners));

  for (int ri = 0; ri < cfg.n_runners; ++ri) {
    // per-runner stream, independent of generation order
    Rng rng(splitmix64(cfg.seed) ^ splitmix64(0xabcd0000ull + static_cast<std::uint64_t>(ri)));
    RunnerHistory h;
    char idbuf[24];
    std::snprintf(idbuf, sizeof(idbuf), "runner-%06d", ri);
    h.runner_id = idbuf;

    RunnerTruth rt;
    rt.baseline = rng.normal(cfg.baseline_pace_mean, cfg.baseline_pace_sd);
    rt.slope = rng.normal(cfg.trend_slope_mean, cfg.trend_slope_sd);
    const GroundTruth runner_truth{cfg, {}, {rt}};

    const int n_events =
        cfg.min_events + static_cast<int>(rng.uniform_int(cfg.max_events - cfg.min_events + 1));
    const double age0 = std::clamp(rng.normal(40.0, 10.0), 18.0, 75.0);
    const double ug = rng.uniform();
    const std::string gender = ug < 0.48 ? "F" : ug < 0.96 ? "M" : "X";

    double t_weeks = 0.0;
    for (int ei = 0; ei < n_events; ++ei) {
      EventRecord ev;
      ev.gender = gender;
      if (ei > 0) {
        const int gap =
            1 + static_cast<int>(rng.geometric(std::min(1.0, 1.0 / cfg.gap_mean_weeks)));
        ev.weeks_since_last = gap;
        t_weeks += gap;
      }
      ev.temperature_c = rng.normal(15.0, 8.0);
      ev.humidity_pct = rng.uniform(20.0, 95.0);
      ev.wind_kph = rng.uniform(0.0, 30.0);
      ev.feels_like_c =
          ev.temperature_c + 0.05 * (ev.humidity_pct - 50.0) - 0.1 * ev.wind_kph + rng.normal(0, 1);
      const double uc = rng.uniform();
      ev.conditions = uc < 0.2 ? "rain" : uc < 0.7 ? "clear" : "other";
      const double ud = rng.uniform();
      ev.distance_m = ud < 0.35 ? 5000.0 : ud < 0.65 ? 10000.0 : ud < 0.90 ? 21097.5 : 42195.0;
      ev.age_years = static_cast<int>(age0 + t_weeks / 52.0);
      ev.pace_s = oracle_mean(runner_truth, 0, ev, t_weeks) + rng.normal(0.0, cfg.noise_sd);
      h.events.push_back(ev);
    }
    // stored weeks_to_target refers to the runner's final race
    int acc = 0;
    for (int ei = n_events - 1; ei >= 0; --ei) {
      h.events[static_cast<std::size_t>(ei)].weeks_to_target = acc;
      acc += h.events[static_cast<std::size_t>(ei)].weeks_since_last;
    }
    out.truth.runner_ids.push_back(h.runner_id);
    out.truth.runners.push_back(rt);
    out.histories.push_back(std::move(h));
  }
  return out;
}

// Bayes-correct Gaussian over the target pace, discretized onto the pace
// bins and renormalized. variance_scale != 1 produces deliberately
// mis-calibrated references (0.5 = overconfident, 2 = underconfident).
inline PredictedPDF oracle_pdf(const GroundTruth& truth, const RunnerHistory& history,
                               int runner_index, int target_index, const BinSpec& pace_bins,
                               double variance_scale = 1.0) {
  if (!(variance_scale > 0.0)) throw std::invalid_argument("oracle_pdf: variance_scale must be > 0");
  const auto& ev = history.events[static_cast<std::size_t>(target_index)];
  const double mu = oracle_mean(truth, runner_index, ev, cumulative_weeks(history, target_index));
  const double sigma = truth.config.noise_sd * std::sqrt(variance_scale);
  if (!(sigma > 0.0)) {
    // zero-noise ground truth: a point mass on the containing bin
    PredictedPDF pdf{std::vector<double>(static_cast<std::size_t>(pace_bins.bin_count()), 0.0),
                     &pace_bins};
    const auto idx = locate(pace_bins, mu);
    if (!idx) throw DataError("oracle_pdf: zero-noise mean outside pace bin support");
    pdf.probs[static_cast<std::size_t>(*idx)] = 1.0;
    return pdf;
  }
  const int n = pace_bins.bin_count();
  PredictedPDF pdf{std::vector<double>(static_cast<std::size_t>(n), 0.0), &pace_bins};
  const double inv = 1.0 / (sigma * std::sqrt(2.0));
  double total = 0.0;
  double erf_lo = std::erf((pace_bins.edges[0] - mu) * inv);
  for (int i = 0; i < n; ++i) {
    const double erf_hi = std::erf((pace_bins.edges[static_cast<std::size_t>(i) + 1] - mu) * inv);
    pdf.probs[static_cast<std::size_t>(i)] = 0.5 * (erf_hi - erf_lo);
    total += pdf.probs[static_cast<std::size_t>(i)];
    erf_lo = erf_hi;
  }
  if (!(total > 0.0)) throw NumericError("oracle_pdf: no probability mass over the bin support");
  for (auto& p : pdf.probs) p /= total;
  return pdf;
}

// ----------------------------- sidecar I/O -----------------------------

inline nlohmann::json generator_config_to_json(const GeneratorConfig& c) {
  return nlohmann::json{{"n_runners", c.n_runners},
                        {"min_events", c.min_events},
                        {"max_events", c.max_events},
                        {"baseline_pace_mean", c.baseline_pace_mean},
                        {"baseline_pace_sd", c.baseline_pace_sd},
                        {"trend_slope_mean", c.trend_slope_mean},
                        {"trend_slope_sd", c.trend_slope_sd},
                        {"temp_threshold_c", c.temp_threshold_c},
                        {"temp_coeff", c.temp_coeff},
                        {"humidity_coeff", c.humidity_coeff},
                        {"wind_coeff", c.wind_coeff},
                        {"rain_penalty", c.rain_penalty},
                        {"other_conditions_penalty", c.other_conditions_penalty},
                        {"gender_offset_f", c.gender_offset_f},
                        {"gender_offset_m", c.gender_offset_m},
                        {"age_coeff", c.age_coeff},
                        {"distance_ref_m", c.distance_ref_m},
                        {"distance_exponent", c.distance_exponent},
                        {"distance_coeff", c.distance_coeff},
                        {"gap_mean_weeks", c.gap_mean_weeks},
                        {"noise_sd", c.noise_sd},
                        {"seed", c.seed}};
}

inline GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.n_runners = j.at("n_runners").get<int>();
  c.min_events = j.at("min_events").get<int>();
  c.max_events = j.at("max_events").get<int>();
  c.baseline_pace_mean = j.at("baseline_pace_mean").get<double>();
  c.baseline_pace_sd = j.at("baseline_pace_sd").get<double>();
  c.trend_slope_mean = j.at("trend_slope_mean").get<double>();
  c.trend_slope_sd = j.at("trend_slope_sd").get<double>();
  c.temp_threshold_c = j.at("temp_threshold_c").get<double>();
  c.temp_coeff = j.at("temp_coeff").get<double>();
  c.humidity_coeff = j.at("humidity_coeff").get<double>();
  c.wind_coeff = j.at("wind_coeff").get<double>();
  c.rain_penalty = j.at("rain_penalty").get<double>();
  c.other_conditions_penalty = j.at("other_conditions_penalty").get<double>();
  c.gender_offset_f = j.at("gender_offset_f").get<double>();
  c.gender_offset_m = j.at("gender_offset_m").get<double>();
  c.age_coeff = j.at("age_coeff").get<double>();
  c.distance_ref_m = j.at("distance_ref_m").get<double>();
  c.distance_exponent = j.at("distance_exponent").get<double>();
  c.distance_coeff = j.at("distance_coeff").get<double>();
  c.gap_mean_weeks = j.at("gap_mean_weeks").get<double>();
  c.noise_sd = j.at("noise_sd").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline void save_ground_truth(const std::string& path, const GroundTruth& truth) {
  nlohmann::json runners = nlohmann::json::array();
  for (std::size_t i = 0; i < truth.runners.size(); ++i)
    runners.push_back({{"id", truth.runner_ids[i]},
                       {"baseline", truth.runners[i].baseline},
                       {"slope", truth.runners[i].slope}});
  nlohmann::json j{{"format", "pacecast-truth"},
                   {"config", generator_config_to_json(truth.config)},
                   {"runners", std::move(runners)}};
  std::ofstream out(path);
  if (!out) throw DataError("save_ground_truth: cannot open '" + path + "'");
  out << j.dump(2) << "\n";
}

inline GroundTruth load_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_ground_truth: cannot open '" + path + "' (missing sidecar)");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("load_ground_truth: parse error in '" + path + "': " + e.what());
  }
  if (j.value("format", "") != "pacecast-truth")
    throw DataError("load_ground_truth: '" + path + "' is not a ground-truth sidecar");
  GroundTruth truth;
  truth.config = generator_config_from_json(j.at("config"));
  for (const auto& jr : j.at("runners")) {
    truth.runner_ids.push_back(jr.at("id").get<std::string>());
    truth.runners.push_back({jr.at("baseline").get<double>(), jr.at("slope").get<double>()});
  }
  return truth;
}

}  // namespace pacecast
