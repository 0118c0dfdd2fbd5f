#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pacecast/common.hpp"

namespace pacecast {

inline constexpr const char* kEnvPrefix = "PACECAST_";

// Flat dotted-key/value configuration. Precedence: built-in defaults,
// then profile, then config file, then environment overrides
// (PACECAST_TRAIN_SEED <- train.seed), then explicit CLI flags.
class Config {
 public:
  static Config defaults() {
    Config c;
    // data / splits
    c.set("data.path", "");
    c.set("data.truth_path", "");
    c.set("data.manifest_path", "");
    c.set("data.bins_path", "");
    c.set("data.checkpoint_path", "");
    c.set("data.split_seed", "42");
    c.set("data.split.train", "0.75");
    c.set("data.split.val", "0.083");
    c.set("data.split.test", "0.167");
    // synthetic generator
    c.set("gen.n_runners", "2000");
    c.set("gen.min_events", "3");
    c.set("gen.max_events", "10");
    c.set("gen.baseline_pace_mean", "600");
    c.set("gen.baseline_pace_sd", "60");
    c.set("gen.trend_slope_mean", "-0.5");
    c.set("gen.trend_slope_sd", "0.5");
    c.set("gen.temp_threshold_c", "12");
    c.set("gen.temp_coeff", "1.8");
    c.set("gen.humidity_coeff", "0.12");
    c.set("gen.wind_coeff", "0.35");
    c.set("gen.rain_penalty", "4");
    c.set("gen.other_conditions_penalty", "1");
    c.set("gen.gender_offset_f", "12");
    c.set("gen.gender_offset_m", "-12");
    c.set("gen.age_coeff", "0.2");
    c.set("gen.distance_ref_m", "10000");
    c.set("gen.distance_exponent", "1.06");
    c.set("gen.distance_coeff", "600");
    c.set("gen.gap_mean_weeks", "4");
    c.set("gen.noise_sd", "12");
    c.set("gen.seed", "1");
    // binning
    c.set("bins.temperature.target_bins", "16");
    c.set("bins.temperature.width_cap", "8");
    c.set("bins.humidity.target_bins", "16");
    c.set("bins.humidity.width_cap", "15");
    c.set("bins.wind.target_bins", "12");
    c.set("bins.wind.width_cap", "8");
    c.set("bins.feels_like.target_bins", "16");
    c.set("bins.feels_like.width_cap", "8");
    c.set("bins.pace.target_bins", "64");
    c.set("bins.pace.width_cap", "10");
    // vocabulary
    c.set("vocab.cadence_cap", "104");
    c.set("vocab.age_cap", "100");
    // model (training-configuration defaults)
    c.set("model.n_layers", "6");
    c.set("model.n_heads", "8");
    c.set("model.d_model", "512");
    c.set("model.d_ff", "2048");
    c.set("model.dropout", "0.12");
    c.set("model.max_events", "30");
    c.set("model.input_embedding", "discrete");
    c.set("model.soft_embed_sigma_floor", "2.7");
    c.set("model.soft_embed_k", "1.5");
    // training
    c.set("train.batch_size", "64");
    c.set("train.base_lr", "1e-4");
    c.set("train.weight_decay", "0.00118");
    c.set("train.beta1", "0.9");
    c.set("train.beta2", "0.999");
    c.set("train.adam_eps", "1e-8");
    c.set("train.max_steps", "1000");
    c.set("train.eval_interval", "100");
    c.set("train.val_max_examples", "512");
    c.set("train.grad_clip", "0");
    c.set("train.select", "best_median_mae");
    c.set("train.seed", "1");
    // ablation transform applied to the training stream
    c.set("ablation.mode", "none");
    // smoothing
    c.set("smoothing.mode", "adaptive");
    c.set("smoothing.sigma", "3");
    c.set("smoothing.sigma_floor", "2.7");
    c.set("smoothing.k", "1.5");
    c.set("smoothing.anneal_steps", "0");
    c.set("smoothing.anneal_start_scale", "1");
    // baselines / evaluation
    c.set("riegel.exponent", "1.06");
    c.set("eval.split", "test");
    c.set("eval.deciles", "10");
    c.set("eval.histogram_bins", "10");
    c.set("eval.max_examples", "0");  // 0 = all
    // sweeps
    c.set("sweep.sigmas", "hard,1,4,10,35,adaptive");
    c.set("ablate.modes", "none,drop_time_tokens,shuffle_events");
    // diagnostics
    c.set("diag.runner_index", "0");
    c.set("diag.target_index", "-1");  // -1 = last event
    return c;
  }

  void apply_profile(const std::string& name) {
    if (name == "paper-doc") return;  // the built-in defaults are the documented configuration
    if (name == "desk") {
      set("model.n_layers", "2");
      set("model.n_heads", "2");
      set("model.d_model", "64");
      set("model.d_ff", "256");
      set("train.batch_size", "32");
      set("train.base_lr", "1e-3");
      set("train.max_steps", "600");
      set("train.eval_interval", "50");
      return;
    }
    throw ConfigError("unknown profile '" + name + "' (desk|paper-doc)");
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config '" + path + "' line " + std::to_string(lineno) +
                          ": expected key=value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw ConfigError("config '" + path + "' line " + std::to_string(lineno) + ": empty key");
      if (!kv_.count(key))
        throw ConfigError("config '" + path + "' line " + std::to_string(lineno) +
                          ": unknown key '" + key + "'");
      kv_[key] = value;
    }
  }

  // PACECAST_SMOOTHING_SIGMA_FLOOR overrides smoothing.sigma_floor; the
  // mapping is resolved against the known key set.
  void apply_env() {
    for (auto& [key, value] : kv_) {
      std::string env_name = kEnvPrefix;
      for (char ch : key)
        env_name.push_back(ch == '.' ? '_' : static_cast<char>(std::toupper(ch)));
      if (const char* env = std::getenv(env_name.c_str())) value = env;
    }
  }

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  const std::string& get_string(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key) const {
    const auto& s = get_string(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': '" + s + "' is not a number");
    }
  }

  int get_int(const std::string& key) const {
    const auto& s = get_string(key);
    try {
      std::size_t used = 0;
      const long v = std::stol(s, &used);
      if (used != s.size()) throw std::invalid_argument("trailing");
      return static_cast<int>(v);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': '" + s + "' is not an integer");
    }
  }

  std::uint64_t get_u64(const std::string& key) const {
    const auto& s = get_string(key);
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(s, &used);
      if (used != s.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': '" + s + "' is not an unsigned integer");
    }
  }

  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(get_string(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto b = item.find_first_not_of(" \t");
      const auto e = item.find_last_not_of(" \t");
      if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
  }

  // Sorted key=value dump; what run directories record as resolved config.
  std::string dump() const {
    std::string out;
    for (const auto& [k, v] : kv_) {
      out += k;
      out += '=';
      out += v;
      out += '\n';
    }
    return out;
  }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace pacecast
