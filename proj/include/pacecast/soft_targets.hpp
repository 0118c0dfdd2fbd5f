#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pacecast/common.hpp"
#include "pacecast/quantizer.hpp"

namespace pacecast {

enum class SmoothingMode { fixed, adaptive, hard };

inline const char* to_string(SmoothingMode m) {
  switch (m) {
    case SmoothingMode::fixed: return "fixed";
    case SmoothingMode::adaptive: return "adaptive";
    case SmoothingMode::hard: return "hard";
  }
  return "?";
}

inline SmoothingMode smoothing_mode_from_string(const std::string& s) {
  if (s == "fixed") return SmoothingMode::fixed;
  if (s == "adaptive") return SmoothingMode::adaptive;
  if (s == "hard") return SmoothingMode::hard;
  throw ConfigError("unknown smoothing mode '" + s + "' (fixed|adaptive|hard)");
}

struct SmoothingConfig {
  SmoothingMode mode = SmoothingMode::adaptive;
  double sigma = 3.0;        // fixed mode, seconds
  double sigma_floor = 2.7;  // adaptive mode, seconds
  double k = 1.5;            // adaptive mode, dimensionless
  // Optional linear annealing of the smoothing width: the effective sigma is
  // scaled by anneal_start_scale at step 0, decaying to 1.0 at anneal_steps.
  // Disabled by default (anneal_steps == 0).
  int anneal_steps = 0;
  double anneal_start_scale = 1.0;

  void validate() const {
    if (mode == SmoothingMode::fixed && !(sigma > 0.0))
      throw ConfigError("smoothing: fixed mode requires sigma > 0");
    if (mode == SmoothingMode::adaptive) {
      if (sigma_floor < 0.0 || k < 0.0)
        throw ConfigError("smoothing: adaptive mode requires sigma_floor >= 0 and k >= 0");
      if (sigma_floor == 0.0 && k == 0.0)
        throw ConfigError("smoothing: adaptive mode requires sigma_floor and k not both zero");
    }
    if (anneal_steps < 0 || anneal_start_scale < 1.0)
      throw ConfigError("smoothing: anneal_steps >= 0 and anneal_start_scale >= 1 required");
  }

  double anneal_scale(int step) const {
    if (anneal_steps <= 0) return 1.0;
    const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(anneal_steps));
    return anneal_start_scale + (1.0 - anneal_start_scale) * t;
  }
};

// Probability vector over pace bins for one training example.
struct SoftTarget {
  std::vector<double> probs;
  int target_bin = -1;
  double y_true = 0.0;
};

// sigma_i = sqrt(sigma_floor^2 + (k * w)^2); >= sigma_floor, monotone in w.
inline double adaptive_sigma(double w, double sigma_floor, double k) {
  if (w < 0.0 || sigma_floor < 0.0 || k < 0.0)
    throw std::invalid_argument("adaptive_sigma: negative input");
  return std::hypot(sigma_floor, k * w);
}

// Integrates a Gaussian centred at y_true over each bin and renormalizes the
// truncated mass across the vector. Hard mode is an exact one-hot on the
// containing bin.
inline SoftTarget gaussian_integrated_target(double y_true, const BinSpec& spec,
                                             const SmoothingConfig& cfg,
                                             double sigma_scale = 1.0) {
  cfg.validate();
  const auto idx = locate(spec, y_true);
  if (!idx)
    throw DataError("gaussian_integrated_target: y_true " + fmt_g(y_true) +
                    " outside bin support [" + fmt_g(spec.support_min()) + ", " +
                    fmt_g(spec.support_max()) + ")");

  SoftTarget t;
  t.target_bin = *idx;
  t.y_true = y_true;
  const int nbins = spec.bin_count();
  t.probs.assign(static_cast<std::size_t>(nbins), 0.0);

  if (cfg.mode == SmoothingMode::hard) {
    t.probs[static_cast<std::size_t>(*idx)] = 1.0;
    return t;
  }

  double sigma = cfg.mode == SmoothingMode::fixed
                     ? cfg.sigma
                     : adaptive_sigma(bin_width(spec, *idx), cfg.sigma_floor, cfg.k);
  sigma *= sigma_scale;
  if (!(sigma > 0.0))
    throw NumericError("gaussian_integrated_target: sigma resolved to zero in " +
                       std::string(to_string(cfg.mode)) + " mode");

  // Masses via erf (exactly odd in libm), so symmetric placements produce
  // exactly symmetric targets.
  const double inv = 1.0 / (sigma * std::sqrt(2.0));
  double total = 0.0;
  double erf_lo = std::erf((spec.edges[0] - y_true) * inv);
  for (int i = 0; i < nbins; ++i) {
    const double erf_hi = std::erf((spec.edges[static_cast<std::size_t>(i) + 1] - y_true) * inv);
    const double mass = 0.5 * (erf_hi - erf_lo);
    t.probs[static_cast<std::size_t>(i)] = mass;
    total += mass;
    erf_lo = erf_hi;
  }
  if (!(total > 0.0))
    throw NumericError("gaussian_integrated_target: zero total mass (sigma too small "
                       "relative to distance from support)");
  for (auto& p : t.probs) p /= total;
  return t;
}

// -sum_i T_i * log softmax(logits)_i with a stable log-sum-exp.
inline double smoothed_cross_entropy(std::span<const double> logits, const SoftTarget& target) {
  if (logits.size() != target.probs.size())
    throw std::invalid_argument("smoothed_cross_entropy: length mismatch (" +
                                std::to_string(logits.size()) + " vs " +
                                std::to_string(target.probs.size()) + ")");
  double m = -std::numeric_limits<double>::infinity();
  for (double l : logits) {
    if (!std::isfinite(l)) throw std::invalid_argument("smoothed_cross_entropy: non-finite logit");
    m = std::max(m, l);
  }
  double z = 0.0;
  for (double l : logits) z += std::exp(l - m);
  const double lse = m + std::log(z);
  double dot = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) dot += target.probs[i] * logits[i];
  return lse - dot;
}

}  // namespace pacecast
