#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "pacecast/common.hpp"
#include "pacecast/quantizer.hpp"

namespace pacecast {

// Normalized probability vector over the bins of an associated BinSpec.
struct PredictedPDF {
  std::vector<double> probs;
  const BinSpec* bins = nullptr;
};

struct PointSummaries {
  double mean = 0.0;
  double median = 0.0;
  double mode = 0.0;
};

// mean = probability-weighted bin centre; median = where the within-bin
// linearly interpolated CDF crosses 0.5; mode = centre of the argmax bin,
// ties broken toward the lower index.
inline PointSummaries point_summaries(const PredictedPDF& pdf) {
  const BinSpec& spec = *pdf.bins;
  PointSummaries s;
  double cum = 0.0;
  double best = -1.0;
  int best_i = 0;
  bool median_found = false;
  for (int i = 0; i < spec.bin_count(); ++i) {
    const double p = pdf.probs[static_cast<std::size_t>(i)];
    s.mean += p * bin_center(spec, i);
    if (p > best) {
      best = p;
      best_i = i;
    }
    if (!median_found && cum + p >= 0.5) {
      const double w = bin_width(spec, i);
      s.median = p > 0.0 ? spec.edges[static_cast<std::size_t>(i)] + (0.5 - cum) / p * w
                         : spec.edges[static_cast<std::size_t>(i)];
      median_found = true;
    }
    cum += p;
  }
  if (!median_found) s.median = spec.support_max();
  s.mode = bin_center(spec, best_i);
  return s;
}

struct ErrorStats {
  double mae = 0.0;
  double rmse = 0.0;
};

inline ErrorStats mae_rmse(std::span<const double> predictions, std::span<const double> truths) {
  if (predictions.size() != truths.size())
    throw std::invalid_argument("mae_rmse: length mismatch");
  if (predictions.empty()) throw std::invalid_argument("mae_rmse: empty input");
  ErrorStats s;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double e = predictions[i] - truths[i];
    s.mae += std::abs(e);
    s.rmse += e * e;
  }
  const auto n = static_cast<double>(predictions.size());
  s.mae /= n;
  s.rmse = std::sqrt(s.rmse / n);
  return s;
}

// Probability integral transform: CDF(y) with linear interpolation inside the
// containing bin. Below support -> 0, at/above the top edge -> 1.
inline double pit(const PredictedPDF& pdf, double y_true) {
  if (std::isnan(y_true)) throw std::invalid_argument("pit: NaN input");
  const BinSpec& spec = *pdf.bins;
  if (y_true < spec.support_min()) return 0.0;
  if (y_true >= spec.support_max()) return 1.0;
  const int i = *locate(spec, y_true);
  double cum = 0.0;
  for (int j = 0; j < i; ++j) cum += pdf.probs[static_cast<std::size_t>(j)];
  const double frac = (y_true - spec.edges[static_cast<std::size_t>(i)]) / bin_width(spec, i);
  return std::min(1.0, cum + pdf.probs[static_cast<std::size_t>(i)] * frac);
}

// sup_u |F_n(u) - u| evaluated at both one-sided gaps of every step point.
inline double ks_statistic(std::span<const double> pit_samples) {
  if (pit_samples.empty()) throw std::invalid_argument("ks_statistic: empty input");
  std::vector<double> sorted(pit_samples.begin(), pit_samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double ks = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double di = static_cast<double>(i);
    ks = std::max(ks, std::max((di + 1.0) / n - sorted[i], sorted[i] - di / n));
  }
  return ks;
}

struct QQPoint {
  double uniform_q = 0.0;  // nominal quantile level
  double model_q = 0.0;    // empirical PIT quantile at that level
};

struct DecileReport {
  double truth_lo = 0.0;
  double truth_hi = 0.0;
  std::int64_t n = 0;
  double ks = 0.0;
  std::vector<std::int64_t> pit_histogram;  // occupancy over equal PIT bins
  std::vector<QQPoint> qq;
};

struct SummaryErrors {
  ErrorStats mean;
  ErrorStats median;
  ErrorStats mode;
};

struct CalibrationReport {
  std::int64_t n = 0;
  double ks = 0.0;
  std::vector<double> pit_samples;
  std::vector<QQPoint> qq;
  std::vector<std::int64_t> occupancy;  // global PIT histogram
  std::vector<DecileReport> deciles;    // stratified by true value
  SummaryErrors errors;
};

namespace detail {

inline double empirical_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

inline std::vector<QQPoint> qq_points(const std::vector<double>& pits, int grid = 99) {
  std::vector<double> sorted(pits);
  std::sort(sorted.begin(), sorted.end());
  std::vector<QQPoint> out;
  out.reserve(static_cast<std::size_t>(grid));
  for (int g = 1; g <= grid; ++g) {
    const double q = static_cast<double>(g) / static_cast<double>(grid + 1);
    out.push_back({q, empirical_quantile(sorted, q)});
  }
  return out;
}

inline std::vector<std::int64_t> pit_histogram(const std::vector<double>& pits, int bins) {
  std::vector<std::int64_t> h(static_cast<std::size_t>(bins), 0);
  for (double u : pits) {
    auto b = static_cast<int>(u * bins);
    b = std::clamp(b, 0, bins - 1);
    ++h[static_cast<std::size_t>(b)];
  }
  return h;
}

}  // namespace detail

struct PredictionSet {
  std::vector<double> truths;
  std::vector<double> mean;
  std::vector<double> median;
  std::vector<double> mode;
  std::vector<double> pits;  // may be empty for point predictors
};

// Full calibration report: global KS / Q-Q / occupancy, per-decile PIT
// diagnostics stratified by the true value, and MAE/RMSE per summary type.
inline CalibrationReport stratified_report(const PredictionSet& preds, int deciles = 10,
                                           int histogram_bins = 10) {
  const std::size_t n = preds.truths.size();
  if (preds.mean.size() != n || preds.median.size() != n || preds.mode.size() != n)
    throw std::invalid_argument("stratified_report: misaligned prediction columns");
  if (deciles < 1 || histogram_bins < 1)
    throw std::invalid_argument("stratified_report: deciles and histogram_bins must be >= 1");
  if (static_cast<std::int64_t>(n) < deciles)
    throw DataError("stratified_report: " + std::to_string(n) + " samples but " +
                    std::to_string(deciles) + " strata requested; need at least " +
                    std::to_string(deciles));

  CalibrationReport r;
  r.n = static_cast<std::int64_t>(n);
  r.errors.mean = mae_rmse(preds.mean, preds.truths);
  r.errors.median = mae_rmse(preds.median, preds.truths);
  r.errors.mode = mae_rmse(preds.mode, preds.truths);

  if (!preds.pits.empty()) {
    if (preds.pits.size() != n)
      throw std::invalid_argument("stratified_report: misaligned PIT column");
    r.pit_samples = preds.pits;
    r.ks = ks_statistic(r.pit_samples);
    r.qq = detail::qq_points(r.pit_samples);
    r.occupancy = detail::pit_histogram(r.pit_samples, histogram_bins);

    // stratify by true value: equal-count strata over the sorted truths
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return preds.truths[a] < preds.truths[b]; });
    for (int d = 0; d < deciles; ++d) {
      const std::size_t begin = n * static_cast<std::size_t>(d) / static_cast<std::size_t>(deciles);
      const std::size_t end = n * (static_cast<std::size_t>(d) + 1) / static_cast<std::size_t>(deciles);
      if (begin >= end) continue;
      DecileReport dr;
      dr.truth_lo = preds.truths[order[begin]];
      dr.truth_hi = preds.truths[order[end - 1]];
      dr.n = static_cast<std::int64_t>(end - begin);
      std::vector<double> pits;
      pits.reserve(end - begin);
      for (std::size_t j = begin; j < end; ++j) pits.push_back(preds.pits[order[j]]);
      dr.ks = ks_statistic(pits);
      dr.pit_histogram = detail::pit_histogram(pits, histogram_bins);
      dr.qq = detail::qq_points(pits);
      r.deciles.push_back(std::move(dr));
    }
  }
  return r;
}

}  // namespace pacecast
