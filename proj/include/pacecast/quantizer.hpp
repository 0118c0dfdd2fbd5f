#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pacecast/common.hpp"

namespace pacecast {

// Balanced (equal-frequency) bins over one continuous feature. Bins are
// half-open [edges[i], edges[i+1]); the top edge carries a small epsilon so
// the fitted maximum lands inside the last bin.
struct BinSpec {
  std::string feature_name;
  std::vector<double> edges;  // strictly increasing, size >= 2
  double width_cap = 0.0;
  std::vector<std::int64_t> counts;  // per-bin training occupancy

  int bin_count() const { return static_cast<int>(edges.size()) - 1; }
  double support_min() const { return edges.front(); }
  double support_max() const { return edges.back(); }
};

inline double bin_width(const BinSpec& spec, int i) {
  if (i < 0 || i >= spec.bin_count())
    throw std::out_of_range("bin_width: index " + std::to_string(i) +
                            " out of range for " + std::to_string(spec.bin_count()) +
                            " bins");
  return spec.edges[static_cast<std::size_t>(i) + 1] - spec.edges[static_cast<std::size_t>(i)];
}

inline double bin_center(const BinSpec& spec, int i) {
  if (i < 0 || i >= spec.bin_count())
    throw std::out_of_range("bin_center: index out of range");
  return 0.5 * (spec.edges[static_cast<std::size_t>(i)] + spec.edges[static_cast<std::size_t>(i) + 1]);
}

// Bin index containing x, or nullopt when x is outside [edges.front(),
// edges.back()). No overflow bins: out-of-support is surfaced, not clamped.
inline std::optional<int> locate(const BinSpec& spec, double x) {
  if (std::isnan(x)) throw std::invalid_argument("locate: NaN input");
  if (x < spec.edges.front() || x >= spec.edges.back()) return std::nullopt;
  auto it = std::upper_bound(spec.edges.begin(), spec.edges.end(), x);
  return static_cast<int>(it - spec.edges.begin()) - 1;
}

namespace detail {

// Midpoint-bisect [lo, hi) until every piece is at most cap wide; appends the
// interior cut points and hi to out (lo is assumed already emitted).
inline void split_to_cap(double lo, double hi, double cap, std::vector<double>& out) {
  if (hi - lo <= cap) {
    out.push_back(hi);
    return;
  }
  const double mid = lo + (hi - lo) * 0.5;
  if (!(lo < mid && mid < hi))
    throw NumericError("fit_balanced: width_cap " + fmt_full(cap) +
                       " is below the representable split resolution inside [" +
                       fmt_full(lo) + ", " + fmt_full(hi) + ")");
  split_to_cap(lo, mid, cap, out);
  split_to_cap(mid, hi, cap, out);
}

}  // namespace detail

// Equal-frequency binning with a post-fit width cap. Quantile cut points fall
// on sample values; a cut is placed at the smallest value strictly greater
// than the quantile point so duplicated values never straddle bins. Any bin
// wider than width_cap is recursively bisected at its midpoint.
inline BinSpec fit_balanced(std::string feature_name, std::span<const double> values,
                            int target_bins, double width_cap) {
  if (values.empty()) throw std::invalid_argument("fit_balanced: empty input");
  if (target_bins < 1) throw std::invalid_argument("fit_balanced: target_bins must be >= 1");
  if (!(width_cap > 0.0)) throw std::invalid_argument("fit_balanced: width_cap must be > 0");
  for (double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("fit_balanced: non-finite value");

  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();

  const double lo = sorted.front();
  const double hi = sorted.back();
  const double top = hi + std::max(1e-12, std::abs(hi) * 1e-12);

  // Quantile cut points on distinct sample values.
  std::vector<double> quantile_edges;
  quantile_edges.push_back(lo);
  for (int k = 1; k < target_bins; ++k) {
    const std::size_t rank = n * static_cast<std::size_t>(k) / static_cast<std::size_t>(target_bins);
    if (rank == 0 || rank >= n) continue;
    const double q = sorted[rank - 1];
    auto it = std::upper_bound(sorted.begin(), sorted.end(), q);
    if (it == sorted.end()) continue;  // everything above the point is tied
    const double cut = *it;
    if (cut > quantile_edges.back() && cut < top) quantile_edges.push_back(cut);
  }
  quantile_edges.push_back(top);

  // Width-cap pass: bisect over-cap bins.
  std::vector<double> edges;
  edges.push_back(quantile_edges.front());
  for (std::size_t i = 0; i + 1 < quantile_edges.size(); ++i)
    detail::split_to_cap(quantile_edges[i], quantile_edges[i + 1], width_cap, edges);

  BinSpec spec;
  spec.feature_name = std::move(feature_name);
  spec.edges = std::move(edges);
  spec.width_cap = width_cap;
  spec.counts.assign(static_cast<std::size_t>(spec.bin_count()), 0);
  std::size_t bin = 0;
  for (double v : sorted) {
    while (v >= spec.edges[bin + 1]) ++bin;
    ++spec.counts[bin];
  }
  return spec;
}

}  // namespace pacecast
