#include "pacecast/evalcal.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

#include "pacecast/common.hpp"
#include "pacecast/quantizer.hpp"
#include "pacecast/soft_targets.hpp"

using namespace pacecast;

namespace {

BinSpec make_bins(std::vector<double> edges) {
  BinSpec spec;
  spec.feature_name = "pace";
  spec.edges = std::move(edges);
  spec.width_cap = 1e9;
  return spec;
}

}  // namespace

TEST_CASE("point_summaries: hand CDF construction") {
  auto spec = make_bins({0, 1, 2});
  PredictedPDF pdf{{0.5, 0.5}, &spec};
  auto s = point_summaries(pdf);
  CHECK(s.median == doctest::Approx(1.0));
  CHECK(s.mean == doctest::Approx(1.0));
  CHECK(s.mode == doctest::Approx(0.5));  // tie -> lower bin centre
}

TEST_CASE("point_summaries: one-hot degenerate") {
  auto spec = make_bins({10, 12});
  PredictedPDF pdf{{1.0}, &spec};
  auto s = point_summaries(pdf);
  CHECK(s.mean == doctest::Approx(11.0));
  CHECK(s.median == doctest::Approx(11.0));
  CHECK(s.mode == doctest::Approx(11.0));
}

TEST_CASE("point_summaries: uniform over three unit bins") {
  auto spec = make_bins({0, 1, 2, 3});
  const double third = 1.0 / 3.0;
  PredictedPDF pdf{{third, third, third}, &spec};
  auto s = point_summaries(pdf);
  CHECK(s.mean == doctest::Approx(1.5));
  CHECK(s.median == doctest::Approx(1.5));
}

TEST_CASE("mae_rmse: closed forms") {
  std::vector<double> y{1, 2, 3};
  auto perfect = mae_rmse(y, y);
  CHECK(perfect.mae == doctest::Approx(0.0));
  CHECK(perfect.rmse == doctest::Approx(0.0));

  std::vector<double> pred{4, -1};
  std::vector<double> truth{1, 2};
  auto sym = mae_rmse(pred, truth);
  CHECK(sym.mae == doctest::Approx(3.0));
  CHECK(sym.rmse == doctest::Approx(3.0));

  std::vector<double> pred2{1, 8};
  std::vector<double> truth2{1, 2};
  auto asym = mae_rmse(pred2, truth2);
  CHECK(asym.mae == doctest::Approx(3.0));
  CHECK(asym.rmse == doctest::Approx(std::sqrt(18.0)));  // ~4.2426

  std::vector<double> shorter{1};
  CHECK_THROWS_AS(mae_rmse(shorter, truth), std::invalid_argument);
}

TEST_CASE("pit: linear CDF evaluation and boundaries") {
  std::vector<double> edges;
  for (int i = 0; i <= 10; ++i) edges.push_back(10.0 * i);
  auto spec = make_bins(edges);
  PredictedPDF pdf{std::vector<double>(10, 0.1), &spec};
  CHECK(pit(pdf, 25.0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(pit(pdf, -5.0) == 0.0);
  CHECK(pit(pdf, 100.0) == 1.0);
  CHECK(pit(pdf, 150.0) == 1.0);
  CHECK_THROWS_AS(pit(pdf, std::nan("")), std::invalid_argument);
}

TEST_CASE("ks_statistic: closed-form values") {
  // u_i = (i - 0.5)/n -> KS = 0.5/n
  std::vector<double> grid;
  for (int i = 1; i <= 10; ++i) grid.push_back((i - 0.5) / 10.0);
  CHECK(ks_statistic(grid) == doctest::Approx(0.05).epsilon(1e-12));

  std::vector<double> mid(4, 0.5);
  CHECK(ks_statistic(mid) == doctest::Approx(0.5).epsilon(1e-12));

  std::vector<double> zero{0.0};
  CHECK(ks_statistic(zero) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<double> empty;
  CHECK_THROWS_AS(ks_statistic(empty), std::invalid_argument);
}

TEST_CASE("ks_statistic: permutation invariance") {
  Rng rng(11);
  std::vector<double> samples;
  for (int i = 0; i < 200; ++i) samples.push_back(rng.uniform());
  const double ks0 = ks_statistic(samples);
  rng.shuffle(samples);
  CHECK(ks_statistic(samples) == ks0);
}

TEST_CASE("ks_statistic: brute-force oracle on random step functions") {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(40));
    std::vector<double> samples;
    for (int i = 0; i < n; ++i) samples.push_back(rng.uniform());
    // oracle: dense scan of |F_n(u) - u| over a fine grid plus sample points
    std::vector<double> sorted(samples);
    std::sort(sorted.begin(), sorted.end());
    auto fn = [&](double u) {
      std::size_t c = 0;
      while (c < sorted.size() && sorted[c] <= u) ++c;
      return static_cast<double>(c) / static_cast<double>(n);
    };
    double oracle = 0.0;
    for (int g = 0; g <= 20000; ++g) {
      const double u = g / 20000.0;
      oracle = std::max(oracle, std::abs(fn(u) - u));
    }
    for (double u : sorted) {
      oracle = std::max(oracle, std::abs(fn(u) - u));
      const double below = static_cast<double>(std::lower_bound(sorted.begin(), sorted.end(), u) -
                                               sorted.begin()) /
                           static_cast<double>(n);
      oracle = std::max(oracle, std::abs(below - u));
    }
    CHECK(ks_statistic(samples) == doctest::Approx(oracle).epsilon(1e-9));
  }
}

TEST_CASE("pit of a perfectly specified predictor is uniform") {
  // sample y from the predictor's own interpolated PDF; KS should be small
  std::vector<double> edges;
  for (int i = 0; i <= 50; ++i) edges.push_back(200.0 + 2.0 * i);
  auto spec = make_bins(edges);
  SmoothingConfig cfg;
  cfg.mode = SmoothingMode::fixed;
  cfg.sigma = 10.0;

  Rng rng(4242);
  std::vector<double> pits;
  for (int i = 0; i < 10000; ++i) {
    const double mu = rng.uniform(230, 270);
    auto t = gaussian_integrated_target(mu, spec, cfg);
    PredictedPDF pdf{t.probs, &spec};
    // inverse-CDF sample from the interpolated PDF
    const double u = rng.uniform();
    double cum = 0.0;
    double y = spec.support_max();
    for (int b = 0; b < spec.bin_count(); ++b) {
      const double p = pdf.probs[static_cast<std::size_t>(b)];
      if (cum + p >= u) {
        y = spec.edges[static_cast<std::size_t>(b)] +
            (p > 0 ? (u - cum) / p * bin_width(spec, b) : 0.0);
        break;
      }
      cum += p;
    }
    pits.push_back(pit(pdf, y));
  }
  CHECK(ks_statistic(pits) < 0.02);
}

TEST_CASE("stratified_report: identical predictions give identical decile curves") {
  PredictionSet preds;
  const int n = 400;
  for (int i = 0; i < n; ++i) {
    preds.truths.push_back(static_cast<double>(i));
    preds.mean.push_back(100.0);
    preds.median.push_back(100.0);
    preds.mode.push_back(100.0);
    preds.pits.push_back((i % 40 + 0.5) / 40.0);  // same PIT pattern in every stratum
  }
  auto r = stratified_report(preds, 10, 10);
  REQUIRE(r.deciles.size() == 10);
  for (const auto& d : r.deciles) {
    CHECK(d.ks == doctest::Approx(r.deciles[0].ks));
    CHECK(d.pit_histogram == r.deciles[0].pit_histogram);
  }
}

TEST_CASE("stratified_report: uniform PITs stay under a DKW-style bound per decile") {
  Rng rng(31);
  PredictionSet preds;
  const int n = 5000;
  for (int i = 0; i < n; ++i) {
    preds.truths.push_back(rng.normal(600, 50));
    preds.mean.push_back(600.0);
    preds.median.push_back(600.0);
    preds.mode.push_back(600.0);
    preds.pits.push_back(rng.uniform());
  }
  auto r = stratified_report(preds, 10, 10);
  REQUIRE(r.deciles.size() == 10);
  for (const auto& d : r.deciles) {
    const double bound = 3.0 * std::sqrt(std::log(2.0) / static_cast<double>(d.n));
    CHECK(d.ks < bound);
  }
}

TEST_CASE("stratified_report: extreme PIT mass lands in outer occupancy bins") {
  PredictionSet preds;
  Rng rng(77);
  for (int i = 0; i < 1000; ++i) {
    preds.truths.push_back(rng.uniform());
    preds.mean.push_back(0.5);
    preds.median.push_back(0.5);
    preds.mode.push_back(0.5);
    preds.pits.push_back(rng.uniform() < 0.5 ? 0.001 : 0.999);
  }
  auto r = stratified_report(preds, 10, 10);
  std::int64_t outer = r.occupancy.front() + r.occupancy.back();
  CHECK(outer == 1000);
}

TEST_CASE("stratified_report: errors on too few samples") {
  PredictionSet preds;
  for (int i = 0; i < 5; ++i) {
    preds.truths.push_back(i);
    preds.mean.push_back(i);
    preds.median.push_back(i);
    preds.mode.push_back(i);
    preds.pits.push_back(0.5);
  }
  CHECK_THROWS_AS(stratified_report(preds, 10, 10), DataError);
}

TEST_CASE("point-predictor collapse: constant one-hot PDFs give equal MAE across summaries") {
  auto spec = make_bins({0, 1, 2, 3, 4});
  Rng rng(9);
  PredictionSet preds;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> probs(4, 0.0);
    probs[2] = 1.0;  // always the same bin
    PredictedPDF pdf{probs, &spec};
    auto s = point_summaries(pdf);
    CHECK(s.mean == s.median);
    CHECK(s.median == s.mode);
    preds.truths.push_back(rng.uniform(0, 4));
    preds.mean.push_back(s.mean);
    preds.median.push_back(s.median);
    preds.mode.push_back(s.mode);
  }
  auto r = stratified_report(preds, 10, 10);
  CHECK(r.errors.mean.mae == r.errors.median.mae);
  CHECK(r.errors.median.mae == r.errors.mode.mae);
  CHECK(r.errors.mean.rmse == r.errors.mode.rmse);
}
