#include "pacecast/soft_targets.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "pacecast/common.hpp"
#include "pacecast/quantizer.hpp"
#include "testutil.hpp"

using namespace pacecast;

namespace {

BinSpec unit_bins_0_3() {
  BinSpec spec;
  spec.feature_name = "pace";
  spec.edges = {0, 1, 2, 3};
  spec.width_cap = 10;
  return spec;
}

}  // namespace

TEST_CASE("adaptive_sigma: closed forms") {
  CHECK(adaptive_sigma(0.0, 2.7, 1.5) == doctest::Approx(2.7));
  // sqrt(2.7^2 + (1.5*2)^2) = sqrt(7.29 + 9)
  CHECK(adaptive_sigma(2.0, 2.7, 1.5) == doctest::Approx(4.036087213).epsilon(1e-9));
  CHECK(adaptive_sigma(123.0, 2.7, 0.0) == doctest::Approx(2.7));
  CHECK_THROWS_AS(adaptive_sigma(-1.0, 2.7, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(adaptive_sigma(1.0, -0.1, 1.5), std::invalid_argument);
}

TEST_CASE("adaptive_sigma: floor and monotonicity") {
  double prev = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double w = 0.25 * i;
    const double s = adaptive_sigma(w, 2.7, 1.5);
    CHECK(s >= 2.7);
    CHECK(s >= prev);
    prev = s;
  }
  // monotone in k as well
  CHECK(adaptive_sigma(3.0, 2.7, 2.0) > adaptive_sigma(3.0, 2.7, 1.0));
}

TEST_CASE("gaussian_integrated_target: worked example against quadrature oracle") {
  auto spec = unit_bins_0_3();
  SmoothingConfig cfg;
  cfg.mode = SmoothingMode::fixed;
  cfg.sigma = 1.0;
  auto t = gaussian_integrated_target(1.5, spec, cfg);
  CHECK(t.target_bin == 1);

  // oracle pre-normalization masses via density quadrature
  std::vector<double> pre(3);
  double total = 0.0;
  for (int i = 0; i < 3; ++i) {
    pre[static_cast<std::size_t>(i)] =
        testutil::gauss_mass_oracle(1.5, 1.0, spec.edges[static_cast<std::size_t>(i)],
                                    spec.edges[static_cast<std::size_t>(i) + 1]);
    total += pre[static_cast<std::size_t>(i)];
  }
  CHECK(pre[0] == doctest::Approx(0.24173).epsilon(1e-4));
  CHECK(pre[1] == doctest::Approx(0.38292).epsilon(1e-4));
  for (int i = 0; i < 3; ++i)
    CHECK(t.probs[static_cast<std::size_t>(i)] ==
          doctest::Approx(pre[static_cast<std::size_t>(i)] / total).epsilon(1e-6));
  CHECK(t.probs[1] == doctest::Approx(0.44197).epsilon(1e-4));
  CHECK(t.probs[0] == doctest::Approx(0.27901).epsilon(1e-4));
  // exact symmetry about the bin centre
  CHECK(t.probs[0] == t.probs[2]);
}

TEST_CASE("gaussian_integrated_target: tiny sigma approaches one-hot") {
  auto spec = unit_bins_0_3();
  SmoothingConfig cfg;
  cfg.mode = SmoothingMode::fixed;
  cfg.sigma = 1e-6;
  auto t = gaussian_integrated_target(1.5, spec, cfg);
  CHECK(t.probs[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(t.probs[0] == doctest::Approx(0.0));
}

TEST_CASE("gaussian_integrated_target: hard mode is exact one-hot") {
  auto spec = unit_bins_0_3();
  SmoothingConfig cfg;
  cfg.mode = SmoothingMode::hard;
  auto t = gaussian_integrated_target(2.25, spec, cfg);
  CHECK(t.probs == std::vector<double>{0.0, 0.0, 1.0});
  CHECK(t.target_bin == 2);
}

TEST_CASE("gaussian_integrated_target: normalization and truncation mass over random cases") {
  Rng rng(13);
  for (int trial = 0; trial < 300; ++trial) {
    BinSpec spec;
    spec.feature_name = "pace";
    const int nbins = 2 + static_cast<int>(rng.uniform_int(30));
    double e = rng.uniform(-50, 50);
    spec.edges.push_back(e);
    for (int i = 0; i < nbins; ++i) {
      e += rng.uniform(0.1, 8.0);
      spec.edges.push_back(e);
    }
    spec.width_cap = 100;
    const double y = rng.uniform(spec.edges.front(), spec.edges.back() - 1e-9);
    SmoothingConfig cfg;
    cfg.mode = SmoothingMode::fixed;
    cfg.sigma = rng.uniform(0.5, 20.0);
    auto t = gaussian_integrated_target(y, spec, cfg);

    double pre_sum = 0.0;
    double cdf_lo = normal_cdf((spec.edges.front() - y) / cfg.sigma);
    const double cdf_hi = normal_cdf((spec.edges.back() - y) / cfg.sigma);
    // reconstruct the pre-normalization sum from the telescoped CDF values
    pre_sum = cdf_hi - cdf_lo;
    double post_sum = std::accumulate(t.probs.begin(), t.probs.end(), 0.0);
    CHECK(post_sum == doctest::Approx(1.0).epsilon(1e-9));
    // and the oracle agrees on an arbitrary interior bin
    const int j = static_cast<int>(rng.uniform_int(nbins));
    const double oracle_mass = testutil::gauss_mass_oracle(
        y, cfg.sigma, spec.edges[static_cast<std::size_t>(j)],
        spec.edges[static_cast<std::size_t>(j) + 1]);
    CHECK(t.probs[static_cast<std::size_t>(j)] * pre_sum ==
          doctest::Approx(oracle_mass).epsilon(1e-7).scale(1.0));
  }
}

TEST_CASE("gaussian_integrated_target: ordinal monotonicity on equal-width bins") {
  BinSpec spec;
  spec.feature_name = "pace";
  for (int i = 0; i <= 12; ++i) spec.edges.push_back(2.0 * i);
  spec.width_cap = 10;
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const double y = rng.uniform(0.0, 23.999);
    SmoothingConfig cfg;
    cfg.mode = SmoothingMode::fixed;
    cfg.sigma = rng.uniform(0.5, 10.0);
    auto t = gaussian_integrated_target(y, spec, cfg);
    const int c = t.target_bin;
    for (int i = c; i + 1 < spec.bin_count(); ++i)
      CHECK(t.probs[static_cast<std::size_t>(i)] >= t.probs[static_cast<std::size_t>(i) + 1] - 1e-15);
    for (int i = c; i - 1 >= 0; --i)
      CHECK(t.probs[static_cast<std::size_t>(i)] >= t.probs[static_cast<std::size_t>(i) - 1] - 1e-15);
  }
}

TEST_CASE("gaussian_integrated_target: mode consistency fixed vs adaptive") {
  std::vector<double> values;
  Rng rng(21);
  for (int i = 0; i < 500; ++i) values.push_back(rng.normal(300, 30));
  auto spec = fit_balanced("pace", values, 16, 10.0);
  const double y = 301.5;
  SmoothingConfig adaptive;
  adaptive.mode = SmoothingMode::adaptive;
  adaptive.sigma_floor = 2.7;
  adaptive.k = 1.5;
  auto ta = gaussian_integrated_target(y, spec, adaptive);

  SmoothingConfig fixed;
  fixed.mode = SmoothingMode::fixed;
  fixed.sigma = adaptive_sigma(bin_width(spec, ta.target_bin), 2.7, 1.5);
  auto tf = gaussian_integrated_target(y, spec, fixed);
  REQUIRE(ta.probs.size() == tf.probs.size());
  for (std::size_t i = 0; i < ta.probs.size(); ++i) CHECK(ta.probs[i] == tf.probs[i]);
}

TEST_CASE("gaussian_integrated_target: errors") {
  auto spec = unit_bins_0_3();
  SmoothingConfig cfg;
  cfg.mode = SmoothingMode::fixed;
  cfg.sigma = 1.0;
  CHECK_THROWS_AS(gaussian_integrated_target(3.0, spec, cfg), DataError);
  CHECK_THROWS_AS(gaussian_integrated_target(-0.5, spec, cfg), DataError);
  SmoothingConfig bad;
  bad.mode = SmoothingMode::fixed;
  bad.sigma = 0.0;
  CHECK_THROWS_AS(gaussian_integrated_target(1.5, spec, bad), ConfigError);
  SmoothingConfig both_zero;
  both_zero.mode = SmoothingMode::adaptive;
  both_zero.sigma_floor = 0.0;
  both_zero.k = 0.0;
  CHECK_THROWS_AS(gaussian_integrated_target(1.5, spec, both_zero), ConfigError);
}

TEST_CASE("smoothed_cross_entropy: closed forms") {
  SoftTarget t;
  t.probs = {0.25, 0.25, 0.25, 0.25};
  std::vector<double> logits{0.7, 0.7, 0.7, 0.7};
  CHECK(smoothed_cross_entropy(logits, t) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  SoftTarget skewed;
  skewed.probs = {0.6, 0.1, 0.2, 0.1};
  CHECK(smoothed_cross_entropy(logits, skewed) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  SoftTarget two;
  two.probs = {0.5, 0.5};
  std::vector<double> logits2{-1.0, -1.0};
  CHECK(smoothed_cross_entropy(logits2, two) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("smoothed_cross_entropy: perfect prediction limit and entropy floor") {
  SoftTarget one_hot;
  one_hot.probs = {0.0, 1.0, 0.0};
  std::vector<double> confident{-100.0, 100.0, -100.0};
  CHECK(smoothed_cross_entropy(confident, one_hot) == doctest::Approx(0.0).epsilon(1e-12));

  // loss >= entropy of T for arbitrary logits
  Rng rng(3);
  SoftTarget t;
  t.probs = {0.2, 0.5, 0.3};
  double entropy = 0.0;
  for (double p : t.probs) entropy -= p * std::log(p);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> logits{rng.normal(0, 3), rng.normal(0, 3), rng.normal(0, 3)};
    CHECK(smoothed_cross_entropy(logits, t) >= entropy - 1e-12);
  }
}

TEST_CASE("smoothed_cross_entropy: length mismatch") {
  SoftTarget t;
  t.probs = {0.5, 0.5};
  std::vector<double> logits{0.0, 0.0, 0.0};
  CHECK_THROWS_AS(smoothed_cross_entropy(logits, t), std::invalid_argument);
}

TEST_CASE("smoothing config: annealing schedule") {
  SmoothingConfig cfg;
  cfg.anneal_steps = 0;
  CHECK(cfg.anneal_scale(0) == 1.0);
  CHECK(cfg.anneal_scale(1000) == 1.0);
  cfg.anneal_steps = 100;
  cfg.anneal_start_scale = 3.0;
  CHECK(cfg.anneal_scale(0) == doctest::Approx(3.0));
  CHECK(cfg.anneal_scale(50) == doctest::Approx(2.0));
  CHECK(cfg.anneal_scale(100) == doctest::Approx(1.0));
  CHECK(cfg.anneal_scale(500) == doctest::Approx(1.0));
}
