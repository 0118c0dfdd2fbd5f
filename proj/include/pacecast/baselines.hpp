#pragma once

#include <cmath>
#include <span>
#include <stdexcept>

#include "pacecast/common.hpp"

namespace pacecast {

// Canonical pace unit: seconds per mile.
inline constexpr double kMetersPerMile = 1609.344;

struct RiegelConfig {
  double exponent = 1.06;
};

// Power-law extrapolation across distances: t2 = t1 * (d2/d1)^exponent,
// converted to seconds-per-mile pace at the target distance.
inline double riegel_predict(double reference_distance_m, double reference_total_time_s,
                             double target_distance_m, const RiegelConfig& cfg = {}) {
  if (!(reference_distance_m > 0.0) || !(reference_total_time_s > 0.0) ||
      !(target_distance_m > 0.0))
    throw std::invalid_argument("riegel_predict: distances and time must be positive");
  if (!(cfg.exponent > 0.0)) throw std::invalid_argument("riegel_predict: exponent must be positive");
  const double t2 = reference_total_time_s *
                    std::pow(target_distance_m / reference_distance_m, cfg.exponent);
  return t2 / (target_distance_m / kMetersPerMile);
}

inline double riegel_total_time(double reference_distance_m, double reference_total_time_s,
                                double target_distance_m, const RiegelConfig& cfg = {}) {
  if (!(reference_distance_m > 0.0) || !(reference_total_time_s > 0.0) ||
      !(target_distance_m > 0.0))
    throw std::invalid_argument("riegel_total_time: distances and time must be positive");
  return reference_total_time_s *
         std::pow(target_distance_m / reference_distance_m, cfg.exponent);
}

inline double pace_to_total_time(double pace_s_per_mile, double distance_m) {
  return pace_s_per_mile * (distance_m / kMetersPerMile);
}

// Arithmetic mean of the training paces, emitted for every test example.
inline double naive_mean_predict(std::span<const double> train_paces) {
  if (train_paces.empty()) throw std::invalid_argument("naive_mean_predict: empty training set");
  double sum = 0.0;
  for (double p : train_paces) sum += p;
  return sum / static_cast<double>(train_paces.size());
}

}  // namespace pacecast
