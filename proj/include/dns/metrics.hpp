#pragma once

#include <vector>

#include "dns/dataset.hpp"
#include "dns/smoother.hpp"

namespace dns {

inline constexpr double kNmseFloorDb = -300.0;

struct NmseResult {
  double db = 0.0;
  /// Some sequence was reproduced exactly and its term was floored.
  bool exact = false;
};

/// Mean over sequences of 10 log10(sum_t |x - xhat|^2 / sum_t |x|^2).
NmseResult nmse(const std::vector<Sequence>& truth, const std::vector<Sequence>& estimates);
double nmse_db(const std::vector<Sequence>& truth, const std::vector<Sequence>& estimates);

/// Mean over sequences of the time-averaged log posterior density of the
/// true state.
double alp(const std::vector<Sequence>& truth, const std::vector<SmoothingResult>& results);

/// Empirical SMNR of a dataset, in dB.
double measure_smnr(const TrajectoryDataset& data);

std::vector<Sequence> point_estimates(const std::vector<SmoothingResult>& results);

/// x_t = H^+ y_t, the estimate that ignores any dynamics.
Sequence identity_estimate(const Sequence& y, const LinearMeasurementModel& model);
/// The flat-prior posterior N(H^+ y_t, H^+ Cw H^+^T) at every step; no priors.
SmoothingResult identity_smooth(const Sequence& y, const LinearMeasurementModel& model);

}  // namespace dns
