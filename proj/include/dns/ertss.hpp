#pragma once

// Extended Kalman filter and Rauch-Tung-Striebel smoother driven by a known
// state-transition model.

#include <functional>
#include <vector>

#include "dns/gaussian.hpp"
#include "dns/smoother.hpp"
#include "dns/systems.hpp"

namespace dns {

struct StateTransitionModel {
  std::function<Vec(const Vec&)> drift;
  std::function<Mat(const Vec&)> jacobian;
  Mat process_noise_cov;
};

/// STM of the declared Lorenz/Chen discretization. There is none for SDSP.
StateTransitionModel stm_for(const SystemSpec& spec);
StateTransitionModel linear_stm(const Mat& A, const Mat& Q);

struct FilterPass {
  std::vector<GaussianBelief> filtered;   // p(x_t | y_1:t)
  std::vector<GaussianBelief> predicted;  // p(x_t | y_1:t-1); predicted[0] is the init
};

FilterPass ekf_forward(const Sequence& y, const StateTransitionModel& stm,
                       const LinearMeasurementModel& model, const GaussianBelief& init);

/// Gain G_t = P_t|t F_t^T P_t+1|t^-1 with F_t linearized at the filtered mean.
std::vector<GaussianBelief> rts_backward(const FilterPass& pass, const StateTransitionModel& stm);

/// N(H^+ y_1, 10 I).
GaussianBelief default_ertss_init(const Sequence& y, const LinearMeasurementModel& model);

/// Priors in the result are the EKF predictions (diagonal of the covariance).
SmoothingResult ertss_smooth(const Sequence& y, const StateTransitionModel& stm,
                             const LinearMeasurementModel& model, const GaussianBelief& init);
SmoothingResult ertss_smooth(const Sequence& y, const StateTransitionModel& stm,
                             const LinearMeasurementModel& model);

}  // namespace dns
