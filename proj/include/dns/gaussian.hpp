#pragma once

#include <Eigen/Dense>

namespace dns {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Gaussian over the state: mean (m) and covariance (m x m).
struct GaussianBelief {
  Vec mean;
  Mat cov;

  Eigen::Index dim() const { return mean.size(); }
  void validate() const;
};

/// y = H x + w,  w ~ N(0, Cw).  H is n x m with n >= m.
struct LinearMeasurementModel {
  Mat H;
  Mat Cw;

  LinearMeasurementModel() = default;
  LinearMeasurementModel(Mat h, Mat cw);

  Eigen::Index state_dim() const { return H.cols(); }
  Eigen::Index meas_dim() const { return H.rows(); }

  /// H = I (m x m), Cw = variance * I.
  static LinearMeasurementModel identity(Eigen::Index m, double variance);
};

/// Closed-form Gaussian posterior of x given y under the linear model.
/// Covariance is returned symmetrized.
GaussianBelief posterior_update(const GaussianBelief& prior, const Vec& y,
                                const LinearMeasurementModel& model);

/// log N(y; H m, Cw + H L H^T), evaluated through a Cholesky factor.
double marginal_loglik(const GaussianBelief& prior, const Vec& y,
                       const LinearMeasurementModel& model);

/// log N(x; mean, cov) for a general SPD covariance.
double log_normal_pdf(const Vec& x, const Vec& mean, const Mat& cov);

/// Cholesky factor of a symmetric matrix, retrying with jitter 1e-12 * trace
/// if the plain factorization fails. Throws NumericalError otherwise.
Eigen::LLT<Mat> robust_cholesky(const Mat& a);

Mat symmetrized(const Mat& a);

}  // namespace dns
