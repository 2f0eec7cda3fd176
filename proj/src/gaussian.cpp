#include "dns/gaussian.hpp"

#include <cmath>
#include <numbers>

#include "dns/errors.hpp"

namespace dns {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_dims(const GaussianBelief& prior, const Vec& y,
                const LinearMeasurementModel& model) {
  require(prior.cov.rows() == prior.mean.size() &&
              prior.cov.cols() == prior.mean.size(),
          "prior covariance shape does not match mean");
  require(model.H.cols() == prior.mean.size(),
          "measurement matrix columns do not match state dimension");
  require(model.H.rows() == y.size(),
          "measurement vector does not match measurement matrix rows");
  require(model.Cw.rows() == y.size() && model.Cw.cols() == y.size(),
          "noise covariance shape does not match measurement dimension");
}

}  // namespace

void GaussianBelief::validate() const {
  require(cov.rows() == mean.size() && cov.cols() == mean.size(),
          "belief covariance must be square and match mean");
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  require((cov - cov.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale,
          "belief covariance is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(cov, Eigen::EigenvaluesOnly);
  require(es.eigenvalues().minCoeff() >= -1e-10 * std::abs(cov.trace()),
          "belief covariance is not positive semidefinite");
}

LinearMeasurementModel::LinearMeasurementModel(Mat h, Mat cw)
    : H(std::move(h)), Cw(std::move(cw)) {
  require(H.rows() >= H.cols(), "measurement model requires n >= m");
  require(Cw.rows() == H.rows() && Cw.cols() == H.rows(),
          "noise covariance must be n x n");
  Eigen::LLT<Mat> llt(Cw);
  require(llt.info() == Eigen::Success,
          "noise covariance must be symmetric positive definite");
}

LinearMeasurementModel LinearMeasurementModel::identity(Eigen::Index m,
                                                        double variance) {
  return {Mat::Identity(m, m), variance * Mat::Identity(m, m)};
}

Mat symmetrized(const Mat& a) { return 0.5 * (a + a.transpose()); }

Eigen::LLT<Mat> robust_cholesky(const Mat& a) {
  Eigen::LLT<Mat> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  const double jitter = 1e-12 * std::max(std::abs(a.trace()), 1e-300);
  llt.compute(a + jitter * Mat::Identity(a.rows(), a.cols()));
  if (llt.info() != Eigen::Success) {
    throw NumericalError("Cholesky factorization failed");
  }
  return llt;
}

GaussianBelief posterior_update(const GaussianBelief& prior, const Vec& y,
                                const LinearMeasurementModel& model) {
  check_dims(prior, y, model);
  const Mat& H = model.H;
  const Mat LHt = prior.cov * H.transpose();
  const Mat R = symmetrized(H * LHt + model.Cw);
  const auto llt = robust_cholesky(R);
  // K = L H^T R^{-1}  =>  K^T = R^{-1} H L
  const Mat Kt = llt.solve(LHt.transpose());
  const Vec innovation = y - H * prior.mean;
  GaussianBelief post;
  post.mean = prior.mean + Kt.transpose() * innovation;
  // K R K^T = L H^T R^{-1} H L
  post.cov = symmetrized(prior.cov - LHt * Kt);
  return post;
}

double marginal_loglik(const GaussianBelief& prior, const Vec& y,
                       const LinearMeasurementModel& model) {
  check_dims(prior, y, model);
  const Mat& H = model.H;
  const Mat S = symmetrized(model.Cw + H * prior.cov * H.transpose());
  const auto llt = robust_cholesky(S);
  const Vec e = y - H * prior.mean;
  const Vec z = llt.matrixL().solve(e);
  const double logdet =
      2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const auto n = static_cast<double>(y.size());
  return -0.5 * n * kLog2Pi - 0.5 * logdet - 0.5 * z.squaredNorm();
}

double log_normal_pdf(const Vec& x, const Vec& mean, const Mat& cov) {
  require(x.size() == mean.size() && cov.rows() == x.size() &&
              cov.cols() == x.size(),
          "log_normal_pdf: shape mismatch");
  const auto llt = robust_cholesky(symmetrized(cov));
  const Vec z = llt.matrixL().solve(x - mean);
  const double logdet =
      2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * static_cast<double>(x.size()) * kLog2Pi - 0.5 * logdet -
         0.5 * z.squaredNorm();
}

}  // namespace dns
