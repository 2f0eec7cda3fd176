#include "dns/ertss.hpp"

#include "dns/errors.hpp"

namespace dns {

StateTransitionModel stm_for(const SystemSpec& spec) {
  if (spec.kind == SystemKind::Sdsp) {
    throw ContractError("ERTSS is not available for the double spring pendulum");
  }
  const auto drift = BilinearDrift::from_spec(spec);
  return {[drift](const Vec& x) { return drift.step(x); },
          [drift](const Vec& x) { return drift.step_jacobian(x); }, spec.process_noise_cov};
}

StateTransitionModel linear_stm(const Mat& A, const Mat& Q) {
  require(A.rows() == A.cols() && Q.rows() == A.rows() && Q.cols() == A.cols(),
          "linear STM dimensions mismatch");
  return {[A](const Vec& x) -> Vec { return A * x; }, [A](const Vec&) -> Mat { return A; }, Q};
}

namespace {

void check_finite(const GaussianBelief& b, std::size_t t, const char* stage) {
  if (!b.mean.allFinite() || !b.cov.allFinite()) {
    throw DivergenceError(std::string("EKF ") + stage + " diverged at t=" + std::to_string(t + 1));
  }
}

}  // namespace

FilterPass ekf_forward(const Sequence& y, const StateTransitionModel& stm,
                       const LinearMeasurementModel& model, const GaussianBelief& init) {
  const auto m = model.state_dim();
  require(y.cols() == model.meas_dim(), "measurement dimension mismatch");
  require(y.rows() >= 1, "empty measurement sequence");
  require(init.dim() == m && init.cov.rows() == m && init.cov.cols() == m,
          "initial belief dimension mismatch");
  require(stm.process_noise_cov.rows() == m, "process noise dimension mismatch");

  FilterPass pass;
  const auto T = static_cast<std::size_t>(y.rows());
  pass.filtered.reserve(T);
  pass.predicted.reserve(T);
  GaussianBelief pred = init;
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) {
      const auto& prev = pass.filtered.back();
      const Mat F = stm.jacobian(prev.mean);
      pred.mean = stm.drift(prev.mean);
      pred.cov = symmetrized(F * prev.cov * F.transpose() + stm.process_noise_cov);
    }
    check_finite(pred, t, "prediction");
    pass.predicted.push_back(pred);
    const Vec yt = y.row(static_cast<Eigen::Index>(t)).transpose();
    pass.filtered.push_back(posterior_update(pred, yt, model));
    check_finite(pass.filtered.back(), t, "update");
  }
  return pass;
}

std::vector<GaussianBelief> rts_backward(const FilterPass& pass, const StateTransitionModel& stm) {
  require(!pass.filtered.empty() && pass.filtered.size() == pass.predicted.size(),
          "filter pass is empty or inconsistent");
  const auto T = pass.filtered.size();
  std::vector<GaussianBelief> smoothed(T);
  smoothed[T - 1] = pass.filtered[T - 1];
  for (std::size_t t = T - 1; t-- > 0;) {
    const auto& filt = pass.filtered[t];
    const auto& next_pred = pass.predicted[t + 1];
    const Mat F = stm.jacobian(filt.mean);
    // G = P F^T Ppred^-1, computed as the solve Ppred G^T = F P.
    const auto llt = robust_cholesky(next_pred.cov);
    const Mat G = llt.solve(F * filt.cov).transpose();
    smoothed[t].mean = filt.mean + G * (smoothed[t + 1].mean - next_pred.mean);
    smoothed[t].cov =
        symmetrized(filt.cov + G * (smoothed[t + 1].cov - next_pred.cov) * G.transpose());
    check_finite(smoothed[t], t, "smoothing");
  }
  return smoothed;
}

GaussianBelief default_ertss_init(const Sequence& y, const LinearMeasurementModel& model) {
  require(y.rows() >= 1, "empty measurement sequence");
  const Mat pinv = model.H.completeOrthogonalDecomposition().pseudoInverse();
  const auto m = model.state_dim();
  return {pinv * y.row(0).transpose(), 10.0 * Mat::Identity(m, m)};
}

SmoothingResult ertss_smooth(const Sequence& y, const StateTransitionModel& stm,
                             const LinearMeasurementModel& model, const GaussianBelief& init) {
  const auto pass = ekf_forward(y, stm, model, init);
  SmoothingResult r;
  r.posteriors = rts_backward(pass, stm);
  r.point_estimates.resize(static_cast<Eigen::Index>(r.posteriors.size()), model.state_dim());
  for (std::size_t t = 0; t < r.posteriors.size(); ++t) {
    r.point_estimates.row(static_cast<Eigen::Index>(t)) = r.posteriors[t].mean.transpose();
    r.priors.push_back({pass.predicted[t].mean, pass.predicted[t].cov.diagonal()});
  }
  return r;
}

SmoothingResult ertss_smooth(const Sequence& y, const StateTransitionModel& stm,
                             const LinearMeasurementModel& model) {
  return ertss_smooth(y, stm, model, default_ertss_init(y, model));
}

}  // namespace dns
