#include "dns/smoother.hpp"

#include <cmath>
#include <string>

#include "dns/errors.hpp"

namespace dns {

using ad::NodeId;

namespace {

GaussianBelief diag_belief(const Vec& mean, const Vec& var) {
  return {mean, Mat(var.asDiagonal())};
}

}  // namespace

void check_model_matches(const DraParameters& params, const LinearMeasurementModel& model) {
  require(model.state_dim() == params.config.state_dim && model.meas_dim() == params.config.meas_dim,
          "measurement model dimensions (" + std::to_string(model.meas_dim()) + "x" +
              std::to_string(model.state_dim()) + ") do not match the network (" +
              std::to_string(params.config.meas_dim) + "x" + std::to_string(params.config.state_dim) +
              ")");
}

NodeId marginal_loglik_node(ad::Tape& tape, NodeId mean, NodeId var, const Vec& y,
                            const LinearMeasurementModel& model) {
  const Vec& m = tape.value(mean);
  const Vec& v = tape.value(var);
  const double value = marginal_loglik(diag_belief(m, v), y, model);
  return tape.push(Vec::Constant(1, value), {mean, var}, [mean, var, y, model](ad::Tape& t, const Vec& g) {
    // dL/dm = H^T S^{-1} e,  dL/dv_i = 0.5 (H^T s)_i^2 - 0.5 (H^T S^{-1} H)_ii
    const Mat& Hm = model.H;
    const Vec& mv = t.value(mean);
    const Vec& vv = t.value(var);
    const Mat S = symmetrized(model.Cw + Hm * vv.asDiagonal() * Hm.transpose());
    const auto llt = robust_cholesky(S);
    const Vec s = llt.solve(y - Hm * mv);
    const Vec u = Hm.transpose() * s;
    const Mat SinvH = llt.solve(Hm);
    const Vec diag = (Hm.transpose() * SinvH).diagonal();
    t.accumulate(mean, g(0) * u);
    t.accumulate(var, g(0) * 0.5 * (u.cwiseProduct(u) - diag));
  });
}

NodeId posterior_mean_node(ad::Tape& tape, NodeId mean, NodeId var, const Vec& y,
                           const LinearMeasurementModel& model) {
  Vec value = posterior_update(diag_belief(tape.value(mean), tape.value(var)), y, model).mean;
  return tape.push(std::move(value), {mean, var}, [mean, var, y, model](ad::Tape& t, const Vec& g) {
    // xbar = m + V H^T s with s = R^{-1}(y - H m), u = H^T s, w = R^{-1} H V g:
    //   dm = g - H^T w,  dv = u * (g - H^T w)
    const Mat& H = model.H;
    const Vec& mv = t.value(mean);
    const Vec& vv = t.value(var);
    const Mat R = symmetrized(model.Cw + H * vv.asDiagonal() * H.transpose());
    const auto llt = robust_cholesky(R);
    const Vec u = H.transpose() * llt.solve(y - H * mv);
    const Vec w = llt.solve(H * vv.cwiseProduct(g));
    const Vec r = g - H.transpose() * w;
    t.accumulate(mean, r);
    t.accumulate(var, u.cwiseProduct(r));
  });
}

SequencePass build_sequence_pass(ad::Tape& tape, const DraParameters& params, const Sequence& y,
                                 const LinearMeasurementModel& model, PassOptions options) {
  check_model_matches(params, model);
  require(y.rows() >= 1, "sequence must have at least one step");
  require(y.cols() == model.meas_dim(), "measurement sequence dimension mismatch");
  const auto T = static_cast<std::size_t>(y.rows());
  DraGraph graph(tape, params);
  const auto future = graph.anticausal_sweep(y);

  SequencePass pass;
  pass.prior_mean.reserve(T);
  pass.prior_var.reserve(T);
  pass.posterior_mean.reserve(T);
  pass.loglik.reserve(T);
  NodeId y_prev = ad::kNoNode;
  NodeId xhat_prev = ad::kNoNode;
  for (std::size_t t = 0; t < T; ++t) {
    const auto prior = graph.step(y_prev, xhat_prev, future[t]);
    const Vec yt = y.row(static_cast<Eigen::Index>(t)).transpose();
    const NodeId ll = marginal_loglik_node(tape, prior.mean, prior.var, yt, model);
    NodeId xhat = posterior_mean_node(tape, prior.mean, prior.var, yt, model);
    if (!tape.value(xhat).allFinite() || !std::isfinite(tape.value(ll)(0))) {
      throw NumericalError("smoother diverged at t = " + std::to_string(t + 1));
    }
    pass.prior_mean.push_back(prior.mean);
    pass.prior_var.push_back(prior.var);
    pass.posterior_mean.push_back(xhat);
    pass.loglik.push_back(ll);
    if (options.detach_feedback) xhat = ad::detach(tape, xhat);
    xhat_prev = graph.state_input(xhat);
    y_prev = graph.measurement_input(yt);
  }
  return pass;
}

SmoothingResult smooth(const Sequence& y, const LinearMeasurementModel& model,
                       const DraParameters& params) {
  ad::Tape tape(params.store);
  const auto pass = build_sequence_pass(tape, params, y, model);
  const auto T = pass.prior_mean.size();
  SmoothingResult r;
  r.priors.reserve(T);
  r.posteriors.reserve(T);
  r.point_estimates.resize(static_cast<Eigen::Index>(T), model.state_dim());
  for (std::size_t t = 0; t < T; ++t) {
    PriorParams prior{tape.value(pass.prior_mean[t]), tape.value(pass.prior_var[t])};
    auto post = posterior_update(diag_belief(prior.mean, prior.var_diag),
                                 y.row(static_cast<Eigen::Index>(t)).transpose(), model);
    post.mean = tape.value(pass.posterior_mean[t]);
    r.point_estimates.row(static_cast<Eigen::Index>(t)) = post.mean.transpose();
    r.priors.push_back(std::move(prior));
    r.posteriors.push_back(std::move(post));
  }
  return r;
}

double sequence_loglik(const Sequence& y, const LinearMeasurementModel& model,
                       const DraParameters& params) {
  ad::Tape tape(params.store);
  const auto pass = build_sequence_pass(tape, params, y, model);
  double total = 0.0;
  for (auto id : pass.loglik) total += tape.value(id)(0);
  return total;
}

double evaluate_posterior_density(const Vec& x, const SmoothingResult& result, std::size_t t) {
  require(t >= 1 && t <= result.length(), "time index out of range");
  const auto& post = result.posteriors[t - 1];
  return log_normal_pdf(x, post.mean, post.cov);
}

}  // namespace dns
