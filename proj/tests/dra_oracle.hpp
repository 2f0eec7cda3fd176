#pragma once

// Value-only re-implementation of the DRA and the sequential smoothing pass,
// built from the pure forward primitives. Tests compare the tape-based
// implementation against it.

#include <optional>
#include <string>
#include <vector>

#include "dns/autodiff.hpp"
#include "dns/dra.hpp"
#include "dns/gaussian.hpp"

namespace dns::testing {

struct OraclePass {
  std::vector<Vec> prior_mean, prior_var, xhat;
  std::vector<double> loglik;
  std::vector<Vec> future;  // a_1..a_T
};

inline Vec branch_gru(const DraParameters& p, const std::string& prefix, const Vec& x, const Vec& h) {
  const auto& S = p.store;
  const ad::GruParams g{S.id(prefix + "/gru_Wz"), S.id(prefix + "/gru_Uz"), S.id(prefix + "/gru_bz"),
                        S.id(prefix + "/gru_Wr"), S.id(prefix + "/gru_Ur"), S.id(prefix + "/gru_br"),
                        S.id(prefix + "/gru_Wh"), S.id(prefix + "/gru_Uh"), S.id(prefix + "/gru_bh")};
  return ad::gru_cell_forward(x, h, S, g);
}

/// Runs a branch over a whole input sequence (rows), returning every hidden state.
inline std::vector<Vec> run_branch(const DraParameters& p, const std::string& prefix, const Mat& inputs) {
  const auto& S = p.store;
  const Mat conv = ad::causal_conv1d_forward(inputs, S.value(S.id(prefix + "/conv_kernel")),
                                             S.value(S.id(prefix + "/conv_bias")), p.config.conv_width);
  std::vector<Vec> hs;
  Vec h = S.value(S.id(prefix + "/h0"));
  for (Eigen::Index t = 0; t < inputs.rows(); ++t) {
    h = branch_gru(p, prefix, conv.row(t).transpose(), h);
    hs.push_back(h);
  }
  return hs;
}

inline Vec run_stack(const DraParameters& p, const std::string& prefix, Vec x) {
  const auto& S = p.store;
  for (int layer = 1; layer <= 3; ++layer) {
    const auto l = std::to_string(layer);
    x = ad::dense_forward(x, S.value(S.id(prefix + "/W" + l)), S.value(S.id(prefix + "/b" + l)),
                          ad::Activation::Tanh);
  }
  return x;
}

/// a_t for t = 1..T by restarting the future branch at every t over the
/// reversed remainder y_T, ..., y_{t+1}.
inline std::vector<Vec> future_by_recomputation(const DraParameters& p, const Mat& y) {
  const auto T = y.rows();
  const Vec shift = p.norm.meas_shift, scale = p.norm.meas_scale;
  std::vector<Vec> a;
  for (Eigen::Index t = 0; t < T; ++t) {
    const Eigen::Index count = T - 1 - t;
    if (count == 0) {
      a.push_back(p.store.value(p.store.id("future/h0")));
      continue;
    }
    Mat rev(count, y.cols());
    for (Eigen::Index k = 0; k < count; ++k) {
      rev.row(k) = ((y.row(T - 1 - k).transpose() - shift).cwiseQuotient(scale)).transpose();
    }
    a.push_back(run_branch(p, "future", rev).back());
  }
  return a;
}

/// The full sequential pass. With `fixed_xhat` the state branch consumes the
/// given estimates instead of its own posterior means.
inline OraclePass oracle_pass(const DraParameters& p, const Mat& y, const LinearMeasurementModel& model,
                              const std::vector<Vec>* fixed_xhat = nullptr) {
  const auto T = y.rows();
  const auto& c = p.config;
  const auto& S = p.store;
  const auto& nm = p.norm;
  OraclePass out;
  out.future = future_by_recomputation(p, y);

  // Causal inputs: a zero placeholder followed by the normalized history.
  Mat past_in = Mat::Zero(T, c.meas_dim);
  Mat state_in = Mat::Zero(T, c.state_dim);
  for (Eigen::Index t = 0; t < T; ++t) {
    if (t > 0) {
      past_in.row(t) = ((y.row(t - 1).transpose() - nm.meas_shift).cwiseQuotient(nm.meas_scale)).transpose();
      const Vec& prev = fixed_xhat ? (*fixed_xhat)[static_cast<std::size_t>(t - 1)] : out.xhat.back();
      state_in.row(t) = ((prev - nm.state_shift).cwiseQuotient(nm.state_scale)).transpose();
    }
    // Recompute the causal branches over the prefix; only row t is new.
    const Vec h_state = run_branch(p, "state", state_in.topRows(t + 1)).back();
    std::vector<Vec> parts;
    if (c.has_past_branch()) parts.push_back(run_branch(p, "past", past_in.topRows(t + 1)).back());
    parts.push_back(out.future[static_cast<std::size_t>(t)]);
    parts.push_back(h_state);
    Eigen::Index total = 0;
    for (const auto& v : parts) total += v.size();
    Vec cat(total);
    Eigen::Index off = 0;
    for (const auto& v : parts) {
      cat.segment(off, v.size()) = v;
      off += v.size();
    }
    Vec f = run_stack(p, "trunk", cat);
    if (c.has_skip()) f += run_stack(p, "skip", h_state);
    const Vec mean_raw = S.value(S.id("head/mean_W")) * f + S.value(S.id("head/mean_b"));
    const Vec var_raw = S.value(S.id("head/var_W")) * f + S.value(S.id("head/var_b"));
    const Vec mean = nm.state_scale.cwiseProduct(mean_raw) + nm.state_shift;
    const Vec var = nm.state_scale.cwiseProduct(nm.state_scale).cwiseProduct(ad::softplus(var_raw)) +
                    Vec::Constant(c.state_dim, c.var_floor);
    const GaussianBelief prior{mean, Mat(var.asDiagonal())};
    const Vec yt = y.row(t).transpose();
    out.prior_mean.push_back(mean);
    out.prior_var.push_back(var);
    out.loglik.push_back(marginal_loglik(prior, yt, model));
    out.xhat.push_back(posterior_update(prior, yt, model).mean);
  }
  return out;
}

/// Every parameter entry drawn from N(0, scale^2), so that biases and initial
/// hiddens are exercised too.
inline void randomize(DraParameters& p, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& t : p.store.tensors()) {
    for (Eigen::Index k = 0; k < t.value.size(); ++k) t.value.data()[k] = n(rng);
  }
}

}  // namespace dns::testing
