#pragma once

#include <vector>

#include "dns/autodiff.hpp"
#include "dns/dra.hpp"
#include "dns/gaussian.hpp"

namespace dns {

/// Per-step priors, posteriors and point estimates for one sequence.
struct SmoothingResult {
  std::vector<PriorParams> priors;
  std::vector<GaussianBelief> posteriors;
  Sequence point_estimates;  // T x m, row t equals posteriors[t].mean

  std::size_t length() const { return posteriors.size(); }
};

/// Tape node ids produced by one sequential pass over a sequence.
struct SequencePass {
  std::vector<ad::NodeId> prior_mean;
  std::vector<ad::NodeId> prior_var;
  std::vector<ad::NodeId> posterior_mean;
  std::vector<ad::NodeId> loglik;
};

struct PassOptions {
  /// Stop gradients at the xhat feedback edge instead of full BPTT.
  bool detach_feedback = false;
};

/// The single sequential pass shared by inference and training: future sweep,
/// then for t = 1..T prior from the DRA, log-likelihood of y_t and posterior
/// mean fed back into the state branch.
SequencePass build_sequence_pass(ad::Tape& tape, const DraParameters& params, const Sequence& y,
                                 const LinearMeasurementModel& model, PassOptions options = {});

/// Tape op: log N(y; H m, Cw + H diag(var) H^T), differentiable in m and var.
ad::NodeId marginal_loglik_node(ad::Tape& tape, ad::NodeId mean, ad::NodeId var, const Vec& y,
                                const LinearMeasurementModel& model);
/// Tape op: posterior mean m + K (y - H m) under the prior N(m, diag(var)).
ad::NodeId posterior_mean_node(ad::Tape& tape, ad::NodeId mean, ad::NodeId var, const Vec& y,
                               const LinearMeasurementModel& model);

SmoothingResult smooth(const Sequence& y, const LinearMeasurementModel& model,
                       const DraParameters& params);

/// Sum over t of the per-step measurement log-likelihood.
double sequence_loglik(const Sequence& y, const LinearMeasurementModel& model,
                       const DraParameters& params);

/// log N(x; posterior mean, posterior cov) at 1-based time t.
double evaluate_posterior_density(const Vec& x, const SmoothingResult& result, std::size_t t);

void check_model_matches(const DraParameters& params, const LinearMeasurementModel& model);

}  // namespace dns
