#include <gtest/gtest.h>

#include <cmath>

#include "dns/dataset.hpp"
#include "dns/dra.hpp"
#include "dns/errors.hpp"
#include "dns/gradcheck.hpp"
#include "dns/smoother.hpp"
#include "dns/training.hpp"
#include "dra_oracle.hpp"
#include "test_support.hpp"

using namespace dns;
using dns::testing::oracle_pass;
using dns::testing::randomize;

namespace {

DraConfig config_for(Variant v, int m = 3, int n = 3) {
  DraConfig c;
  c.variant = v;
  c.state_dim = m;
  c.meas_dim = n;
  return c;
}

std::size_t branch_count(int d) { return 48 * static_cast<std::size_t>(d) + 4276; }

std::size_t expected_count(Variant v, int m, int n) {
  const bool past = v != Variant::DnsS;
  const bool skip = v != Variant::DnsNoSkip;
  const std::size_t k = past ? 3 : 2;
  std::size_t total = branch_count(n) + branch_count(m) + (past ? branch_count(n) : 0);
  total += (30 * k * 32 + 32) + 2 * 1056;
  if (skip) total += 992 + 2112;
  total += 2 * (32 * m + m);
  return total;
}

Sequence lorenz_like(int T, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Sequence y(T, 3);
  for (int t = 0; t < T; ++t) {
    y(t, 0) = 8.0 * std::sin(0.3 * t) + 3.0 * n(rng);
    y(t, 1) = 9.0 * std::cos(0.2 * t) + 3.0 * n(rng);
    y(t, 2) = 25.0 + 8.0 * std::sin(0.1 * t) + 3.0 * n(rng);
  }
  return y;
}

DraParameters fitted_params(Variant v, std::uint64_t seed, const Sequence& y,
                            const LinearMeasurementModel& model) {
  const auto norm = Normalizer::fit({y}, model);
  auto p = init_dra(config_for(v), norm, seed);
  randomize(p, seed + 17);
  return p;
}

/// Priors from the DRA when the state branch is fed the given estimates.
std::vector<Vec> priors_with_fixed_state(const DraParameters& p, const Sequence& y,
                                         const std::vector<Vec>& xhat) {
  ad::Tape tape(p.store);
  DraGraph g(tape, p);
  const auto future = g.anticausal_sweep(y);
  std::vector<Vec> means;
  for (Eigen::Index t = 0; t < y.rows(); ++t) {
    ad::NodeId yp = ad::kNoNode, xp = ad::kNoNode;
    if (t > 0) {
      yp = g.measurement_input(y.row(t - 1).transpose());
      xp = g.state_input(tape.constant(xhat[static_cast<std::size_t>(t - 1)]));
    }
    const auto prior = g.step(yp, xp, future[static_cast<std::size_t>(t)]);
    Vec v(2 * p.config.state_dim);
    v << tape.value(prior.mean), tape.value(prior.var);
    means.push_back(v);
  }
  return means;
}

const Variant kVariants[] = {Variant::Dns, Variant::DnsS, Variant::DnsNoSkip};

}  // namespace

TEST(DraShape, ParameterCountsMatchHandDerivation) {
  for (auto v : kVariants) {
    for (auto [m, n] : {std::pair{3, 3}, std::pair{4, 4}, std::pair{2, 5}}) {
      const auto c = config_for(v, m, n);
      EXPECT_EQ(parameter_count(c), expected_count(v, m, n)) << to_string(v) << " " << m << "x" << n;
      const auto p = init_dra(c, Normalizer::identity(m, n), 1);
      EXPECT_EQ(p.store.scalar_count(), parameter_count(c));
    }
  }
  EXPECT_EQ(parameter_count(config_for(Variant::Dns)), 21586u);
  EXPECT_EQ(parameter_count(config_for(Variant::DnsS)), 16206u);
  EXPECT_EQ(parameter_count(config_for(Variant::DnsNoSkip)), 18482u);
  EXPECT_EQ(parameter_count(config_for(Variant::Dns, 4, 4)), 21796u);
  EXPECT_EQ(skip_parameter_count(config_for(Variant::Dns)), 3104u);
  EXPECT_EQ(skip_parameter_count(config_for(Variant::DnsNoSkip)), 0u);
}

TEST(DraShape, VariantNamesRoundTrip) {
  for (auto v : kVariants) EXPECT_EQ(variant_from_string(to_string(v)), v);
  EXPECT_THROW(variant_from_string("dns-xl"), ContractError);
}

TEST(DraShape, ConfigJsonRoundTrip) {
  auto c = config_for(Variant::DnsS, 4, 6);
  c.var_floor = 1e-5;
  const auto back = dra_config_from_json(to_json(c));
  EXPECT_EQ(back.variant, c.variant);
  EXPECT_EQ(back.state_dim, 4);
  EXPECT_EQ(back.meas_dim, 6);
  EXPECT_EQ(back.var_floor, 1e-5);
}

TEST(DraShape, MeasurementDimensionBelowStateIsRejected) {
  EXPECT_THROW(config_for(Variant::Dns, 4, 3).validate(), ContractError);
}

TEST(DraInit, UniformWeightsZeroBiasesAndHiddens) {
  const auto p = init_dra(config_for(Variant::Dns), Normalizer::identity(3, 3), 5);
  for (const auto& t : p.store.tensors()) {
    const bool zero = t.name.find("bias") != std::string::npos || t.name.find("/b") != std::string::npos ||
                      t.name.find("h0") != std::string::npos || t.name.find("_b") != std::string::npos;
    if (zero) {
      EXPECT_EQ(t.value.cwiseAbs().maxCoeff(), 0.0) << t.name;
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.value.cols()));
      EXPECT_LE(t.value.cwiseAbs().maxCoeff(), bound) << t.name;
      EXPECT_GT(t.value.cwiseAbs().maxCoeff(), 0.5 * bound) << t.name;
    }
  }
  const auto q = init_dra(config_for(Variant::Dns), Normalizer::identity(3, 3), 5);
  const auto r = init_dra(config_for(Variant::Dns), Normalizer::identity(3, 3), 6);
  bool differs = false;
  for (std::size_t i = 0; i < p.store.size(); ++i) {
    EXPECT_EQ(p.store.tensors()[i].value, q.store.tensors()[i].value);
    differs |= p.store.tensors()[i].value != r.store.tensors()[i].value;
  }
  EXPECT_TRUE(differs);
}

TEST(Normalizer, MatchesTwoPassMomentsForIdentityModel) {
  Rng rng(3);
  std::vector<Sequence> ys{Sequence(dns::testing::random_matrix(rng, 40, 3) * 5.0),
                           Sequence(dns::testing::random_matrix(rng, 25, 3) * 5.0)};
  ys[0].col(2).array() += 20.0;
  const auto model = LinearMeasurementModel::identity(3, 2.0);
  const auto norm = Normalizer::fit(ys, model);
  for (int i = 0; i < 3; ++i) {
    double mean = 0.0, count = 0.0;
    for (const auto& y : ys) {
      mean += y.col(i).sum();
      count += static_cast<double>(y.rows());
    }
    mean /= count;
    double var = 0.0;
    for (const auto& y : ys) var += (y.col(i).array() - mean).square().sum();
    var /= count;
    EXPECT_NEAR(norm.meas_shift(i), mean, 1e-10);
    EXPECT_NEAR(norm.meas_scale(i), std::sqrt(var), 1e-10);
    EXPECT_NEAR(norm.state_shift(i), mean, 1e-10);
    EXPECT_NEAR(norm.state_scale(i), std::sqrt(std::max(var - 2.0, 0.01 * var)), 1e-10);
  }
}

TEST(Normalizer, ConstantChannelGetsUnitScale) {
  Sequence y = Sequence::Constant(10, 3, 4.0);
  const auto norm = Normalizer::fit({y}, LinearMeasurementModel::identity(3, 1.0));
  EXPECT_EQ(norm.meas_scale, Vec::Ones(3));
  EXPECT_EQ(norm.meas_shift, Vec::Constant(3, 4.0));
}

TEST(Smoother, MatchesPrimitiveOracleForAllVariants) {
  const auto model = LinearMeasurementModel::identity(3, 9.0);
  for (auto v : kVariants) {
    const Sequence y = lorenz_like(12, 4);
    const auto p = fitted_params(v, 11, y, model);
    const auto oracle = oracle_pass(p, y, model);
    const auto res = smooth(y, model, p);
    ASSERT_EQ(res.length(), 12u);
    for (std::size_t t = 0; t < 12; ++t) {
      EXPECT_LT((res.priors[t].mean - oracle.prior_mean[t]).cwiseAbs().maxCoeff(), 1e-10) << t;
      EXPECT_LT((res.priors[t].var_diag - oracle.prior_var[t]).cwiseAbs().maxCoeff(), 1e-10) << t;
      EXPECT_LT((res.posteriors[t].mean - oracle.xhat[t]).cwiseAbs().maxCoeff(), 1e-10) << t;
      EXPECT_LT((res.point_estimates.row(static_cast<Eigen::Index>(t)).transpose() - oracle.xhat[t])
                    .cwiseAbs()
                    .maxCoeff(),
                1e-10);
    }
    double ll = 0.0;
    for (double l : oracle.loglik) ll += l;
    EXPECT_NEAR(sequence_loglik(y, model, p), ll, 1e-9 * std::abs(ll));
  }
}

TEST(Smoother, PosteriorIsConjugateUpdateOfPrior) {
  Rng rng(8);
  const Mat H = dns::testing::random_matrix(rng, 5, 3);
  const LinearMeasurementModel model(H, dns::testing::random_spd(rng, 5));
  Sequence y = dns::testing::random_matrix(rng, 7, 5);
  const auto norm = Normalizer::fit({y}, model);
  auto p = init_dra(config_for(Variant::Dns, 3, 5), norm, 2);
  randomize(p, 3);
  const auto res = smooth(y, model, p);
  for (std::size_t t = 0; t < res.length(); ++t) {
    const GaussianBelief prior{res.priors[t].mean, res.priors[t].cov()};
    const auto post = posterior_update(prior, y.row(static_cast<Eigen::Index>(t)).transpose(), model);
    EXPECT_LT((post.mean - res.posteriors[t].mean).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((post.cov - res.posteriors[t].cov).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((res.posteriors[t].cov - res.posteriors[t].cov.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_GT(res.priors[t].var_diag.minCoeff(), 0.0);
  }
}

TEST(Smoother, AnticausalSweepMatchesRestartedRecomputation) {
  const auto model = LinearMeasurementModel::identity(3, 4.0);
  const Sequence y = lorenz_like(9, 2);
  const auto p = fitted_params(Variant::Dns, 4, y, model);
  const auto swept = anticausal_sweep(y, p);
  const auto recomputed = dns::testing::future_by_recomputation(p, y);
  ASSERT_EQ(swept.size(), 9u);
  EXPECT_EQ(swept.back(), p.store.value(p.store.id("future/h0")));
  for (std::size_t t = 0; t < 9; ++t) EXPECT_LT((swept[t] - recomputed[t]).cwiseAbs().maxCoeff(), 1e-12);
  // a_t depends only on y_{t+1:T}.
  Sequence z = y;
  z.row(4) += Vec::Constant(3, 5.0).transpose();
  const auto swept_z = anticausal_sweep(z, p);
  for (std::size_t t = 4; t < 9; ++t) EXPECT_EQ(swept[t], swept_z[t]) << t;
  EXPECT_NE(swept[3], swept_z[3]);
}

TEST(Smoother, PriorAtTIgnoresYtGivenFixedStateInputs) {
  const auto model = LinearMeasurementModel::identity(3, 4.0);
  for (auto v : kVariants) {
    const Sequence y = lorenz_like(10, 6);
    const auto p = fitted_params(v, 9, y, model);
    std::vector<Vec> xhat;
    for (int t = 0; t < 10; ++t) xhat.push_back(y.row(t).transpose() * 0.9);
    const auto base = priors_with_fixed_state(p, y, xhat);
    for (int t : {0, 4, 9}) {
      Sequence z = y;
      z.row(t) += Vec::Constant(3, 7.5).transpose();
      const auto moved = priors_with_fixed_state(p, z, xhat);
      EXPECT_EQ(base[static_cast<std::size_t>(t)], moved[static_cast<std::size_t>(t)]) << to_string(v) << " t=" << t;
      for (int s = 0; s < t; ++s) EXPECT_NE(base[static_cast<std::size_t>(s)], moved[static_cast<std::size_t>(s)]);
      if (t + 1 < 10 && v != Variant::DnsS) EXPECT_NE(base[static_cast<std::size_t>(t + 1)], moved[static_cast<std::size_t>(t + 1)]);
    }
  }
}

TEST(Smoother, CausalBranchesIgnoreFutureStateInputs) {
  const auto model = LinearMeasurementModel::identity(3, 4.0);
  const Sequence y = lorenz_like(8, 1);
  const auto p = fitted_params(Variant::Dns, 3, y, model);
  std::vector<Vec> xhat;
  for (int t = 0; t < 8; ++t) xhat.push_back(y.row(t).transpose());
  const auto base = priors_with_fixed_state(p, y, xhat);
  auto shifted = xhat;
  shifted[5] += Vec::Constant(3, 3.0);
  const auto moved = priors_with_fixed_state(p, y, shifted);
  for (std::size_t t = 0; t <= 5; ++t) EXPECT_EQ(base[t], moved[t]) << t;
  EXPECT_NE(base[6], moved[6]);
}

TEST(Smoother, FullPassCarriesYtIntoLaterPriorsThroughFeedback) {
  // Documented behaviour: xhat_{t-1} is a posterior whose prior used a_{t-1},
  // which summarizes y_t, so the full sequential prior at t does move with y_t.
  const auto model = LinearMeasurementModel::identity(3, 4.0);
  const Sequence y = lorenz_like(8, 5);
  const auto p = fitted_params(Variant::Dns, 2, y, model);
  Sequence z = y;
  z.row(4) += Vec::Constant(3, 6.0).transpose();
  const auto a = smooth(y, model, p);
  const auto b = smooth(z, model, p);
  EXPECT_NE(a.priors[4].mean, b.priors[4].mean);
}

TEST(Smoother, SingleStepSequence) {
  const auto model = LinearMeasurementModel::identity(3, 1.0);
  Sequence y = lorenz_like(1, 3);
  const auto p = fitted_params(Variant::DnsS, 1, lorenz_like(5, 3), model);
  const auto res = smooth(y, model, p);
  const auto oracle = oracle_pass(p, y, model);
  ASSERT_EQ(res.length(), 1u);
  EXPECT_LT((res.posteriors[0].mean - oracle.xhat[0]).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Smoother, DimensionMismatchIsAContractError) {
  const auto p = init_dra(config_for(Variant::Dns), Normalizer::identity(3, 3), 1);
  EXPECT_THROW(smooth(Sequence::Zero(4, 3), LinearMeasurementModel::identity(2, 1.0), p), ContractError);
  EXPECT_THROW(smooth(Sequence::Zero(0, 3), LinearMeasurementModel::identity(3, 1.0), p), ContractError);
}

class LossGradient : public ::testing::TestWithParam<std::tuple<Variant, bool>> {};

TEST_P(LossGradient, MatchesCentralDifferences) {
  const auto [variant, detach] = GetParam();
  const auto model = LinearMeasurementModel::identity(3, 4.0);
  const Sequence y = lorenz_like(6, 12);
  auto p = fitted_params(variant, 21, y, model);
  const auto analytic = sequence_nll_with_grad(p, y, model, PassOptions{detach});
  const auto oracle_base = oracle_pass(p, y, model);
  double nll = 0.0;
  for (double l : oracle_base.loglik) nll -= l;
  EXPECT_NEAR(analytic.nll, nll, 1e-9 * std::abs(nll));

  // Detached feedback is the gradient with the state inputs held at their
  // current values.
  const std::vector<Vec> frozen = oracle_base.xhat;
  auto loss = [&](const ad::ParameterStore& store) {
    DraParameters q{p.config, store, p.norm};
    const auto pass = oracle_pass(q, y, model, detach ? &frozen : nullptr);
    double s = 0.0;
    for (double l : pass.loglik) s -= l;
    return s;
  };
  const auto report = ad::check_gradients(p.store, loss, analytic.grads, 1e-5, 1e-3, 40);
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_param << "[" << report.worst_index
                                        << "] analytic " << report.worst_analytic << " numeric "
                                        << report.worst_numeric;
  EXPECT_GT(report.entries_checked, 500u);
}

INSTANTIATE_TEST_SUITE_P(AllVariants, LossGradient,
                         ::testing::Combine(::testing::Values(Variant::Dns, Variant::DnsS, Variant::DnsNoSkip),
                                            ::testing::Bool()),
                         [](const auto& info) {
                           std::string name = to_string(std::get<0>(info.param));
                           for (auto& ch : name)
                             if (ch == '-') ch = '_';
                           return name + (std::get<1>(info.param) ? "_detached" : "_bptt");
                         });

TEST(LossGradient, DetachedAndFullGradientsDiffer) {
  const auto model = LinearMeasurementModel::identity(3, 4.0);
  const Sequence y = lorenz_like(6, 12);
  const auto p = fitted_params(Variant::Dns, 21, y, model);
  const auto full = sequence_nll_with_grad(p, y, model, PassOptions{false});
  const auto cut = sequence_nll_with_grad(p, y, model, PassOptions{true});
  EXPECT_EQ(full.nll, cut.nll);
  auto diff = full.grads;
  diff.scale(-1.0);
  diff.add(cut.grads);
  EXPECT_GT(diff.norm(), 1e-6 * full.grads.norm());
}
