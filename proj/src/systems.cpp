#include "dns/systems.hpp"

#include <cmath>
#include <numeric>

#include "dns/errors.hpp"

namespace dns {

namespace {

void check_finite(const Vec& x, int t) {
  if (!x.allFinite()) {
    throw DivergenceError("simulation diverged at step " + std::to_string(t));
  }
}

Vec sample_gaussian(const Mat& chol_lower, Rng& rng) {
  std::normal_distribution<double> normal;
  Vec z(chol_lower.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  return chol_lower * z;
}

/// Lower factor for sampling from a PSD covariance; zero for a zero matrix.
Mat sampling_factor(const Mat& cov) {
  if (cov.isZero(0.0)) return Mat::Zero(cov.rows(), cov.cols());
  Eigen::LDLT<Mat> ldlt(cov);
  if (ldlt.info() != Eigen::Success) throw NumericalError("process noise covariance is not PSD");
  const Vec d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
  Mat L = ldlt.matrixL();
  return ldlt.transpositionsP().transpose() * (L * d.asDiagonal());
}

Sequence simulate_bilinear(const Vec& x0, int T, const SystemSpec& spec, Rng& rng) {
  require(T >= 1, "sequence length must be at least 1");
  require(x0.size() == 3, "initial state must be 3-dimensional");
  const auto drift = BilinearDrift::from_spec(spec);
  const Mat noise = sampling_factor(spec.process_noise_cov);
  Sequence out(T, 3);
  Vec x = x0;
  const int total = spec.burn_in + T;
  for (int k = 0; k < total; ++k) {
    if (k >= spec.burn_in) out.row(k - spec.burn_in) = x.transpose();
    if (k + 1 == total) break;
    x = drift.step(x) + sample_gaussian(noise, rng);
    check_finite(x, k + 1);
  }
  return out;
}

}  // namespace

std::string to_string(SystemKind kind) {
  switch (kind) {
    case SystemKind::Lorenz: return "lorenz";
    case SystemKind::Chen: return "chen";
    case SystemKind::Sdsp: return "sdsp";
  }
  return "unknown";
}

SystemKind system_kind_from_string(const std::string& name) {
  if (name == "lorenz") return SystemKind::Lorenz;
  if (name == "chen") return SystemKind::Chen;
  if (name == "sdsp") return SystemKind::Sdsp;
  throw ContractError("unknown system '" + name + "' (expected lorenz, chen or sdsp)");
}

double SystemSpec::param(const std::string& name) const {
  auto it = physical_params.find(name);
  if (it == physical_params.end()) {
    throw ContractError("system spec has no parameter '" + name + "'");
  }
  return it->second;
}

void SystemSpec::validate() const {
  const int expected = kind == SystemKind::Sdsp ? 4 : 3;
  require(state_dim == expected, "state_dim does not match system kind");
  require(step_size > 0.0, "step_size must be positive");
  require(burn_in >= 0, "burn_in must be non-negative");
  const int noise_dim = kind == SystemKind::Sdsp ? 8 : 3;
  require(process_noise_cov.rows() == noise_dim && process_noise_cov.cols() == noise_dim,
          "process noise covariance has the wrong shape");
  Eigen::SelfAdjointEigenSolver<Mat> es(process_noise_cov, Eigen::EigenvaluesOnly);
  require(es.eigenvalues().minCoeff() >= -1e-12, "process noise covariance is not PSD");
}

SystemSpec lorenz_spec() {
  SystemSpec s;
  s.kind = SystemKind::Lorenz;
  s.state_dim = 3;
  s.step_size = 0.02;
  s.process_noise_cov = 0.25 * Mat::Identity(3, 3);
  s.burn_in = 100;
  s.physical_params = {{"sigma", 10.0}, {"rho", 28.0}, {"beta", 8.0 / 3.0}, {"substeps", 1.0}};
  return s;
}

SystemSpec chen_spec() {
  SystemSpec s;
  s.kind = SystemKind::Chen;
  s.state_dim = 3;
  s.step_size = 0.02;
  s.process_noise_cov = 0.25 * Mat::Identity(3, 3);
  s.burn_in = 100;
  // The frozen-coefficient step is unstable for Chen at 0.02 s (the linear
  // part has an eigenvalue near +24); ten 0.002 s substeps per record stay on
  // the attractor.
  s.physical_params = {{"a", 35.0}, {"b", 3.0}, {"c", 28.0}, {"substeps", 10.0}};
  return s;
}

SystemSpec sdsp_spec() {
  SystemSpec s;
  s.kind = SystemKind::Sdsp;
  s.state_dim = 4;
  s.step_size = 0.01;
  s.process_noise_cov = 1e-6 * Mat::Identity(8, 8);
  s.burn_in = 0;
  s.physical_params = {{"m1", 1.0},  {"m2", 1.0},  {"k1", 25.0},         {"k2", 25.0},
                       {"l1", 1.0},  {"l2", 1.0},  {"g", 9.81},          {"damping", 0.05},
                       {"substeps", 5.0}, {"initial_angle_max", 0.5}};
  return s;
}

SystemSpec default_spec(SystemKind kind) {
  switch (kind) {
    case SystemKind::Lorenz: return lorenz_spec();
    case SystemKind::Chen: return chen_spec();
    case SystemKind::Sdsp: return sdsp_spec();
  }
  throw ContractError("unknown system kind");
}

nlohmann::json to_json(const SystemSpec& spec) {
  nlohmann::json j;
  j["kind"] = to_string(spec.kind);
  j["state_dim"] = spec.state_dim;
  j["step_size"] = spec.step_size;
  j["burn_in"] = spec.burn_in;
  nlohmann::json q = nlohmann::json::array();
  for (Eigen::Index r = 0; r < spec.process_noise_cov.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < spec.process_noise_cov.cols(); ++c) {
      row.push_back(spec.process_noise_cov(r, c));
    }
    q.push_back(row);
  }
  j["process_noise_cov"] = q;
  j["physical_params"] = spec.physical_params;
  return j;
}

SystemSpec system_spec_from_json(const nlohmann::json& j) {
  SystemSpec s;
  s.kind = system_kind_from_string(j.at("kind").get<std::string>());
  s.state_dim = j.at("state_dim").get<int>();
  s.step_size = j.at("step_size").get<double>();
  s.burn_in = j.at("burn_in").get<int>();
  const auto& q = j.at("process_noise_cov");
  s.process_noise_cov.resize(static_cast<Eigen::Index>(q.size()),
                             q.empty() ? 0 : static_cast<Eigen::Index>(q[0].size()));
  for (std::size_t r = 0; r < q.size(); ++r) {
    for (std::size_t c = 0; c < q[r].size(); ++c) {
      s.process_noise_cov(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          q[r][c].get<double>();
    }
  }
  s.physical_params = j.at("physical_params").get<std::map<std::string, double>>();
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Lorenz / Chen

BilinearDrift BilinearDrift::from_spec(const SystemSpec& spec) {
  Mat a0(3, 3);
  Mat b = Mat::Zero(3, 3);
  b(1, 2) = -1.0;
  b(2, 1) = 1.0;
  if (spec.kind == SystemKind::Lorenz) {
    const double sigma = spec.param("sigma");
    const double rho = spec.param("rho");
    const double beta = spec.param("beta");
    a0 << -sigma, sigma, 0.0,
          rho, -1.0, 0.0,
          0.0, 0.0, -beta;
  } else if (spec.kind == SystemKind::Chen) {
    const double a = spec.param("a");
    const double bb = spec.param("b");
    const double c = spec.param("c");
    a0 << -a, a, 0.0,
          c - a, c, 0.0,
          0.0, 0.0, -bb;
  } else {
    throw ContractError("bilinear drift is defined for Lorenz and Chen only");
  }
  const auto it = spec.physical_params.find("substeps");
  const int substeps = it == spec.physical_params.end() ? 1 : static_cast<int>(it->second);
  require(substeps >= 1, "substeps must be at least 1");
  return BilinearDrift(std::move(a0), std::move(b), spec.step_size, substeps);
}

Mat BilinearDrift::coefficient_matrix(const Vec& x) const {
  require(x.size() == 3, "bilinear drift expects a 3-vector");
  return a0_ + x(0) * b_;
}

Mat BilinearDrift::transition_matrix(const Vec& x) const {
  const Mat Adt = coefficient_matrix(x) * substep_dt();
  Mat phi = Mat::Identity(3, 3);
  Mat term = Mat::Identity(3, 3);
  for (int k = 1; k <= kTaylorOrder; ++k) {
    term = term * Adt / static_cast<double>(k);
    phi += term;
  }
  return phi;
}

Vec BilinearDrift::substep(const Vec& x) const { return transition_matrix(x) * x; }

Vec BilinearDrift::step(const Vec& x) const {
  Vec out = x;
  for (int k = 0; k < substeps_; ++k) out = substep(out);
  return out;
}

Mat BilinearDrift::step_jacobian(const Vec& x) const {
  Vec at = x;
  Mat J = Mat::Identity(3, 3);
  for (int k = 0; k < substeps_; ++k) {
    J = substep_jacobian(at) * J;
    at = substep(at);
  }
  return J;
}

Mat BilinearDrift::substep_jacobian(const Vec& x) const {
  // d/dx1 of A^k = sum_{i<k} A^i B A^{k-1-i}
  const Mat A = coefficient_matrix(x);
  std::vector<Mat> powers{Mat::Identity(3, 3)};
  for (int k = 1; k <= kTaylorOrder; ++k) powers.push_back(powers.back() * A);
  Mat dphi = Mat::Zero(3, 3);
  double coeff = 1.0;
  for (int k = 1; k <= kTaylorOrder; ++k) {
    coeff *= substep_dt() / static_cast<double>(k);
    Mat dak = Mat::Zero(3, 3);
    for (int i = 0; i < k; ++i) dak += powers[i] * b_ * powers[k - 1 - i];
    dphi += coeff * dak;
  }
  Mat J = transition_matrix(x);
  J.col(0) += dphi * x;
  return J;
}

Sequence simulate_lorenz(const Vec& x0, int T, const SystemSpec& spec, Rng& rng) {
  require(spec.kind == SystemKind::Lorenz, "simulate_lorenz needs a Lorenz spec");
  return simulate_bilinear(x0, T, spec, rng);
}

Sequence simulate_chen(const Vec& x0, int T, const SystemSpec& spec, Rng& rng) {
  require(spec.kind == SystemKind::Chen, "simulate_chen needs a Chen spec");
  return simulate_bilinear(x0, T, spec, rng);
}

// ---------------------------------------------------------------------------
// Double spring pendulum
//
// Ball 1 hangs from the origin on spring 1, ball 2 hangs from ball 1 on
// spring 2. With u_i = (sin th_i, -cos th_i) and n_i = (cos th_i, sin th_i):
//   r1 = L1 u1,  r2 = r1 + L2 u2
//   m1 r1'' = -F1 u1 + F2 u2 + m1 g - c r1'
//   m2 r2'' = -F2 u2 + m2 g - c r2'
// with spring tensions F_i = k_i (L_i - l_i). Projecting the ball accelerations
// on (u_i, n_i) gives the generalized accelerations.

namespace {

struct PendulumGeometry {
  Eigen::Vector2d u1, n1, u2, n2, v1, v2;
};

PendulumGeometry geometry(const PendulumState& s) {
  PendulumGeometry g;
  g.u1 = {std::sin(s(0)), -std::cos(s(0))};
  g.n1 = {std::cos(s(0)), std::sin(s(0))};
  g.u2 = {std::sin(s(1)), -std::cos(s(1))};
  g.n2 = {std::cos(s(1)), std::sin(s(1))};
  g.v1 = s(6) * g.u1 + s(4) * s(2) * g.n1;
  g.v2 = g.v1 + s(7) * g.u2 + s(5) * s(3) * g.n2;
  return g;
}

}  // namespace

PendulumState sdsp_derivative(const PendulumState& s, const SystemSpec& spec) {
  const double m1 = spec.param("m1"), m2 = spec.param("m2");
  const double k1 = spec.param("k1"), k2 = spec.param("k2");
  const double l1 = spec.param("l1"), l2 = spec.param("l2");
  const double c = spec.param("damping");
  const Eigen::Vector2d gravity(0.0, -spec.param("g"));
  const auto geo = geometry(s);
  const double L1 = s(4), L2 = s(5);
  const double F1 = k1 * (L1 - l1);
  const double F2 = k2 * (L2 - l2);

  const Eigen::Vector2d acc1 = (-F1 * geo.u1 + F2 * geo.u2 - c * geo.v1) / m1 + gravity;
  const Eigen::Vector2d acc2 = (-F2 * geo.u2 - c * geo.v2) / m2 + gravity;
  const Eigen::Vector2d rel = acc2 - acc1;

  PendulumState d;
  d(0) = s(2);
  d(1) = s(3);
  d(2) = (acc1.dot(geo.n1) - 2.0 * s(6) * s(2)) / L1;
  d(3) = (rel.dot(geo.n2) - 2.0 * s(7) * s(3)) / L2;
  d(4) = s(6);
  d(5) = s(7);
  d(6) = acc1.dot(geo.u1) + L1 * s(2) * s(2);
  d(7) = rel.dot(geo.u2) + L2 * s(3) * s(3);
  return d;
}

PendulumState sdsp_rk4_step(const PendulumState& s, double dt, const SystemSpec& spec) {
  const PendulumState k1 = sdsp_derivative(s, spec);
  const PendulumState k2 = sdsp_derivative(s + 0.5 * dt * k1, spec);
  const PendulumState k3 = sdsp_derivative(s + 0.5 * dt * k2, spec);
  const PendulumState k4 = sdsp_derivative(s + dt * k3, spec);
  return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Vec sdsp_observe(const PendulumState& s) {
  const Eigen::Vector2d r1 = s(4) * Eigen::Vector2d(std::sin(s(0)), -std::cos(s(0)));
  const Eigen::Vector2d r2 = r1 + s(5) * Eigen::Vector2d(std::sin(s(1)), -std::cos(s(1)));
  Vec out(4);
  out << r1, r2;
  return out;
}

double sdsp_energy(const PendulumState& s, const SystemSpec& spec) {
  const double m1 = spec.param("m1"), m2 = spec.param("m2");
  const double k1 = spec.param("k1"), k2 = spec.param("k2");
  const double l1 = spec.param("l1"), l2 = spec.param("l2");
  const double g = spec.param("g");
  const auto geo = geometry(s);
  const Vec pos = sdsp_observe(s);
  const double kinetic = 0.5 * m1 * geo.v1.squaredNorm() + 0.5 * m2 * geo.v2.squaredNorm();
  const double gravity = m1 * g * pos(1) + m2 * g * pos(3);
  const double springs = 0.5 * k1 * (s(4) - l1) * (s(4) - l1) + 0.5 * k2 * (s(5) - l2) * (s(5) - l2);
  return kinetic + gravity + springs;
}

PendulumState sdsp_rest_state(const SystemSpec& spec) {
  const double m1 = spec.param("m1"), m2 = spec.param("m2"), g = spec.param("g");
  PendulumState s = PendulumState::Zero();
  s(4) = spec.param("l1") + (m1 + m2) * g / spec.param("k1");
  s(5) = spec.param("l2") + m2 * g / spec.param("k2");
  return s;
}

Sequence simulate_sdsp_from(const PendulumState& initial, int T, const SystemSpec& spec,
                            Rng& rng) {
  require(spec.kind == SystemKind::Sdsp, "simulate_sdsp needs an SDSP spec");
  require(T >= 1, "sequence length must be at least 1");
  const int substeps = static_cast<int>(spec.param("substeps"));
  require(substeps >= 1, "substeps must be at least 1");
  const Mat noise = sampling_factor(spec.process_noise_cov);
  const bool noisy = !noise.isZero(0.0);
  PendulumState s = initial;
  Sequence out(T, 4);
  int step = 0;
  for (int k = 0; k < spec.burn_in * substeps; ++k, ++step) {
    s = sdsp_rk4_step(s, spec.step_size, spec);
    if (noisy) s += sample_gaussian(noise, rng);
    check_finite(s, step);
  }
  for (int t = 0; t < T; ++t) {
    out.row(t) = sdsp_observe(s).transpose();
    if (t + 1 == T) break;
    for (int k = 0; k < substeps; ++k, ++step) {
      s = sdsp_rk4_step(s, spec.step_size, spec);
      if (noisy) s += sample_gaussian(noise, rng);
      check_finite(s, step);
    }
  }
  return out;
}

Sequence simulate_sdsp(int T, const SystemSpec& spec, Rng& rng) {
  const double amax = spec.param("initial_angle_max");
  std::uniform_real_distribution<double> angle(-amax, amax);
  PendulumState s = sdsp_rest_state(spec);
  s(0) = angle(rng);
  s(1) = angle(rng);
  return simulate_sdsp_from(s, T, spec, rng);
}

// ---------------------------------------------------------------------------
// SMNR

double centered_signal_energy(const Sequence& states, const Mat& H) {
  require(states.rows() >= 1, "empty sequence");
  require(H.cols() == states.cols(), "H does not match state dimension");
  const Mat hx = states * H.transpose();
  const Eigen::RowVectorXd mean = hx.colwise().mean();
  return (hx.rowwise() - mean).squaredNorm() / static_cast<double>(states.rows());
}

namespace {

double mean_log_energy_db(const std::vector<Sequence>& states, const Mat& H) {
  require(!states.empty(), "SMNR needs at least one sequence");
  double acc = 0.0;
  for (const auto& s : states) {
    const double e = centered_signal_energy(s, H);
    if (!(e > 0.0)) throw NumericalError("signal has zero centered energy; SMNR undefined");
    acc += 10.0 * std::log10(e);
  }
  return acc / static_cast<double>(states.size());
}

}  // namespace

double smnr_db(const std::vector<Sequence>& states, const Mat& H, const Mat& Cw) {
  return mean_log_energy_db(states, H) - 10.0 * std::log10(Cw.trace());
}

Mat calibrate_noise(const std::vector<Sequence>& states, const Mat& H, double target_smnr_db) {
  const double trace = std::pow(10.0, (mean_log_energy_db(states, H) - target_smnr_db) / 10.0);
  const auto n = H.rows();
  return (trace / static_cast<double>(n)) * Mat::Identity(n, n);
}

}  // namespace dns
