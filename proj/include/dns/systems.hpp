#pragma once

// Stochastic test systems: Lorenz-63 and Chen (exact-hold discretization of the
// bilinear drift) and a planar double spring pendulum observed through the two
// ball positions.

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dns/gaussian.hpp"
#include "dns/rng.hpp"

namespace dns {

/// One trajectory: T rows, one column per coordinate.
using Sequence = Mat;

enum class SystemKind { Lorenz, Chen, Sdsp };

std::string to_string(SystemKind kind);
SystemKind system_kind_from_string(const std::string& name);

struct SystemSpec {
  SystemKind kind = SystemKind::Lorenz;
  int state_dim = 3;
  double step_size = 0.02;
  /// Lorenz/Chen: additive noise on the state. SDSP: noise on the 8 internal
  /// variables per internal step.
  Mat process_noise_cov;
  int burn_in = 100;
  std::map<std::string, double> physical_params;

  double param(const std::string& name) const;
  void validate() const;
};

SystemSpec lorenz_spec();
SystemSpec chen_spec();
SystemSpec sdsp_spec();
SystemSpec default_spec(SystemKind kind);

nlohmann::json to_json(const SystemSpec& spec);
SystemSpec system_spec_from_json(const nlohmann::json& j);

/// Bilinear drift dx/dt = A(x) x with A(x) = A0 + x1 * B (Lorenz and Chen).
/// One substep is x' = Phi(x) x where Phi is the order-4 Taylor polynomial of
/// expm(A(x) h), h = dt / substeps. A step chains `substeps` substeps.
class BilinearDrift {
 public:
  static BilinearDrift from_spec(const SystemSpec& spec);

  Mat coefficient_matrix(const Vec& x) const;
  /// Phi(x) for one substep.
  Mat transition_matrix(const Vec& x) const;
  Vec substep(const Vec& x) const;
  Mat substep_jacobian(const Vec& x) const;
  Vec step(const Vec& x) const;
  /// d step / dx, analytic.
  Mat step_jacobian(const Vec& x) const;

  double dt() const { return dt_; }
  int substeps() const { return substeps_; }
  double substep_dt() const { return dt_ / substeps_; }

 private:
  BilinearDrift(Mat a0, Mat b, double dt, int substeps)
      : a0_(std::move(a0)), b_(std::move(b)), dt_(dt), substeps_(substeps) {}
  static constexpr int kTaylorOrder = 4;
  Mat a0_;
  Mat b_;
  double dt_;
  int substeps_;
};

Sequence simulate_lorenz(const Vec& x0, int T, const SystemSpec& spec, Rng& rng);
Sequence simulate_chen(const Vec& x0, int T, const SystemSpec& spec, Rng& rng);

/// Internal pendulum state: theta1, theta2, omega1, omega2, L1, L2, L1dot, L2dot.
using PendulumState = Eigen::Matrix<double, 8, 1>;

PendulumState sdsp_derivative(const PendulumState& s, const SystemSpec& spec);
PendulumState sdsp_rk4_step(const PendulumState& s, double dt, const SystemSpec& spec);
/// Ball positions (x1, y1, x2, y2) with the pivot at the origin.
Vec sdsp_observe(const PendulumState& s);
/// Kinetic + gravitational + spring energy.
double sdsp_energy(const PendulumState& s, const SystemSpec& spec);
/// theta = 0, zero velocities, springs stretched to carry the static load.
PendulumState sdsp_rest_state(const SystemSpec& spec);

/// Records T observations starting at `initial`, advancing `substeps`
/// internal RK4 steps (with noise) between records.
Sequence simulate_sdsp_from(const PendulumState& initial, int T, const SystemSpec& spec,
                            Rng& rng);
/// Draws the initial angles, then simulate_sdsp_from.
Sequence simulate_sdsp(int T, const SystemSpec& spec, Rng& rng);

/// Per-sequence centered measurement-space energy averaged over time,
/// (1/T) sum_t ||H x_t - mean_t(H x)||^2.
double centered_signal_energy(const Sequence& states, const Mat& H);

/// Empirical SMNR in dB, averaged over sequences.
double smnr_db(const std::vector<Sequence>& states, const Mat& H, const Mat& Cw);

/// sigma_w^2 * I such that smnr_db(states, H, result) equals the target.
Mat calibrate_noise(const std::vector<Sequence>& states, const Mat& H, double target_smnr_db);

}  // namespace dns
