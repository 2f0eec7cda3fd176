#include <cmath>
#include <limits>

#include <gtest/gtest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include "dns/dataset.hpp"
#include "dns/errors.hpp"
#include "dns/systems.hpp"
#include "test_support.hpp"

using namespace dns;

namespace {

SystemSpec noiseless(SystemSpec s) {
  s.process_noise_cov.setZero();
  return s;
}

Mat taylor_oracle(const Mat& A, double h, int order) {
  Mat phi = Mat::Zero(A.rows(), A.cols());
  double fact = 1.0;
  for (int k = 0; k <= order; ++k) {
    if (k > 0) fact *= k;
    Mat power = Mat::Identity(A.rows(), A.cols());
    for (int i = 0; i < k; ++i) power = power * (A * h);
    phi += power / fact;
  }
  return phi;
}

}  // namespace

TEST(Lorenz, OriginIsAFixedPoint) {
  Rng rng(1);
  const auto s = simulate_lorenz(Vec::Zero(3), 50, noiseless(lorenz_spec()), rng);
  EXPECT_EQ(s.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Chen, OriginIsAFixedPoint) {
  Rng rng(1);
  const auto s = simulate_chen(Vec::Zero(3), 50, noiseless(chen_spec()), rng);
  EXPECT_EQ(s.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Lorenz, SameSeedIsBitIdentical) {
  Rng a(42), b(42);
  const Vec x0 = Vec::Ones(3);
  EXPECT_TRUE(simulate_lorenz(x0, 200, lorenz_spec(), a) == simulate_lorenz(x0, 200, lorenz_spec(), b));
}

TEST(Chen, SameSeedIsBitIdentical) {
  Rng a(9), b(9);
  const Vec x0 = Vec::Ones(3);
  EXPECT_TRUE(simulate_chen(x0, 200, chen_spec(), a) == simulate_chen(x0, 200, chen_spec(), b));
}

TEST(Lorenz, NoiselessTrajectoryStaysOnAttractor) {
  Rng rng(0);
  const auto s = simulate_lorenz(Vec::Ones(3), 2000, noiseless(lorenz_spec()), rng);
  EXPECT_LT(s.cwiseAbs().maxCoeff(), 60.0);
  EXPECT_GT(s.col(2).maxCoeff(), 30.0);  // actually left the origin's neighbourhood
}

TEST(Chen, NoiselessTrajectoryStaysOnAttractor) {
  Rng rng(0);
  const auto s = simulate_chen(Vec::Ones(3), 2000, noiseless(chen_spec()), rng);
  EXPECT_LT(s.cwiseAbs().maxCoeff(), 80.0);
  EXPECT_GT(s.col(2).maxCoeff(), 20.0);
}

TEST(Chen, NoisyTrajectoriesStayBounded) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto s = simulate_chen(Vec::Ones(3), 1000, chen_spec(), rng);
    EXPECT_LT(s.cwiseAbs().maxCoeff(), 80.0) << "seed " << seed;
  }
}

TEST(BilinearDrift, TransitionMatrixIsTheOrderFourTaylorPolynomial) {
  Rng rng(5);
  for (auto spec : {lorenz_spec(), chen_spec()}) {
    const auto drift = BilinearDrift::from_spec(spec);
    for (int trial = 0; trial < 5; ++trial) {
      const Vec x = dns::testing::random_vector(rng, 3, 10.0);
      const Mat A = drift.coefficient_matrix(x);
      const Mat got = drift.transition_matrix(x);
      EXPECT_LT((got - taylor_oracle(A, drift.substep_dt(), 4)).cwiseAbs().maxCoeff(), 1e-12);
      // Truncation error against the true exponential is fifth order in h.
      const Mat exact = (A * drift.substep_dt()).exp();
      EXPECT_LT((got - exact).cwiseAbs().maxCoeff(), 0.05);
    }
  }
}

TEST(BilinearDrift, LorenzCoefficientMatrixReproducesTheVectorField) {
  const auto drift = BilinearDrift::from_spec(lorenz_spec());
  const Vec x{{1.5, -2.0, 20.0}};
  const Vec f = drift.coefficient_matrix(x) * x;
  EXPECT_NEAR(f(0), 10.0 * (x(1) - x(0)), 1e-12);
  EXPECT_NEAR(f(1), x(0) * (28.0 - x(2)) - x(1), 1e-12);
  EXPECT_NEAR(f(2), x(0) * x(1) - 8.0 / 3.0 * x(2), 1e-12);
}

TEST(BilinearDrift, ChenCoefficientMatrixReproducesTheVectorField) {
  const auto drift = BilinearDrift::from_spec(chen_spec());
  const Vec x{{1.5, -2.0, 20.0}};
  const Vec f = drift.coefficient_matrix(x) * x;
  EXPECT_NEAR(f(0), 35.0 * (x(1) - x(0)), 1e-12);
  EXPECT_NEAR(f(1), (28.0 - 35.0) * x(0) - x(0) * x(2) + 28.0 * x(1), 1e-12);
  EXPECT_NEAR(f(2), x(0) * x(1) - 3.0 * x(2), 1e-12);
}

TEST(BilinearDrift, JacobianMatchesFiniteDifferences) {
  Rng rng(8);
  for (auto spec : {lorenz_spec(), chen_spec()}) {
    const auto drift = BilinearDrift::from_spec(spec);
    for (int trial = 0; trial < 10; ++trial) {
      const Vec x = dns::testing::random_vector(rng, 3, 10.0);
      const Mat J = drift.step_jacobian(x);
      for (int j = 0; j < 3; ++j) {
        const double h = 1e-5 * std::max(1.0, std::abs(x(j)));
        Vec xp = x, xm = x;
        xp(j) += h;
        xm(j) -= h;
        const Vec fd = (drift.step(xp) - drift.step(xm)) / (2.0 * h);
        for (int i = 0; i < 3; ++i) {
          const double scale = std::max({std::abs(fd(i)), std::abs(J(i, j)), 1e-3});
          EXPECT_LT(std::abs(fd(i) - J(i, j)) / scale, 1e-5) << to_string(spec.kind) << " (" << i << "," << j << ")";
        }
      }
    }
  }
}

TEST(SystemSpec, JsonRoundTrip) {
  for (auto kind : {SystemKind::Lorenz, SystemKind::Chen, SystemKind::Sdsp}) {
    const auto spec = default_spec(kind);
    const auto back = system_spec_from_json(to_json(spec));
    EXPECT_EQ(back.kind, spec.kind);
    EXPECT_EQ(back.step_size, spec.step_size);
    EXPECT_EQ(back.physical_params, spec.physical_params);
    EXPECT_TRUE(back.process_noise_cov == spec.process_noise_cov);
  }
}

TEST(SystemSpec, RejectsUnknownSystemName) {
  EXPECT_THROW(system_kind_from_string("rossler"), ContractError);
}

TEST(Sdsp, RestStateIsStationary) {
  const auto spec = noiseless(sdsp_spec());
  Rng rng(0);
  const auto rest = sdsp_rest_state(spec);
  const auto s = simulate_sdsp_from(rest, 200, spec, rng);
  for (Eigen::Index t = 0; t < s.rows(); ++t) {
    EXPECT_LT((s.row(t) - s.row(0)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Sdsp, RestLengthsCarryTheStaticLoad) {
  const auto spec = sdsp_spec();
  const auto rest = sdsp_rest_state(spec);
  EXPECT_NEAR(rest(4), 1.0 + 2.0 * 9.81 / 25.0, 1e-14);
  EXPECT_NEAR(rest(5), 1.0 + 9.81 / 25.0, 1e-14);
}

TEST(Sdsp, HangingGeometry) {
  PendulumState s = PendulumState::Zero();
  s(4) = 1.3;
  s(5) = 0.7;
  const Vec pos = sdsp_observe(s);
  EXPECT_DOUBLE_EQ(pos(0), 0.0);
  EXPECT_DOUBLE_EQ(pos(1), -1.3);
  EXPECT_DOUBLE_EQ(pos(2), 0.0);
  EXPECT_DOUBLE_EQ(pos(3), -2.0);
}

TEST(Sdsp, TiltedGeometry) {
  PendulumState s = PendulumState::Zero();
  s(0) = 0.4;
  s(1) = -0.9;
  s(4) = 1.2;
  s(5) = 1.1;
  const Vec pos = sdsp_observe(s);
  const double x1 = 1.2 * std::sin(0.4), y1 = -1.2 * std::cos(0.4);
  EXPECT_NEAR(pos(0), x1, 1e-15);
  EXPECT_NEAR(pos(1), y1, 1e-15);
  EXPECT_NEAR(pos(2), x1 + 1.1 * std::sin(-0.9), 1e-15);
  EXPECT_NEAR(pos(3), y1 - 1.1 * std::cos(-0.9), 1e-15);
}

TEST(Sdsp, UndampedEnergyIsConserved) {
  auto spec = noiseless(sdsp_spec());
  spec.physical_params["damping"] = 0.0;
  PendulumState s = sdsp_rest_state(spec);
  s(0) = 0.4;
  s(1) = -0.3;
  s(4) += 0.1;
  const double e0 = sdsp_energy(s, spec);
  double worst = 0.0;
  for (int k = 0; k < 10000; ++k) {
    s = sdsp_rk4_step(s, 1e-4, spec);
    worst = std::max(worst, std::abs(sdsp_energy(s, spec) - e0));
  }
  EXPECT_LT(worst / std::abs(e0), 1e-4);
}

TEST(Sdsp, DampingDissipatesEnergy) {
  auto spec = noiseless(sdsp_spec());
  PendulumState s = sdsp_rest_state(spec);
  s(0) = 0.4;
  const double e0 = sdsp_energy(s, spec);
  for (int k = 0; k < 2000; ++k) s = sdsp_rk4_step(s, 0.01, spec);
  EXPECT_LT(sdsp_energy(s, spec), e0);
}

TEST(Sdsp, Rk4ErrorShrinksAtLeastEightfoldWhenStepHalves) {
  const auto spec = noiseless(sdsp_spec());
  PendulumState init = sdsp_rest_state(spec);
  init(0) = 0.45;
  init(1) = -0.35;
  auto integrate = [&](double dt) {
    PendulumState s = init;
    const int n = static_cast<int>(std::lround(0.4 / dt));
    for (int k = 0; k < n; ++k) s = sdsp_rk4_step(s, dt, spec);
    return s;
  };
  const auto a = integrate(0.02), b = integrate(0.01), c = integrate(0.005);
  const double d1 = (a - b).norm(), d2 = (b - c).norm();
  EXPECT_GT(d1 / d2, 8.0) << d1 << " " << d2;
}

TEST(Sdsp, ObservesFourPositions) {
  Rng rng(3);
  const auto s = simulate_sdsp(50, sdsp_spec(), rng);
  EXPECT_EQ(s.rows(), 50);
  EXPECT_EQ(s.cols(), 4);
  EXPECT_TRUE(s.allFinite());
}

TEST(Simulation, RejectsNonPositiveLength) {
  Rng rng(0);
  EXPECT_THROW(simulate_lorenz(Vec::Ones(3), 0, lorenz_spec(), rng), ContractError);
  EXPECT_THROW(simulate_sdsp(0, sdsp_spec(), rng), ContractError);
}

TEST(Simulation, OverflowIsReportedAsDivergence) {
  auto spec = lorenz_spec();
  spec.step_size = 5.0;  // far outside the Taylor polynomial's useful range
  Rng rng(0);
  EXPECT_THROW(simulate_lorenz(Vec::Ones(3), 100, spec, rng), DivergenceError);
}

TEST(Simulation, SequencesUseIndependentSubstreams) {
  // Sequence i depends only on (seed, i): a longer batch extends a shorter one.
  const auto three = simulate_states(lorenz_spec(), 3, 40, 17);
  const auto five = simulate_states(lorenz_spec(), 5, 40, 17);
  for (int i = 0; i < 3; ++i) EXPECT_TRUE(three[i] == five[i]);
  EXPECT_FALSE(five[0] == five[1]);
}
