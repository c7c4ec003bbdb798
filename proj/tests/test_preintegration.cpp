#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vislam/ekf.hpp"
#include "vislam/preintegration.hpp"

using namespace vislam;

namespace {

std::vector<ImuSample> random_stream(std::mt19937_64& rng, int n, double dt = 0.005) {
  std::vector<ImuSample> out;
  for (int k = 0; k < n; ++k) {
    ImuSample s = oracle::random_sample(rng, dt);
    s.t = k * dt;
    out.push_back(s);
  }
  return out;
}

struct Direct {
  Mat3 R = Mat3::Identity();
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
};

// Sequential integration in frame i, gravity removed.
Direct integrate_directly(const std::vector<ImuSample>& s, const BiasPair& b) {
  Direct d;
  for (const auto& x : s) {
    const Vec3 a = d.R * (x.acc - b.ba);
    d.p = d.p + d.v * x.dt + 0.5 * a * x.dt * x.dt;
    d.v = d.v + a * x.dt;
    d.R = d.R * oracle::series_exp(oracle::skew((x.gyro - b.bg) * x.dt));
  }
  return d;
}

PreintegratedDelta run(const std::vector<ImuSample>& s, const BiasPair& b, const NoiseModel& nm) {
  PreintegratedDelta d(b);
  for (const auto& x : s) integrate(d, x, nm);
  return d;
}

}  // namespace

TEST(Preintegration, EmptyDelta) {
  const PreintegratedDelta d;
  EXPECT_EQ(d.dR, Mat3::Identity());
  EXPECT_EQ(d.dp, Vec3::Zero());
  EXPECT_EQ(d.dv, Vec3::Zero());
  EXPECT_EQ(d.cov, Mat9::Zero());
}

TEST(Preintegration, ConstantRateRotation) {
  std::vector<ImuSample> s(200);
  for (int k = 0; k < 200; ++k) s[k] = {k * 0.005, Vec3::Zero(), Vec3(0, 0, 1), 0.005};
  const PreintegratedDelta d = run(s, {}, NoiseModel{});
  EXPECT_LT((d.dR - exp_so3(Vec3(0, 0, 1))).norm(), 1e-9);
  EXPECT_NEAR(d.dt, 1.0, 1e-12);
  EXPECT_EQ(d.samples, 200);
}

TEST(Preintegration, MatchesDirectIntegration) {
  std::mt19937_64 rng(31);
  NoiseModel nm;
  nm.acc_psd.setZero();
  nm.gyro_psd.setZero();
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_stream(rng, 400);
    const BiasPair b{oracle::random_vec(rng, 0.01), oracle::random_vec(rng, 0.1)};
    const PreintegratedDelta d = run(s, b, nm);
    const Direct o = integrate_directly(s, b);
    EXPECT_LT((d.dR - o.R).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((d.dp - o.p).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((d.dv - o.v).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Preintegration, CovarianceGrowsAndStaysPsd) {
  std::mt19937_64 rng(32);
  const NoiseModel nm;
  PreintegratedDelta d;
  double last = 0.0;
  for (const auto& s : random_stream(rng, 300)) {
    integrate(d, s, nm);
    EXPECT_GE(d.cov.trace(), last);
    last = d.cov.trace();
  }
  EXPECT_LT((d.cov - d.cov.transpose()).norm(), 1e-15 * d.cov.norm() + 1e-18);
  Eigen::SelfAdjointEigenSolver<Mat9> es(d.cov);
  EXPECT_GT(es.eigenvalues().minCoeff(), -1e-15);
}

TEST(Preintegration, BiasCorrectionIsSecondOrder) {
  std::mt19937_64 rng(33);
  const NoiseModel nm;
  const auto s = random_stream(rng, 200);
  const BiasPair b0{Vec3(0.001, -0.002, 0.0), Vec3(0.02, 0.0, -0.01)};
  const PreintegratedDelta d = run(s, b0, nm);

  const CorrectedDelta same = correct_for_bias(d, b0);
  EXPECT_EQ(same.dR, d.dR);
  EXPECT_EQ(same.dp, d.dp);
  EXPECT_EQ(same.dv, d.dv);

  auto discrepancy = [&](const BiasPair& db) {
    const BiasPair b{b0.bg + db.bg, b0.ba + db.ba};
    const CorrectedDelta c = correct_for_bias(d, b);
    const PreintegratedDelta r = run(s, b, nm);
    return std::max({boxminus(c.dR, r.dR).norm(), (c.dp - r.dp).norm(), (c.dv - r.dv).norm()});
  };
  for (const Vec3 dir : {Vec3(1, 0, 0), Vec3(0.3, -0.5, 0.8)}) {
    for (int which = 0; which < 2; ++which) {
      std::vector<double> e;
      for (double h : {1e-2, 5e-3, 2.5e-3}) {
        BiasPair db;
        (which == 0 ? db.bg : db.ba) = dir * h;
        e.push_back(discrepancy(db));
      }
      if (which == 1 && e[0] < 1e-13) continue;  // accel correction is exact (linear)
      EXPECT_NEAR(e[0] / e[1], 4.0, 0.5) << which;
      EXPECT_NEAR(e[1] / e[2], 4.0, 0.5) << which;
    }
  }

  BiasPair acc_only = b0;
  acc_only.ba += Vec3(0.01, 0.0, 0.0);
  EXPECT_EQ(correct_for_bias(d, acc_only).dR, d.dR);
}

TEST(Preintegration, ResidualZeroOnConsistentStates) {
  std::mt19937_64 rng(34);
  NoiseModel nm;
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_stream(rng, 100);
    ImuState xi = oracle::random_state(rng);
    const PreintegratedDelta d = run(s, {xi.bg, xi.ba}, nm);
    ImuState xj = xi;
    const double T = d.dt;
    xj.R = xi.R * d.dR;
    xj.p = xi.p + xi.v * T + 0.5 * nm.gravity * T * T + xi.R * d.dp;
    xj.v = xi.v + nm.gravity * T + xi.R * d.dv;
    EXPECT_LT(preintegration_residual(d, xi, xj, nm.gravity).norm(), 1e-9);

    const Vec3 delta(0.1, -0.2, 0.05);
    ImuState xp = xj;
    xp.p += delta;
    const Vec9 r = preintegration_residual(d, xi, xp, nm.gravity);
    EXPECT_LT((r.segment<3>(3) - xi.R.transpose() * delta).norm(), 1e-9);

    ImuState xr = xj;
    xr.R = boxplus(xj.R, delta);
    const Vec9 rr = preintegration_residual(d, xi, xr, nm.gravity);
    EXPECT_LT((rr.head<3>() - delta).norm(), 1e-9);
  }
}

TEST(Preintegration, ResidualJacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(35);
  NoiseModel nm;
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_stream(rng, 60);
    ImuState xi = oracle::random_state(rng);
    const PreintegratedDelta d = run(s, {xi.bg + oracle::random_vec(rng, 1e-3),
                                         xi.ba + oracle::random_vec(rng, 1e-2)}, nm);
    ImuState xj = oracle::random_state(rng);
    const PreintegrationJacobians J = residual_jacobians(d, xi, xj, nm.gravity);
    const auto fd_i = oracle::central_diff(
        [&](const Eigen::VectorXd& e) -> Eigen::VectorXd {
          return preintegration_residual(d, apply_correction(xi, Vec15(e)), xj, nm.gravity);
        },
        15);
    const auto fd_j = oracle::central_diff(
        [&](const Eigen::VectorXd& e) -> Eigen::VectorXd {
          Vec15 full = Vec15::Zero();
          full.head<9>() = e;
          return preintegration_residual(d, xi, apply_correction(xj, full), nm.gravity);
        },
        9);
    EXPECT_LT(oracle::rel_error(J.J_i, fd_i), 1e-5) << trial;
    EXPECT_LT(oracle::rel_error(J.J_j, fd_j), 1e-5) << trial;
  }
}

TEST(Preintegration, BiasResidual) {
  const BiasPair a{Vec3(1, 2, 3), Vec3(4, 5, 6)};
  BiasPair b = a;
  EXPECT_EQ(bias_residual(a, b), (Eigen::Matrix<double, 6, 1>::Zero()));
  b.bg.x() += 1.0;
  EXPECT_EQ(bias_residual(a, b).head<3>(), Vec3(1, 0, 0));
  EXPECT_EQ(bias_residual(a, b), -bias_residual(b, a));
}

TEST(Preintegration, SplitSampleInterpolates) {
  const ImuSample s{0.0, Vec3(1, 0, 0), Vec3(0, 0, 1), 0.01};
  const ImuSample next{0.01, Vec3(3, 0, 0), Vec3(0, 0, 3), 0.01};
  const auto [a, b] = split_sample(s, next, 0.004);
  EXPECT_NEAR(a.dt, 0.004, 1e-15);
  EXPECT_NEAR(b.dt, 0.006, 1e-15);
  EXPECT_NEAR(b.t, 0.004, 1e-15);
  EXPECT_NEAR(b.acc.x(), 1.8, 1e-12);
  EXPECT_NEAR(b.gyro.z(), 1.8, 1e-12);
}

TEST(Preintegration, ClippedIntervalCoversExactDuration) {
  std::mt19937_64 rng(36);
  const auto s = random_stream(rng, 100);
  const PreintegratedDelta d = preintegrate(s, 0.0123, 0.4321, {}, NoiseModel{});
  EXPECT_NEAR(d.dt, 0.4321 - 0.0123, 1e-12);
}
