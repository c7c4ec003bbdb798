#include <cmath>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vislam/feedback.hpp"
#include "window_fixture.hpp"

using namespace vislam;

using fixture::Scene;

namespace {

Eigen::MatrixXd random_spd(std::mt19937_64& rng, int n, double scale) {
  Eigen::MatrixXd A(n, n);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = g(rng);
  return scale * (A * A.transpose() / n + 0.1 * Eigen::MatrixXd::Identity(n, n));
}

FilterBelief random_belief(std::mt19937_64& rng, int m) {
  FilterBelief b;
  b.imu = oracle::random_state(rng);
  for (int i = 0; i < m; ++i) {
    b.landmarks.push_back({oracle::random_vec(rng), 0.3, -0.2, 0.4});
    b.landmark_ids.push_back(i);
  }
  b.P = random_spd(rng, b.dim(), 0.01);
  return b;
}

StateCorrection correction_near(const FilterBelief& b, std::mt19937_64& rng, double cov_scale) {
  StateCorrection c;
  Vec15 e;
  for (int i = 0; i < 5; ++i) e.segment<3>(3 * i) = oracle::random_vec(rng, 0.05);
  c.state = apply_correction(b.imu, e);
  c.cov = random_spd(rng, 15, cov_scale);
  c.ok = true;
  return c;
}

double belief_gap(const FilterBelief& a, const FilterBelief& b) {
  double e = imu_state_error(a.imu, b.imu).lpNorm<Eigen::Infinity>();
  for (std::size_t i = 0; i < a.landmarks.size(); ++i) {
    e = std::max(e, (a.landmarks[i].anchor - b.landmarks[i].anchor).lpNorm<Eigen::Infinity>());
    e = std::max({e, std::abs(a.landmarks[i].theta - b.landmarks[i].theta),
                  std::abs(a.landmarks[i].phi - b.landmarks[i].phi),
                  std::abs(a.landmarks[i].rho - b.landmarks[i].rho)});
  }
  return e;
}

Observations observe(const Scene& s, const ImuState& x, const std::map<int, Vec3>& map) {
  Observations out;
  for (const auto& [id, L] : map) {
    const auto uv = project(map_point_in_camera(L, x, s.ex), s.K);
    if (!uv || !in_image(*uv, s.K)) continue;
    out.push_back({id, *uv, Mat2::Identity()});
  }
  return out;
}

}  // namespace

TEST(Feedback, FuseMatchesDenseKalmanOracle) {
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 50; ++trial) {
    const FilterBelief b0 = random_belief(rng, trial % 4);
    const StateCorrection c = correction_near(b0, rng, 0.02);
    FilterBelief b = b0;
    ASSERT_TRUE(state_correction_fuse(b, c));

    const int n = b0.dim();
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(15, n);
    H.leftCols(15).setIdentity();
    const Eigen::MatrixXd S = H * b0.P * H.transpose() + Eigen::MatrixXd(c.cov);
    const Eigen::MatrixXd K = b0.P * H.transpose() * S.inverse();
    const Eigen::VectorXd dx = K * imu_state_error(c.state, b0.imu);
    FilterBelief expect = b0;
    apply_correction(expect, dx);
    const Eigen::MatrixXd P = (Eigen::MatrixXd::Identity(n, n) - K * H) * b0.P;

    EXPECT_LT(belief_gap(b, expect), 1e-9);
    EXPECT_LT((b.P - P).lpNorm<Eigen::Infinity>(), 1e-9);
  }
}

TEST(Feedback, FuseMatchesScalarKalmanPerComponent) {
  std::mt19937_64 rng(52);
  std::uniform_real_distribution<double> var(1e-4, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    FilterBelief b;
    b.imu = oracle::random_state(rng);
    Vec15 p, y;
    for (int i = 0; i < 15; ++i) p(i) = var(rng), y(i) = var(rng);
    b.P = p.asDiagonal();
    StateCorrection c;
    c.state = b.imu;
    c.state.p += oracle::random_vec(rng);
    c.state.v += oracle::random_vec(rng);
    c.state.ba += oracle::random_vec(rng, 0.1);
    c.state.bg += oracle::random_vec(rng, 0.01);
    c.cov = y.asDiagonal();
    const ImuState x0 = b.imu;
    ASSERT_TRUE(state_correction_fuse(b, c));
    auto scalar = [&](double x, double z, int i) { return x + p(i) / (p(i) + y(i)) * (z - x); };
    for (int k = 0; k < 3; ++k) {
      EXPECT_NEAR(b.imu.p(k), scalar(x0.p(k), c.state.p(k), kP + k), 1e-9);
      EXPECT_NEAR(b.imu.v(k), scalar(x0.v(k), c.state.v(k), kV + k), 1e-9);
      EXPECT_NEAR(b.imu.ba(k), scalar(x0.ba(k), c.state.ba(k), kBa + k), 1e-9);
      EXPECT_NEAR(b.imu.bg(k), scalar(x0.bg(k), c.state.bg(k), kBg + k), 1e-9);
    }
    EXPECT_LT((b.imu.R - x0.R).norm(), 1e-12);
    for (int i = 0; i < 15; ++i) EXPECT_NEAR(b.P(i, i), p(i) * y(i) / (p(i) + y(i)), 1e-9);
  }
}

TEST(Feedback, FuseNeverIncreasesTrace) {
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 200; ++trial) {
    FilterBelief b = random_belief(rng, trial % 3);
    const double before = b.P.trace();
    const double imu_before = b.imu_cov().trace();
    ASSERT_TRUE(state_correction_fuse(b, correction_near(b, rng, std::pow(10.0, trial % 7 - 4))));
    EXPECT_LE(b.P.trace(), before + 1e-15);
    EXPECT_LE(b.imu_cov().trace(), imu_before + 1e-15);
  }
}

TEST(Feedback, UpsilonLimits) {
  std::mt19937_64 rng(54);
  for (int trial = 0; trial < 20; ++trial) {
    const FilterBelief b0 = random_belief(rng, 2);
    StateCorrection c = correction_near(b0, rng, 1.0);

    c.cov = Mat15::Identity() * 1e12;
    FilterBelief loose = b0;
    ASSERT_TRUE(state_correction_fuse(loose, c));
    EXPECT_LT(belief_gap(loose, b0), 1e-6);
    EXPECT_LT((loose.P - b0.P).lpNorm<Eigen::Infinity>(), 1e-6);

    c.cov = Mat15::Identity() * 1e-12;
    FilterBelief tight = b0;
    ASSERT_TRUE(state_correction_fuse(tight, c));
    EXPECT_LT(imu_state_error(c.state, tight.imu).lpNorm<Eigen::Infinity>(), 1e-6);
    EXPECT_LT(tight.imu_cov().lpNorm<Eigen::Infinity>(), 1e-6);
  }
}

TEST(Feedback, InverseDepthPriorHandCase) {
  const Extrinsics ex = SimSpec::default_extrinsics();
  ImuState x;
  const Vec3 L = x.R * (ex.R_BC * Vec3(0, 0, 2) + ex.p_BC) + x.p;
  const InverseDepthPrior p = inverse_depth_prior(L, x, ex, Mat3::Zero(), Mat6::Zero());
  EXPECT_NEAR(p.rho, 0.5, 1e-12);
  EXPECT_EQ(p.variance, 0.0);
  // along the axis only the depth direction matters: |dρ/dz| = 1/4
  const InverseDepthPrior q = inverse_depth_prior(L, x, ex, Mat3::Identity(), Mat6::Zero());
  EXPECT_NEAR(q.variance, 1.0 / 16.0, 1e-12);
}

TEST(Feedback, InverseDepthPriorJacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(55);
  const Extrinsics ex = SimSpec::default_extrinsics();
  for (int trial = 0; trial < 200; ++trial) {
    const ImuState x = oracle::random_state(rng);
    const Vec3 f(0.5 * oracle::random_vec(rng).x(), 0.5 * oracle::random_vec(rng).y(), 3.0);
    const Vec3 L = x.R * (ex.R_BC * f + ex.p_BC) + x.p;
    const InverseDepthPrior p = inverse_depth_prior(L, x, ex, Mat3::Identity(), Mat6::Identity());
    auto rho = [&](const Vec3& l, const ImuState& y) {
      Eigen::VectorXd r(1);
      r(0) = 1.0 / map_point_in_camera(l, y, ex).norm();
      return r;
    };
    const auto fd_L = oracle::central_diff([&](const Eigen::VectorXd& d) { return rho(L + d, x); }, 3);
    const auto fd_Rt = oracle::central_diff(
        [&](const Eigen::VectorXd& d) {
          ImuState y = x;
          y.R = boxplus(x.R, d.head<3>());
          y.p += d.tail<3>();
          return rho(L, y);
        },
        6);
    EXPECT_LT(oracle::rel_error(p.J_L, fd_L, 1e-3), 1e-5);
    EXPECT_LT(oracle::rel_error(p.J_Rt, fd_Rt, 1e-3), 1e-5);
    EXPECT_NEAR(p.variance, p.J_L.squaredNorm() + p.J_Rt.squaredNorm(), 1e-12);
  }
}

TEST(Feedback, StaleResultIsIgnored) {
  std::mt19937_64 rng(56);
  FilterBelief b = random_belief(rng, 1);
  b.applied_version = 5;
  const FilterBelief before = b;
  BackendResult res;
  res.version = 5;
  const FeedbackReport rep =
      feedback_cycle(b, res, PreintegratedDelta{}, {}, SimSpec::default_extrinsics(), Intrinsics{},
                     NoiseModel{}, 50, FeedbackConfig{}, rng);
  EXPECT_TRUE(rep.stale);
  EXPECT_EQ(b.P, before.P);
  EXPECT_EQ(b.imu.p, before.imu.p);
  EXPECT_EQ(b.applied_version, 5u);
}

TEST(Feedback, StateCorrectionRecoversNoiseFreeState) {
  for (int trial = 0; trial < 10; ++trial) {
    const Scene s = fixture::make_scene(300 + trial);
    const auto map = fixture::make_window(s, 1, 40, trial).landmarks;
    const double ti = 1.0, tk = 1.3;
    const ImuState xi = groundtruth_at(s.gt, ti);
    const ImuState truth = groundtruth_at(s.gt, tk);
    const PreintegratedDelta d = preintegrate(s.imu, ti, tk, {xi.bg, xi.ba}, s.nm);
    const Observations obs = observe(s, truth, map);
    ASSERT_GE(obs.size(), 10u);

    ImuState start = truth;
    start.p += Vec3(0.03, -0.02, 0.01);
    start.R = boxplus(truth.R, Vec3(0.01, 0.005, -0.01));
    start.v += Vec3(-0.02, 0.01, 0.0);
    FeedbackConfig cfg;
    cfg.max_iterations = 30;
    const StateCorrection c = state_correction_optimize(xi, d, start, obs, map, s.ex, s.K, s.nm, cfg);
    ASSERT_TRUE(c.ok) << c.message;
    EXPECT_LT(imu_state_error(truth, c.state).lpNorm<Eigen::Infinity>(), 1e-6) << trial;
    EXPECT_EQ(c.matches_used, static_cast<int>(obs.size()));

    // ϒ is the inverse Gauss-Newton matrix at the optimum
    Eigen::LLT<Mat15> llt(c.cov);
    ASSERT_EQ(llt.info(), Eigen::Success);
    const auto fd_imu = oracle::central_diff(
        [&](const Eigen::VectorXd& e) -> Eigen::VectorXd {
          const ImuState y = apply_correction(c.state, Vec15(e));
          Eigen::VectorXd r(15);
          r.head<9>() = preintegration_residual(d, xi, y, s.nm.gravity);
          r.tail<6>() = bias_residual({xi.bg, xi.ba}, {y.bg, y.ba});
          return r;
        },
        15);
    Mat15 info = Mat15::Zero();
    info.topLeftCorner<9, 9>() = d.cov.inverse();
    info.bottomRightCorner<6, 6>() = bias_information(s.nm);
    Mat15 H = fd_imu.transpose() * info * fd_imu;
    for (const auto& o : obs) {
      const auto J = oracle::central_diff(
          [&](const Eigen::VectorXd& e) -> Eigen::VectorXd {
            return *reprojection_residual(apply_correction(c.state, Vec15(e)), map.at(o.landmark_id), o,
                                          s.ex, s.K);
          },
          15);
      H += J.transpose() * J;
    }
    const Mat15 U = H.inverse();
    EXPECT_LT((c.cov - U).norm() / U.norm(), 1e-4) << trial;
  }
}

TEST(Feedback, CycleFusesAndInjects) {
  const Scene s = fixture::make_scene(320);
  const auto map = fixture::make_window(s, 1, 40, 3).landmarks;
  const double ti = 1.0, tk = 1.2;
  BackendResult res;
  res.version = 1;
  res.keyframe_time = ti;
  res.keyframe_state = groundtruth_at(s.gt, ti);
  res.map = map;
  for (const auto& [id, L] : map) res.landmark_cov[id] = Mat3::Identity() * 1e-4;

  FilterBelief b;
  const ImuState truth = groundtruth_at(s.gt, tk);
  b.imu = truth;
  b.imu.p += Vec3(0.1, -0.05, 0.02);
  b.P = Mat15::Identity() * 0.01;
  const double err_before = (b.imu.p - truth.p).norm();
  const PreintegratedDelta d =
      preintegrate(s.imu, ti, tk, {res.keyframe_state.bg, res.keyframe_state.ba}, s.nm);
  std::mt19937_64 rng(1);
  const FeedbackReport rep =
      feedback_cycle(b, res, d, observe(s, truth, map), s.ex, s.K, s.nm, 10, FeedbackConfig{}, rng);
  ASSERT_TRUE(rep.fused) << rep.message;
  EXPECT_LE(rep.trace_after, rep.trace_before);
  EXPECT_LT((b.imu.p - truth.p).norm(), err_before);
  EXPECT_EQ(b.applied_version, 1u);
  EXPECT_EQ(rep.injection.injected, 10);
  EXPECT_EQ(b.landmark_count(), 10);
  EXPECT_EQ(b.P.rows(), b.dim());
}
