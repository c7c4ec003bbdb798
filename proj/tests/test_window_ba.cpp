#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "oracles.hpp"
#include "window_fixture.hpp"

using namespace vislam;

TEST(WindowBa, GroundTruthWindowHasZeroCost) {
  const auto s = fixture::make_scene(1);
  WindowGraph g = fixture::make_window(s, 5, 40, 1);
  SolverConfig cfg;
  EXPECT_LT(total_cost(g, s.nm, cfg, s.ex, s.K), 1e-12);
  const SolverReport rep = gauss_newton_solve(g, s.nm, cfg, s.ex, s.K);
  EXPECT_FALSE(rep.aborted);
  EXPECT_LE(rep.iterations, 1);
  EXPECT_LT(fixture::max_position_error(g, s, fixture::make_window(s, 5, 40, 1).landmarks), 1e-9);
}

TEST(WindowBa, HuberRegions) {
  EXPECT_DOUBLE_EQ(huber_cost(1.0, 5.991), 1.0);
  const double d2 = 5.991, s = 100.0;
  EXPECT_DOUBLE_EQ(huber_cost(s, d2), 2.0 * std::sqrt(d2) * std::sqrt(s) - d2);
  EXPECT_DOUBLE_EQ(huber_weight(1.0, d2), 1.0);
  EXPECT_NEAR(huber_weight(s, d2), std::sqrt(d2 / s), 1e-15);
}

TEST(WindowBa, SingleResidualCost) {
  const auto s = fixture::make_scene(2);
  WindowGraph g = fixture::make_window(s, 1, 1, 2);
  ASSERT_EQ(g.keyframes[0].obs.size(), 1u);
  g.keyframes[0].obs[0].uv -= Vec2(1.0, 0.0);
  EXPECT_NEAR(total_cost(g, s.nm, SolverConfig{}, s.ex, s.K), 1.0, 1e-9);
  g.keyframes[0].obs[0].uv -= Vec2(0.0, 2.0);
  const auto r = reprojection_residual(g.keyframes[0].state, g.landmarks[0], g.keyframes[0].obs[0], s.ex, s.K);
  EXPECT_LT((*r - Vec2(1.0, 2.0)).norm(), 1e-9);
}

TEST(WindowBa, ReprojectionJacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(41);
  const Extrinsics ex = SimSpec::default_extrinsics();
  const Intrinsics K;
  for (int trial = 0; trial < 200; ++trial) {
    const ImuState x = oracle::random_state(rng);
    const Vec3 f(0.3 * oracle::random_vec(rng).x(), 0.3 * oracle::random_vec(rng).y(), 4.0);
    const Vec3 L = x.R * (ex.R_BC * f + ex.p_BC) + x.p;
    FeatureObservation o;
    o.uv = Vec2(320, 240);
    const auto J = reprojection_jacobians(x, L, ex, K);
    ASSERT_TRUE(J);
    const auto fd_pose = oracle::central_diff(
        [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
          ImuState y = x;
          y.R = boxplus(x.R, d.head<3>());
          y.p += d.tail<3>();
          return *reprojection_residual(y, L, o, ex, K);
        },
        6);
    const auto fd_L = oracle::central_diff(
        [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
          return *reprojection_residual(x, L + d, o, ex, K);
        },
        3);
    EXPECT_LT(oracle::rel_error(J->d_xi, fd_pose.leftCols(3)), 1e-5);
    EXPECT_LT(oracle::rel_error(J->d_p, fd_pose.rightCols(3)), 1e-5);
    EXPECT_LT(oracle::rel_error(J->d_L, fd_L), 1e-5);
  }
}

TEST(WindowBa, RecoversPerturbedNoiseFreeWindow) {
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = fixture::make_scene(100 + trial);
    const WindowGraph truth = fixture::make_window(s, 5, 40, trial);
    WindowGraph g = truth;
    std::mt19937_64 rng(trial);
    fixture::perturb(g, rng, 0.05, 3.14159265358979 / 180.0);
    SolverConfig cfg;
    cfg.max_iterations = 50;
    const SolverReport rep = gauss_newton_solve(g, s.nm, cfg, s.ex, s.K);
    ASSERT_FALSE(rep.aborted) << rep.message;
    EXPECT_LT(fixture::max_position_error(g, s, truth.landmarks), 1e-6) << trial;
    for (std::size_t i = 1; i < rep.cost_history.size(); ++i) {
      EXPECT_LE(rep.cost_history[i], rep.cost_history[i - 1]);
    }
  }
}

TEST(WindowBa, PoseGaugeAlsoRecovers) {
  const auto s = fixture::make_scene(7);
  const WindowGraph truth = fixture::make_window(s, 5, 40, 7);
  WindowGraph g = truth;
  std::mt19937_64 rng(7);
  fixture::perturb(g, rng, 0.05, 0.01);
  SolverConfig cfg;
  cfg.gauge = Gauge::Pose;
  cfg.max_iterations = 50;
  const SolverReport rep = gauss_newton_solve(g, s.nm, cfg, s.ex, s.K);
  ASSERT_FALSE(rep.aborted);
  EXPECT_LT(fixture::max_position_error(g, s, truth.landmarks), 1e-6);
  EXPECT_EQ(g.keyframes[0].state.p, truth.keyframes[0].state.p);
}

TEST(WindowBa, NoisyWindowCostNeverIncreases) {
  const auto s = fixture::make_scene(3);
  WindowGraph g = fixture::make_window(s, 6, 40, 3);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& kf : g.keyframes) {
    for (auto& o : kf.obs) o.uv += Vec2(n(rng), n(rng));
  }
  fixture::perturb(g, rng, 0.05, 0.02);
  const SolverReport rep = gauss_newton_solve(g, s.nm, SolverConfig{}, s.ex, s.K);
  EXPECT_LE(rep.final_cost, rep.initial_cost);
  for (std::size_t i = 1; i < rep.cost_history.size(); ++i) {
    EXPECT_LE(rep.cost_history[i], rep.cost_history[i - 1]);
  }
}

TEST(WindowBa, SchurSolveEqualsDenseSolve) {
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = fixture::make_scene(200 + trial);
    WindowGraph g = fixture::make_window(s, 2 + trial % 2, 10, trial);
    std::mt19937_64 rng(trial);
    fixture::perturb(g, rng, 0.05, 0.02);
    const SolverConfig cfg;
    const WindowStep a = compute_step(g, s.nm, cfg, s.ex, s.K, 0.0, false);
    const WindowStep b = compute_step(g, s.nm, cfg, s.ex, s.K, 0.0, true);
    ASSERT_TRUE(a.ok && b.ok);
    const double scale = std::max(1.0, b.poses.lpNorm<Eigen::Infinity>());
    EXPECT_LT((a.poses - b.poses).lpNorm<Eigen::Infinity>(), 1e-8 * scale);
    for (const auto& [id, d] : b.landmarks) EXPECT_LT((a.landmarks.at(id) - d).norm(), 1e-8 * scale);
  }
}

TEST(WindowBa, GaugeFixedNormalMatrixNonsingular) {
  const auto s = fixture::make_scene(4);
  const WindowGraph g = fixture::make_window(s, 5, 40, 4);
  const auto cov = window_covariances(g, s.nm, SolverConfig{}, s.ex, s.K);
  ASSERT_TRUE(cov);
  EXPECT_EQ(cov->state[0], (Eigen::Matrix<double, 15, 15>::Zero()));
  for (std::size_t k = 1; k < cov->state.size(); ++k) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 15, 15>> es(cov->state[k]);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
    EXPECT_TRUE(std::isfinite(es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff()));
  }
  EXPECT_EQ(cov->landmark.size(), 40u);
}

TEST(WindowBa, KeyframeSelection) {
  KeyframePolicy p;
  Keyframe last;
  last.t = 1.0;
  ImuState x;
  EXPECT_TRUE(select_keyframe(x, 1.6, last, true, p));
  EXPECT_TRUE(select_keyframe(x, 1.01, last, false, p));
  EXPECT_FALSE(select_keyframe(x, 1.01, last, true, p));
  x.R = exp_so3(Vec3(0, 0, 0.2));
  EXPECT_TRUE(select_keyframe(x, 1.01, last, true, p));
}

TEST(WindowBa, TriangulationAndMapInit) {
  const Vec3 L(0.3, -0.2, 5.0);
  const Vec3 c1(0, 0, 0), c2(1, 0, 0);
  const auto p = triangulate_midpoint(c1, (L - c1).normalized(), c2, (L - c2).normalized());
  ASSERT_TRUE(p);
  EXPECT_LT((*p - L).norm(), 1e-9);
  EXPECT_FALSE(triangulate_midpoint(c1, Vec3(0, 0, 1), c2, Vec3(0, 0, 1)));

  const auto s = fixture::make_scene(5);
  const WindowGraph w = fixture::make_window(s, 2, 40, 5, 1.0);
  MapInitConfig mc;
  const auto ok = initialize_map(w.keyframes[0], w.keyframes[1], s.ex, s.K, s.nm, SolverConfig{}, mc);
  ASSERT_EQ(ok.status, MapInitStatus::Ok);
  for (const auto& [id, P] : ok.graph.landmarks) EXPECT_LT((P - w.landmarks.at(id)).norm(), 1e-6);

  mc.min_matches = 1000;
  EXPECT_EQ(initialize_map(w.keyframes[0], w.keyframes[1], s.ex, s.K, s.nm, SolverConfig{}, mc).status,
            MapInitStatus::ResetReference);
  mc = MapInitConfig{};
  mc.min_parallax = 1.0;  // rad, nothing qualifies
  EXPECT_EQ(initialize_map(w.keyframes[0], w.keyframes[1], s.ex, s.K, s.nm, SolverConfig{}, mc).status,
            MapInitStatus::Retry);
}

TEST(WindowBa, SlideWindow) {
  const auto s = fixture::make_scene(6);
  WindowGraph full = fixture::make_window(s, 4, 5, 6);
  WindowGraph g;
  for (int k = 0; k < 3; ++k) slide_window(g, full.keyframes[k], 3);
  g.landmarks = full.landmarks;
  // landmark 99 seen only by keyframe 0
  g.landmarks[99] = Vec3(0, 0, 0);
  FeatureObservation o;
  o.landmark_id = 99;
  g.keyframes[0].obs.push_back(o);
  g.keyframes[1].obs.push_back(o);
  EXPECT_EQ(g.keyframes.size(), 3u);
  slide_window(g, full.keyframes[3], 3);
  EXPECT_EQ(g.keyframes.size(), 3u);
  EXPECT_EQ(g.keyframes.front().id, 1);
  EXPECT_EQ(g.landmarks.count(99), 0u);
  EXPECT_EQ(g.landmarks.size(), 5u);
  EXPECT_THROW(slide_window(g, full.keyframes[0], 3), std::invalid_argument);
}
