#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vislam/camera.hpp"

using namespace vislam;

namespace {
constexpr double kPi = 3.14159265358979323846;

Intrinsics make_K(double f, double c) {
  Intrinsics K;
  K.fx = K.fy = f;
  K.cx = K.cy = c;
  return K;
}
}  // namespace

TEST(Camera, ProjectHandValues) {
  const Intrinsics K = make_K(100, 50);
  EXPECT_TRUE(project(Vec3(0, 0, 2), K)->isApprox(Vec2(50, 50)));
  EXPECT_TRUE(project(Vec3(1, 0, 2), K)->isApprox(Vec2(100, 50)));
  EXPECT_FALSE(project(Vec3(0, 0, -1), K));
  EXPECT_FALSE(project(Vec3(0, 0, 0), K));
}

TEST(Camera, ProjectionJacobianHandValues) {
  const Intrinsics unit = make_K(1, 0);
  Mat23 e1;
  e1 << 1, 0, 0, 0, 1, 0;
  EXPECT_TRUE(projection_jacobian(Vec3(0, 0, 1), unit)->isApprox(e1));
  Mat23 e2;
  e2 << 50, 0, -25, 0, 50, -25;
  EXPECT_TRUE(projection_jacobian(Vec3(1, 1, 2), make_K(100, 0))->isApprox(e2));
  EXPECT_FALSE(projection_jacobian(Vec3(1, 1, -2), unit));
}

TEST(Camera, ProjectionJacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> z(0.5, 20.0), xy(-5.0, 5.0), f(200.0, 600.0);
  Intrinsics K;
  for (int i = 0; i < 1000; ++i) {
    K.fx = f(rng);
    K.fy = f(rng);
    const Vec3 p(xy(rng), xy(rng), z(rng));
    const auto fd = oracle::central_diff(
        [&](const Eigen::VectorXd& d) -> Eigen::VectorXd { return *project(p + d, K); }, 3);
    EXPECT_LT(oracle::rel_error(*projection_jacobian(p, K), fd, 1e-12), 1e-5);
  }
}

TEST(Camera, RayDirection) {
  EXPECT_TRUE(ray_direction(0, 0).isApprox(Vec3(0, 0, 1)));
  EXPECT_LT((ray_direction(kPi / 2, 0) - Vec3(1, 0, 0)).norm(), 1e-15);
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> th(-kPi, kPi), ph(-kPi / 2, kPi / 2);
  for (int i = 0; i < 100; ++i) {
    const double t = th(rng), p = ph(rng);
    EXPECT_NEAR(ray_direction(t, p).norm(), 1.0, 1e-12);
    const auto fd = oracle::central_diff(
        [&](const Eigen::VectorXd& d) -> Eigen::VectorXd { return ray_direction(t + d(0), p + d(1)); },
        2);
    EXPECT_LT(oracle::rel_error(ray_direction_jacobian(t, p), fd), 1e-8);
  }
}

TEST(Camera, InverseDepthToXyz) {
  EXPECT_TRUE(inverse_depth_to_xyz({Vec3::Zero(), 0, 0, 0.5}).isApprox(Vec3(0, 0, 2)));
  EXPECT_LT((inverse_depth_to_xyz({Vec3(1, 2, 3), kPi / 2, 0, 1.0}) - Vec3(2, 2, 3)).norm(), 1e-15);
  EXPECT_THROW(inverse_depth_to_xyz({Vec3::Zero(), 0, 0, 0.0}), std::invalid_argument);

  std::mt19937_64 rng(23);
  for (int i = 0; i < 100; ++i) {
    InverseDepthLandmark l{oracle::random_vec(rng), 0.3 * i / 10.0, 0.1, 0.2 + 0.01 * i};
    const double d1 = (inverse_depth_to_xyz(l) - l.anchor).norm();
    l.rho *= 0.5;
    EXPECT_DOUBLE_EQ((inverse_depth_to_xyz(l) - l.anchor).norm(), 2.0 * d1);
  }
}

TEST(Camera, AnglesFromRayRoundTrip) {
  const RayAngles a0 = angles_from_ray(Vec3(0, 0, 1));
  EXPECT_EQ(a0.theta, 0.0);
  EXPECT_EQ(a0.phi, 0.0);
  const RayAngles a1 = angles_from_ray(Vec3(1, 0, 0));
  EXPECT_NEAR(a1.theta, kPi / 2, 1e-15);
  const RayAngles pole = angles_from_ray(Vec3(0, -1, 0));
  EXPECT_EQ(pole.theta, 0.0);
  EXPECT_NEAR(pole.phi, kPi / 2, 1e-15);
  EXPECT_THROW(angles_from_ray(Vec3::Zero()), std::invalid_argument);

  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> th(-kPi + 1e-6, kPi), ph(-kPi / 2 + 1e-3, kPi / 2 - 1e-3);
  for (int i = 0; i < 200; ++i) {
    const double t = th(rng), p = ph(rng);
    const RayAngles a = angles_from_ray(3.7 * ray_direction(t, p));
    EXPECT_NEAR(a.theta, t, 1e-12);
    EXPECT_NEAR(a.phi, p, 1e-12);
    const Vec3 tau = oracle::random_vec(rng);
    const auto fd = oracle::central_diff(
        [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
          const RayAngles r = angles_from_ray(tau + d);
          return Vec2(r.theta, r.phi);
        },
        3);
    EXPECT_LT(oracle::rel_error(angles_from_ray_jacobian(tau), fd), 1e-6);
  }
}

TEST(Camera, InImageBounds) {
  Intrinsics K;
  EXPECT_TRUE(in_image(Vec2(0, 0), K));
  EXPECT_FALSE(in_image(Vec2(K.width, 10), K));
  EXPECT_FALSE(in_image(Vec2(-0.1, 10), K));
  EXPECT_TRUE(in_image(Vec2(K.width - 0.5, K.height - 0.5), K));
}

TEST(Camera, IntrinsicsValidation) {
  Intrinsics K;
  EXPECT_NO_THROW(K.validate());
  K.fx = 0;
  EXPECT_THROW(K.validate(), std::invalid_argument);
}
