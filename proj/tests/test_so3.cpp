#include <cmath>
#include <random>

#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vislam/so3.hpp"

using namespace vislam;

namespace {
constexpr double kPi = 3.14159265358979323846;
}

TEST(So3, ExpOfZeroIsIdentity) {
  EXPECT_TRUE(exp_so3(Vec3::Zero()).isApprox(Mat3::Identity(), 1e-15));
}

TEST(So3, ExpMatchesSeriesOracle) {
  const Vec3 xi(0, 0, kPi / 2);
  Mat3 expected;
  expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  EXPECT_LT((exp_so3(xi) - oracle::series_exp(oracle::skew(xi))).norm(), 1e-12);
  EXPECT_LT((exp_so3(xi) - expected).norm(), 1e-12);

  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const Vec3 v = oracle::random_vec(rng, i < 100 ? 1.0 : 1e-6);
    EXPECT_LT((exp_so3(v) - oracle::series_exp(oracle::skew(v))).norm(), 1e-12);
  }
}

TEST(So3, LogInvertsExp) {
  Mat3 Rz;
  Rz << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  EXPECT_LT((log_so3(Rz) - Vec3(0, 0, kPi / 2)).norm(), 1e-12);
  EXPECT_LT(log_so3(Mat3::Identity()).norm(), 1e-15);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, kPi - 1e-6);
  for (int i = 0; i < 500; ++i) {
    Vec3 xi = oracle::random_vec(rng).normalized() * u(rng);
    if (i % 10 == 0) xi *= 1e-7;
    EXPECT_LT((log_so3(exp_so3(xi)) - xi).norm(), 1e-9) << xi.transpose();
  }
}

TEST(So3, ExpLogRoundTripOnRotations) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const Mat3 R = oracle::random_rotation(rng);
    EXPECT_LT((exp_so3(log_so3(R)) - R).norm(), 1e-9);
    EXPECT_TRUE(is_rotation(exp_so3(log_so3(R))));
  }
}

TEST(So3, LogAtPiReportsDegenerateBranch) {
  const Mat3 R = Eigen::Vector3d(1, -1, -1).asDiagonal();
  bool at_pi = false;
  const Vec3 xi = log_so3(R, &at_pi);
  EXPECT_TRUE(at_pi);
  EXPECT_NEAR(xi.norm(), kPi, 1e-9);
  EXPECT_NEAR(std::abs(xi.x()), kPi, 1e-9);
  EXPECT_GT(xi.x(), 0.0);
  EXPECT_LT((exp_so3(xi) - R).norm(), 1e-9);
}

TEST(So3, HatVee) {
  Mat3 expected;
  expected << 0, -3, 2, 3, 0, -1, -2, 1, 0;
  EXPECT_EQ(hat(Vec3(1, 2, 3)), expected);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    const Vec3 v = oracle::random_vec(rng), w = oracle::random_vec(rng);
    EXPECT_EQ(vee(hat(v)), v);
    EXPECT_LT((hat(v) * w - v.cross(w)).norm(), 1e-14);
    EXPECT_EQ(hat(v).transpose(), -hat(v));
  }
  Mat3 bad = Mat3::Zero();
  bad(0, 1) = 1e-6;
  EXPECT_THROW(vee(bad), std::invalid_argument);
}

TEST(So3, RightJacobianIdentitySecondOrder) {
  EXPECT_TRUE(right_jacobian(Vec3::Zero()).isApprox(Mat3::Identity()));
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const Vec3 xi = oracle::random_vec(rng);
    const Vec3 dir = oracle::random_vec(rng).normalized();
    auto err = [&](double h) {
      const Vec3 d = dir * h;
      return (exp_so3(xi + d) - exp_so3(xi) * exp_so3(right_jacobian(xi) * d)).norm();
    };
    const double e1 = err(1e-4), e2 = err(5e-5);
    EXPECT_LT(e1, 1e-7);
    // halving the step quarters the residual
    EXPECT_NEAR(e1 / e2, 4.0, 0.2);
    EXPECT_LT((right_jacobian_inv(xi) * right_jacobian(xi) - Mat3::Identity()).norm(), 1e-9);
  }
  const Vec3 tiny(1e-7, -2e-7, 3e-8);
  EXPECT_LT((right_jacobian_inv(tiny) * right_jacobian(tiny) - Mat3::Identity()).norm(), 1e-12);
}

TEST(So3, BoxplusBoxminus) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 100; ++i) {
    const Mat3 R = oracle::random_rotation(rng);
    const Vec3 d = oracle::random_vec(rng, 0.5);
    EXPECT_TRUE(boxplus(R, Vec3::Zero()).isApprox(R));
    EXPECT_LT(boxminus(R, R).norm(), 1e-12);
    EXPECT_LT((boxminus(boxplus(R, d), R) - d).norm(), 1e-9);
    EXPECT_TRUE(is_rotation(boxplus(R, d)));
  }
}

TEST(So3, OrthonormalizeProjects) {
  std::mt19937_64 rng(7);
  const Mat3 R = oracle::random_rotation(rng);
  Mat3 noisy = R;
  noisy(0, 0) += 1e-4;
  EXPECT_FALSE(is_rotation(noisy));
  EXPECT_TRUE(is_rotation(orthonormalize(noisy)));
  EXPECT_LT((orthonormalize(noisy) - R).norm(), 1e-3);
}
