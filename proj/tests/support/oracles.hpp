#pragma once

// Independent reference implementations for the unit and acceptance tests.

#include <cmath>
#include <functional>
#include <random>

#include <Eigen/Core>

#include "vislam/so3.hpp"
#include "vislam/types.hpp"

namespace oracle {

using vislam::Mat3;
using vislam::Vec3;

inline constexpr double kFdStep = 1e-6;

/// exp of a 3x3 matrix by a truncated power series.
inline Mat3 series_exp(const Mat3& A, int terms = 30) {
  Mat3 out = Mat3::Identity();
  Mat3 term = Mat3::Identity();
  for (int k = 1; k < terms; ++k) {
    term = term * A / static_cast<double>(k);
    out += term;
  }
  return out;
}

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

/// Central differences of f: R^n -> R^m around zero, f given in local
/// coordinates (the caller does the manifold retraction).
inline Eigen::MatrixXd central_diff(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                    int n, double h = kFdStep) {
  const Eigen::VectorXd f0 = f(Eigen::VectorXd::Zero(n));
  Eigen::MatrixXd J(f0.size(), n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
    d(i) = h;
    J.col(i) = (f(d) - f(-d)) / (2.0 * h);
  }
  return J;
}

/// Max-norm relative error with an absolute floor for near-zero blocks.
inline double rel_error(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double floor = 1.0) {
  return (A - B).cwiseAbs().maxCoeff() / std::max(floor, B.cwiseAbs().maxCoeff());
}

inline Vec3 random_vec(std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  return Vec3(n(rng), n(rng), n(rng));
}

inline Mat3 random_rotation(std::mt19937_64& rng, double max_angle = 3.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec3 axis(u(rng), u(rng), u(rng));
  while (axis.norm() < 1e-3) axis = Vec3(u(rng), u(rng), u(rng));
  std::uniform_real_distribution<double> a(0.0, max_angle);
  return series_exp(skew(axis.normalized() * a(rng)));
}

inline vislam::ImuState random_state(std::mt19937_64& rng) {
  vislam::ImuState x;
  x.R = random_rotation(rng);
  x.p = random_vec(rng, 2.0);
  x.v = random_vec(rng, 1.0);
  x.ba = random_vec(rng, 0.05);
  x.bg = random_vec(rng, 0.01);
  return x;
}

inline vislam::ImuSample random_sample(std::mt19937_64& rng, double dt = 0.005) {
  vislam::ImuSample s;
  s.acc = random_vec(rng, 2.0) + Vec3(0, 0, 9.81);
  s.gyro = random_vec(rng, 0.5);
  s.dt = dt;
  return s;
}

}  // namespace oracle
