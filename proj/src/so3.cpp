#include "vislam/so3.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/LU>
#include <Eigen/SVD>

namespace vislam {

Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Vec3 vee(const Mat3& m, double tol) {
  const Mat3 sym = m + m.transpose();
  if (sym.cwiseAbs().maxCoeff() > tol) {
    throw std::invalid_argument("vee: matrix is not skew-symmetric");
  }
  return Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1)) * 0.5;
}

Rotation exp_so3(const TangentVec& xi) {
  const double theta2 = xi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 K = hat(xi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + K + 0.5 * K * K;
  }
  return Mat3::Identity() + (std::sin(theta) / theta) * K +
         ((1.0 - std::cos(theta)) / theta2) * K * K;
}

TangentVec log_so3(const Rotation& R, bool* at_pi) {
  if (at_pi) *at_pi = false;
  // w = sin(theta) * axis
  const Vec3 w(0.5 * (R(2, 1) - R(1, 2)), 0.5 * (R(0, 2) - R(2, 0)),
               0.5 * (R(1, 0) - R(0, 1)));
  const double s = w.norm();
  const double c = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  const double theta = std::atan2(s, c);

  if (theta < kSmallAngle) {
    return (1.0 + theta * theta / 6.0) * w;
  }
  if (c > -0.99) {
    return (theta / s) * w;
  }

  // Near pi the antisymmetric part vanishes; recover the axis from the
  // symmetric part a aᵀ = (S - c I) / (1 - c) and take its sign from w.
  const Mat3 S = 0.5 * (R + R.transpose());
  const Mat3 aaT = (S - c * Mat3::Identity()) / (1.0 - c);
  Eigen::Index k = 0;
  aaT.diagonal().maxCoeff(&k);
  Vec3 axis = aaT.col(k) / std::sqrt(std::max(aaT(k, k), 1e-300));
  axis.normalize();

  const double proj = axis.dot(w);
  if (std::abs(proj) > 1e-12) {
    if (proj < 0.0) axis = -axis;
  } else {
    if (at_pi) *at_pi = true;
    for (int i = 0; i < 3; ++i) {
      if (std::abs(axis[i]) > 1e-12) {
        if (axis[i] < 0.0) axis = -axis;
        break;
      }
    }
  }
  return theta * axis;
}

Mat3 right_jacobian(const TangentVec& xi) {
  const double theta2 = xi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 K = hat(xi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() - 0.5 * K + K * K / 6.0;
  }
  return Mat3::Identity() - ((1.0 - std::cos(theta)) / theta2) * K +
         ((theta - std::sin(theta)) / (theta2 * theta)) * K * K;
}

Mat3 right_jacobian_inv(const TangentVec& xi) {
  const double theta2 = xi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 K = hat(xi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + 0.5 * K + K * K / 12.0;
  }
  const double coeff =
      1.0 / theta2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() + 0.5 * K + coeff * K * K;
}

bool is_rotation(const Mat3& R, double tol) {
  if (!R.allFinite()) return false;
  const double ortho = (R.transpose() * R - Mat3::Identity()).norm();
  return ortho <= tol && std::abs(R.determinant() - 1.0) <= tol;
}

Rotation orthonormalize(const Mat3& M) {
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 R = svd.matrixU() * svd.matrixV().transpose();
  if (R.determinant() < 0.0) {
    Mat3 U = svd.matrixU();
    U.col(2) *= -1.0;
    R = U * svd.matrixV().transpose();
  }
  return R;
}

}  // namespace vislam
