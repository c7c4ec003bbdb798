#pragma once

#include <Eigen/Core>

namespace vislam {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

/// Rotations are plain 3x3 orthonormal matrices; tangent vectors are
/// axis-angle 3-vectors (radians).
using Rotation = Mat3;
using TangentVec = Vec3;

/// Angles below this use Taylor expansions in exp/log/J_r.
inline constexpr double kSmallAngle = 1e-5;

Mat3 hat(const Vec3& v);

/// Inverse of hat. Throws std::invalid_argument if `m` is not skew-symmetric
/// to within `tol` (max absolute asymmetry).
Vec3 vee(const Mat3& m, double tol = 1e-9);

Rotation exp_so3(const TangentVec& xi);

/// Principal logarithm, |result| <= pi. When the rotation angle is pi (to
/// within numerical precision) `at_pi` is set and the axis sign is chosen so
/// that the axis is the lexicographically larger of {a, -a}.
TangentVec log_so3(const Rotation& R, bool* at_pi = nullptr);

Mat3 right_jacobian(const TangentVec& xi);
Mat3 right_jacobian_inv(const TangentVec& xi);

/// R ⊕ δ = R Exp(δ)
inline Rotation boxplus(const Rotation& R, const TangentVec& delta) {
  return R * exp_so3(delta);
}

/// R1 ⊖ R2 = Log(R2ᵀ R1), so that boxplus(R2, boxminus(R1, R2)) == R1.
inline TangentVec boxminus(const Rotation& R1, const Rotation& R2) {
  return log_so3(R2.transpose() * R1);
}

/// Orthonormality and determinant check.
bool is_rotation(const Mat3& R, double tol = 1e-9);

/// Nearest rotation in the Frobenius sense (SVD projection).
Rotation orthonormalize(const Mat3& M);

}  // namespace vislam
