#pragma once

#include <optional>

#include "vislam/so3.hpp"

namespace vislam {

/// Pinhole intrinsics in pixels.
struct Intrinsics {
  double fx = 320.0;
  double fy = 320.0;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;

  /// Throws std::invalid_argument on non-positive focal length or size.
  void validate() const;
};

/// Camera pose in the IMU body frame.
struct Extrinsics {
  Rotation R_BC = Rotation::Identity();
  Vec3 p_BC = Vec3::Zero();
};

/// Landmark anchored at the camera centre of its first observation:
/// point = anchor + ray_direction(theta, phi) / rho.
struct InverseDepthLandmark {
  Vec3 anchor = Vec3::Zero();
  double theta = 0.0;  // azimuth
  double phi = 0.0;    // elevation
  double rho = 0.1;    // inverse depth [1/m]

  Eigen::Matrix<double, 6, 1> vector() const {
    Eigen::Matrix<double, 6, 1> v;
    v << anchor, theta, phi, rho;
    return v;
  }
  static InverseDepthLandmark from_vector(const Eigen::Matrix<double, 6, 1>& v) {
    return {v.head<3>(), v(3), v(4), v(5)};
  }
};

using Mat23 = Eigen::Matrix<double, 2, 3>;

/// Pinhole projection of a camera-frame point. Empty when the point is not
/// strictly in front of the camera.
std::optional<Vec2> project(const Vec3& f_C, const Intrinsics& K);

/// d project / d f_C. Empty when z <= 0.
std::optional<Mat23> projection_jacobian(const Vec3& f_C, const Intrinsics& K);

/// Visibility predicate: 0 <= u < width and 0 <= v < height.
bool in_image(const Vec2& uv, const Intrinsics& K);

/// Normalized image ray [(u-cx)/fx, (v-cy)/fy, 1].
Vec3 normalized_ray(const Vec2& uv, const Intrinsics& K);

/// Unit direction m(theta, phi) = [cos(phi) sin(theta), -sin(phi), cos(phi) cos(theta)].
Vec3 ray_direction(double theta, double phi);

/// d m / d (theta, phi), a 3x2 matrix.
Eigen::Matrix<double, 3, 2> ray_direction_jacobian(double theta, double phi);

/// Euclidean world point of an inverse-depth landmark. Throws
/// std::invalid_argument when rho == 0.
Vec3 inverse_depth_to_xyz(const InverseDepthLandmark& l);

struct RayAngles {
  double theta = 0.0;
  double phi = 0.0;
};

/// Azimuth/elevation of a (not necessarily unit) world direction. At the pole
/// (x = z = 0) theta is defined as 0. Throws std::invalid_argument on a zero
/// vector.
RayAngles angles_from_ray(const Vec3& tau);

/// d (theta, phi) / d tau, a 2x3 matrix. Requires x^2 + z^2 > 0.
Mat23 angles_from_ray_jacobian(const Vec3& tau);

}  // namespace vislam
