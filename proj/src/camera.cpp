#include "vislam/camera.hpp"

#include <cmath>
#include <stdexcept>

namespace vislam {

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw std::invalid_argument("intrinsics: focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("intrinsics: image size must be positive");
  }
}

std::optional<Vec2> project(const Vec3& f_C, const Intrinsics& K) {
  if (!(f_C.z() > 0.0)) return std::nullopt;
  return Vec2(K.fx * f_C.x() / f_C.z() + K.cx, K.fy * f_C.y() / f_C.z() + K.cy);
}

std::optional<Mat23> projection_jacobian(const Vec3& f_C, const Intrinsics& K) {
  const double z = f_C.z();
  if (!(z > 0.0)) return std::nullopt;
  const double iz = 1.0 / z;
  const double iz2 = iz * iz;
  Mat23 J;
  J << K.fx * iz, 0.0, -K.fx * f_C.x() * iz2,
       0.0, K.fy * iz, -K.fy * f_C.y() * iz2;
  return J;
}

bool in_image(const Vec2& uv, const Intrinsics& K) {
  return uv.x() >= 0.0 && uv.x() < K.width && uv.y() >= 0.0 && uv.y() < K.height;
}

Vec3 normalized_ray(const Vec2& uv, const Intrinsics& K) {
  return Vec3((uv.x() - K.cx) / K.fx, (uv.y() - K.cy) / K.fy, 1.0);
}

Vec3 ray_direction(double theta, double phi) {
  const double cp = std::cos(phi);
  return Vec3(cp * std::sin(theta), -std::sin(phi), cp * std::cos(theta));
}

Eigen::Matrix<double, 3, 2> ray_direction_jacobian(double theta, double phi) {
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cp = std::cos(phi), sp = std::sin(phi);
  Eigen::Matrix<double, 3, 2> J;
  J << cp * ct, -sp * st,
       0.0, -cp,
       -cp * st, -sp * ct;
  return J;
}

Vec3 inverse_depth_to_xyz(const InverseDepthLandmark& l) {
  if (l.rho == 0.0) {
    throw std::invalid_argument("inverse_depth_to_xyz: zero inverse depth");
  }
  return l.anchor + ray_direction(l.theta, l.phi) / l.rho;
}

RayAngles angles_from_ray(const Vec3& tau) {
  if (tau.squaredNorm() == 0.0) {
    throw std::invalid_argument("angles_from_ray: zero direction");
  }
  const double horiz = std::hypot(tau.x(), tau.z());
  RayAngles a;
  a.theta = (horiz == 0.0) ? 0.0 : std::atan2(tau.x(), tau.z());
  a.phi = std::atan2(-tau.y(), horiz);
  return a;
}

Mat23 angles_from_ray_jacobian(const Vec3& tau) {
  const double x = tau.x(), y = tau.y(), z = tau.z();
  const double zeta = x * x + z * z;
  const double varsigma = (x * x + y * y + z * z) * std::sqrt(zeta);
  Mat23 J;
  J << z / zeta, 0.0, -x / zeta,
       x * y / varsigma, -zeta / varsigma, y * z / varsigma;
  return J;
}

}  // namespace vislam
