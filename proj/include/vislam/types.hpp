#pragma once

#include <vector>

#include "vislam/so3.hpp"

namespace vislam {

/// IMU/body state expressed in the world frame.
struct ImuState {
  Rotation R = Rotation::Identity();  // R^W_B
  Vec3 p = Vec3::Zero();              // p^W_B [m]
  Vec3 v = Vec3::Zero();              // v^W_B [m/s]
  Vec3 ba = Vec3::Zero();             // accelerometer bias [m/s^2]
  Vec3 bg = Vec3::Zero();             // gyroscope bias [rad/s]

  TangentVec xi() const { return log_so3(R); }
};

/// One inertial sample valid over [t, t + dt).
struct ImuSample {
  double t = 0.0;
  Vec3 acc = Vec3::Zero();   // specific force [m/s^2]
  Vec3 gyro = Vec3::Zero();  // angular rate [rad/s]
  double dt = 0.0;
};

struct BiasPair {
  Vec3 bg = Vec3::Zero();
  Vec3 ba = Vec3::Zero();
};

/// Sensor noise and gravity shared by filter, preintegration and BA.
struct NoiseModel {
  /// Continuous-time white-noise PSDs; the discrete sample noise is PSD / dt.
  Mat3 acc_psd = Mat3::Identity() * 2e-3;
  Mat3 gyro_psd = Mat3::Identity() * 1.7e-4;
  /// Discrete bias random walk per keyframe interval (BA bias factor).
  Mat3 bias_gyro_walk = Mat3::Identity() * 1e-8;
  Mat3 bias_acc_walk = Mat3::Identity() * 1e-4;
  /// Bias random-walk PSDs inside the filter. Zero keeps the biases constant.
  Mat3 filter_bias_acc_psd = Mat3::Zero();
  Mat3 filter_bias_gyro_psd = Mat3::Zero();
  /// Pixel standard deviation for a unit-scale feature.
  double pixel_sigma = 1.0;
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);

  Mat2 pixel_cov(double scale = 1.0) const {
    const double s = pixel_sigma * scale;
    return Mat2::Identity() * s * s;
  }
};

/// A tracked feature: landmark id plus its pixel measurement.
struct FeatureObservation {
  int landmark_id = -1;
  Vec2 uv = Vec2::Zero();
  Mat2 cov = Mat2::Identity();
};

using Observations = std::vector<FeatureObservation>;

}  // namespace vislam
