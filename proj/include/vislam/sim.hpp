#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "vislam/camera.hpp"
#include "vislam/types.hpp"

namespace vislam {

enum class TrajectoryKind { Circle, Lissajous, FigureEight, Stationary };
enum class YawPolicy { Fixed, Tangent };

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::Circle;
  /// Horizontal amplitudes [m] and angular frequencies [rad/s]. The circle
  /// uses amplitude_x as its radius and omega_x as its rate.
  double amplitude_x = 2.0;
  double amplitude_y = 2.0;
  double omega_x = 0.4;
  double omega_y = 0.4;
  double vertical_amplitude = 0.3;
  double vertical_omega = 0.8;
  Vec3 center = Vec3::Zero();
  YawPolicy yaw = YawPolicy::Tangent;
  double fixed_yaw = 0.0;
  /// Roll/pitch oscillation [rad] at wobble_omega [rad/s].
  double wobble_amplitude = 0.05;
  double wobble_omega = 0.7;
  double duration = 120.0;
  double imu_rate = 200.0;
  double frame_rate = 20.0;
  std::uint64_t seed = 1;

  int imu_per_frame() const;
  void validate() const;
};

enum class LandmarkLayout { Box, Cylinder };

struct WorldSpec {
  int landmark_count = 200;
  LandmarkLayout layout = LandmarkLayout::Cylinder;
  double cylinder_radius = 5.0;
  double cylinder_thickness = 1.0;
  double z_min = -1.5;
  double z_max = 1.5;
  Vec3 box_min = Vec3(-6.0, -6.0, -2.0);
  Vec3 box_max = Vec3(6.0, 6.0, 2.0);
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);

  void validate() const;
};

struct CorruptionSpec {
  Vec3 acc_psd = Vec3::Constant(2e-3);
  Vec3 gyro_psd = Vec3::Constant(1.7e-4);
  Vec3 bias_acc = Vec3(0.05, -0.04, 0.03);
  Vec3 bias_gyro = Vec3(0.002, -0.003, 0.001);
  double pixel_sigma = 1.0;
  double outlier_prob = 0.0;
  /// Outliers land uniformly within this many pixels of the true projection
  /// (clamped to the image); 0 means anywhere in the image.
  double outlier_range_px = 0.0;
  double dropout_prob = 0.0;

  static CorruptionSpec none();
  void validate() const;
};

struct SimSpec {
  TrajectorySpec trajectory;
  WorldSpec world;
  CorruptionSpec corruption;
  Intrinsics K;
  Extrinsics ex = default_extrinsics();

  static Extrinsics default_extrinsics();
};

/// Closed-form pose with exact derivatives.
struct PoseSample {
  Rotation R = Rotation::Identity();
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 a_world = Vec3::Zero();
  Vec3 omega_body = Vec3::Zero();
};

PoseSample analytic_pose(const TrajectorySpec& spec, double t);

struct GroundTruthSample {
  double t = 0.0;
  ImuState state;
};

struct LabeledObservation {
  FeatureObservation obs;
  bool outlier = false;
  Vec2 true_uv = Vec2::Zero();
};

struct Frame {
  int id = 0;
  double t = 0.0;
  std::vector<LabeledObservation> obs;

  Observations observations() const;
};

struct Dataset {
  std::vector<ImuSample> imu;
  std::vector<Frame> frames;
  std::vector<GroundTruthSample> groundtruth;  // at IMU sample times
  std::map<int, Vec3> world;
};

/// Ground truth at IMU sample times, the last one at `duration`. Rotation and
/// velocity are analytic; positions integrate the velocity with the
/// trapezoidal rule so that noise-free samples reproduce them exactly.
std::vector<GroundTruthSample> sample_groundtruth(const TrajectorySpec& spec,
                                                  const CorruptionSpec& corruption);

/// Inertial samples consistent with the discrete propagation model: sample k
/// turns state k into state k+1 exactly when noise is zero.
std::vector<ImuSample> synthesize_imu(const std::vector<GroundTruthSample>& gt,
                                      const CorruptionSpec& corruption, const Vec3& gravity,
                                      std::uint64_t seed);

std::map<int, Vec3> generate_world(const WorldSpec& world, std::uint64_t seed);

std::vector<Frame> synthesize_frames(const std::vector<GroundTruthSample>& gt,
                                     const TrajectorySpec& spec, const std::map<int, Vec3>& world,
                                     const CorruptionSpec& corruption, const Intrinsics& K,
                                     const Extrinsics& ex, std::uint64_t seed);

Dataset simulate(const SimSpec& spec);

/// Ground-truth state at time t, interpolated between samples.
ImuState groundtruth_at(const std::vector<GroundTruthSample>& gt, double t);

}  // namespace vislam
