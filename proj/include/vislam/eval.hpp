#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vislam/so3.hpp"

namespace vislam {

struct TrajectoryPoint {
  double t = 0.0;
  Rotation R = Rotation::Identity();
  Vec3 p = Vec3::Zero();
};

using Trajectory = std::vector<TrajectoryPoint>;

/// Throws std::invalid_argument unless timestamps strictly increase.
void validate_trajectory(const Trajectory& traj);

struct Association {
  std::size_t est = 0;
  std::size_t gt = 0;
};

/// Nearest ground-truth sample for each estimate, kept when within `tolerance`.
std::vector<Association> associate(const Trajectory& est, const Trajectory& gt, double tolerance);

struct RigidTransform {
  Rotation R = Rotation::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 operator*(const Vec3& x) const { return R * x + t; }
};

/// Closed-form rigid alignment (unit quaternion method): the transform T
/// minimizing Σ ‖gt_i - T est_i‖². Throws std::invalid_argument with < 3 pairs.
RigidTransform horn_align(const std::vector<Vec3>& est, const std::vector<Vec3>& gt);

struct AlignmentResult {
  RigidTransform T;
  Trajectory aligned;
  std::vector<Association> pairs;
  double ate_rmse = 0.0;
};

/// Associates, aligns est onto gt and evaluates the translational RMSE.
AlignmentResult align_trajectories(const Trajectory& est, const Trajectory& gt, double tolerance);

/// √(mean ‖est_i - gt_i‖²) over paired points.
double ate_rmse(const std::vector<Vec3>& est, const std::vector<Vec3>& gt);

struct RunMetrics {
  std::string run;
  std::string sequence;
  std::string mode;
  std::optional<double> ate_rmse;
};

struct CompareRow {
  std::string run;
  std::string sequence;
  std::string mode;
  std::string ate_rmse;       // "NA" when missing
  std::string reduction_pct;  // "NA" when not applicable
};

/// One row per run. Reduction is (1 - full/ekf)·100 against the ekf-only run
/// of the same sequence. Sets `missing` when any metric is absent.
std::vector<CompareRow> compare_runs(const std::vector<RunMetrics>& runs, bool* missing = nullptr);

std::string format_compare_csv(const std::vector<CompareRow>& rows);

}  // namespace vislam
