#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "vislam/ekf.hpp"
#include "vislam/preintegration.hpp"
#include "vislam/window_ba.hpp"

namespace vislam {

/// Immutable snapshot published by the back-end after each solve.
struct BackendResult {
  std::uint64_t version = 0;
  int keyframe_id = -1;
  double keyframe_time = 0.0;
  ImuState keyframe_state;
  std::map<int, Vec3> map;
  std::map<int, Mat3> landmark_cov;
  std::map<int, Mat6> pose_cov;  // keyframe id -> (dxi, dp) covariance
  SolverReport report;
};

struct StateCorrection {
  ImuState state;
  Mat15 cov = Mat15::Zero();  // ϒ
  int iterations = 0;
  int matches_used = 0;
  bool ok = false;
  std::string message;
};

struct FeedbackConfig {
  int max_iterations = 10;
  double step_tolerance = 1e-10;
  /// Squared Mahalanobis Huber thresholds (reprojection, IMU + bias term).
  double huber_visual = 5.991;
  double huber_imu = 24.996;
  /// Matches whose reprojection at the optimized state exceeds this χ² are
  /// not injected.
  double inject_outlier_chi2 = 9.21;
  bool inject = true;
};

/// Gauss-Newton over the current-frame state alone: IMU term from the fixed
/// keyframe i plus reprojections of matched map points, both Huber-robust.
StateCorrection state_correction_optimize(const ImuState& kf_i, const PreintegratedDelta& delta_ik,
                                          const ImuState& frame_k, const Observations& matches,
                                          const std::map<int, Vec3>& map, const Extrinsics& ex,
                                          const Intrinsics& K, const NoiseModel& nm,
                                          const FeedbackConfig& cfg = {});

/// Fuses X* as a direct measurement of the IMU block with covariance ϒ.
/// Returns false (belief untouched) on a singular innovation.
bool state_correction_fuse(FilterBelief& belief, const StateCorrection& corr);

/// L^C = R_BCᵀ(R*ᵀ(L - p*) - p_BC)
Vec3 map_point_in_camera(const Vec3& L, const ImuState& x, const Extrinsics& ex);

struct InverseDepthPrior {
  double rho = 0.0;
  double variance = 0.0;
  Eigen::Matrix<double, 1, 3> J_L;
  Eigen::Matrix<double, 1, 6> J_Rt;  // w.r.t. (dxi, dp) with world-frame dp
};

/// ρ* = 1/‖L^C‖ and its variance J_L Σ_L J_Lᵀ + J_Rt Σ_Rt J_Rtᵀ.
InverseDepthPrior inverse_depth_prior(const Vec3& L, const ImuState& x, const Extrinsics& ex,
                                      const Mat3& Sigma_L, const Mat6& Sigma_Rt);

struct InjectionReport {
  int candidates = 0;
  int behind_camera = 0;
  int outliers = 0;
  int injected = 0;
};

/// Adds up to `n` randomly chosen matched map points as inverse-depth
/// landmarks using (ρ*, σ_ρ*) priors.
InjectionReport map_correction_inject(FilterBelief& belief, const BackendResult& result,
                                      const Observations& matches, const Mat6& Sigma_Rt,
                                      const Extrinsics& ex, const Intrinsics& K, int n, int cap,
                                      const FeedbackConfig& cfg, std::mt19937_64& rng);

struct FeedbackReport {
  bool stale = false;
  bool corrected = false;
  bool fused = false;
  int matches = 0;
  int iterations = 0;
  double trace_before = 0.0;
  double trace_after = 0.0;
  InjectionReport injection;
  std::string message;
};

/// State correction, fuse and map injection in that order. Results not newer
/// than the last applied version are ignored.
FeedbackReport feedback_cycle(FilterBelief& belief, const BackendResult& result,
                              const PreintegratedDelta& delta_ik, const Observations& frame_obs,
                              const Extrinsics& ex, const Intrinsics& K, const NoiseModel& nm,
                              int cap, const FeedbackConfig& cfg, std::mt19937_64& rng);

}  // namespace vislam
