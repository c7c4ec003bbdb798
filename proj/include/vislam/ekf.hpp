#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "vislam/camera.hpp"
#include "vislam/types.hpp"

namespace vislam {

/// Error-state layout of the IMU block: [dxi dp dv dba dbg].
inline constexpr int kImuDim = 15;
inline constexpr int kLandmarkDim = 6;
inline constexpr int kXi = 0;
inline constexpr int kP = 3;
inline constexpr int kV = 6;
inline constexpr int kBa = 9;
inline constexpr int kBg = 12;

/// 95th percentile of chi-square with 2 degrees of freedom.
inline constexpr double kChi2_95_2dof = 5.991;

using Mat15 = Eigen::Matrix<double, 15, 15>;
using Mat15x6 = Eigen::Matrix<double, 15, 6>;
using Vec15 = Eigen::Matrix<double, 15, 1>;
using Mat2x15 = Eigen::Matrix<double, 2, 15>;
using Mat2x6 = Eigen::Matrix<double, 2, 6>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

struct EkfConfig {
  int landmark_cap = 50;
  double gate_chi2 = kChi2_95_2dof;
  int ransac_iterations = 10;
  /// Low-innovation threshold for consensus counting (chi-square, 2 dof).
  double ransac_inlier_chi2 = kChi2_95_2dof;
  /// Re-gate non-consensus observations after the first update.
  bool rescue_high_innovation = true;
  double rho0 = 0.1;       // initial inverse depth [1/m]
  double sigma_rho = 0.5;  // its standard deviation [1/m]
  bool joseph_form = false;
};

/// Mean and covariance of the filter: IMU state plus m inverse-depth
/// landmarks, with a (15 + 6m)^2 error-state covariance.
struct FilterBelief {
  ImuState imu;
  std::vector<InverseDepthLandmark> landmarks;
  std::vector<int> landmark_ids;
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(kImuDim, kImuDim);
  std::uint64_t applied_version = 0;

  int landmark_count() const { return static_cast<int>(landmarks.size()); }
  int dim() const { return kImuDim + kLandmarkDim * landmark_count(); }
  /// Index of the landmark with external id `id`, or -1.
  int index_of(int id) const;
  Mat15 imu_cov() const { return P.topLeftCorner<kImuDim, kImuDim>(); }
};

/// Error-state increment applied on the manifold: rotation via ⊕, everything
/// else additively.
void apply_correction(FilterBelief& belief, const Eigen::VectorXd& dx);
ImuState apply_correction(const ImuState& x, const Vec15& dx);

/// Error of `truth` w.r.t. `estimate` in filter coordinates (truth = est ⊕ e).
Vec15 imu_state_error(const ImuState& truth, const ImuState& estimate);

// ---------------------------------------------------------------- prediction

/// Mean propagation over one sample with zero noise. Biases are constant.
ImuState propagate_state(const ImuState& x, const ImuSample& s, const NoiseModel& nm);

/// Same model with explicit discrete noise samples (n_ad, n_gd); used by the
/// Jacobian oracles.
ImuState propagate_state_noisy(const ImuState& x, const ImuSample& s, const NoiseModel& nm,
                               const Vec3& n_acc, const Vec3& n_gyro);

struct ErrorStateJacobians {
  Mat15 Phi;
  Mat15x6 G;  // columns: (n_ad, n_gd)
};

/// Transition and noise Jacobians with the rotation error taken as a right
/// perturbation on both sides (R = R̂ Exp(δξ)). This is the form the filter uses.
ErrorStateJacobians error_state_jacobians(const ImuState& x, const ImuSample& s);

/// Same Jacobians with the propagated orientation expressed in Lie-algebra
/// coordinates ξ = Log(R): the ξ row is pre-multiplied by J_r⁻¹(ξ_pred).
ErrorStateJacobians error_state_jacobians_lie_coordinates(const ImuState& x,
                                                          const ImuSample& s);

/// Covariance propagation in place: IMU block ΦPΦᵀ + GQGᵀ, cross block Φ P_BL,
/// landmark block untouched. Q = diag(Σ_a/Δt, Σ_g/Δt) plus the optional
/// in-filter bias walk.
void propagate_covariance(Eigen::MatrixXd& P, const Mat15& Phi, const Mat15x6& G,
                          const NoiseModel& nm, double dt);

/// propagate_state + error_state_jacobians + propagate_covariance.
void predict(FilterBelief& belief, const ImuSample& s, const NoiseModel& nm);

/// Sequence of predict() steps. The IMU-landmark cross block is multiplied
/// once by the accumulated transition instead of once per sample.
void predict_interval(FilterBelief& belief, const std::vector<ImuSample>& samples,
                      const NoiseModel& nm);

// --------------------------------------------------------------- measurement

/// Camera-frame direction f^C = R_CW (ρ (anchor - p_WC) + m(θ, φ)).
Vec3 landmark_in_camera(const ImuState& x, const InverseDepthLandmark& l, const Extrinsics& ex);

/// Predicted pixel h(x, l), empty when behind the camera.
std::optional<Vec2> predict_measurement(const ImuState& x, const InverseDepthLandmark& l,
                                        const Extrinsics& ex, const Intrinsics& K);

struct MeasurementLinearization {
  Vec2 r;      // z - h
  Mat2x15 H_B;  // d r / d δX_B
  Mat2x6 H_f;   // d r / d δf
};

/// Residual and its Jacobians. Both Jacobians are derivatives of the residual
/// r = z - h, so the filter correction is -K r. Empty when behind the camera.
std::optional<MeasurementLinearization> measurement_residual(const ImuState& x,
                                                             const InverseDepthLandmark& l,
                                                             const FeatureObservation& obs,
                                                             const Extrinsics& ex,
                                                             const Intrinsics& K);

struct GateDecision {
  bool accept = false;
  double distance = 0.0;
  bool singular = false;
};

/// Accept iff rᵀ S⁻¹ r < threshold where S is the innovation covariance.
GateDecision mahalanobis_gate(const Vec2& r, const Mat2& S, double threshold = kChi2_95_2dof);

/// Convenience overload with a dense 2 x n Jacobian: S = H P Hᵀ + Σ_σ.
GateDecision mahalanobis_gate(const Vec2& r, const Eigen::Matrix<double, 2, Eigen::Dynamic>& H,
                              const Eigen::MatrixXd& P, const Mat2& sigma,
                              double threshold = kChi2_95_2dof);

/// One stacked 2-row measurement block of the filter update.
struct MeasurementRow {
  Vec2 r;
  Mat2x15 H_B;
  Mat2x6 H_f;
  int landmark_index = -1;
  Mat2 noise;
};

/// Stacked EKF update with the given rows. Returns false (belief untouched)
/// when the innovation covariance is not positive definite.
bool kalman_update(FilterBelief& belief, const std::vector<MeasurementRow>& rows,
                   bool joseph_form = false);

/// Per-step bookkeeping of the robust update.
struct UpdateReport {
  int observed = 0;          // observations of landmarks in the state
  int behind_camera = 0;
  int gate_rejected = 0;
  int gated = 0;
  int consensus = 0;
  int rescued = 0;
  bool prediction_only = false;
  std::vector<int> gate_rejected_ids;
  std::vector<int> accepted_ids;
};

/// Mahalanobis gating, 1-point RANSAC consensus, stacked update, and a
/// high-innovation rescue pass. Observations of landmarks not in the state are
/// ignored.
UpdateReport robust_update(FilterBelief& belief, const Observations& observations,
                           const Extrinsics& ex, const Intrinsics& K, const EkfConfig& cfg,
                           std::mt19937_64& rng);

// -------------------------------------------------------------- augmentation

struct AugmentationJacobians {
  Eigen::Matrix<double, 6, 15> J_X;  // w.r.t. the IMU error state
  Eigen::Matrix<double, 6, 3> J_h;   // w.r.t. (u, v, ρ)
};

/// New landmark from the current pose and a pixel, with inverse depth `rho`.
InverseDepthLandmark landmark_from_observation(const ImuState& x, const Vec2& uv, double rho,
                                               const Extrinsics& ex, const Intrinsics& K);

AugmentationJacobians augmentation_jacobians(const ImuState& x, const Vec2& uv,
                                             const Extrinsics& ex, const Intrinsics& K);

/// Appends a landmark initialized from `obs` with prior (rho, sigma_rho) and
/// grows P by J [P 0; 0 Σ_hρ] Jᵀ. Throws std::length_error at the cap.
void augment_landmark(FilterBelief& belief, const FeatureObservation& obs, const Extrinsics& ex,
                      const Intrinsics& K, double rho, double sigma_rho, int cap);

// ------------------------------------------------------------------- pruning

/// Removes the landmarks at `indices` (any order) with their rows and columns.
void remove_landmarks(FilterBelief& belief, std::vector<int> indices);

/// Keeps only landmarks whose id is in `visible_ids`; survivor order kept.
void prune_landmarks(FilterBelief& belief, const std::unordered_set<int>& visible_ids);

/// Angle between a landmark's anchor ray and the current viewing ray.
double landmark_parallax(const ImuState& x, const InverseDepthLandmark& l, const Extrinsics& ex);

/// Drops lowest-parallax landmarks until at most `cap` remain.
void prune_to_cap(FilterBelief& belief, int cap, const Extrinsics& ex);

/// Removes landmarks whose inverse depth is not positive. Returns the count.
int prune_negative_depth(FilterBelief& belief);

/// P ← (P + Pᵀ)/2
void symmetrize(Eigen::MatrixXd& P);

}  // namespace vislam
