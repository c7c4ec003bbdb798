#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vislam/camera.hpp"
#include "vislam/preintegration.hpp"
#include "vislam/types.hpp"

namespace vislam {

struct Keyframe {
  int id = -1;
  double t = 0.0;
  ImuState state;
  /// Preintegrated IMU from the previous keyframe; unused for the first one.
  PreintegratedDelta preint;
  Observations obs;
};

/// Sliding window of keyframes with a Euclidean map. keyframes.front() is
/// the gauge anchor; its pose (or its whole state) stays fixed during solves.
struct WindowGraph {
  std::vector<Keyframe> keyframes;
  std::map<int, Vec3> landmarks;
};

/// What the oldest keyframe holds fixed: its pose only, or the full state.
enum class Gauge { Pose, State };

struct SolverConfig {
  int max_iterations = 20;
  double step_tolerance = 1e-10;
  double cost_tolerance = 1e-12;
  /// Squared Mahalanobis thresholds of the norm-domain Huber loss.
  double huber_visual = 5.991;
  double huber_imu = 16.919;
  bool robust_imu = false;
  int window_size = 10;
  Gauge gauge = Gauge::State;
  double damping_floor = 1e-9;
  int max_damping_retries = 10;
  /// Landmark blocks with eigenvalue ratio below this are held fixed.
  double landmark_singular_ratio = 1e-10;
};

struct SolverReport {
  int iterations = 0;
  int rejected_steps = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double imu_chi2 = 0.0;
  double visual_chi2 = 0.0;
  int visual_factors = 0;
  int imu_factors = 0;
  int fixed_landmarks = 0;
  bool converged = false;
  bool aborted = false;
  std::string message;
  /// Cost at the start and after every accepted iteration.
  std::vector<double> cost_history;
};

/// Marginal covariances at the solution (block diagonal of the inverse of the
/// gauge-fixed normal matrix), ordered (dxi, dp, dv, dba, dbg). Fixed anchor
/// coordinates have zero rows and columns.
struct WindowCovariances {
  std::vector<Eigen::Matrix<double, 15, 15>> state;
  std::map<int, Mat3> landmark;

  Eigen::Matrix<double, 6, 6> pose(std::size_t k) const {
    return state.at(k).topLeftCorner<6, 6>();
  }
};

/// ρ(s) for a squared Mahalanobis norm s: s below delta2, 2 δ √s - δ² above.
double huber_cost(double s, double delta2);
/// dρ/ds, the IRLS weight.
double huber_weight(double s, double delta2);

/// π(R_BCᵀ(R_WBᵀ(L - p) - p_BC)) - z. Empty when behind the camera.
std::optional<Vec2> reprojection_residual(const ImuState& x, const Vec3& L,
                                          const FeatureObservation& obs, const Extrinsics& ex,
                                          const Intrinsics& K);

struct ReprojectionJacobians {
  Mat23 d_xi;
  Mat23 d_p;
  Mat23 d_L;
};

std::optional<ReprojectionJacobians> reprojection_jacobians(const ImuState& x, const Vec3& L,
                                                            const Extrinsics& ex,
                                                            const Intrinsics& K);

/// Inverse of the bias-walk covariance, ordered (b_g, b_a).
Eigen::Matrix<double, 6, 6> bias_information(const NoiseModel& nm);

double total_cost(const WindowGraph& g, const NoiseModel& nm, const SolverConfig& cfg,
                  const Extrinsics& ex, const Intrinsics& K, SolverReport* terms = nullptr);

/// One linearized step: 15 per keyframe (zero on fixed anchor coordinates)
/// and landmarks.
struct WindowStep {
  Eigen::VectorXd poses;
  std::map<int, Vec3> landmarks;
  bool ok = false;
};

/// Solves the (optionally damped) normal equations at the current estimate,
/// by Schur elimination of the landmarks or by a dense factorization.
WindowStep compute_step(const WindowGraph& g, const NoiseModel& nm, const SolverConfig& cfg,
                        const Extrinsics& ex, const Intrinsics& K, double lambda = 0.0,
                        bool dense = false);

void apply_step(WindowGraph& g, const WindowStep& step);

/// Gauss-Newton with Levenberg-style damping on cost increase. Covariances
/// are filled at the final estimate when `cov` is given.
SolverReport gauss_newton_solve(WindowGraph& g, const NoiseModel& nm, const SolverConfig& cfg,
                                const Extrinsics& ex, const Intrinsics& K,
                                WindowCovariances* cov = nullptr);

/// Covariances from the undamped normal matrix at the current estimate.
std::optional<WindowCovariances> window_covariances(const WindowGraph& g, const NoiseModel& nm,
                                                    const SolverConfig& cfg, const Extrinsics& ex,
                                                    const Intrinsics& K);

struct KeyframePolicy {
  double max_interval = 0.5;                     // [s]
  double max_rotation = 10.0 * 3.14159265358979 / 180.0;  // [rad]
};

bool select_keyframe(const ImuState& frame, double t, const Keyframe& last, bool backend_busy,
                     const KeyframePolicy& policy);

/// Mid-point of the shortest segment between two rays. Empty for (nearly)
/// parallel rays or a point behind either camera.
std::optional<Vec3> triangulate_midpoint(const Vec3& c1, const Vec3& d1, const Vec3& c2,
                                         const Vec3& d2);

/// Camera centre and world ray of an observation.
Vec3 camera_center(const ImuState& x, const Extrinsics& ex);
Vec3 world_ray(const ImuState& x, const Vec2& uv, const Extrinsics& ex, const Intrinsics& K);

/// Angle between two world rays [rad].
double ray_parallax(const Vec3& d1, const Vec3& d2);

/// Triangulates every landmark seen by at least two window keyframes that is
/// not yet mapped, using the widest-parallax pair. Returns the count added.
int triangulate_new_landmarks(WindowGraph& g, const Extrinsics& ex, const Intrinsics& K,
                              double min_parallax);

/// Drops observations whose reprojection χ² exceeds `chi2` and landmarks left
/// with fewer than two observers. Returns the number of observations removed.
int remove_outlier_observations(WindowGraph& g, const Extrinsics& ex, const Intrinsics& K,
                                double chi2);

/// Removes map points observed by fewer than two keyframes.
int drop_weak_landmarks(WindowGraph& g);

/// Appends `kf`; beyond `window_size` the oldest keyframe leaves together with
/// landmarks no longer observed twice.
void slide_window(WindowGraph& g, Keyframe kf, int window_size);

struct MapInitConfig {
  double min_parallax = 2.0 * 3.14159265358979 / 180.0;  // [rad]
  int min_matches = 20;
  int min_points = 15;
};

enum class MapInitStatus { Ok, ResetReference, Retry, SolveFailed };

struct MapInitResult {
  MapInitStatus status = MapInitStatus::Retry;
  WindowGraph graph;
  SolverReport report;
  WindowCovariances cov;
};

/// Two-view map initialization from filter poses: matches between the
/// reference and current frames, high-parallax ones triangulated, then a full
/// visual-inertial solve over the two-keyframe window.
MapInitResult initialize_map(const Keyframe& reference, const Keyframe& current,
                             const Extrinsics& ex, const Intrinsics& K, const NoiseModel& nm,
                             const SolverConfig& solver, const MapInitConfig& cfg);

}  // namespace vislam
