#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "vislam/config.hpp"
#include "vislam/eval.hpp"
#include "vislam/feedback.hpp"
#include "vislam/sim.hpp"

namespace vislam {

/// Sliding-window back-end: owns the window and publishes a versioned
/// snapshot after every solve.
class Backend {
 public:
  Backend(const BackendConfig& cfg, const NoiseModel& nm, const Extrinsics& ex,
          const Intrinsics& K)
      : cfg_(cfg), nm_(nm), ex_(ex), K_(K) {}

  bool initialized() const { return !graph_.keyframes.empty(); }
  const WindowGraph& graph() const { return graph_; }
  std::uint64_t version() const { return version_; }

  /// Adopts a two-keyframe initial map and publishes it.
  BackendResult adopt(MapInitResult init);

  /// Adds a keyframe whose inertial samples cover [last keyframe, kf.t].
  /// Empty when the solve aborts; the window keeps its previous estimate.
  std::optional<BackendResult> process(Keyframe kf, const std::vector<ImuSample>& imu);

  /// Report of the last solve attempt, also for aborted ones.
  const SolverReport& last_report() const { return last_; }

 private:
  BackendResult publish(const WindowCovariances& cov);

  BackendConfig cfg_;
  NoiseModel nm_;
  Extrinsics ex_;
  Intrinsics K_;
  WindowGraph graph_;
  std::uint64_t version_ = 0;
  SolverReport last_;
};

/// Samples overlapping [t0, t1) plus one trailing neighbour for clipping.
std::vector<ImuSample> imu_between(const std::vector<ImuSample>& imu, double t0, double t1);

struct DiagnosticsRow {
  int frame = 0;
  double t = 0.0;
  ImuState state;
  double position_error = std::numeric_limits<double>::quiet_NaN();
  double nees = std::numeric_limits<double>::quiet_NaN();
  int landmarks = 0;
  int observed = 0;
  int observed_outliers = 0;  // by simulator label, landmarks in the state
  int inliers = 0;
  int gate_rejected = 0;
  int gate_rejected_inliers = 0;   // by simulator label
  int gate_rejected_outliers = 0;
  int accepted_outliers = 0;
  bool prediction_only = false;
  bool keyframe = false;
  std::int64_t feedback_version = 0;  // 0 when no feedback this frame
  bool feedback_fused = false;
  int feedback_matches = 0;
  int injected = 0;
  double trace_before = std::numeric_limits<double>::quiet_NaN();
  double trace_after = std::numeric_limits<double>::quiet_NaN();
  double error_before = std::numeric_limits<double>::quiet_NaN();
  double error_after = std::numeric_limits<double>::quiet_NaN();
  // relative to max |P_ij|, only with covariance_checks
  double p_asymmetry = std::numeric_limits<double>::quiet_NaN();
  double p_min_eigenvalue = std::numeric_limits<double>::quiet_NaN();
};

struct BaLogRow {
  std::uint64_t version = 0;
  int keyframe_id = -1;
  double t = 0.0;
  int keyframes = 0;
  int landmarks = 0;
  int outliers_removed = 0;
  SolverReport report;
};

struct Timing {
  double total = 0.0;
  double simulate = 0.0;
  double predict = 0.0;
  double update = 0.0;
  double augment = 0.0;
  double backend = 0.0;
  double feedback = 0.0;
};

struct RunResult {
  std::string run;
  Mode mode = Mode::Full;
  Trajectory estimate;
  Trajectory groundtruth;  // at frame times, empty without ground truth
  std::optional<AlignmentResult> alignment;
  std::vector<DiagnosticsRow> diagnostics;
  std::vector<BaLogRow> ba_log;
  double mean_nees = std::numeric_limits<double>::quiet_NaN();
  double inlier_rate = 0.0;
  int keyframe_count = 0;
  int feedback_events = 0;
  int solver_aborts = 0;
  bool degraded = false;
  std::vector<std::string> warnings;
  Timing timing;

  std::optional<double> ate_rmse() const {
    if (!alignment) return std::nullopt;
    return alignment->ate_rmse;
  }
};

/// Runs filter (and back-end plus feedback in full mode) over the configured
/// dataset or simulation. Does not write anything.
RunResult run_filter(const RunConfig& cfg, const Dataset& data);
RunResult run_filter(const RunConfig& cfg);

/// Loads or simulates the dataset for `cfg`.
Dataset load_or_simulate(const RunConfig& cfg);

/// run_filter plus the artifacts in cfg.output_dir: trajectory.csv,
/// trajectory_aligned.csv, diagnostics.csv, ba_log.csv, metrics.json and
/// timing.json. Only timing.json depends on wall-clock time.
RunResult run_pipeline(const RunConfig& cfg);

void write_artifacts(const RunResult& r, const RunConfig& cfg, const std::filesystem::path& dir);

/// Deterministic metrics document.
std::string metrics_json(const RunResult& r, const RunConfig& cfg);

/// timestamp_ns,px,py,pz,qw,qx,qy,qz
inline constexpr const char* kTrajectoryHeader = "timestamp_ns,px,py,pz,qw,qx,qy,qz";
void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path);
Trajectory read_trajectory_csv(const std::filesystem::path& path);
/// Pose columns of groundtruth.csv.
Trajectory read_groundtruth_trajectory(const std::filesystem::path& path);

}  // namespace vislam
