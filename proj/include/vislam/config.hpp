#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "vislam/ekf.hpp"
#include "vislam/feedback.hpp"
#include "vislam/sim.hpp"
#include "vislam/window_ba.hpp"

namespace vislam {

inline constexpr int kSchemaVersion = 1;

enum class Mode { EkfOnly, Full };

std::string to_string(Mode m);
Mode parse_mode(const std::string& s);

/// 1-σ initial uncertainty of the filter state.
struct InitialSigma {
  double rotation = 0.01;   // [rad]
  double position = 0.01;   // [m]
  double velocity = 0.05;   // [m/s]
  double bias_acc = 0.1;    // [m/s^2]
  double bias_gyro = 0.01;  // [rad/s]
};

struct FrontendConfig {
  EkfConfig ekf;
  InitialSigma initial;
  /// Landmarks rejected by the gate this many frames in a row are dropped.
  int max_consecutive_rejections = 3;
};

struct BackendConfig {
  SolverConfig solver;
  KeyframePolicy keyframes;
  MapInitConfig map_init;
  double map_init_delay = 10.0;  // [s] of filter-only operation first
  double map_init_max_baseline_time = 3.0;  // [s] before the reference resets
  double triangulation_min_parallax = 1.0 * 3.14159265358979 / 180.0;
  double outlier_chi2 = 9.21;
  /// Sensor-time delay before a solve's result is visible to the filter in
  /// single-thread mode.
  double latency = 0.2;
};

struct RunConfig {
  int schema_version = kSchemaVersion;
  Mode mode = Mode::Full;
  std::uint64_t seed = 1;
  bool single_thread = true;
  std::string sequence = "circle";
  std::optional<std::filesystem::path> dataset;
  std::filesystem::path output_dir = "out";

  SimSpec sim;
  NoiseModel noise;
  FrontendConfig frontend;
  BackendConfig backend;
  FeedbackConfig feedback;
  bool feedback_enabled = true;
  /// Per-frame symmetry and eigenvalue check of P (slow).
  bool covariance_checks = false;

  void validate() const;
};

/// Configuration error with the offending field path, e.g. "filter.gate_chi2".
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Parses the structured-text config. Unknown keys and a missing or
/// unsupported schema_version are errors.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Default run configuration with the filter noise model matched to the
/// simulated corruption.
RunConfig default_run_config();

/// Makes the filter noise model agree with the simulation corruption.
void match_noise_to_simulation(RunConfig& cfg);

}  // namespace vislam
