#include "vislam/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace vislam {

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

/// A mapping node plus its dotted path. Every key read is recorded so that
/// leftovers can be reported as unknown.
class Section {
 public:
  Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (present(node_) && !node_.IsMap()) fail(path_, "expected a mapping");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ConfigError(path + ": " + what);
  }

  YAML::Node get(const std::string& key) {
    seen_.insert(key);
    if (!present(node_)) return YAML::Node(YAML::NodeType::Null);
    const YAML::Node& n = node_;
    return n[key];
  }

  static bool present(const YAML::Node& n) { return n.IsDefined() && !n.IsNull(); }

  Section sub(const std::string& key) { return Section(get(key), at(key)); }

  template <class T>
  void read(const std::string& key, T& out) {
    const YAML::Node n = get(key);
    if (!present(n)) return;
    try {
      out = n.as<T>();
    } catch (const YAML::Exception&) {
      fail(at(key), "wrong type");
    }
  }

  void read_positive(const std::string& key, double& out) {
    read(key, out);
    if (!(out > 0.0)) fail(at(key), "must be positive");
  }

  void read_nonneg(const std::string& key, double& out) {
    read(key, out);
    if (!(out >= 0.0)) fail(at(key), "must be non-negative");
  }

  void read_prob(const std::string& key, double& out) {
    read(key, out);
    if (!(out >= 0.0 && out <= 1.0)) fail(at(key), "must lie in [0, 1]");
  }

  void read_degrees(const std::string& key, double& out_rad) {
    double deg = out_rad / kDeg;
    read(key, deg);
    out_rad = deg * kDeg;
  }

  void read_vec3(const std::string& key, Vec3& out) {
    const YAML::Node n = get(key);
    if (!present(n)) return;
    if (!n.IsSequence() || n.size() != 3) fail(at(key), "expected a list of 3 numbers");
    try {
      for (int i = 0; i < 3; ++i) out(i) = n[i].as<double>();
    } catch (const YAML::Exception&) {
      fail(at(key), "wrong type");
    }
  }

  /// Scalar (isotropic) or 3-list (diagonal).
  void read_diag(const std::string& key, Vec3& out) {
    const YAML::Node n = get(key);
    if (!present(n)) return;
    if (n.IsScalar()) {
      try {
        out.setConstant(n.as<double>());
      } catch (const YAML::Exception&) {
        fail(at(key), "wrong type");
      }
    } else {
      seen_.erase(key);
      read_vec3(key, out);
    }
    if (out.minCoeff() < 0.0) fail(at(key), "must be non-negative");
  }

  void read_diag(const std::string& key, Mat3& out) {
    Vec3 d = out.diagonal();
    read_diag(key, d);
    out = d.asDiagonal();
  }

  void read_rotation(const std::string& key, Rotation& out) {
    const YAML::Node n = get(key);
    if (!present(n)) return;
    if (!n.IsSequence() || n.size() != 9) fail(at(key), "expected 9 numbers (row-major)");
    Rotation R;
    try {
      for (int i = 0; i < 9; ++i) R(i / 3, i % 3) = n[i].as<double>();
    } catch (const YAML::Exception&) {
      fail(at(key), "wrong type");
    }
    if (!is_rotation(R, 1e-6)) fail(at(key), "not a rotation matrix");
    out = orthonormalize(R);
  }

  /// Throws on keys that were never read.
  void finish() const {
    if (!present(node_)) return;
    for (const auto& kv : node_) {
      const std::string k = kv.first.as<std::string>();
      if (!seen_.count(k)) fail(at(k), "unknown key");
    }
  }

 private:
  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

TrajectoryKind parse_kind(const std::string& s, const std::string& path) {
  if (s == "circle") return TrajectoryKind::Circle;
  if (s == "lissajous") return TrajectoryKind::Lissajous;
  if (s == "figure-eight") return TrajectoryKind::FigureEight;
  if (s == "stationary") return TrajectoryKind::Stationary;
  Section::fail(path, "unknown trajectory kind '" + s + "'");
}

void read_trajectory(Section s, TrajectorySpec& t) {
  std::string kind;
  s.read("kind", kind);
  if (!kind.empty()) t.kind = parse_kind(kind, s.at("kind"));
  s.read_nonneg("amplitude_x", t.amplitude_x);
  s.read_nonneg("amplitude_y", t.amplitude_y);
  s.read("omega_x", t.omega_x);
  s.read("omega_y", t.omega_y);
  s.read_nonneg("vertical_amplitude", t.vertical_amplitude);
  s.read("vertical_omega", t.vertical_omega);
  s.read_vec3("center", t.center);
  std::string yaw;
  s.read("yaw", yaw);
  if (yaw == "tangent") {
    t.yaw = YawPolicy::Tangent;
  } else if (yaw == "fixed") {
    t.yaw = YawPolicy::Fixed;
  } else if (!yaw.empty()) {
    Section::fail(s.at("yaw"), "expected 'tangent' or 'fixed'");
  }
  s.read_degrees("fixed_yaw_deg", t.fixed_yaw);
  s.read_nonneg("wobble_amplitude", t.wobble_amplitude);
  s.read("wobble_omega", t.wobble_omega);
  s.read_positive("duration", t.duration);
  s.read_positive("imu_rate", t.imu_rate);
  s.read_positive("frame_rate", t.frame_rate);
  s.finish();
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    Section::fail(s.at("imu_rate"), e.what());
  }
}

void read_world(Section s, WorldSpec& w) {
  s.read("landmark_count", w.landmark_count);
  if (w.landmark_count < 0) Section::fail(s.at("landmark_count"), "must be non-negative");
  std::string layout;
  s.read("layout", layout);
  if (layout == "cylinder") {
    w.layout = LandmarkLayout::Cylinder;
  } else if (layout == "box") {
    w.layout = LandmarkLayout::Box;
  } else if (!layout.empty()) {
    Section::fail(s.at("layout"), "expected 'cylinder' or 'box'");
  }
  s.read_positive("cylinder_radius", w.cylinder_radius);
  s.read_nonneg("cylinder_thickness", w.cylinder_thickness);
  s.read("z_min", w.z_min);
  s.read("z_max", w.z_max);
  s.read_vec3("box_min", w.box_min);
  s.read_vec3("box_max", w.box_max);
  s.finish();
  try {
    w.validate();
  } catch (const std::invalid_argument& e) {
    Section::fail(s.at("layout"), e.what());
  }
}

void read_corruption(Section s, CorruptionSpec& c) {
  s.read_diag("acc_psd", c.acc_psd);
  s.read_diag("gyro_psd", c.gyro_psd);
  s.read_vec3("bias_acc", c.bias_acc);
  s.read_vec3("bias_gyro", c.bias_gyro);
  s.read_nonneg("pixel_sigma", c.pixel_sigma);
  s.read_prob("outlier_prob", c.outlier_prob);
  s.read_nonneg("outlier_range_px", c.outlier_range_px);
  s.read_prob("dropout_prob", c.dropout_prob);
  s.finish();
}

void read_camera(Section s, Intrinsics& K, Extrinsics& ex) {
  s.read_positive("fx", K.fx);
  s.read_positive("fy", K.fy);
  s.read("cx", K.cx);
  s.read("cy", K.cy);
  s.read("width", K.width);
  s.read("height", K.height);
  if (K.width <= 0) Section::fail(s.at("width"), "must be positive");
  if (K.height <= 0) Section::fail(s.at("height"), "must be positive");
  s.read_rotation("R_BC", ex.R_BC);
  s.read_vec3("p_BC", ex.p_BC);
  s.finish();
}

void read_noise(Section s, RunConfig& cfg) {
  bool match = true;
  s.read("match_simulation", match);
  if (match) match_noise_to_simulation(cfg);
  NoiseModel& nm = cfg.noise;
  s.read_diag("acc_psd", nm.acc_psd);
  s.read_diag("gyro_psd", nm.gyro_psd);
  s.read_diag("bias_acc_walk", nm.bias_acc_walk);
  s.read_diag("bias_gyro_walk", nm.bias_gyro_walk);
  s.read_diag("filter_bias_acc_psd", nm.filter_bias_acc_psd);
  s.read_diag("filter_bias_gyro_psd", nm.filter_bias_gyro_psd);
  s.read_nonneg("pixel_sigma", nm.pixel_sigma);
  s.read_vec3("gravity", nm.gravity);
  s.finish();
  if (nm.bias_acc_walk.diagonal().minCoeff() <= 0.0) {
    Section::fail(s.at("bias_acc_walk"), "must be positive");
  }
  if (nm.bias_gyro_walk.diagonal().minCoeff() <= 0.0) {
    Section::fail(s.at("bias_gyro_walk"), "must be positive");
  }
}

void read_filter(Section s, FrontendConfig& f) {
  EkfConfig& e = f.ekf;
  s.read("landmark_cap", e.landmark_cap);
  if (e.landmark_cap < 1) Section::fail(s.at("landmark_cap"), "must be at least 1");
  s.read_positive("gate_chi2", e.gate_chi2);
  s.read("ransac_iterations", e.ransac_iterations);
  if (e.ransac_iterations < 0) Section::fail(s.at("ransac_iterations"), "must be non-negative");
  s.read_positive("ransac_inlier_chi2", e.ransac_inlier_chi2);
  s.read("rescue_high_innovation", e.rescue_high_innovation);
  s.read_positive("rho0", e.rho0);
  s.read_positive("sigma_rho", e.sigma_rho);
  s.read("joseph_form", e.joseph_form);
  s.read("max_consecutive_rejections", f.max_consecutive_rejections);
  if (f.max_consecutive_rejections < 1) {
    Section::fail(s.at("max_consecutive_rejections"), "must be at least 1");
  }
  Section init = s.sub("initial_sigma");
  init.read_nonneg("rotation", f.initial.rotation);
  init.read_nonneg("position", f.initial.position);
  init.read_nonneg("velocity", f.initial.velocity);
  init.read_nonneg("bias_acc", f.initial.bias_acc);
  init.read_nonneg("bias_gyro", f.initial.bias_gyro);
  init.finish();
  s.finish();
}

void read_solver(Section s, SolverConfig& c) {
  s.read("max_iterations", c.max_iterations);
  if (c.max_iterations < 1) Section::fail(s.at("max_iterations"), "must be at least 1");
  s.read_nonneg("step_tolerance", c.step_tolerance);
  s.read_nonneg("cost_tolerance", c.cost_tolerance);
  s.read_positive("huber_visual", c.huber_visual);
  s.read_positive("huber_imu", c.huber_imu);
  s.read("robust_imu", c.robust_imu);
  s.read("window_size", c.window_size);
  if (c.window_size < 2) Section::fail(s.at("window_size"), "must be at least 2");
  std::string gauge;
  s.read("gauge", gauge);
  if (gauge == "pose") {
    c.gauge = Gauge::Pose;
  } else if (gauge == "state") {
    c.gauge = Gauge::State;
  } else if (!gauge.empty()) {
    Section::fail(s.at("gauge"), "expected pose or state");
  }
  s.read_nonneg("damping_floor", c.damping_floor);
  s.read("max_damping_retries", c.max_damping_retries);
  s.read_nonneg("landmark_singular_ratio", c.landmark_singular_ratio);
  s.finish();
}

void read_backend(Section s, BackendConfig& b) {
  read_solver(s.sub("solver"), b.solver);
  Section kf = s.sub("keyframe");
  kf.read_positive("max_interval", b.keyframes.max_interval);
  kf.read_degrees("max_rotation_deg", b.keyframes.max_rotation);
  kf.finish();
  Section mi = s.sub("map_init");
  mi.read_degrees("min_parallax_deg", b.map_init.min_parallax);
  mi.read("min_matches", b.map_init.min_matches);
  mi.read("min_points", b.map_init.min_points);
  mi.read_nonneg("delay", b.map_init_delay);
  mi.read_positive("max_baseline_time", b.map_init_max_baseline_time);
  mi.finish();
  s.read_degrees("triangulation_min_parallax_deg", b.triangulation_min_parallax);
  s.read_positive("outlier_chi2", b.outlier_chi2);
  s.read_nonneg("latency", b.latency);
  s.finish();
}

void read_feedback(Section s, FeedbackConfig& f, bool& enabled) {
  s.read("enabled", enabled);
  s.read("inject", f.inject);
  s.read("max_iterations", f.max_iterations);
  if (f.max_iterations < 1) Section::fail(s.at("max_iterations"), "must be at least 1");
  s.read_nonneg("step_tolerance", f.step_tolerance);
  s.read_positive("huber_visual", f.huber_visual);
  s.read_positive("huber_imu", f.huber_imu);
  s.read_positive("inject_outlier_chi2", f.inject_outlier_chi2);
  s.finish();
}

}  // namespace

std::string to_string(Mode m) { return m == Mode::Full ? "full" : "ekf-only"; }

Mode parse_mode(const std::string& s) {
  if (s == "full") return Mode::Full;
  if (s == "ekf-only") return Mode::EkfOnly;
  throw ConfigError("mode: expected 'full' or 'ekf-only', got '" + s + "'");
}

void match_noise_to_simulation(RunConfig& cfg) {
  const CorruptionSpec& c = cfg.sim.corruption;
  cfg.noise.acc_psd = c.acc_psd.asDiagonal();
  cfg.noise.gyro_psd = c.gyro_psd.asDiagonal();
  cfg.noise.pixel_sigma = c.pixel_sigma;
  cfg.noise.gravity = cfg.sim.world.gravity;
}

RunConfig default_run_config() {
  RunConfig cfg;
  match_noise_to_simulation(cfg);
  return cfg;
}

void RunConfig::validate() const {
  if (schema_version != kSchemaVersion) throw ConfigError("schema_version: unsupported");
  try {
    sim.trajectory.validate();
    sim.world.validate();
    sim.corruption.validate();
    sim.K.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("simulation: ") + e.what());
  }
  if (noise.pixel_sigma <= 0.0) throw ConfigError("noise.pixel_sigma: must be positive");
}

RunConfig parse_run_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("<root>: parse error: ") + e.what());
  }
  if (!root || !root.IsMap()) throw ConfigError("<root>: expected a mapping");

  RunConfig cfg;
  Section s(root, "");
  if (!root["schema_version"]) throw ConfigError("schema_version: missing");
  s.read("schema_version", cfg.schema_version);
  if (cfg.schema_version != kSchemaVersion) {
    throw ConfigError("schema_version: unsupported version " +
                      std::to_string(cfg.schema_version));
  }

  std::string mode;
  s.read("mode", mode);
  if (!mode.empty()) cfg.mode = parse_mode(mode);
  s.read("seed", cfg.seed);
  s.read("single_thread", cfg.single_thread);
  s.read("sequence", cfg.sequence);
  std::string out;
  s.read("output_dir", out);
  if (!out.empty()) cfg.output_dir = out;
  std::string dataset;
  s.read("dataset", dataset);
  if (!dataset.empty()) cfg.dataset = dataset;

  Section sim = s.sub("simulation");
  read_trajectory(sim.sub("trajectory"), cfg.sim.trajectory);
  read_world(sim.sub("world"), cfg.sim.world);
  read_corruption(sim.sub("corruption"), cfg.sim.corruption);
  sim.finish();

  read_camera(s.sub("camera"), cfg.sim.K, cfg.sim.ex);

  read_noise(s.sub("noise"), cfg);
  cfg.sim.world.gravity = cfg.noise.gravity;

  read_filter(s.sub("filter"), cfg.frontend);
  read_backend(s.sub("backend"), cfg.backend);
  read_feedback(s.sub("feedback"), cfg.feedback, cfg.feedback_enabled);
  s.finish();

  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path.string() + ": cannot open");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace vislam
