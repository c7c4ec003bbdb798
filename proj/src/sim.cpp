#include "vislam/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace vislam {

namespace {

enum Stream : std::uint32_t { kImuStream = 1, kWorldStream = 2, kFrameStream = 3 };

std::mt19937_64 make_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 R;
  R << 1, 0, 0, 0, c, -s, 0, s, c;
  return R;
}

Mat3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 R;
  R << c, 0, s, 0, 1, 0, -s, 0, c;
  return R;
}

Mat3 rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 R;
  R << c, -s, 0, s, c, 0, 0, 0, 1;
  return R;
}

}  // namespace

int TrajectorySpec::imu_per_frame() const {
  return static_cast<int>(std::lround(imu_rate / frame_rate));
}

void TrajectorySpec::validate() const {
  if (!(imu_rate > 0.0) || !(frame_rate > 0.0)) {
    throw std::invalid_argument("trajectory: rates must be positive");
  }
  const double ratio = imu_rate / frame_rate;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 || ratio < 1.0) {
    throw std::invalid_argument("trajectory: imu_rate must be an integer multiple of frame_rate");
  }
  if (!(duration > 0.0)) throw std::invalid_argument("trajectory: duration must be positive");
}

void WorldSpec::validate() const {
  if (landmark_count < 0) throw std::invalid_argument("world: negative landmark count");
  if (layout == LandmarkLayout::Cylinder) {
    if (!(cylinder_radius > 0.0) || !(cylinder_thickness >= 0.0) || !(z_max > z_min)) {
      throw std::invalid_argument("world: cylinder extents must be positive");
    }
  } else if (!((box_max - box_min).minCoeff() > 0.0)) {
    throw std::invalid_argument("world: box extents must be positive");
  }
}

CorruptionSpec CorruptionSpec::none() {
  CorruptionSpec c;
  c.acc_psd.setZero();
  c.gyro_psd.setZero();
  c.bias_acc.setZero();
  c.bias_gyro.setZero();
  c.pixel_sigma = 0.0;
  return c;
}

void CorruptionSpec::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(outlier_prob) || !prob(dropout_prob)) {
    throw std::invalid_argument("corruption: probabilities must lie in [0, 1]");
  }
  if (acc_psd.minCoeff() < 0.0 || gyro_psd.minCoeff() < 0.0 || pixel_sigma < 0.0) {
    throw std::invalid_argument("corruption: noise levels must be non-negative");
  }
}

Extrinsics SimSpec::default_extrinsics() {
  // camera z along body +y, camera x along body x
  Extrinsics ex;
  ex.R_BC << 1, 0, 0,
             0, 0, 1,
             0, -1, 0;
  ex.p_BC = Vec3(0.05, 0.0, 0.02);
  return ex;
}

PoseSample analytic_pose(const TrajectorySpec& spec, double t) {
  PoseSample s;
  const double ax = spec.amplitude_x, ay = spec.amplitude_y;
  const double wx = spec.omega_x, wy = spec.omega_y;
  Vec3 p = Vec3::Zero(), v = Vec3::Zero(), a = Vec3::Zero();
  switch (spec.kind) {
    case TrajectoryKind::Circle:
      p << ax * std::cos(wx * t), ax * std::sin(wx * t), 0.0;
      v << -ax * wx * std::sin(wx * t), ax * wx * std::cos(wx * t), 0.0;
      a << -ax * wx * wx * std::cos(wx * t), -ax * wx * wx * std::sin(wx * t), 0.0;
      break;
    case TrajectoryKind::Lissajous:
      p << ax * std::cos(wx * t), ay * std::sin(wy * t), 0.0;
      v << -ax * wx * std::sin(wx * t), ay * wy * std::cos(wy * t), 0.0;
      a << -ax * wx * wx * std::cos(wx * t), -ay * wy * wy * std::sin(wy * t), 0.0;
      break;
    case TrajectoryKind::FigureEight:
      p << ax * std::sin(wx * t), 0.5 * ay * std::sin(2.0 * wx * t), 0.0;
      v << ax * wx * std::cos(wx * t), ay * wx * std::cos(2.0 * wx * t), 0.0;
      a << -ax * wx * wx * std::sin(wx * t), -2.0 * ay * wx * wx * std::sin(2.0 * wx * t), 0.0;
      break;
    case TrajectoryKind::Stationary:
      break;
  }
  if (spec.kind != TrajectoryKind::Stationary) {
    const double h = spec.vertical_amplitude, wz = spec.vertical_omega;
    p.z() = h * std::sin(wz * t);
    v.z() = h * wz * std::cos(wz * t);
    a.z() = -h * wz * wz * std::sin(wz * t);
  }
  s.p = spec.center + p;
  s.v = v;
  s.a_world = a;

  double psi = spec.fixed_yaw, psi_dot = 0.0;
  const double speed2 = v.x() * v.x() + v.y() * v.y();
  if (spec.yaw == YawPolicy::Tangent && speed2 > 1e-12) {
    psi = std::atan2(v.y(), v.x());
    psi_dot = (v.x() * a.y() - v.y() * a.x()) / speed2;
  }
  double phi = 0.0, phi_dot = 0.0, theta = 0.0, theta_dot = 0.0;
  if (spec.kind != TrajectoryKind::Stationary && spec.wobble_amplitude != 0.0) {
    const double A = spec.wobble_amplitude, w = spec.wobble_omega;
    phi = A * std::sin(w * t);
    phi_dot = A * w * std::cos(w * t);
    theta = A * std::sin(1.3 * w * t + 0.5);
    theta_dot = 1.3 * A * w * std::cos(1.3 * w * t + 0.5);
  }
  s.R = rot_z(psi) * rot_y(theta) * rot_x(phi);
  const double sf = std::sin(phi), cf = std::cos(phi);
  const double st = std::sin(theta), ct = std::cos(theta);
  s.omega_body << phi_dot - psi_dot * st,
                  theta_dot * cf + psi_dot * ct * sf,
                  -theta_dot * sf + psi_dot * ct * cf;
  return s;
}

Observations Frame::observations() const {
  Observations out;
  out.reserve(obs.size());
  for (const auto& o : obs) out.push_back(o.obs);
  return out;
}

std::vector<GroundTruthSample> sample_groundtruth(const TrajectorySpec& spec,
                                                  const CorruptionSpec& corruption) {
  spec.validate();
  const long n = std::lround(spec.duration * spec.imu_rate);
  std::vector<GroundTruthSample> gt;
  gt.reserve(n + 1);
  for (long k = 0; k <= n; ++k) {
    const double t = static_cast<double>(k) / spec.imu_rate;
    const PoseSample ps = analytic_pose(spec, t);
    GroundTruthSample g;
    g.t = t;
    g.state.R = ps.R;
    g.state.p = ps.p;
    g.state.v = ps.v;
    g.state.ba = corruption.bias_acc;
    g.state.bg = corruption.bias_gyro;
    // positions follow the piecewise-constant acceleration of the samples
    if (k > 0) g.state.p = gt.back().state.p + 0.5 * (gt.back().state.v + g.state.v) / spec.imu_rate;
    gt.push_back(g);
  }
  return gt;
}

std::vector<ImuSample> synthesize_imu(const std::vector<GroundTruthSample>& gt,
                                      const CorruptionSpec& corruption, const Vec3& gravity,
                                      std::uint64_t seed) {
  corruption.validate();
  std::mt19937_64 rng = make_rng(seed, kImuStream);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<ImuSample> out;
  if (gt.size() < 2) return out;
  out.reserve(gt.size() - 1);
  for (std::size_t k = 0; k + 1 < gt.size(); ++k) {
    const ImuState& a = gt[k].state;
    const ImuState& b = gt[k + 1].state;
    const double dt = gt[k + 1].t - gt[k].t;
    ImuSample s;
    s.t = gt[k].t;
    s.dt = dt;
    s.gyro = log_so3(a.R.transpose() * b.R) / dt + a.bg;
    s.acc = a.R.transpose() * ((b.v - a.v) / dt - gravity) + a.ba;
    for (int i = 0; i < 3; ++i) {
      const double ng = normal(rng), na = normal(rng);
      s.gyro(i) += std::sqrt(corruption.gyro_psd(i) / dt) * ng;
      s.acc(i) += std::sqrt(corruption.acc_psd(i) / dt) * na;
    }
    out.push_back(s);
  }
  return out;
}

std::map<int, Vec3> generate_world(const WorldSpec& world, std::uint64_t seed) {
  world.validate();
  std::mt19937_64 rng = make_rng(seed, kWorldStream);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::map<int, Vec3> out;
  for (int i = 0; i < world.landmark_count; ++i) {
    Vec3 L;
    if (world.layout == LandmarkLayout::Cylinder) {
      const double ang = 2.0 * std::numbers::pi * u01(rng);
      const double r = world.cylinder_radius + world.cylinder_thickness * (u01(rng) - 0.5);
      const double z = world.z_min + (world.z_max - world.z_min) * u01(rng);
      L << r * std::cos(ang), r * std::sin(ang), z;
    } else {
      for (int j = 0; j < 3; ++j) {
        L(j) = world.box_min(j) + (world.box_max(j) - world.box_min(j)) * u01(rng);
      }
    }
    out[i] = L;
  }
  return out;
}

std::vector<Frame> synthesize_frames(const std::vector<GroundTruthSample>& gt,
                                     const TrajectorySpec& spec, const std::map<int, Vec3>& world,
                                     const CorruptionSpec& corruption, const Intrinsics& K,
                                     const Extrinsics& ex, std::uint64_t seed) {
  corruption.validate();
  K.validate();
  std::mt19937_64 rng = make_rng(seed, kFrameStream);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const int step = spec.imu_per_frame();
  const double sigma = corruption.pixel_sigma;

  std::vector<Frame> frames;
  int id = 0;
  for (std::size_t k = 0; k < gt.size(); k += step) {
    Frame f;
    f.id = id++;
    f.t = gt[k].t;
    const ImuState& x = gt[k].state;
    const Mat3 R_CW = (x.R * ex.R_BC).transpose();
    const Vec3 p_WC = x.p + x.R * ex.p_BC;
    for (const auto& [lid, L] : world) {
      const auto uv = project(R_CW * (L - p_WC), K);
      if (!uv || !in_image(*uv, K)) continue;
      // draw every random number unconditionally so streams stay aligned
      const double drop = u01(rng);
      const double is_out = u01(rng);
      const double ou = u01(rng), ov = u01(rng);
      Vec2 noise(normal(rng), normal(rng));
      while (noise.norm() > 6.0) noise = Vec2(normal(rng), normal(rng));
      if (drop < corruption.dropout_prob) continue;

      LabeledObservation lo;
      lo.true_uv = *uv;
      lo.obs.landmark_id = lid;
      lo.obs.cov = Mat2::Identity() * std::max(sigma * sigma, 1e-12);
      if (is_out < corruption.outlier_prob) {
        lo.outlier = true;
        if (corruption.outlier_range_px > 0.0) {
          const double r = corruption.outlier_range_px;
          lo.obs.uv = *uv + Vec2((2.0 * ou - 1.0) * r, (2.0 * ov - 1.0) * r);
          lo.obs.uv.x() = std::clamp(lo.obs.uv.x(), 0.0, std::nextafter(static_cast<double>(K.width), 0.0));
          lo.obs.uv.y() = std::clamp(lo.obs.uv.y(), 0.0, std::nextafter(static_cast<double>(K.height), 0.0));
        } else {
          lo.obs.uv = Vec2(ou * K.width, ov * K.height);
        }
      } else {
        lo.obs.uv = *uv + sigma * noise;
      }
      f.obs.push_back(lo);
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

Dataset simulate(const SimSpec& spec) {
  spec.world.validate();
  Dataset d;
  d.groundtruth = sample_groundtruth(spec.trajectory, spec.corruption);
  d.imu = synthesize_imu(d.groundtruth, spec.corruption, spec.world.gravity, spec.trajectory.seed);
  d.world = generate_world(spec.world, spec.trajectory.seed);
  d.frames = synthesize_frames(d.groundtruth, spec.trajectory, d.world, spec.corruption, spec.K,
                               spec.ex, spec.trajectory.seed);
  return d;
}

ImuState groundtruth_at(const std::vector<GroundTruthSample>& gt, double t) {
  if (gt.empty()) throw std::invalid_argument("groundtruth_at: empty trajectory");
  if (t <= gt.front().t) return gt.front().state;
  if (t >= gt.back().t) return gt.back().state;
  const auto it = std::upper_bound(gt.begin(), gt.end(), t,
                                   [](double v, const GroundTruthSample& g) { return v < g.t; });
  const GroundTruthSample& b = *it;
  const GroundTruthSample& a = *(it - 1);
  const double alpha = (t - a.t) / (b.t - a.t);
  ImuState x = a.state;
  x.R = a.state.R * exp_so3(alpha * log_so3(a.state.R.transpose() * b.state.R));
  x.p = (1.0 - alpha) * a.state.p + alpha * b.state.p;
  x.v = (1.0 - alpha) * a.state.v + alpha * b.state.v;
  x.ba = (1.0 - alpha) * a.state.ba + alpha * b.state.ba;
  x.bg = (1.0 - alpha) * a.state.bg + alpha * b.state.bg;
  return x;
}

}  // namespace vislam
