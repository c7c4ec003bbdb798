#include "vislam/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>
#include <json.hpp>

#include "vislam/dataset.hpp"

namespace vislam {

namespace fs = std::filesystem;

// ------------------------------------------------------------------ backend

BackendResult Backend::adopt(MapInitResult init) {
  graph_ = std::move(init.graph);
  last_ = init.report;
  return publish(init.cov);
}

std::optional<BackendResult> Backend::process(Keyframe kf, const std::vector<ImuSample>& imu) {
  const Keyframe& prev = graph_.keyframes.back();
  kf.preint = preintegrate(imu, prev.t, kf.t, {prev.state.bg, prev.state.ba}, nm_);
  slide_window(graph_, std::move(kf), cfg_.solver.window_size);
  triangulate_new_landmarks(graph_, ex_, K_, cfg_.triangulation_min_parallax);

  WindowGraph backup = graph_;
  WindowCovariances cov;
  last_ = gauss_newton_solve(graph_, nm_, cfg_.solver, ex_, K_, &cov);
  if (last_.aborted) {
    graph_ = std::move(backup);
    return std::nullopt;
  }
  if (remove_outlier_observations(graph_, ex_, K_, cfg_.outlier_chi2) > 0) {
    const SolverReport again = gauss_newton_solve(graph_, nm_, cfg_.solver, ex_, K_, &cov);
    if (again.aborted) {
      last_ = again;
      graph_ = std::move(backup);
      return std::nullopt;
    }
    last_.iterations += again.iterations;
    last_.final_cost = again.final_cost;
    last_.converged = again.converged;
    last_.fixed_landmarks = again.fixed_landmarks;
  }
  return publish(cov);
}

BackendResult Backend::publish(const WindowCovariances& cov) {
  BackendResult r;
  r.version = ++version_;
  const Keyframe& kf = graph_.keyframes.back();
  r.keyframe_id = kf.id;
  r.keyframe_time = kf.t;
  r.keyframe_state = kf.state;
  r.map = graph_.landmarks;
  for (const auto& [id, L] : graph_.landmarks) {
    const auto it = cov.landmark.find(id);
    r.landmark_cov[id] = it != cov.landmark.end() ? it->second : Mat3::Identity();
  }
  for (std::size_t k = 0; k < graph_.keyframes.size() && k < cov.state.size(); ++k) {
    r.pose_cov[graph_.keyframes[k].id] = cov.pose(k);
  }
  r.report = last_;
  return r;
}

std::vector<ImuSample> imu_between(const std::vector<ImuSample>& imu, double t0, double t1) {
  constexpr double kEps = 1e-9;
  auto first = std::lower_bound(imu.begin(), imu.end(), t0 - kEps,
                                [](const ImuSample& s, double t) { return s.t + s.dt < t; });
  if (first != imu.begin()) --first;
  auto last = std::lower_bound(first, imu.end(), t1 - kEps,
                               [](const ImuSample& s, double t) { return s.t < t; });
  if (last != imu.end()) ++last;
  return {first, last};
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct BackendJob {
  Keyframe kf;
  std::vector<ImuSample> imu;
};

struct BackendOutput {
  std::optional<BackendResult> result;
  BaLogRow log;
  double ready_time = 0.0;
};

BaLogRow log_row(const Backend& b, const Keyframe& kf, std::uint64_t version) {
  BaLogRow row;
  row.version = version;
  row.keyframe_id = kf.id;
  row.t = kf.t;
  row.keyframes = static_cast<int>(b.graph().keyframes.size());
  row.landmarks = static_cast<int>(b.graph().landmarks.size());
  row.report = b.last_report();
  return row;
}

/// Back-end behind either a deterministic latency model or a worker thread.
class BackendRunner {
 public:
  BackendRunner(const RunConfig& cfg, const NoiseModel& nm, const Extrinsics& ex,
                const Intrinsics& K)
      : backend_(cfg.backend, nm, ex, K), latency_(cfg.backend.latency),
        threaded_(!cfg.single_thread) {}

  ~BackendRunner() {
    if (worker_.joinable()) {
      {
        std::lock_guard<std::mutex> lk(m_);
        stop_ = true;
      }
      cv_.notify_all();
      worker_.join();
    }
  }

  bool initialized() const { return backend_initialized_; }

  void adopt(MapInitResult init, double now) {
    BackendOutput out;
    const Keyframe kf = init.graph.keyframes.back();
    out.result = backend_.adopt(std::move(init));
    out.log = log_row(backend_, kf, out.result->version);
    out.ready_time = now + latency_;
    backend_initialized_ = true;
    if (threaded_) {
      out.ready_time = now;
      worker_ = std::thread([this] { loop(); });
    }
    push_output(std::move(out));
  }

  void submit(BackendJob job, double now) {
    if (!threaded_) {
      const auto t0 = Clock::now();
      run_job(std::move(job), now + latency_);
      busy_time_ += seconds_since(t0);
      return;
    }
    {
      std::lock_guard<std::mutex> lk(m_);
      jobs_.push_back(std::move(job));
      ++in_flight_;
    }
    cv_.notify_all();
  }

  bool busy(double now) {
    std::lock_guard<std::mutex> lk(m_);
    if (threaded_) return in_flight_ > 0;
    return !outputs_.empty() && outputs_.front().ready_time > now;
  }

  /// Everything ready by `now`, oldest first.
  std::vector<BackendOutput> poll(double now) {
    std::lock_guard<std::mutex> lk(m_);
    std::vector<BackendOutput> ready;
    while (!outputs_.empty() && (threaded_ || outputs_.front().ready_time <= now)) {
      ready.push_back(std::move(outputs_.front()));
      outputs_.pop_front();
    }
    return ready;
  }

  /// Blocks until the worker is idle (end of run).
  void drain() {
    if (!threaded_) return;
    std::unique_lock<std::mutex> lk(m_);
    idle_cv_.wait(lk, [this] { return in_flight_ == 0; });
  }

  double busy_time() const { return busy_time_; }

 private:
  void run_job(BackendJob job, double ready_time) {
    BackendOutput out;
    const Keyframe kf = job.kf;
    out.result = backend_.process(std::move(job.kf), job.imu);
    out.log = log_row(backend_, kf, out.result ? out.result->version : 0);
    out.ready_time = ready_time;
    push_output(std::move(out));
  }

  void push_output(BackendOutput out) {
    std::lock_guard<std::mutex> lk(m_);
    outputs_.push_back(std::move(out));
  }

  void loop() {
    for (;;) {
      BackendJob job;
      {
        std::unique_lock<std::mutex> lk(m_);
        cv_.wait(lk, [this] { return stop_ || !jobs_.empty(); });
        if (stop_) return;
        job = std::move(jobs_.front());
        jobs_.pop_front();
      }
      const auto t0 = Clock::now();
      run_job(std::move(job), 0.0);
      {
        std::lock_guard<std::mutex> lk(m_);
        busy_time_ += seconds_since(t0);
        --in_flight_;
      }
      idle_cv_.notify_all();
    }
  }

  Backend backend_;
  double latency_;
  bool threaded_;
  bool backend_initialized_ = false;
  double busy_time_ = 0.0;

  std::mutex m_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::deque<BackendJob> jobs_;
  std::deque<BackendOutput> outputs_;
  int in_flight_ = 0;
  bool stop_ = false;
  std::thread worker_;
};

FilterBelief initial_belief(const ImuState& x0, const InitialSigma& s) {
  FilterBelief b;
  b.imu = x0;
  b.imu.ba.setZero();
  b.imu.bg.setZero();
  Vec15 d;
  d << Vec3::Constant(s.rotation * s.rotation), Vec3::Constant(s.position * s.position),
      Vec3::Constant(s.velocity * s.velocity), Vec3::Constant(s.bias_acc * s.bias_acc),
      Vec3::Constant(s.bias_gyro * s.bias_gyro);
  b.P = d.asDiagonal();
  return b;
}

/// Initial pose from ground truth when available; otherwise level at the
/// origin and at rest.
ImuState initial_state(const Dataset& data, double t0) {
  if (!data.groundtruth.empty()) return groundtruth_at(data.groundtruth, t0);
  return ImuState{};
}

double nees_of(const FilterBelief& b, const ImuState& truth) {
  const Vec15 e = imu_state_error(truth, b.imu);
  const Eigen::LDLT<Mat15> ldlt(b.imu_cov());
  if (ldlt.info() != Eigen::Success) return std::numeric_limits<double>::quiet_NaN();
  return e.dot(ldlt.solve(e));
}

void augment_new(FilterBelief& belief, const Observations& obs, const RunConfig& cfg,
                 const Extrinsics& ex, const Intrinsics& K, std::mt19937_64& rng) {
  const int cap = cfg.frontend.ekf.landmark_cap;
  if (belief.landmark_count() >= cap) return;
  std::vector<const FeatureObservation*> cand;
  for (const auto& o : obs) {
    if (belief.index_of(o.landmark_id) < 0) cand.push_back(&o);
  }
  std::shuffle(cand.begin(), cand.end(), rng);
  for (const auto* o : cand) {
    if (belief.landmark_count() >= cap) break;
    augment_landmark(belief, *o, ex, K, cfg.frontend.ekf.rho0, cfg.frontend.ekf.sigma_rho, cap);
  }
}

}  // namespace

Dataset load_or_simulate(const RunConfig& cfg) {
  if (cfg.dataset) return read_dataset(*cfg.dataset, cfg.noise.pixel_sigma);
  SimSpec spec = cfg.sim;
  spec.trajectory.seed = cfg.seed;
  return simulate(spec);
}

RunResult run_filter(const RunConfig& cfg) {
  const auto t0 = Clock::now();
  const Dataset data = load_or_simulate(cfg);
  const double sim_time = seconds_since(t0);
  RunResult r = run_filter(cfg, data);
  r.timing.simulate = sim_time;
  r.timing.total += sim_time;
  return r;
}

RunResult run_filter(const RunConfig& cfg, const Dataset& data) {
  const auto start = Clock::now();
  RunResult res;
  res.mode = cfg.mode;
  res.run = cfg.sequence + "-s" + std::to_string(cfg.seed) + "-" + to_string(cfg.mode);
  if (data.frames.empty()) {
    res.warnings.push_back("dataset has no frames");
    res.degraded = true;
    return res;
  }

  const Extrinsics& ex = cfg.sim.ex;
  const Intrinsics& K = cfg.sim.K;
  const NoiseModel& nm = cfg.noise;
  const EkfConfig& ekf = cfg.frontend.ekf;
  const bool full = cfg.mode == Mode::Full;
  const bool has_gt = !data.groundtruth.empty();

  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    0x5eedu};
  std::mt19937_64 rng(seq);

  FilterBelief belief = initial_belief(initial_state(data, data.frames.front().t),
                                       cfg.frontend.initial);
  BackendRunner backend(cfg, nm, ex, K);

  std::unordered_map<int, int> rejections;
  std::optional<Keyframe> reference;
  Keyframe last_kf;
  int keyframes = 0;
  long observed_total = 0, accepted_total = 0;
  double nees_sum = 0.0;
  int nees_count = 0;

  auto apply_outputs = [&](std::vector<BackendOutput> outs, const Frame& frame,
                           const Observations& obs, DiagnosticsRow& row) {
    for (auto& out : outs) {
      res.ba_log.push_back(out.log);
      if (!out.result) {
        ++res.solver_aborts;
        res.degraded = true;
        res.warnings.push_back("solver abort at keyframe " + std::to_string(out.log.keyframe_id) +
                               ": " + out.log.report.message);
        continue;
      }
      if (!cfg.feedback_enabled) continue;
      const BackendResult& br = *out.result;
      const auto tf = Clock::now();
      const BiasPair bias{br.keyframe_state.bg, br.keyframe_state.ba};
      const PreintegratedDelta delta =
          preintegrate(imu_between(data.imu, br.keyframe_time, frame.t), br.keyframe_time, frame.t,
                       bias, nm);
      if (has_gt) row.error_before = (belief.imu.p - groundtruth_at(data.groundtruth, frame.t).p).norm();
      const FeedbackReport fb = feedback_cycle(belief, br, delta, obs, ex, K, nm,
                                               ekf.landmark_cap, cfg.feedback, rng);
      res.timing.feedback += seconds_since(tf);
      if (fb.stale) continue;
      ++res.feedback_events;
      row.feedback_version = static_cast<std::int64_t>(br.version);
      row.feedback_fused = fb.fused;
      row.feedback_matches = fb.matches;
      row.injected += fb.injection.injected;
      row.trace_before = fb.trace_before;
      row.trace_after = fb.trace_after;
      if (has_gt) row.error_after = (belief.imu.p - groundtruth_at(data.groundtruth, frame.t).p).norm();
    }
  };

  std::size_t imu_cursor = 0;
  for (std::size_t fi = 0; fi < data.frames.size(); ++fi) {
    const Frame& frame = data.frames[fi];
    Observations obs = frame.observations();
    for (auto& o : obs) o.cov = nm.pixel_cov();
    std::unordered_map<int, bool> label;
    for (const auto& o : frame.obs) label[o.obs.landmark_id] = o.outlier;

    DiagnosticsRow row;
    row.frame = frame.id;
    row.t = frame.t;

    if (fi > 0) {
      auto tp = Clock::now();
      const double t_prev = data.frames[fi - 1].t;
      std::vector<ImuSample> batch;
      while (imu_cursor < data.imu.size() && data.imu[imu_cursor].t < frame.t - 1e-9) {
        if (data.imu[imu_cursor].t >= t_prev - 1e-9) batch.push_back(data.imu[imu_cursor]);
        ++imu_cursor;
      }
      predict_interval(belief, batch, nm);
      res.timing.predict += seconds_since(tp);

      for (const auto& o : obs) {
        if (label[o.landmark_id] && belief.index_of(o.landmark_id) >= 0) ++row.observed_outliers;
      }
      tp = Clock::now();
      const UpdateReport up = robust_update(belief, obs, ex, K, ekf, rng);
      res.timing.update += seconds_since(tp);
      row.observed = up.observed;
      row.inliers = up.consensus + up.rescued;
      row.gate_rejected = up.gate_rejected;
      row.prediction_only = up.prediction_only;
      observed_total += up.observed;
      accepted_total += row.inliers;
      for (int id : up.gate_rejected_ids) {
        (label[id] ? row.gate_rejected_outliers : row.gate_rejected_inliers) += 1;
        ++rejections[id];
      }
      for (int id : up.accepted_ids) {
        if (label[id]) ++row.accepted_outliers;
        rejections.erase(id);
      }

      // prune: negative depth, not seen this frame, repeatedly rejected
      prune_negative_depth(belief);
      std::unordered_set<int> keep;
      for (const auto& o : obs) {
        const auto it = rejections.find(o.landmark_id);
        if (it == rejections.end() || it->second < cfg.frontend.max_consecutive_rejections) {
          keep.insert(o.landmark_id);
        }
      }
      prune_landmarks(belief, keep);
      for (auto it = rejections.begin(); it != rejections.end();) {
        it = keep.count(it->first) ? std::next(it) : rejections.erase(it);
      }
    }

    if (full) {
      const auto tb = Clock::now();
      if (!backend.initialized()) {
        if (frame.t - data.frames.front().t >= cfg.backend.map_init_delay) {
          Keyframe cur{frame.id, frame.t, belief.imu, PreintegratedDelta{}, obs};
          if (!reference) {
            reference = cur;
          } else {
            cur.preint = preintegrate(imu_between(data.imu, reference->t, frame.t), reference->t,
                                      frame.t, {reference->state.bg, reference->state.ba}, nm);
            MapInitResult init = initialize_map(*reference, cur, ex, K, nm, cfg.backend.solver,
                                                cfg.backend.map_init);
            switch (init.status) {
              case MapInitStatus::Ok:
                backend.adopt(std::move(init), frame.t);
                last_kf = cur;
                keyframes += 2;
                row.keyframe = true;
                break;
              case MapInitStatus::SolveFailed:
                res.warnings.push_back("map initialization solve failed at frame " +
                                       std::to_string(frame.id));
                reference = cur;
                break;
              case MapInitStatus::ResetReference:
                reference = cur;
                break;
              case MapInitStatus::Retry:
                if (frame.t - reference->t > cfg.backend.map_init_max_baseline_time) {
                  reference = cur;
                }
                break;
            }
          }
        }
      } else {
        const bool busy = backend.busy(frame.t);
        apply_outputs(backend.poll(frame.t), frame, obs, row);
        if (select_keyframe(belief.imu, frame.t, last_kf, busy, cfg.backend.keyframes) &&
            frame.t > last_kf.t) {
          Keyframe kf{frame.id, frame.t, belief.imu, PreintegratedDelta{}, obs};
          BackendJob job{kf, imu_between(data.imu, last_kf.t, frame.t)};
          backend.submit(std::move(job), frame.t);
          last_kf = kf;
          ++keyframes;
          row.keyframe = true;
        }
      }
      res.timing.backend += seconds_since(tb);
    }

    const auto ta = Clock::now();
    augment_new(belief, obs, cfg, ex, K, rng);
    res.timing.augment += seconds_since(ta);

    row.state = belief.imu;
    row.landmarks = belief.landmark_count();
    if (cfg.covariance_checks) {
      const double scale = std::max(belief.P.cwiseAbs().maxCoeff(), 1e-300);
      row.p_asymmetry = (belief.P - belief.P.transpose()).cwiseAbs().maxCoeff() / scale;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(belief.P, Eigen::EigenvaluesOnly);
      row.p_min_eigenvalue = es.eigenvalues().minCoeff() / scale;
    }
    if (has_gt) {
      const ImuState truth = groundtruth_at(data.groundtruth, frame.t);
      row.position_error = (belief.imu.p - truth.p).norm();
      row.nees = nees_of(belief, truth);
      if (std::isfinite(row.nees)) {
        nees_sum += row.nees;
        ++nees_count;
      }
      res.groundtruth.push_back({frame.t, truth.R, truth.p});
    }
    res.estimate.push_back({frame.t, belief.imu.R, belief.imu.p});
    res.diagnostics.push_back(row);
  }

  backend.drain();
  if (full && backend.initialized()) {
    // results finishing after the last frame are logged but not applied
    for (auto& out : backend.poll(std::numeric_limits<double>::infinity())) {
      res.ba_log.push_back(out.log);
      if (!out.result) {
        ++res.solver_aborts;
        res.degraded = true;
      }
    }
  }
  if (full && !backend.initialized()) {
    res.degraded = true;
    res.warnings.push_back("map initialization never succeeded");
  }

  res.keyframe_count = keyframes;
  res.inlier_rate = observed_total > 0 ? static_cast<double>(accepted_total) / observed_total : 0.0;
  if (nees_count > 0) res.mean_nees = nees_sum / nees_count;
  if (has_gt && res.estimate.size() >= 3) {
    const double period = data.frames.size() > 1 ? data.frames[1].t - data.frames[0].t : 1.0;
    try {
      res.alignment = align_trajectories(res.estimate, res.groundtruth, 0.5 * period);
    } catch (const std::invalid_argument& e) {
      res.warnings.push_back(std::string("alignment failed: ") + e.what());
    }
  }
  res.timing.backend = std::max(res.timing.backend, backend.busy_time());
  res.timing.total = seconds_since(start);
  return res;
}

// ---------------------------------------------------------------- artifacts

namespace {

std::string num(double x) {
  if (!std::isfinite(x)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

nlohmann::json opt(double x) {
  return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

std::vector<std::vector<std::string>> read_rows(const fs::path& p, const std::string& header,
                                                std::size_t cols) {
  std::ifstream is(p);
  if (!is) throw std::runtime_error("cannot open " + p.string());
  std::string line;
  if (!std::getline(is, line) || line.rfind(header, 0) != 0) {
    throw std::runtime_error(p.string() + ": unexpected header");
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (cells.size() < cols) throw std::runtime_error(p.string() + ": short row");
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

void write_trajectory_csv(const Trajectory& traj, const fs::path& path) {
  auto os = open_out(path);
  os << kTrajectoryHeader << '\n';
  for (const auto& x : traj) {
    const Eigen::Quaterniond q(x.R);
    os << to_ns(x.t) << ',' << num(x.p.x()) << ',' << num(x.p.y()) << ',' << num(x.p.z()) << ','
       << num(q.w()) << ',' << num(q.x()) << ',' << num(q.y()) << ',' << num(q.z()) << '\n';
  }
}

Trajectory read_trajectory_csv(const fs::path& path) {
  Trajectory out;
  for (const auto& c : read_rows(path, kTrajectoryHeader, 8)) {
    TrajectoryPoint x;
    x.t = from_ns(std::stoll(c[0]));
    x.p << std::stod(c[1]), std::stod(c[2]), std::stod(c[3]);
    x.R = Eigen::Quaterniond(std::stod(c[4]), std::stod(c[5]), std::stod(c[6]), std::stod(c[7]))
              .normalized()
              .toRotationMatrix();
    out.push_back(x);
  }
  return out;
}

Trajectory read_groundtruth_trajectory(const fs::path& path) {
  Trajectory out;
  for (const auto& c : read_rows(path, kGroundTruthHeader, 8)) {
    TrajectoryPoint x;
    x.t = from_ns(std::stoll(c[0]));
    x.p << std::stod(c[1]), std::stod(c[2]), std::stod(c[3]);
    x.R = Eigen::Quaterniond(std::stod(c[4]), std::stod(c[5]), std::stod(c[6]), std::stod(c[7]))
              .normalized()
              .toRotationMatrix();
    out.push_back(x);
  }
  return out;
}

std::string metrics_json(const RunResult& r, const RunConfig& cfg) {
  nlohmann::json j;
  j["run"] = r.run;
  j["sequence"] = cfg.sequence + "-s" + std::to_string(cfg.seed);
  j["mode"] = to_string(r.mode);
  j["seed"] = cfg.seed;
  j["ate_rmse"] = r.ate_rmse() ? nlohmann::json(*r.ate_rmse()) : nlohmann::json(nullptr);
  j["mean_nees"] = opt(r.mean_nees);
  j["inlier_rate"] = r.inlier_rate;
  j["keyframe_count"] = r.keyframe_count;
  j["feedback_events"] = r.feedback_events;
  j["solver_aborts"] = r.solver_aborts;
  j["frames"] = r.diagnostics.size();
  j["degraded"] = r.degraded;
  j["warnings"] = r.warnings;
  return j.dump(2) + "\n";
}

void write_artifacts(const RunResult& r, const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  write_trajectory_csv(r.estimate, dir / "trajectory.csv");

  if (r.alignment) {
    auto os = open_out(dir / "trajectory_aligned.csv");
    os << "timestamp_ns,px,py,pz,gt_px,gt_py,gt_pz\n";
    for (const auto& a : r.alignment->pairs) {
      const Vec3 p = r.alignment->aligned[a.est].p;
      const Vec3& g = r.groundtruth[a.gt].p;
      os << to_ns(r.estimate[a.est].t) << ',' << num(p.x()) << ',' << num(p.y()) << ','
         << num(p.z()) << ',' << num(g.x()) << ',' << num(g.y()) << ',' << num(g.z()) << '\n';
    }
  }

  {
    auto os = open_out(dir / "diagnostics.csv");
    os << "timestamp_ns,frame_id,px,py,pz,qw,qx,qy,qz,vx,vy,vz,bax,bay,baz,bgx,bgy,bgz,"
          "position_error,nees,landmarks,observed,observed_outliers,inliers,gate_rejected,"
          "gate_rejected_inliers,gate_rejected_outliers,accepted_outliers,prediction_only,"
          "keyframe,feedback_version,"
          "feedback_fused,feedback_matches,injected,trace_before,trace_after,error_before,"
          "error_after\n";
    for (const auto& d : r.diagnostics) {
      const ImuState& x = d.state;
      const Eigen::Quaterniond q(x.R);
      os << to_ns(d.t) << ',' << d.frame;
      for (double v : {x.p.x(), x.p.y(), x.p.z(), q.w(), q.x(), q.y(), q.z(), x.v.x(), x.v.y(),
                       x.v.z(), x.ba.x(), x.ba.y(), x.ba.z(), x.bg.x(), x.bg.y(), x.bg.z(),
                       d.position_error, d.nees}) {
        os << ',' << num(v);
      }
      os << ',' << d.landmarks << ',' << d.observed << ',' << d.observed_outliers << ','
         << d.inliers << ',' << d.gate_rejected
         << ',' << d.gate_rejected_inliers << ',' << d.gate_rejected_outliers << ','
         << d.accepted_outliers << ',' << d.prediction_only << ',' << d.keyframe << ','
         << d.feedback_version << ',' << d.feedback_fused << ',' << d.feedback_matches << ','
         << d.injected << ',' << num(d.trace_before) << ',' << num(d.trace_after) << ','
         << num(d.error_before) << ',' << num(d.error_after) << '\n';
    }
  }

  {
    auto os = open_out(dir / "ba_log.csv");
    os << "version,keyframe_id,timestamp_ns,keyframes,landmarks,iterations,rejected_steps,"
          "initial_cost,final_cost,fixed_landmarks,converged,aborted,message\n";
    for (const auto& b : r.ba_log) {
      os << b.version << ',' << b.keyframe_id << ',' << to_ns(b.t) << ',' << b.keyframes << ','
         << b.landmarks << ',' << b.report.iterations << ',' << b.report.rejected_steps << ','
         << num(b.report.initial_cost) << ',' << num(b.report.final_cost) << ','
         << b.report.fixed_landmarks << ',' << b.report.converged << ',' << b.report.aborted
         << ',' << b.report.message << '\n';
    }
  }

  open_out(dir / "metrics.json") << metrics_json(r, cfg);

  nlohmann::json t;
  t["wall_time"] = r.timing.total;
  t["simulate"] = r.timing.simulate;
  t["predict"] = r.timing.predict;
  t["update"] = r.timing.update;
  t["augment"] = r.timing.augment;
  t["backend"] = r.timing.backend;
  t["feedback"] = r.timing.feedback;
  const double frames = static_cast<double>(std::max<std::size_t>(1, r.diagnostics.size()));
  t["filter_ms_per_frame"] =
      1e3 * (r.timing.predict + r.timing.update + r.timing.augment) / frames;
  open_out(dir / "timing.json") << t.dump(2) << "\n";
}

RunResult run_pipeline(const RunConfig& cfg) {
  cfg.validate();
  RunResult r = run_filter(cfg);
  write_artifacts(r, cfg, cfg.output_dir);
  return r;
}

}  // namespace vislam
