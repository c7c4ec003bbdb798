#include "vislam/window_ba.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

namespace vislam {

namespace {

using Mat15x3 = Eigen::Matrix<double, 15, 3>;
using Mat15 = Eigen::Matrix<double, 15, 15>;

constexpr int kState = 15;

struct LandmarkBlock {
  int id = -1;
  Mat3 Hll = Mat3::Zero();
  Vec3 bl = Vec3::Zero();
  std::map<int, Mat15x3> Hpl;  // keyed by pose variable index
  bool fixed = false;
};

struct NormalEquations {
  int np = 0;  // number of state variables, one per keyframe
  Eigen::MatrixXd Hpp;
  Eigen::VectorXd bp;
  std::vector<LandmarkBlock> lms;
};

struct ImuFactorLin {
  Eigen::Matrix<double, 15, 1> r;
  Eigen::Matrix<double, 15, 30> J;
  Mat15 info;
};

Mat15 imu_information(const PreintegratedDelta& d, const NoiseModel& nm) {
  Mat15 info = Mat15::Zero();
  info.topLeftCorner<9, 9>() = d.cov.ldlt().solve(Mat9::Identity());
  info.bottomRightCorner<6, 6>() = bias_information(nm);
  return 0.5 * (info + info.transpose());
}

ImuFactorLin linearize_imu(const Keyframe& a, const Keyframe& b, const NoiseModel& nm) {
  ImuFactorLin f;
  f.r.head<9>() = preintegration_residual(b.preint, a.state, b.state, nm.gravity);
  f.r.tail<6>() = bias_residual({a.state.bg, a.state.ba}, {b.state.bg, b.state.ba});
  const PreintegrationJacobians pj = residual_jacobians(b.preint, a.state, b.state, nm.gravity);
  f.J.setZero();
  f.J.block<9, 15>(0, 0) = pj.J_i;
  f.J.block<9, 9>(0, 15) = pj.J_j;
  // bias rows: (b_g, b_a) against state columns b_a at 9, b_g at 12
  f.J.block<3, 3>(9, 12) = -Mat3::Identity();
  f.J.block<3, 3>(12, 9) = -Mat3::Identity();
  f.J.block<3, 3>(9, 15 + 12) = Mat3::Identity();
  f.J.block<3, 3>(12, 15 + 9) = Mat3::Identity();
  f.info = imu_information(b.preint, nm);
  return f;
}

double imu_chi2(const Keyframe& a, const Keyframe& b, const NoiseModel& nm) {
  Eigen::Matrix<double, 15, 1> r;
  r.head<9>() = preintegration_residual(b.preint, a.state, b.state, nm.gravity);
  r.tail<6>() = bias_residual({a.state.bg, a.state.ba}, {b.state.bg, b.state.ba});
  return r.dot(imu_information(b.preint, nm) * r);
}

// Two keyframes cannot separate the anchor's velocity from the biases.
int anchor_fixed_dims(const SolverConfig& cfg, int keyframes) {
  return (cfg.gauge == Gauge::State || keyframes < 3) ? kState : 6;
}

NormalEquations build_normal_equations(const WindowGraph& g, const NoiseModel& nm,
                                       const SolverConfig& cfg, const Extrinsics& ex,
                                       const Intrinsics& K) {
  NormalEquations ne;
  const int n = static_cast<int>(g.keyframes.size());
  ne.np = n;
  ne.Hpp = Eigen::MatrixXd::Zero(kState * ne.np, kState * ne.np);
  ne.bp = Eigen::VectorXd::Zero(kState * ne.np);

  for (int j = 1; j < n; ++j) {
    const ImuFactorLin f = linearize_imu(g.keyframes[j - 1], g.keyframes[j], nm);
    double w = 1.0;
    if (cfg.robust_imu) w = huber_weight(f.r.dot(f.info * f.r), cfg.huber_imu);
    const Eigen::Matrix<double, 30, 30> H = w * f.J.transpose() * f.info * f.J;
    const Eigen::Matrix<double, 30, 1> b = -w * f.J.transpose() * (f.info * f.r);
    const int vi = j - 1;
    const int vj = j;
    ne.Hpp.block<kState, kState>(kState * vj, kState * vj) += H.bottomRightCorner<15, 15>();
    ne.bp.segment<kState>(kState * vj) += b.tail<15>();
    ne.Hpp.block<kState, kState>(kState * vi, kState * vi) += H.topLeftCorner<15, 15>();
    ne.Hpp.block<kState, kState>(kState * vi, kState * vj) += H.topRightCorner<15, 15>();
    ne.Hpp.block<kState, kState>(kState * vj, kState * vi) += H.bottomLeftCorner<15, 15>();
    ne.bp.segment<kState>(kState * vi) += b.head<15>();
  }

  std::map<int, int> slot;
  for (const auto& [id, L] : g.landmarks) {
    slot[id] = static_cast<int>(ne.lms.size());
    LandmarkBlock lb;
    lb.id = id;
    ne.lms.push_back(lb);
  }
  for (int k = 0; k < n; ++k) {
    const Keyframe& kf = g.keyframes[k];
    const int v = k;
    for (const auto& obs : kf.obs) {
      const auto it = g.landmarks.find(obs.landmark_id);
      if (it == g.landmarks.end()) continue;
      const auto r = reprojection_residual(kf.state, it->second, obs, ex, K);
      const auto J = reprojection_jacobians(kf.state, it->second, ex, K);
      if (!r || !J) continue;
      const Mat2 info = obs.cov.inverse();
      const double w = huber_weight(r->dot(info * *r), cfg.huber_visual);
      const Mat2 Wi = w * info;
      LandmarkBlock& lb = ne.lms[slot[obs.landmark_id]];
      lb.Hll += J->d_L.transpose() * Wi * J->d_L;
      lb.bl -= J->d_L.transpose() * Wi * *r;
      Eigen::Matrix<double, 2, kState> Jp = Eigen::Matrix<double, 2, kState>::Zero();
      Jp.block<2, 3>(0, 0) = J->d_xi;
      Jp.block<2, 3>(0, 3) = J->d_p;
      ne.Hpp.block<kState, kState>(kState * v, kState * v) += Jp.transpose() * Wi * Jp;
      ne.bp.segment<kState>(kState * v) -= Jp.transpose() * Wi * *r;
      auto [pos, inserted] = lb.Hpl.try_emplace(v, Mat15x3::Zero());
      pos->second += Jp.transpose() * Wi * J->d_L;
    }
  }

  // gauge: the anchor's fixed coordinates get identity rows and no coupling
  if (n > 0) {
    const int fixed = anchor_fixed_dims(cfg, n);
    ne.Hpp.topRows(fixed).setZero();
    ne.Hpp.leftCols(fixed).setZero();
    ne.Hpp.topLeftCorner(fixed, fixed).setIdentity();
    ne.bp.head(fixed).setZero();
    for (auto& lb : ne.lms) {
      const auto it = lb.Hpl.find(0);
      if (it != lb.Hpl.end()) it->second.topRows(fixed).setZero();
    }
  }

  for (auto& lb : ne.lms) {
    Eigen::SelfAdjointEigenSolver<Mat3> es(lb.Hll, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues()(0), hi = es.eigenvalues()(2);
    lb.fixed = !(hi > 0.0) || lo < cfg.landmark_singular_ratio * hi;
  }
  return ne;
}

void damp(Eigen::MatrixXd& H, double lambda, double floor) {
  if (lambda <= 0.0) return;
  for (Eigen::Index i = 0; i < H.rows(); ++i) H(i, i) += lambda * (H(i, i) + floor);
}

void damp(Mat3& H, double lambda, double floor) {
  if (lambda <= 0.0) return;
  for (int i = 0; i < 3; ++i) H(i, i) += lambda * (H(i, i) + floor);
}

// Reduced camera system after eliminating free landmarks.
struct Reduced {
  Eigen::MatrixXd S;
  Eigen::VectorXd rhs;
  std::vector<Mat3> Hinv;  // per landmark (zero if fixed)
};

Reduced schur_reduce(const NormalEquations& ne, double lambda, double floor) {
  Reduced red;
  red.S = ne.Hpp;
  damp(red.S, lambda, floor);
  red.rhs = ne.bp;
  red.Hinv.resize(ne.lms.size(), Mat3::Zero());
  for (std::size_t l = 0; l < ne.lms.size(); ++l) {
    const LandmarkBlock& lb = ne.lms[l];
    if (lb.fixed) continue;
    Mat3 Hll = lb.Hll;
    damp(Hll, lambda, floor);
    const Mat3 Hinv = Hll.inverse();
    red.Hinv[l] = Hinv;
    for (const auto& [a, Ba] : lb.Hpl) {
      const Mat15x3 BaHinv = Ba * Hinv;
      red.rhs.segment<kState>(kState * a) -= BaHinv * lb.bl;
      for (const auto& [b, Bb] : lb.Hpl) {
        red.S.block<kState, kState>(kState * a, kState * b) -= BaHinv * Bb.transpose();
      }
    }
  }
  return red;
}

}  // namespace

double huber_cost(double s, double delta2) {
  if (s <= delta2) return s;
  return 2.0 * std::sqrt(delta2 * s) - delta2;
}

double huber_weight(double s, double delta2) {
  if (s <= delta2) return 1.0;
  return std::sqrt(delta2 / s);
}

std::optional<Vec2> reprojection_residual(const ImuState& x, const Vec3& L,
                                          const FeatureObservation& obs, const Extrinsics& ex,
                                          const Intrinsics& K) {
  const Vec3 f = ex.R_BC.transpose() * (x.R.transpose() * (L - x.p) - ex.p_BC);
  const auto uv = project(f, K);
  if (!uv) return std::nullopt;
  return Vec2(*uv - obs.uv);
}

std::optional<ReprojectionJacobians> reprojection_jacobians(const ImuState& x, const Vec3& L,
                                                            const Extrinsics& ex,
                                                            const Intrinsics& K) {
  const Vec3 q = x.R.transpose() * (L - x.p);
  const Vec3 f = ex.R_BC.transpose() * (q - ex.p_BC);
  const auto dpi = projection_jacobian(f, K);
  if (!dpi) return std::nullopt;
  const Mat3 R_CW = ex.R_BC.transpose() * x.R.transpose();
  ReprojectionJacobians J;
  J.d_xi = *dpi * ex.R_BC.transpose() * hat(q);
  J.d_p = -*dpi * R_CW;
  J.d_L = *dpi * R_CW;
  return J;
}

Eigen::Matrix<double, 6, 6> bias_information(const NoiseModel& nm) {
  Eigen::Matrix<double, 6, 6> cov = Eigen::Matrix<double, 6, 6>::Zero();
  cov.topLeftCorner<3, 3>() = nm.bias_gyro_walk;
  cov.bottomRightCorner<3, 3>() = nm.bias_acc_walk;
  return cov.ldlt().solve(Eigen::Matrix<double, 6, 6>::Identity());
}

double total_cost(const WindowGraph& g, const NoiseModel& nm, const SolverConfig& cfg,
                  const Extrinsics& ex, const Intrinsics& K, SolverReport* terms) {
  double cost = 0.0;
  double chi_imu = 0.0, chi_vis = 0.0;
  int n_imu = 0, n_vis = 0;
  for (std::size_t j = 1; j < g.keyframes.size(); ++j) {
    const double s = imu_chi2(g.keyframes[j - 1], g.keyframes[j], nm);
    chi_imu += s;
    ++n_imu;
    cost += cfg.robust_imu ? huber_cost(s, cfg.huber_imu) : s;
  }
  for (const auto& kf : g.keyframes) {
    for (const auto& obs : kf.obs) {
      const auto it = g.landmarks.find(obs.landmark_id);
      if (it == g.landmarks.end()) continue;
      const auto r = reprojection_residual(kf.state, it->second, obs, ex, K);
      if (!r) continue;
      const double s = r->dot(obs.cov.inverse() * *r);
      chi_vis += s;
      ++n_vis;
      cost += huber_cost(s, cfg.huber_visual);
    }
  }
  if (terms) {
    terms->imu_chi2 = chi_imu;
    terms->visual_chi2 = chi_vis;
    terms->imu_factors = n_imu;
    terms->visual_factors = n_vis;
  }
  return cost;
}

WindowStep compute_step(const WindowGraph& g, const NoiseModel& nm, const SolverConfig& cfg,
                        const Extrinsics& ex, const Intrinsics& K, double lambda, bool dense) {
  const NormalEquations ne = build_normal_equations(g, nm, cfg, ex, K);
  const int dp = kState * ne.np;
  WindowStep step;

  if (dense) {
    std::vector<int> free;
    for (std::size_t l = 0; l < ne.lms.size(); ++l) {
      if (!ne.lms[l].fixed) free.push_back(static_cast<int>(l));
    }
    const int dim = dp + 3 * static_cast<int>(free.size());
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd b(dim);
    H.topLeftCorner(dp, dp) = ne.Hpp;
    b.head(dp) = ne.bp;
    for (std::size_t f = 0; f < free.size(); ++f) {
      const LandmarkBlock& lb = ne.lms[free[f]];
      const int o = dp + 3 * static_cast<int>(f);
      H.block<3, 3>(o, o) = lb.Hll;
      b.segment<3>(o) = lb.bl;
      for (const auto& [a, B] : lb.Hpl) {
        H.block<kState, 3>(kState * a, o) = B;
        H.block<3, kState>(o, kState * a) = B.transpose();
      }
    }
    damp(H, lambda, cfg.damping_floor);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return step;
    const Eigen::VectorXd x = ldlt.solve(b);
    if (!x.allFinite()) return step;
    step.poses = x.head(dp);
    for (std::size_t f = 0; f < free.size(); ++f) {
      step.landmarks[ne.lms[free[f]].id] = x.segment<3>(dp + 3 * static_cast<int>(f));
    }
    step.ok = true;
    return step;
  }

  const Reduced red = schur_reduce(ne, lambda, cfg.damping_floor);
  Eigen::VectorXd xp = Eigen::VectorXd::Zero(dp);
  if (dp > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (red.S + red.S.transpose()));
    if (llt.info() != Eigen::Success) return step;
    xp = llt.solve(red.rhs);
    if (!xp.allFinite()) return step;
  }
  for (std::size_t l = 0; l < ne.lms.size(); ++l) {
    const LandmarkBlock& lb = ne.lms[l];
    if (lb.fixed) continue;
    Vec3 rhs = lb.bl;
    for (const auto& [a, B] : lb.Hpl) rhs -= B.transpose() * xp.segment<kState>(kState * a);
    step.landmarks[lb.id] = red.Hinv[l] * rhs;
  }
  step.poses = xp;
  step.ok = true;
  return step;
}

void apply_step(WindowGraph& g, const WindowStep& step) {
  for (std::size_t k = 0; k < g.keyframes.size(); ++k) {
    const Eigen::Matrix<double, 15, 1> d = step.poses.segment<kState>(kState * k);
    ImuState& x = g.keyframes[k].state;
    x.R = boxplus(x.R, d.segment<3>(0));
    x.p += d.segment<3>(3);
    x.v += d.segment<3>(6);
    x.ba += d.segment<3>(9);
    x.bg += d.segment<3>(12);
  }
  for (const auto& [id, d] : step.landmarks) g.landmarks[id] += d;
}

std::optional<WindowCovariances> window_covariances(const WindowGraph& g, const NoiseModel& nm,
                                                    const SolverConfig& cfg, const Extrinsics& ex,
                                                    const Intrinsics& K) {
  const NormalEquations ne = build_normal_equations(g, nm, cfg, ex, K);
  const Reduced red = schur_reduce(ne, 0.0, 0.0);
  const int dp = kState * ne.np;
  Eigen::MatrixXd Spp = Eigen::MatrixXd::Zero(dp, dp);
  if (dp > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (red.S + red.S.transpose()));
    if (llt.info() != Eigen::Success) return std::nullopt;
    Spp = llt.solve(Eigen::MatrixXd::Identity(dp, dp));
  }
  WindowCovariances cov;
  cov.state.assign(g.keyframes.size(), Mat15::Zero());
  for (int v = 0; v < ne.np; ++v) {
    cov.state[v] = Spp.block<kState, kState>(kState * v, kState * v);
  }
  if (!cov.state.empty()) {
    const int fixed = anchor_fixed_dims(cfg, ne.np);
    cov.state[0].topRows(fixed).setZero();
    cov.state[0].leftCols(fixed).setZero();
  }
  for (std::size_t l = 0; l < ne.lms.size(); ++l) {
    const LandmarkBlock& lb = ne.lms[l];
    if (lb.fixed) continue;
    const Mat3& Hinv = red.Hinv[l];
    Mat3 inner = Mat3::Zero();
    for (const auto& [a, Ba] : lb.Hpl) {
      for (const auto& [b, Bb] : lb.Hpl) {
        inner += Ba.transpose() * Spp.block<kState, kState>(kState * a, kState * b) * Bb;
      }
    }
    const Mat3 c = Hinv + Hinv * inner * Hinv;
    cov.landmark[lb.id] = 0.5 * (c + c.transpose());
  }
  return cov;
}

SolverReport gauss_newton_solve(WindowGraph& g, const NoiseModel& nm, const SolverConfig& cfg,
                                const Extrinsics& ex, const Intrinsics& K,
                                WindowCovariances* cov) {
  SolverReport rep;
  double cost = total_cost(g, nm, cfg, ex, K);
  rep.initial_cost = cost;
  rep.cost_history.push_back(cost);
  double lambda = 0.0;
  int retries = 0;

  struct Backup {
    std::vector<ImuState> states;
    std::map<int, Vec3> landmarks;
  };

  while (rep.iterations < cfg.max_iterations) {
    const WindowStep step = compute_step(g, nm, cfg, ex, K, lambda);
    if (!step.ok) {
      if (lambda == 0.0) {
        rep.aborted = true;
        rep.message = "rank-deficient normal equations";
        break;
      }
      lambda *= 10.0;
      if (++retries > cfg.max_damping_retries) break;
      continue;
    }
    Backup backup;
    for (const auto& kf : g.keyframes) backup.states.push_back(kf.state);
    backup.landmarks = g.landmarks;

    apply_step(g, step);
    const double new_cost = total_cost(g, nm, cfg, ex, K);
    double step_norm = step.poses.size() ? step.poses.lpNorm<Eigen::Infinity>() : 0.0;
    for (const auto& [id, d] : step.landmarks) step_norm = std::max(step_norm, d.lpNorm<Eigen::Infinity>());

    if (std::isfinite(new_cost) && new_cost <= cost) {
      ++rep.iterations;
      retries = 0;
      const double decrease = cost - new_cost;
      cost = new_cost;
      rep.cost_history.push_back(cost);
      lambda = (lambda > 1e-12) ? lambda / 10.0 : 0.0;
      if (step_norm < cfg.step_tolerance || decrease <= cfg.cost_tolerance * (1.0 + cost)) {
        rep.converged = true;
        break;
      }
    } else {
      for (std::size_t k = 0; k < g.keyframes.size(); ++k) g.keyframes[k].state = backup.states[k];
      g.landmarks = std::move(backup.landmarks);
      ++rep.rejected_steps;
      if (step_norm < cfg.step_tolerance) {
        rep.converged = true;
        break;
      }
      lambda = (lambda == 0.0) ? 1e-4 : lambda * 10.0;
      if (++retries > cfg.max_damping_retries) {
        rep.converged = true;
        break;
      }
    }
  }
  rep.final_cost = total_cost(g, nm, cfg, ex, K, &rep);

  const NormalEquations ne = build_normal_equations(g, nm, cfg, ex, K);
  for (const auto& lb : ne.lms) rep.fixed_landmarks += lb.fixed ? 1 : 0;

  if (cov && !rep.aborted) {
    auto c = window_covariances(g, nm, cfg, ex, K);
    if (c) {
      *cov = std::move(*c);
    } else {
      rep.message = "covariance extraction failed";
    }
  }
  return rep;
}

bool select_keyframe(const ImuState& frame, double t, const Keyframe& last, bool backend_busy,
                     const KeyframePolicy& policy) {
  if (t - last.t > policy.max_interval) return true;
  if (!backend_busy) return true;
  return log_so3(last.state.R.transpose() * frame.R).norm() > policy.max_rotation;
}

std::optional<Vec3> triangulate_midpoint(const Vec3& c1, const Vec3& d1, const Vec3& c2,
                                         const Vec3& d2) {
  const Vec3 w0 = c1 - c2;
  const double a = d1.dot(d1), b = d1.dot(d2), c = d2.dot(d2);
  const double d = d1.dot(w0), e = d2.dot(w0);
  const double den = a * c - b * b;
  if (!(den > 1e-12 * a * c)) return std::nullopt;
  const double s = (b * e - c * d) / den;
  const double t = (a * e - b * d) / den;
  if (!(s > 0.0) || !(t > 0.0)) return std::nullopt;
  return Vec3(0.5 * (c1 + s * d1 + c2 + t * d2));
}

Vec3 camera_center(const ImuState& x, const Extrinsics& ex) {
  return x.p + x.R * ex.p_BC;
}

Vec3 world_ray(const ImuState& x, const Vec2& uv, const Extrinsics& ex, const Intrinsics& K) {
  return (x.R * ex.R_BC * normalized_ray(uv, K)).normalized();
}

double ray_parallax(const Vec3& d1, const Vec3& d2) {
  const double c = d1.normalized().dot(d2.normalized());
  return std::acos(std::clamp(c, -1.0, 1.0));
}

int triangulate_new_landmarks(WindowGraph& g, const Extrinsics& ex, const Intrinsics& K,
                              double min_parallax) {
  std::map<int, std::vector<std::pair<int, const FeatureObservation*>>> seen;
  for (std::size_t k = 0; k < g.keyframes.size(); ++k) {
    for (const auto& obs : g.keyframes[k].obs) {
      if (g.landmarks.count(obs.landmark_id)) continue;
      seen[obs.landmark_id].emplace_back(static_cast<int>(k), &obs);
    }
  }
  int added = 0;
  for (const auto& [id, views] : seen) {
    if (views.size() < 2) continue;
    double best = -1.0;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < views.size(); ++i) {
      const Vec3 di = world_ray(g.keyframes[views[i].first].state, views[i].second->uv, ex, K);
      for (std::size_t j = i + 1; j < views.size(); ++j) {
        const Vec3 dj = world_ray(g.keyframes[views[j].first].state, views[j].second->uv, ex, K);
        const double par = ray_parallax(di, dj);
        if (par > best) {
          best = par;
          bi = i;
          bj = j;
        }
      }
    }
    if (best < min_parallax) continue;
    const ImuState& xa = g.keyframes[views[bi].first].state;
    const ImuState& xb = g.keyframes[views[bj].first].state;
    const auto L = triangulate_midpoint(camera_center(xa, ex), world_ray(xa, views[bi].second->uv, ex, K),
                                        camera_center(xb, ex), world_ray(xb, views[bj].second->uv, ex, K));
    if (!L) continue;
    bool ok = true;
    for (const auto& [k, obs] : views) {
      if (!reprojection_residual(g.keyframes[k].state, *L, *obs, ex, K)) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    g.landmarks[id] = *L;
    ++added;
  }
  return added;
}

int drop_weak_landmarks(WindowGraph& g) {
  std::map<int, int> observers;
  for (const auto& kf : g.keyframes) {
    for (const auto& obs : kf.obs) {
      if (g.landmarks.count(obs.landmark_id)) ++observers[obs.landmark_id];
    }
  }
  int dropped = 0;
  for (auto it = g.landmarks.begin(); it != g.landmarks.end();) {
    if (observers[it->first] < 2) {
      it = g.landmarks.erase(it);
      ++dropped;
    } else {
      ++it;
    }
  }
  return dropped;
}

int remove_outlier_observations(WindowGraph& g, const Extrinsics& ex, const Intrinsics& K,
                                double chi2) {
  int removed = 0;
  for (auto& kf : g.keyframes) {
    auto keep_end = std::remove_if(kf.obs.begin(), kf.obs.end(), [&](const FeatureObservation& o) {
      const auto it = g.landmarks.find(o.landmark_id);
      if (it == g.landmarks.end()) return false;
      const auto r = reprojection_residual(kf.state, it->second, o, ex, K);
      return !r || r->dot(o.cov.inverse() * *r) > chi2;
    });
    removed += static_cast<int>(kf.obs.end() - keep_end);
    kf.obs.erase(keep_end, kf.obs.end());
  }
  drop_weak_landmarks(g);
  return removed;
}

void slide_window(WindowGraph& g, Keyframe kf, int window_size) {
  if (!g.keyframes.empty() && !(kf.t > g.keyframes.back().t)) {
    throw std::invalid_argument("slide_window: keyframe timestamps must increase");
  }
  g.keyframes.push_back(std::move(kf));
  bool removed = false;
  while (static_cast<int>(g.keyframes.size()) > window_size) {
    g.keyframes.erase(g.keyframes.begin());
    removed = true;
  }
  if (removed) drop_weak_landmarks(g);
}

MapInitResult initialize_map(const Keyframe& reference, const Keyframe& current,
                             const Extrinsics& ex, const Intrinsics& K, const NoiseModel& nm,
                             const SolverConfig& solver, const MapInitConfig& cfg) {
  MapInitResult res;
  std::map<int, const FeatureObservation*> ref_obs;
  for (const auto& o : reference.obs) ref_obs[o.landmark_id] = &o;

  int matches = 0;
  std::map<int, Vec3> points;
  const Vec3 c1 = camera_center(reference.state, ex);
  const Vec3 c2 = camera_center(current.state, ex);
  for (const auto& o : current.obs) {
    const auto it = ref_obs.find(o.landmark_id);
    if (it == ref_obs.end()) continue;
    ++matches;
    const Vec3 d1 = world_ray(reference.state, it->second->uv, ex, K);
    const Vec3 d2 = world_ray(current.state, o.uv, ex, K);
    if (ray_parallax(d1, d2) < cfg.min_parallax) continue;
    const auto L = triangulate_midpoint(c1, d1, c2, d2);
    if (L) points[o.landmark_id] = *L;
  }
  if (matches < cfg.min_matches) {
    res.status = MapInitStatus::ResetReference;
    return res;
  }
  if (static_cast<int>(points.size()) < cfg.min_points) {
    res.status = MapInitStatus::Retry;
    return res;
  }

  res.graph.keyframes = {reference, current};
  res.graph.landmarks = std::move(points);
  res.report = gauss_newton_solve(res.graph, nm, solver, ex, K, &res.cov);
  res.status = res.report.aborted ? MapInitStatus::SolveFailed : MapInitStatus::Ok;
  return res;
}

}  // namespace vislam
