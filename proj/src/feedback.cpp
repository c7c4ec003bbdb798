#include "vislam/feedback.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/LU>

namespace vislam {

namespace {

struct CorrectionSystem {
  Mat15 H = Mat15::Zero();
  Vec15 b = Vec15::Zero();
  double cost = 0.0;
  int matches = 0;
};

struct ImuTerm {
  Vec15 r;
  Mat15 J;
  Mat15 info;
};

ImuTerm imu_term(const ImuState& xi, const PreintegratedDelta& d, const ImuState& xk,
                 const NoiseModel& nm) {
  ImuTerm t;
  t.r.head<9>() = preintegration_residual(d, xi, xk, nm.gravity);
  t.r.tail<6>() = bias_residual({xi.bg, xi.ba}, {xk.bg, xk.ba});
  t.J.setZero();
  t.J.topLeftCorner<9, 9>() = residual_jacobians(d, xi, xk, nm.gravity).J_j;
  t.J.block<3, 3>(9, kBg) = Mat3::Identity();
  t.J.block<3, 3>(12, kBa) = Mat3::Identity();
  t.info.setZero();
  t.info.topLeftCorner<9, 9>() = d.cov.ldlt().solve(Mat9::Identity());
  t.info.bottomRightCorner<6, 6>() = bias_information(nm);
  t.info = 0.5 * (t.info + t.info.transpose()).eval();
  return t;
}

CorrectionSystem build(const ImuState& xi, const PreintegratedDelta& d, const ImuState& xk,
                       const Observations& matches, const std::map<int, Vec3>& map,
                       const Extrinsics& ex, const Intrinsics& K, const NoiseModel& nm,
                       const FeedbackConfig& cfg, bool with_jacobians) {
  CorrectionSystem sys;
  const ImuTerm t = imu_term(xi, d, xk, nm);
  const double s = t.r.dot(t.info * t.r);
  sys.cost += huber_cost(s, cfg.huber_imu);
  if (with_jacobians) {
    const double w = huber_weight(s, cfg.huber_imu);
    sys.H += w * t.J.transpose() * t.info * t.J;
    sys.b -= w * t.J.transpose() * (t.info * t.r);
  }
  for (const auto& obs : matches) {
    const auto it = map.find(obs.landmark_id);
    if (it == map.end()) continue;
    const auto r = reprojection_residual(xk, it->second, obs, ex, K);
    if (!r) continue;
    ++sys.matches;
    const Mat2 info = obs.cov.inverse();
    const double sv = r->dot(info * *r);
    sys.cost += huber_cost(sv, cfg.huber_visual);
    if (!with_jacobians) continue;
    const auto J = reprojection_jacobians(xk, it->second, ex, K);
    Eigen::Matrix<double, 2, 15> Jp = Eigen::Matrix<double, 2, 15>::Zero();
    Jp.block<2, 3>(0, kXi) = J->d_xi;
    Jp.block<2, 3>(0, kP) = J->d_p;
    const Mat2 W = huber_weight(sv, cfg.huber_visual) * info;
    sys.H += Jp.transpose() * W * Jp;
    sys.b -= Jp.transpose() * W * *r;
  }
  return sys;
}

}  // namespace

StateCorrection state_correction_optimize(const ImuState& kf_i, const PreintegratedDelta& delta_ik,
                                          const ImuState& frame_k, const Observations& matches,
                                          const std::map<int, Vec3>& map, const Extrinsics& ex,
                                          const Intrinsics& K, const NoiseModel& nm,
                                          const FeedbackConfig& cfg) {
  StateCorrection out;
  out.state = frame_k;
  if (delta_ik.samples == 0) {
    out.message = "empty IMU interval";
    return out;
  }
  ImuState x = frame_k;
  double lambda = 0.0;
  int retries = 0;
  CorrectionSystem sys = build(kf_i, delta_ik, x, matches, map, ex, K, nm, cfg, true);
  while (out.iterations < cfg.max_iterations) {
    Mat15 H = sys.H;
    if (lambda > 0.0) H.diagonal() += lambda * (H.diagonal().array() + 1e-9).matrix();
    Eigen::LDLT<Mat15> ldlt(H);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      out.message = "singular normal matrix";
      return out;
    }
    const Vec15 dx = ldlt.solve(sys.b);
    if (!dx.allFinite()) {
      out.message = "diverged";
      return out;
    }
    const ImuState trial = apply_correction(x, dx);
    const CorrectionSystem next = build(kf_i, delta_ik, trial, matches, map, ex, K, nm, cfg, true);
    if (std::isfinite(next.cost) && next.cost <= sys.cost) {
      x = trial;
      sys = next;
      ++out.iterations;
      retries = 0;
      lambda = lambda > 1e-12 ? lambda / 10.0 : 0.0;
      if (dx.lpNorm<Eigen::Infinity>() < cfg.step_tolerance) break;
    } else {
      if (dx.lpNorm<Eigen::Infinity>() < cfg.step_tolerance) break;
      lambda = lambda == 0.0 ? 1e-4 : lambda * 10.0;
      if (++retries > 10) break;
    }
  }
  Eigen::LDLT<Mat15> ldlt(sys.H);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    out.message = "singular normal matrix";
    return out;
  }
  out.state = x;
  out.cov = ldlt.solve(Mat15::Identity());
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  out.matches_used = sys.matches;
  out.ok = out.cov.allFinite();
  if (!out.ok) out.message = "diverged";
  return out;
}

bool state_correction_fuse(FilterBelief& belief, const StateCorrection& corr) {
  const Vec15 r = imu_state_error(corr.state, belief.imu);
  const Mat15 S = belief.P.topLeftCorner<kImuDim, kImuDim>() + corr.cov;
  Eigen::LLT<Mat15> llt(0.5 * (S + S.transpose()));
  if (llt.info() != Eigen::Success) return false;
  // K = P Hᵀ S⁻¹ with H = [I 0]
  const Eigen::MatrixXd PHt = belief.P.leftCols<kImuDim>();
  const Eigen::MatrixXd Kt = llt.solve(PHt.transpose());  // 15 x n, = Kᵀ
  const Eigen::VectorXd dx = Kt.transpose() * r;
  belief.P -= Kt.transpose() * PHt.transpose();
  symmetrize(belief.P);
  apply_correction(belief, dx);
  return true;
}

Vec3 map_point_in_camera(const Vec3& L, const ImuState& x, const Extrinsics& ex) {
  return ex.R_BC.transpose() * (x.R.transpose() * (L - x.p) - ex.p_BC);
}

InverseDepthPrior inverse_depth_prior(const Vec3& L, const ImuState& x, const Extrinsics& ex,
                                      const Mat3& Sigma_L, const Mat6& Sigma_Rt) {
  const Vec3 Lc = map_point_in_camera(L, x, ex);
  const double n = Lc.norm();
  InverseDepthPrior out;
  out.rho = 1.0 / n;
  const Eigen::Matrix<double, 1, 3> g = -Lc.transpose() / (n * n * n);
  const Mat3 R_CW = (x.R * ex.R_BC).transpose();
  out.J_L = g * R_CW;
  out.J_Rt.leftCols<3>() = g * ex.R_BC.transpose() * hat(x.R.transpose() * (L - x.p));
  out.J_Rt.rightCols<3>() = -g * R_CW;
  out.variance = (out.J_L * Sigma_L * out.J_L.transpose())(0, 0) +
                 (out.J_Rt * Sigma_Rt * out.J_Rt.transpose())(0, 0);
  return out;
}

InjectionReport map_correction_inject(FilterBelief& belief, const BackendResult& result,
                                      const Observations& matches, const Mat6& Sigma_Rt,
                                      const Extrinsics& ex, const Intrinsics& K, int n, int cap,
                                      const FeedbackConfig& cfg, std::mt19937_64& rng) {
  InjectionReport rep;
  std::vector<const FeatureObservation*> pool;
  for (const auto& obs : matches) {
    if (!result.map.count(obs.landmark_id) || !result.landmark_cov.count(obs.landmark_id)) continue;
    if (belief.index_of(obs.landmark_id) >= 0) continue;
    ++rep.candidates;
    const Vec3& L = result.map.at(obs.landmark_id);
    if (!(map_point_in_camera(L, belief.imu, ex).z() > 0.0)) {
      ++rep.behind_camera;
      continue;
    }
    const auto r = reprojection_residual(belief.imu, L, obs, ex, K);
    if (!r || r->dot(obs.cov.inverse() * *r) > cfg.inject_outlier_chi2) {
      ++rep.outliers;
      continue;
    }
    pool.push_back(&obs);
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  const int room = std::min(n, cap - belief.landmark_count());
  for (const FeatureObservation* obs : pool) {
    if (rep.injected >= room) break;
    const InverseDepthPrior prior =
        inverse_depth_prior(result.map.at(obs->landmark_id), belief.imu, ex,
                            result.landmark_cov.at(obs->landmark_id), Sigma_Rt);
    augment_landmark(belief, *obs, ex, K, prior.rho, std::sqrt(std::max(prior.variance, 0.0)), cap);
    ++rep.injected;
  }
  return rep;
}

FeedbackReport feedback_cycle(FilterBelief& belief, const BackendResult& result,
                              const PreintegratedDelta& delta_ik, const Observations& frame_obs,
                              const Extrinsics& ex, const Intrinsics& K, const NoiseModel& nm,
                              int cap, const FeedbackConfig& cfg, std::mt19937_64& rng) {
  FeedbackReport rep;
  if (result.version <= belief.applied_version) {
    rep.stale = true;
    return rep;
  }
  belief.applied_version = result.version;
  rep.trace_before = belief.P.topLeftCorner<kImuDim, kImuDim>().trace();
  rep.trace_after = rep.trace_before;

  Observations matches;
  for (const auto& obs : frame_obs) {
    if (result.map.count(obs.landmark_id)) matches.push_back(obs);
  }
  rep.matches = static_cast<int>(matches.size());

  const StateCorrection corr = state_correction_optimize(result.keyframe_state, delta_ik, belief.imu,
                                                         matches, result.map, ex, K, nm, cfg);
  rep.iterations = corr.iterations;
  if (!corr.ok) {
    rep.message = corr.message;
    return rep;
  }
  rep.corrected = true;
  if (!state_correction_fuse(belief, corr)) {
    rep.message = "singular innovation";
    return rep;
  }
  rep.fused = true;
  rep.trace_after = belief.P.topLeftCorner<kImuDim, kImuDim>().trace();

  if (cfg.inject) {
    const Mat6 Sigma_Rt = corr.cov.topLeftCorner<6, 6>();
    rep.injection = map_correction_inject(belief, result, matches, Sigma_Rt, ex, K,
                                          cap - belief.landmark_count(), cap, cfg, rng);
  }
  return rep;
}

}  // namespace vislam
