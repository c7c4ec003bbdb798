#include "vislam/ekf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/LU>

namespace vislam {

int FilterBelief::index_of(int id) const {
  for (int i = 0; i < landmark_count(); ++i) {
    if (landmark_ids[i] == id) return i;
  }
  return -1;
}

ImuState apply_correction(const ImuState& x, const Vec15& dx) {
  ImuState out = x;
  out.R = boxplus(x.R, dx.segment<3>(kXi));
  out.p += dx.segment<3>(kP);
  out.v += dx.segment<3>(kV);
  out.ba += dx.segment<3>(kBa);
  out.bg += dx.segment<3>(kBg);
  return out;
}

void apply_correction(FilterBelief& belief, const Eigen::VectorXd& dx) {
  belief.imu = apply_correction(belief.imu, Vec15(dx.head<kImuDim>()));
  for (int i = 0; i < belief.landmark_count(); ++i) {
    auto& l = belief.landmarks[i];
    const auto d = dx.segment<kLandmarkDim>(kImuDim + kLandmarkDim * i);
    l.anchor += d.head<3>();
    l.theta += d(3);
    l.phi += d(4);
    l.rho += d(5);
  }
}

Vec15 imu_state_error(const ImuState& truth, const ImuState& estimate) {
  Vec15 e;
  e.segment<3>(kXi) = boxminus(truth.R, estimate.R);
  e.segment<3>(kP) = truth.p - estimate.p;
  e.segment<3>(kV) = truth.v - estimate.v;
  e.segment<3>(kBa) = truth.ba - estimate.ba;
  e.segment<3>(kBg) = truth.bg - estimate.bg;
  return e;
}

void symmetrize(Eigen::MatrixXd& P) {
  P = 0.5 * (P + P.transpose()).eval();
}

// ---------------------------------------------------------------- prediction

ImuState propagate_state_noisy(const ImuState& x, const ImuSample& s, const NoiseModel& nm,
                               const Vec3& n_acc, const Vec3& n_gyro) {
  const double dt = s.dt;
  ImuState out = x;
  out.R = x.R * exp_so3((s.gyro - x.bg - n_gyro) * dt);
  out.p = x.p + x.v * dt;
  out.v = x.v + (x.R * (s.acc - x.ba - n_acc) + nm.gravity) * dt;
  return out;
}

ImuState propagate_state(const ImuState& x, const ImuSample& s, const NoiseModel& nm) {
  return propagate_state_noisy(x, s, nm, Vec3::Zero(), Vec3::Zero());
}

ErrorStateJacobians error_state_jacobians(const ImuState& x, const ImuSample& s) {
  const double dt = s.dt;
  const Vec3 wdt = (s.gyro - x.bg) * dt;
  const Vec3 adt = (s.acc - x.ba) * dt;
  const Mat3 Jr = right_jacobian(wdt);

  ErrorStateJacobians J;
  J.Phi.setIdentity();
  J.Phi.block<3, 3>(kXi, kXi) = exp_so3(wdt).transpose();
  J.Phi.block<3, 3>(kXi, kBg) = -Jr * dt;
  J.Phi.block<3, 3>(kP, kV) = Mat3::Identity() * dt;
  J.Phi.block<3, 3>(kV, kXi) = -x.R * hat(adt);
  J.Phi.block<3, 3>(kV, kBa) = -x.R * dt;

  J.G.setZero();
  J.G.block<3, 3>(kV, 0) = J.Phi.block<3, 3>(kV, kBa);
  J.G.block<3, 3>(kXi, 3) = J.Phi.block<3, 3>(kXi, kBg);
  return J;
}

ErrorStateJacobians error_state_jacobians_lie_coordinates(const ImuState& x,
                                                          const ImuSample& s) {
  ErrorStateJacobians J = error_state_jacobians(x, s);
  const Vec3 xi_pred = log_so3(x.R * exp_so3((s.gyro - x.bg) * s.dt));
  const Mat3 Jinv = right_jacobian_inv(xi_pred);
  J.Phi.block<3, kImuDim>(kXi, 0) = Jinv * J.Phi.block<3, kImuDim>(kXi, 0);
  J.G.block<3, 6>(kXi, 0) = Jinv * J.G.block<3, 6>(kXi, 0);
  return J;
}

void propagate_covariance(Eigen::MatrixXd& P, const Mat15& Phi, const Mat15x6& G,
                          const NoiseModel& nm, double dt) {
  const Eigen::Index n = P.rows();
  Eigen::Matrix<double, 6, 6> Q = Eigen::Matrix<double, 6, 6>::Zero();
  Q.topLeftCorner<3, 3>() = nm.acc_psd / dt;
  Q.bottomRightCorner<3, 3>() = nm.gyro_psd / dt;

  Mat15 Pbb = Phi * P.topLeftCorner<kImuDim, kImuDim>() * Phi.transpose() + G * Q * G.transpose();
  Pbb.block<3, 3>(kBa, kBa) += nm.filter_bias_acc_psd * dt;
  Pbb.block<3, 3>(kBg, kBg) += nm.filter_bias_gyro_psd * dt;
  P.topLeftCorner<kImuDim, kImuDim>() = 0.5 * (Pbb + Pbb.transpose());

  if (n > kImuDim) {
    const Eigen::MatrixXd cross = Phi * P.topRightCorner(kImuDim, n - kImuDim);
    P.topRightCorner(kImuDim, n - kImuDim) = cross;
    P.bottomLeftCorner(n - kImuDim, kImuDim) = cross.transpose();
  }
}

void predict(FilterBelief& belief, const ImuSample& s, const NoiseModel& nm) {
  const ErrorStateJacobians J = error_state_jacobians(belief.imu, s);
  belief.imu = propagate_state(belief.imu, s, nm);
  propagate_covariance(belief.P, J.Phi, J.G, nm, s.dt);
}

void predict_interval(FilterBelief& belief, const std::vector<ImuSample>& samples,
                      const NoiseModel& nm) {
  Mat15 Phi_acc = Mat15::Identity();
  Eigen::MatrixXd Pbb = belief.P.topLeftCorner<kImuDim, kImuDim>();
  for (const auto& s : samples) {
    const ErrorStateJacobians J = error_state_jacobians(belief.imu, s);
    belief.imu = propagate_state(belief.imu, s, nm);
    propagate_covariance(Pbb, J.Phi, J.G, nm, s.dt);
    Phi_acc = J.Phi * Phi_acc;
  }
  const Eigen::Index n = belief.P.rows();
  belief.P.topLeftCorner<kImuDim, kImuDim>() = Pbb;
  if (n > kImuDim) {
    const Eigen::MatrixXd cross = Phi_acc * belief.P.topRightCorner(kImuDim, n - kImuDim);
    belief.P.topRightCorner(kImuDim, n - kImuDim) = cross;
    belief.P.bottomLeftCorner(n - kImuDim, kImuDim) = cross.transpose();
  }
}

// --------------------------------------------------------------- measurement

namespace {

struct CameraPose {
  Rotation R_CW;
  Vec3 p_WC;
};

CameraPose camera_pose(const ImuState& x, const Extrinsics& ex) {
  return {(x.R * ex.R_BC).transpose(), x.p + x.R * ex.p_BC};
}

}  // namespace

Vec3 landmark_in_camera(const ImuState& x, const InverseDepthLandmark& l, const Extrinsics& ex) {
  const CameraPose c = camera_pose(x, ex);
  return c.R_CW * (l.rho * (l.anchor - c.p_WC) + ray_direction(l.theta, l.phi));
}

std::optional<Vec2> predict_measurement(const ImuState& x, const InverseDepthLandmark& l,
                                        const Extrinsics& ex, const Intrinsics& K) {
  return project(landmark_in_camera(x, l, ex), K);
}

std::optional<MeasurementLinearization> measurement_residual(const ImuState& x,
                                                             const InverseDepthLandmark& l,
                                                             const FeatureObservation& obs,
                                                             const Extrinsics& ex,
                                                             const Intrinsics& K) {
  const CameraPose c = camera_pose(x, ex);
  const Vec3 m = ray_direction(l.theta, l.phi);
  const Vec3 d = l.anchor - c.p_WC;
  const Vec3 f = c.R_CW * (l.rho * d + m);
  const auto h = project(f, K);
  if (!h) return std::nullopt;
  const Mat23 dpi = *projection_jacobian(f, K);

  // body-frame direction before the extrinsic rotation
  const Vec3 q = x.R.transpose() * (l.rho * (l.anchor - x.p) + m);

  MeasurementLinearization out;
  out.r = obs.uv - *h;
  out.H_B.setZero();
  out.H_B.block<2, 3>(0, kXi) = -dpi * ex.R_BC.transpose() * hat(q);
  out.H_B.block<2, 3>(0, kP) = l.rho * dpi * c.R_CW;
  out.H_f.block<2, 3>(0, 0) = -l.rho * dpi * c.R_CW;
  out.H_f.block<2, 2>(0, 3) = -dpi * c.R_CW * ray_direction_jacobian(l.theta, l.phi);
  out.H_f.block<2, 1>(0, 5) = -dpi * c.R_CW * d;
  return out;
}

GateDecision mahalanobis_gate(const Vec2& r, const Mat2& S, double threshold) {
  GateDecision g;
  Eigen::LLT<Mat2> llt(S);
  if (llt.info() != Eigen::Success || !S.allFinite()) {
    g.singular = true;
    g.distance = std::numeric_limits<double>::infinity();
    return g;
  }
  g.distance = r.dot(llt.solve(r));
  g.accept = g.distance < threshold;
  return g;
}

GateDecision mahalanobis_gate(const Vec2& r, const Eigen::Matrix<double, 2, Eigen::Dynamic>& H,
                              const Eigen::MatrixXd& P, const Mat2& sigma, double threshold) {
  if (H.cols() != P.rows() || P.rows() != P.cols()) {
    throw std::invalid_argument("mahalanobis_gate: shape mismatch");
  }
  const Mat2 S = H * P * H.transpose() + sigma;
  return mahalanobis_gate(r, S, threshold);
}

namespace {

// P Hᵀ for one sparse 2-row block.
Eigen::Matrix<double, Eigen::Dynamic, 2> cov_times_ht(const Eigen::MatrixXd& P,
                                                      const MeasurementRow& row) {
  const int off = kImuDim + kLandmarkDim * row.landmark_index;
  return P.leftCols<kImuDim>() * row.H_B.transpose() +
         P.middleCols<kLandmarkDim>(off) * row.H_f.transpose();
}

// H M for one sparse 2-row block, where M has P.rows() rows.
template <typename Derived>
Eigen::Matrix<double, 2, Eigen::Dynamic> h_times(const MeasurementRow& row,
                                                 const Eigen::MatrixBase<Derived>& M) {
  const int off = kImuDim + kLandmarkDim * row.landmark_index;
  return row.H_B * M.template topRows<kImuDim>() +
         row.H_f * M.template middleRows<kLandmarkDim>(off);
}

Mat2 innovation_cov(const Eigen::MatrixXd& P, const MeasurementRow& row) {
  return h_times(row, cov_times_ht(P, row)) + row.noise;
}

std::optional<MeasurementRow> linearize(const FilterBelief& b, int idx,
                                        const FeatureObservation& obs, const Extrinsics& ex,
                                        const Intrinsics& K) {
  const auto lin = measurement_residual(b.imu, b.landmarks[idx], obs, ex, K);
  if (!lin) return std::nullopt;
  return MeasurementRow{lin->r, lin->H_B, lin->H_f, idx, obs.cov};
}

}  // namespace

bool kalman_update(FilterBelief& belief, const std::vector<MeasurementRow>& rows,
                   bool joseph_form) {
  if (rows.empty()) return true;
  const Eigen::Index n = belief.P.rows();
  const Eigen::Index k = 2 * static_cast<Eigen::Index>(rows.size());

  Eigen::MatrixXd M(n, k);
  Eigen::VectorXd r(k);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    M.middleCols<2>(2 * i) = cov_times_ht(belief.P, rows[i]);
    r.segment<2>(2 * i) = rows[i].r;
  }
  Eigen::MatrixXd S(k, k);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    S.middleRows<2>(2 * i) = h_times(rows[i], M);
    S.block<2, 2>(2 * i, 2 * i) += rows[i].noise;
  }
  S = 0.5 * (S + S.transpose()).eval();

  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) return false;

  // Jacobians are of the residual, so the correction carries a minus sign.
  const Eigen::VectorXd dx = -M * llt.solve(r);

  if (joseph_form) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(k, n);
    Eigen::MatrixXd Rn = Eigen::MatrixXd::Zero(k, k);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      H.block<2, kImuDim>(2 * i, 0) = rows[i].H_B;
      H.block<2, kLandmarkDim>(2 * i, kImuDim + kLandmarkDim * rows[i].landmark_index) =
          rows[i].H_f;
      Rn.block<2, 2>(2 * i, 2 * i) = rows[i].noise;
    }
    const Eigen::MatrixXd Kg = llt.solve(M.transpose()).transpose();
    Eigen::MatrixXd IKH = -Kg * H;
    IKH.diagonal().array() += 1.0;
    belief.P = IKH * belief.P * IKH.transpose() + Kg * Rn * Kg.transpose();
  } else {
    const Eigen::MatrixXd B = llt.matrixL().solve(M.transpose());
    belief.P.selfadjointView<Eigen::Lower>().rankUpdate(B.transpose(), -1.0);
    belief.P.triangularView<Eigen::StrictlyUpper>() = belief.P.transpose();
  }
  symmetrize(belief.P);
  apply_correction(belief, dx);
  return true;
}

UpdateReport robust_update(FilterBelief& belief, const Observations& observations,
                           const Extrinsics& ex, const Intrinsics& K, const EkfConfig& cfg,
                           std::mt19937_64& rng) {
  UpdateReport rep;
  struct Gated {
    const FeatureObservation* obs;
    int idx;
    MeasurementRow row;
    Mat2 S;
  };
  std::vector<Gated> gated;
  for (const auto& obs : observations) {
    const int idx = belief.index_of(obs.landmark_id);
    if (idx < 0) continue;
    ++rep.observed;
    auto row = linearize(belief, idx, obs, ex, K);
    if (!row) {
      ++rep.behind_camera;
      continue;
    }
    const Mat2 S = innovation_cov(belief.P, *row);
    const GateDecision g = mahalanobis_gate(row->r, S, cfg.gate_chi2);
    if (!g.accept) {
      ++rep.gate_rejected;
      rep.gate_rejected_ids.push_back(obs.landmark_id);
      continue;
    }
    gated.push_back({&obs, idx, *row, S});
  }
  rep.gated = static_cast<int>(gated.size());
  if (gated.empty()) {
    rep.prediction_only = true;
    return rep;
  }

  // 1-point hypotheses: mean-only update from one observation, then count
  // observations whose residual at the hypothesis is within pixel noise.
  std::vector<char> best(gated.size(), 0);
  int best_count = -1;
  std::uniform_int_distribution<std::size_t> pick(0, gated.size() - 1);
  const int iterations = std::max(1, cfg.ransac_iterations);
  for (int it = 0; it < iterations; ++it) {
    const Gated& g = gated[pick(rng)];
    const auto M = cov_times_ht(belief.P, g.row);
    const Eigen::VectorXd dx = -M * g.S.llt().solve(g.row.r);
    const ImuState hyp = apply_correction(belief.imu, Vec15(dx.head<kImuDim>()));
    std::vector<char> in(gated.size(), 0);
    int count = 0;
    for (std::size_t j = 0; j < gated.size(); ++j) {
      InverseDepthLandmark l = belief.landmarks[gated[j].idx];
      const auto d = dx.segment<kLandmarkDim>(kImuDim + kLandmarkDim * gated[j].idx);
      l.anchor += d.head<3>();
      l.theta += d(3);
      l.phi += d(4);
      l.rho += d(5);
      const auto h = predict_measurement(hyp, l, ex, K);
      if (!h) continue;
      const Vec2 r = gated[j].obs->uv - *h;
      if (r.dot(gated[j].obs->cov.llt().solve(r)) < cfg.ransac_inlier_chi2) {
        in[j] = 1;
        ++count;
      }
    }
    if (count > best_count) {
      best_count = count;
      best = std::move(in);
    }
  }

  std::vector<MeasurementRow> rows;
  for (std::size_t j = 0; j < gated.size(); ++j) {
    if (best[j]) {
      rows.push_back(gated[j].row);
      rep.accepted_ids.push_back(gated[j].obs->landmark_id);
    }
  }
  rep.consensus = static_cast<int>(rows.size());
  if (rows.empty() || !kalman_update(belief, rows, cfg.joseph_form)) {
    rep.prediction_only = true;
    rep.consensus = 0;
    rep.accepted_ids.clear();
    return rep;
  }

  if (cfg.rescue_high_innovation) {
    std::vector<MeasurementRow> rescue;
    std::vector<int> rescue_ids;
    for (std::size_t j = 0; j < gated.size(); ++j) {
      if (best[j]) continue;
      auto row = linearize(belief, gated[j].idx, *gated[j].obs, ex, K);
      if (!row) continue;
      if (mahalanobis_gate(row->r, innovation_cov(belief.P, *row), cfg.gate_chi2).accept) {
        rescue.push_back(*row);
        rescue_ids.push_back(gated[j].obs->landmark_id);
      }
    }
    if (!rescue.empty() && kalman_update(belief, rescue, cfg.joseph_form)) {
      rep.rescued = static_cast<int>(rescue.size());
      rep.accepted_ids.insert(rep.accepted_ids.end(), rescue_ids.begin(), rescue_ids.end());
    }
  }
  return rep;
}

// -------------------------------------------------------------- augmentation

InverseDepthLandmark landmark_from_observation(const ImuState& x, const Vec2& uv, double rho,
                                               const Extrinsics& ex, const Intrinsics& K) {
  const Rotation R_WC = x.R * ex.R_BC;
  const Vec3 tau = R_WC * normalized_ray(uv, K);
  const RayAngles a = angles_from_ray(tau);
  return {x.p + x.R * ex.p_BC, a.theta, a.phi, rho};
}

AugmentationJacobians augmentation_jacobians(const ImuState& x, const Vec2& uv,
                                             const Extrinsics& ex, const Intrinsics& K) {
  const Vec3 n = normalized_ray(uv, K);
  const Vec3 tau = x.R * ex.R_BC * n;
  const Mat23 A = angles_from_ray_jacobian(tau);

  AugmentationJacobians J;
  J.J_X.setZero();
  J.J_X.block<3, 3>(0, kXi) = -x.R * hat(ex.p_BC);
  J.J_X.block<3, 3>(0, kP) = Mat3::Identity();
  J.J_X.block<2, 3>(3, kXi) = -A * x.R * hat(ex.R_BC * n);

  Eigen::Matrix<double, 3, 2> dn = Eigen::Matrix<double, 3, 2>::Zero();
  dn(0, 0) = 1.0 / K.fx;
  dn(1, 1) = 1.0 / K.fy;
  J.J_h.setZero();
  J.J_h.block<2, 2>(3, 0) = A * x.R * ex.R_BC * dn;
  J.J_h(5, 2) = 1.0;
  return J;
}

void augment_landmark(FilterBelief& belief, const FeatureObservation& obs, const Extrinsics& ex,
                      const Intrinsics& K, double rho, double sigma_rho, int cap) {
  if (belief.landmark_count() >= cap) {
    throw std::length_error("augment_landmark: landmark cap reached");
  }
  const InverseDepthLandmark l = landmark_from_observation(belief.imu, obs.uv, rho, ex, K);
  const AugmentationJacobians J = augmentation_jacobians(belief.imu, obs.uv, ex, K);

  Mat3 sigma = Mat3::Zero();
  sigma.topLeftCorner<2, 2>() = obs.cov;
  sigma(2, 2) = sigma_rho * sigma_rho;

  const Eigen::Index n = belief.P.rows();
  const Eigen::MatrixXd JP = J.J_X * belief.P.topRows<kImuDim>();  // 6 x n
  Mat6 Pnew = JP.leftCols<kImuDim>() * J.J_X.transpose() + J.J_h * sigma * J.J_h.transpose();

  belief.P.conservativeResize(n + kLandmarkDim, n + kLandmarkDim);
  belief.P.bottomLeftCorner(kLandmarkDim, n) = JP;
  belief.P.topRightCorner(n, kLandmarkDim) = JP.transpose();
  belief.P.bottomRightCorner<kLandmarkDim, kLandmarkDim>() = 0.5 * (Pnew + Pnew.transpose());

  belief.landmarks.push_back(l);
  belief.landmark_ids.push_back(obs.landmark_id);
}

// ------------------------------------------------------------------- pruning

void remove_landmarks(FilterBelief& belief, std::vector<int> indices) {
  if (indices.empty()) return;
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());

  std::vector<char> drop(belief.landmark_count(), 0);
  for (int i : indices) {
    if (i < 0 || i >= belief.landmark_count()) {
      throw std::out_of_range("remove_landmarks: bad index");
    }
    drop[i] = 1;
  }
  std::vector<Eigen::Index> keep;
  for (int i = 0; i < kImuDim; ++i) keep.push_back(i);
  std::vector<InverseDepthLandmark> landmarks;
  std::vector<int> ids;
  for (int i = 0; i < belief.landmark_count(); ++i) {
    if (drop[i]) continue;
    for (int k = 0; k < kLandmarkDim; ++k) keep.push_back(kImuDim + kLandmarkDim * i + k);
    landmarks.push_back(belief.landmarks[i]);
    ids.push_back(belief.landmark_ids[i]);
  }
  belief.P = belief.P(keep, keep).eval();
  belief.landmarks = std::move(landmarks);
  belief.landmark_ids = std::move(ids);
}

void prune_landmarks(FilterBelief& belief, const std::unordered_set<int>& visible_ids) {
  std::vector<int> drop;
  for (int i = 0; i < belief.landmark_count(); ++i) {
    if (!visible_ids.count(belief.landmark_ids[i])) drop.push_back(i);
  }
  remove_landmarks(belief, std::move(drop));
}

double landmark_parallax(const ImuState& x, const InverseDepthLandmark& l, const Extrinsics& ex) {
  if (!(l.rho > 0.0)) return 0.0;
  const Vec3 m = ray_direction(l.theta, l.phi);
  const Vec3 now = l.anchor + m / l.rho - (x.p + x.R * ex.p_BC);
  const double nn = now.norm();
  if (nn == 0.0) return 0.0;
  return std::acos(std::clamp(m.dot(now) / nn, -1.0, 1.0));
}

void prune_to_cap(FilterBelief& belief, int cap, const Extrinsics& ex) {
  const int m = belief.landmark_count();
  if (m <= cap) return;
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> par(m);
  for (int i = 0; i < m; ++i) par[i] = landmark_parallax(belief.imu, belief.landmarks[i], ex);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return par[a] < par[b]; });
  order.resize(m - cap);
  remove_landmarks(belief, std::move(order));
}

int prune_negative_depth(FilterBelief& belief) {
  std::vector<int> drop;
  for (int i = 0; i < belief.landmark_count(); ++i) {
    if (!(belief.landmarks[i].rho > 0.0)) drop.push_back(i);
  }
  const int n = static_cast<int>(drop.size());
  remove_landmarks(belief, std::move(drop));
  return n;
}

}  // namespace vislam
