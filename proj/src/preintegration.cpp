#include "vislam/preintegration.hpp"

#include <algorithm>
#include <stdexcept>

namespace vislam {

void integrate(PreintegratedDelta& d, const ImuSample& s, const NoiseModel& nm) {
  const double dt = s.dt;
  if (!(dt > 0.0)) throw std::invalid_argument("integrate: non-positive sample dt");
  const double dt2 = dt * dt;
  const Vec3 a = s.acc - d.bias.ba;
  const Vec3 w = s.gyro - d.bias.bg;
  const Rotation dRk = exp_so3(w * dt);
  const Mat3 Jr = right_jacobian(w * dt);
  const Mat3 a_hat = hat(a);

  Mat9 A = Mat9::Identity();
  A.block<3, 3>(0, 0) = dRk.transpose();
  A.block<3, 3>(3, 0) = -0.5 * d.dR * a_hat * dt2;
  A.block<3, 3>(3, 6) = Mat3::Identity() * dt;
  A.block<3, 3>(6, 0) = -d.dR * a_hat * dt;
  Eigen::Matrix<double, 9, 3> Bg = Eigen::Matrix<double, 9, 3>::Zero();
  Eigen::Matrix<double, 9, 3> Ba = Eigen::Matrix<double, 9, 3>::Zero();
  Bg.block<3, 3>(0, 0) = Jr * dt;
  Ba.block<3, 3>(3, 0) = 0.5 * d.dR * dt2;
  Ba.block<3, 3>(6, 0) = d.dR * dt;
  d.cov = A * d.cov * A.transpose() + Bg * (nm.gyro_psd / dt) * Bg.transpose() +
          Ba * (nm.acc_psd / dt) * Ba.transpose();
  d.cov = 0.5 * (d.cov + d.cov.transpose()).eval();

  d.dp_dba += d.dv_dba * dt - 0.5 * d.dR * dt2;
  d.dp_dbg += d.dv_dbg * dt - 0.5 * d.dR * a_hat * d.dR_dbg * dt2;
  d.dv_dba -= d.dR * dt;
  d.dv_dbg -= d.dR * a_hat * d.dR_dbg * dt;
  d.dR_dbg = dRk.transpose() * d.dR_dbg - Jr * dt;

  d.dp += d.dv * dt + 0.5 * d.dR * a * dt2;
  d.dv += d.dR * a * dt;
  d.dR = d.dR * dRk;
  d.dt += dt;
  ++d.samples;
}

std::pair<ImuSample, ImuSample> split_sample(const ImuSample& s, const ImuSample& next,
                                             double t_cut) {
  if (!(t_cut > s.t && t_cut < s.t + s.dt)) {
    throw std::invalid_argument("split_sample: cut outside the sample interval");
  }
  const double alpha = (t_cut - s.t) / s.dt;
  ImuSample first = s;
  first.dt = t_cut - s.t;
  ImuSample second;
  second.t = t_cut;
  second.dt = s.t + s.dt - t_cut;
  second.acc = (1.0 - alpha) * s.acc + alpha * next.acc;
  second.gyro = (1.0 - alpha) * s.gyro + alpha * next.gyro;
  return {first, second};
}

PreintegratedDelta preintegrate(const std::vector<ImuSample>& samples, double t0, double t1,
                                const BiasPair& bias, const NoiseModel& nm) {
  PreintegratedDelta d(bias);
  constexpr double kEps = 1e-12;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    ImuSample s = samples[k];
    const double end = s.t + s.dt;
    if (end <= t0 + kEps || s.t >= t1 - kEps) continue;
    const ImuSample& next = (k + 1 < samples.size()) ? samples[k + 1] : samples[k];
    if (s.t < t0 - kEps) s = split_sample(s, next, t0).second;
    if (end > t1 + kEps) s = split_sample(s, next, t1).first;
    integrate(d, s, nm);
  }
  return d;
}

CorrectedDelta correct_for_bias(const PreintegratedDelta& d, const BiasPair& b) {
  const Vec3 dbg = b.bg - d.bias.bg;
  const Vec3 dba = b.ba - d.bias.ba;
  return {d.dR * exp_so3(d.dR_dbg * dbg), d.dp + d.dp_dbg * dbg + d.dp_dba * dba,
          d.dv + d.dv_dbg * dbg + d.dv_dba * dba};
}

Vec9 preintegration_residual(const PreintegratedDelta& d, const ImuState& xi, const ImuState& xj,
                             const BiasPair& bias_i, const Vec3& g) {
  const CorrectedDelta c = correct_for_bias(d, bias_i);
  const double T = d.dt;
  const Mat3 RiT = xi.R.transpose();
  Vec9 r;
  r.segment<3>(0) = log_so3(c.dR.transpose() * RiT * xj.R);
  r.segment<3>(3) = RiT * (xj.p - xi.p - xi.v * T - 0.5 * g * T * T) - c.dp;
  r.segment<3>(6) = RiT * (xj.v - xi.v - g * T) - c.dv;
  return r;
}

Vec9 preintegration_residual(const PreintegratedDelta& d, const ImuState& xi, const ImuState& xj,
                             const Vec3& g) {
  return preintegration_residual(d, xi, xj, BiasPair{xi.bg, xi.ba}, g);
}

PreintegrationJacobians residual_jacobians(const PreintegratedDelta& d, const ImuState& xi,
                                           const ImuState& xj, const Vec3& g) {
  const Vec3 dbg = xi.bg - d.bias.bg;
  const CorrectedDelta c = correct_for_bias(d, BiasPair{xi.bg, xi.ba});
  const double T = d.dt;
  const Mat3 RiT = xi.R.transpose();
  const Vec3 rR = log_so3(c.dR.transpose() * RiT * xj.R);
  const Mat3 Jinv = right_jacobian_inv(rR);

  PreintegrationJacobians J;
  J.J_i.setZero();
  J.J_j.setZero();

  J.J_i.block<3, 3>(0, 0) = -Jinv * xj.R.transpose() * xi.R;
  J.J_i.block<3, 3>(0, 12) =
      -Jinv * exp_so3(rR).transpose() * right_jacobian(d.dR_dbg * dbg) * d.dR_dbg;
  J.J_j.block<3, 3>(0, 0) = Jinv;

  J.J_i.block<3, 3>(3, 0) = hat(RiT * (xj.p - xi.p - xi.v * T - 0.5 * g * T * T));
  J.J_i.block<3, 3>(3, 3) = -RiT;
  J.J_i.block<3, 3>(3, 6) = -RiT * T;
  J.J_i.block<3, 3>(3, 9) = -d.dp_dba;
  J.J_i.block<3, 3>(3, 12) = -d.dp_dbg;
  J.J_j.block<3, 3>(3, 3) = RiT;

  J.J_i.block<3, 3>(6, 0) = hat(RiT * (xj.v - xi.v - g * T));
  J.J_i.block<3, 3>(6, 6) = -RiT;
  J.J_i.block<3, 3>(6, 9) = -d.dv_dba;
  J.J_i.block<3, 3>(6, 12) = -d.dv_dbg;
  J.J_j.block<3, 3>(6, 6) = RiT;
  return J;
}

Eigen::Matrix<double, 6, 1> bias_residual(const BiasPair& bi, const BiasPair& bj) {
  Eigen::Matrix<double, 6, 1> r;
  r << bj.bg - bi.bg, bj.ba - bi.ba;
  return r;
}

}  // namespace vislam
