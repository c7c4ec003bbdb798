#pragma once

#include <utility>
#include <vector>

#include <Eigen/Core>

#include "vislam/types.hpp"

namespace vislam {

using Mat9 = Eigen::Matrix<double, 9, 9>;
using Vec9 = Eigen::Matrix<double, 9, 1>;

/// Relative motion accumulated between two keyframes, expressed in the body
/// frame of the first one, together with its bias Jacobians and 9x9 noise
/// covariance ordered (dxi, dp, dv).
struct PreintegratedDelta {
  Rotation dR = Rotation::Identity();
  Vec3 dp = Vec3::Zero();
  Vec3 dv = Vec3::Zero();
  double dt = 0.0;
  BiasPair bias;  // linearization point

  Mat3 dR_dbg = Mat3::Zero();
  Mat3 dp_dbg = Mat3::Zero();
  Mat3 dp_dba = Mat3::Zero();
  Mat3 dv_dbg = Mat3::Zero();
  Mat3 dv_dba = Mat3::Zero();

  Mat9 cov = Mat9::Zero();
  int samples = 0;

  PreintegratedDelta() = default;
  explicit PreintegratedDelta(const BiasPair& b) : bias(b) {}
};

/// Adds one sample to the delta. Noise PSDs in `nm` feed the covariance; they
/// do not change the mean.
void integrate(PreintegratedDelta& delta, const ImuSample& s, const NoiseModel& nm);

/// Integrates every sample of `samples` overlapping [t0, t1), clipping the
/// first and last ones.
PreintegratedDelta preintegrate(const std::vector<ImuSample>& samples, double t0, double t1,
                                const BiasPair& bias, const NoiseModel& nm);

/// Splits a sample at t_cut. The second piece carries the value linearly
/// interpolated towards `next` at t_cut.
std::pair<ImuSample, ImuSample> split_sample(const ImuSample& s, const ImuSample& next,
                                             double t_cut);

struct CorrectedDelta {
  Rotation dR;
  Vec3 dp;
  Vec3 dv;
};

/// First-order update of the deltas to a new bias.
CorrectedDelta correct_for_bias(const PreintegratedDelta& delta, const BiasPair& new_bias);

/// Residual [r_R, r_p, r_v] between two states and the bias-corrected delta.
Vec9 preintegration_residual(const PreintegratedDelta& delta, const ImuState& xi,
                             const ImuState& xj, const BiasPair& bias_i, const Vec3& gravity);

/// Overload taking the biases from `xi`.
Vec9 preintegration_residual(const PreintegratedDelta& delta, const ImuState& xi,
                             const ImuState& xj, const Vec3& gravity);

struct PreintegrationJacobians {
  /// d r / d (dxi_i, dp_i, dv_i, dba_i, dbg_i); same block order as the filter state.
  Eigen::Matrix<double, 9, 15> J_i;
  /// d r / d (dxi_j, dp_j, dv_j)
  Mat9 J_j;
};

/// Analytic Jacobians of preintegration_residual. Rotations perturbed on the
/// right, positions and velocities additively in the world frame.
PreintegrationJacobians residual_jacobians(const PreintegratedDelta& delta, const ImuState& xi,
                                           const ImuState& xj, const Vec3& gravity);

/// [b_gj - b_gi, b_aj - b_ai]
Eigen::Matrix<double, 6, 1> bias_residual(const BiasPair& bias_i, const BiasPair& bias_j);

}  // namespace vislam
