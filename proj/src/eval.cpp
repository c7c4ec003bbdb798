#include "vislam/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

namespace vislam {

void validate_trajectory(const Trajectory& traj) {
  for (std::size_t i = 1; i < traj.size(); ++i) {
    if (!(traj[i].t > traj[i - 1].t)) {
      throw std::invalid_argument("trajectory timestamps must strictly increase");
    }
  }
}

std::vector<Association> associate(const Trajectory& est, const Trajectory& gt, double tolerance) {
  std::vector<Association> out;
  if (gt.empty()) return out;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = est[i].t;
    auto it = std::lower_bound(gt.begin(), gt.end(), t,
                               [](const TrajectoryPoint& g, double v) { return g.t < v; });
    std::size_t best = gt.size();
    double best_dt = tolerance;
    for (auto c : {it, it == gt.begin() ? it : it - 1}) {
      if (c == gt.end()) continue;
      const double dt = std::abs(c->t - t);
      if (dt <= best_dt) {
        best_dt = dt;
        best = static_cast<std::size_t>(c - gt.begin());
      }
    }
    if (best < gt.size()) out.push_back({i, best});
  }
  return out;
}

RigidTransform horn_align(const std::vector<Vec3>& est, const std::vector<Vec3>& gt) {
  if (est.size() != gt.size()) throw std::invalid_argument("horn_align: size mismatch");
  if (est.size() < 3) throw std::invalid_argument("horn_align: need at least 3 pairs");
  const double n = static_cast<double>(est.size());
  Vec3 me = Vec3::Zero(), mg = Vec3::Zero();
  for (std::size_t i = 0; i < est.size(); ++i) {
    me += est[i];
    mg += gt[i];
  }
  me /= n;
  mg /= n;
  Mat3 M = Mat3::Zero();  // Σ (est_i - me)(gt_i - mg)ᵀ
  for (std::size_t i = 0; i < est.size(); ++i) M += (est[i] - me) * (gt[i] - mg).transpose();

  const double Sxx = M(0, 0), Sxy = M(0, 1), Sxz = M(0, 2);
  const double Syx = M(1, 0), Syy = M(1, 1), Syz = M(1, 2);
  const double Szx = M(2, 0), Szy = M(2, 1), Szz = M(2, 2);
  Eigen::Matrix4d N;
  N << Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx,
       Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz,
       Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy,
       Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(N);
  const Eigen::Vector4d q = es.eigenvectors().col(3);
  RigidTransform T;
  T.R = Eigen::Quaterniond(q(0), q(1), q(2), q(3)).normalized().toRotationMatrix();
  T.t = mg - T.R * me;
  return T;
}

double ate_rmse(const std::vector<Vec3>& est, const std::vector<Vec3>& gt) {
  if (est.size() != gt.size()) throw std::invalid_argument("ate_rmse: size mismatch");
  if (est.empty()) throw std::invalid_argument("ate_rmse: no pairs");
  double sum = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) sum += (est[i] - gt[i]).squaredNorm();
  return std::sqrt(sum / static_cast<double>(est.size()));
}

AlignmentResult align_trajectories(const Trajectory& est, const Trajectory& gt, double tolerance) {
  validate_trajectory(est);
  validate_trajectory(gt);
  AlignmentResult res;
  res.pairs = associate(est, gt, tolerance);
  std::vector<Vec3> pe, pg;
  for (const auto& a : res.pairs) {
    pe.push_back(est[a.est].p);
    pg.push_back(gt[a.gt].p);
  }
  res.T = horn_align(pe, pg);
  res.aligned = est;
  for (auto& x : res.aligned) {
    x.p = res.T * x.p;
    x.R = res.T.R * x.R;
  }
  for (auto& p : pe) p = res.T * p;
  res.ate_rmse = ate_rmse(pe, pg);
  return res;
}

namespace {

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return buf;
}

}  // namespace

std::vector<CompareRow> compare_runs(const std::vector<RunMetrics>& runs, bool* missing) {
  std::map<std::string, double> ekf;
  for (const auto& r : runs) {
    if (r.mode == "ekf-only" && r.ate_rmse) ekf[r.sequence] = *r.ate_rmse;
  }
  bool any_missing = false;
  std::vector<CompareRow> rows;
  for (const auto& r : runs) {
    CompareRow row{r.run, r.sequence, r.mode, "NA", "NA"};
    if (r.ate_rmse) {
      row.ate_rmse = fmt(*r.ate_rmse);
      const auto it = ekf.find(r.sequence);
      if (r.mode == "full" && it != ekf.end() && it->second > 0.0) {
        row.reduction_pct = fmt((1.0 - *r.ate_rmse / it->second) * 100.0);
      }
    } else {
      any_missing = true;
    }
    rows.push_back(row);
  }
  if (missing) *missing = any_missing;
  return rows;
}

std::string format_compare_csv(const std::vector<CompareRow>& rows) {
  std::ostringstream os;
  os << "run,sequence,mode,ate_rmse,reduction_pct\n";
  for (const auto& r : rows) {
    os << r.run << ',' << r.sequence << ',' << r.mode << ',' << r.ate_rmse << ','
       << r.reduction_pct << '\n';
  }
  return os.str();
}

}  // namespace vislam
