#include "vislam/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include <Eigen/Geometry>

namespace vislam {

namespace fs = std::filesystem;

std::int64_t to_ns(double t) { return std::llround(t * 1e9); }
double from_ns(std::int64_t ns) { return static_cast<double>(ns) * 1e-9; }

namespace {

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::ofstream open_out(const fs::path& p, const char* header) {
  std::ofstream os(p);
  if (!os) throw DatasetError("cannot write " + p.string());
  os << header << '\n';
  return os;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p, const char* header) {
  std::ifstream is(p);
  if (!is) throw DatasetError("cannot open " + p.string());
  std::string line;
  if (!std::getline(is, line)) throw DatasetError(p.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw DatasetError(p.string() + ": unexpected header '" + line + "'");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

double num(const std::string& s, const fs::path& p) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DatasetError(p.string() + ": bad number '" + s + "'");
  }
}

std::int64_t integer(const std::string& s, const fs::path& p) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DatasetError(p.string() + ": bad integer '" + s + "'");
  }
}

void expect_cols(const std::vector<std::string>& row, std::size_t n, const fs::path& p) {
  if (row.size() != n) {
    throw DatasetError(p.string() + ": expected " + std::to_string(n) + " columns, got " +
                       std::to_string(row.size()));
  }
}

}  // namespace

void write_dataset(const Dataset& d, const fs::path& dir) {
  fs::create_directories(dir);

  auto imu = open_out(dir / "imu.csv", kImuHeader);
  for (const auto& s : d.imu) {
    imu << to_ns(s.t) << ',' << fmt(s.gyro.x()) << ',' << fmt(s.gyro.y()) << ','
        << fmt(s.gyro.z()) << ',' << fmt(s.acc.x()) << ',' << fmt(s.acc.y()) << ','
        << fmt(s.acc.z()) << '\n';
  }

  auto frames = open_out(dir / "frames.csv", kFramesHeader);
  auto obs = open_out(dir / "observations.csv", kObservationsHeader);
  for (const auto& f : d.frames) {
    frames << to_ns(f.t) << ',' << f.id << '\n';
    for (const auto& o : f.obs) {
      obs << f.id << ',' << o.obs.landmark_id << ',' << fmt(o.obs.uv.x()) << ','
          << fmt(o.obs.uv.y()) << ',' << (o.outlier ? 1 : 0) << '\n';
    }
  }

  auto gt = open_out(dir / "groundtruth.csv", kGroundTruthHeader);
  for (const auto& g : d.groundtruth) {
    const Eigen::Quaterniond q(g.state.R);
    const ImuState& x = g.state;
    gt << to_ns(g.t) << ',' << fmt(x.p.x()) << ',' << fmt(x.p.y()) << ',' << fmt(x.p.z()) << ','
       << fmt(q.w()) << ',' << fmt(q.x()) << ',' << fmt(q.y()) << ',' << fmt(q.z()) << ','
       << fmt(x.v.x()) << ',' << fmt(x.v.y()) << ',' << fmt(x.v.z()) << ',' << fmt(x.bg.x())
       << ',' << fmt(x.bg.y()) << ',' << fmt(x.bg.z()) << ',' << fmt(x.ba.x()) << ','
       << fmt(x.ba.y()) << ',' << fmt(x.ba.z()) << '\n';
  }

  auto world = open_out(dir / "world.csv", kWorldHeader);
  for (const auto& [id, L] : d.world) {
    world << id << ',' << fmt(L.x()) << ',' << fmt(L.y()) << ',' << fmt(L.z()) << '\n';
  }
}

Dataset read_dataset(const fs::path& dir, double pixel_sigma) {
  Dataset d;

  const fs::path imu_path = dir / "imu.csv";
  for (const auto& row : read_csv(imu_path, kImuHeader)) {
    expect_cols(row, 7, imu_path);
    ImuSample s;
    s.t = from_ns(integer(row[0], imu_path));
    s.gyro << num(row[1], imu_path), num(row[2], imu_path), num(row[3], imu_path);
    s.acc << num(row[4], imu_path), num(row[5], imu_path), num(row[6], imu_path);
    d.imu.push_back(s);
  }
  for (std::size_t k = 0; k < d.imu.size(); ++k) {
    if (k + 1 < d.imu.size()) {
      d.imu[k].dt = d.imu[k + 1].t - d.imu[k].t;
    } else {
      d.imu[k].dt = k > 0 ? d.imu[k - 1].dt : 0.0;
    }
    if (k + 1 < d.imu.size() && !(d.imu[k].dt > 0.0)) {
      throw DatasetError(imu_path.string() + ": timestamps must increase");
    }
  }

  const fs::path frames_path = dir / "frames.csv";
  std::map<int, std::size_t> frame_index;
  for (const auto& row : read_csv(frames_path, kFramesHeader)) {
    expect_cols(row, 2, frames_path);
    Frame f;
    f.t = from_ns(integer(row[0], frames_path));
    f.id = static_cast<int>(integer(row[1], frames_path));
    frame_index[f.id] = d.frames.size();
    d.frames.push_back(std::move(f));
  }

  const fs::path obs_path = dir / "observations.csv";
  const double var = std::max(pixel_sigma * pixel_sigma, 1e-12);
  for (const auto& row : read_csv(obs_path, kObservationsHeader)) {
    expect_cols(row, 5, obs_path);
    const int fid = static_cast<int>(integer(row[0], obs_path));
    const auto it = frame_index.find(fid);
    if (it == frame_index.end()) {
      throw DatasetError(obs_path.string() + ": unknown frame " + std::to_string(fid));
    }
    LabeledObservation lo;
    lo.obs.landmark_id = static_cast<int>(integer(row[1], obs_path));
    lo.obs.uv << num(row[2], obs_path), num(row[3], obs_path);
    lo.obs.cov = Mat2::Identity() * var;
    lo.outlier = integer(row[4], obs_path) != 0;
    lo.true_uv = lo.obs.uv;
    d.frames[it->second].obs.push_back(lo);
  }

  const fs::path gt_path = dir / "groundtruth.csv";
  if (fs::exists(gt_path)) {
    for (const auto& row : read_csv(gt_path, kGroundTruthHeader)) {
      expect_cols(row, 17, gt_path);
      GroundTruthSample g;
      g.t = from_ns(integer(row[0], gt_path));
      std::vector<double> v;
      for (std::size_t i = 1; i < row.size(); ++i) v.push_back(num(row[i], gt_path));
      g.state.p << v[0], v[1], v[2];
      Eigen::Quaterniond q(v[3], v[4], v[5], v[6]);
      g.state.R = q.normalized().toRotationMatrix();
      g.state.v << v[7], v[8], v[9];
      g.state.bg << v[10], v[11], v[12];
      g.state.ba << v[13], v[14], v[15];
      d.groundtruth.push_back(g);
    }
  }

  const fs::path world_path = dir / "world.csv";
  if (fs::exists(world_path)) {
    for (const auto& row : read_csv(world_path, kWorldHeader)) {
      expect_cols(row, 4, world_path);
      d.world[static_cast<int>(integer(row[0], world_path))] =
          Vec3(num(row[1], world_path), num(row[2], world_path), num(row[3], world_path));
    }
  }
  return d;
}

}  // namespace vislam
