#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "vislam/sim.hpp"

namespace vislam {

inline constexpr const char* kImuHeader = "timestamp_ns,wx,wy,wz,ax,ay,az";
inline constexpr const char* kFramesHeader = "timestamp_ns,frame_id";
inline constexpr const char* kObservationsHeader = "frame_id,landmark_id,u,v,outlier_flag";
inline constexpr const char* kGroundTruthHeader =
    "timestamp_ns,px,py,pz,qw,qx,qy,qz,vx,vy,vz,bgx,bgy,bgz,bax,bay,baz";
inline constexpr const char* kWorldHeader = "landmark_id,x,y,z";

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Writes imu.csv, frames.csv, observations.csv, groundtruth.csv and
/// world.csv into `dir` (created if missing).
void write_dataset(const Dataset& d, const std::filesystem::path& dir);

/// Reads the five files back. Observation covariances are set from
/// `pixel_sigma`. Throws DatasetError on missing files or malformed rows.
Dataset read_dataset(const std::filesystem::path& dir, double pixel_sigma = 1.0);

std::int64_t to_ns(double t);
double from_ns(std::int64_t ns);

}  // namespace vislam
