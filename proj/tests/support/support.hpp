#pragma once

// Helpers shared by the unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "qsts/geometry.hpp"
#include "qsts/simulator.hpp"

namespace qsts::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    const auto base = std::filesystem::temp_directory_path();
    for (;;) {
      path_ = base / ("qsts_" + tag + "_" + std::to_string(rd()));
      if (std::filesystem::create_directory(path_)) break;
    }
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

/// Marker of side `size_mm` placed with `pose` (marker frame as in
/// marker_object_points).
inline MarkerPlacement placement_from_pose(int id, const Pose& pose, double size_mm) {
  MarkerPlacement m;
  m.id = id;
  const auto obj = marker_object_points(size_mm);
  for (std::size_t i = 0; i < 4; ++i) m.corners[i] = pose.transform(obj[i]);
  m.center = pose.translation;
  m.normal = -pose.rotation.col(2);
  return m;
}

/// Fronto-parallel marker at (x, y, z), turned clockwise on screen by
/// `quarter_turns` x 90 degrees.
inline Pose fronto_pose(double x, double y, double z, int quarter_turns = 0) {
  const double a = quarter_turns * M_PI / 2.0;
  return {Eigen::AngleAxisd(a, Eigen::Vector3d::UnitZ()).toRotationMatrix(),
          Eigen::Vector3d(x, y, z)};
}

/// Rotation with a tilt of at most `max_tilt_rad` off the optical axis and a
/// free in-plane angle.
inline Eigen::Matrix3d random_tilted_rotation(std::mt19937_64& rng, double max_tilt_rad) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double tilt = max_tilt_rad * unit(rng);
  const double axis_angle = 2.0 * M_PI * unit(rng);
  const double spin = 2.0 * M_PI * unit(rng);
  const Eigen::Vector3d axis(std::cos(axis_angle), std::sin(axis_angle), 0.0);
  return (Eigen::AngleAxisd(tilt, axis) * Eigen::AngleAxisd(spin, Eigen::Vector3d::UnitZ()))
      .toRotationMatrix();
}

/// Projected outer corners of a placement.
inline std::array<Eigen::Vector2d, 4> project_corners(const MarkerPlacement& m,
                                                      const CameraModel& cam) {
  std::array<Eigen::Vector2d, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = project(m.corners[i], Pose{}, cam.intrinsics, cam.distortion);
  }
  return out;
}

}  // namespace qsts::test
