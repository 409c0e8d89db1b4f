#pragma once

// Baseline-relative marker displacement tracking and per-step statistics.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "qsts/geometry.hpp"

namespace qsts {

struct MarkerObservation {
  int id = 0;
  Pose pose;
};

using FrameObservations = std::vector<MarkerObservation>;

struct TrackSample {
  std::int64_t frame = 0;
  bool detected = false;
  Pose pose;
};

struct MarkerTrack {
  int id = 0;
  Pose baseline;
  /// Translation of the first baseline observation. Means are accumulated as
  /// offsets from it, so identical inputs average to themselves exactly.
  Eigen::Vector3d anchor = Eigen::Vector3d::Zero();
  std::vector<TrackSample> history;
};

/// delta = baseline translation - current translation; positive dz means the
/// marker moved toward the camera.
struct DeformationReading {
  std::int64_t frame = 0;
  int id = 0;
  Eigen::Vector3d delta = Eigen::Vector3d::Zero();
};

struct StepStatistics {
  int step = 0;
  double commanded_mm = 0.0;
  int id = 0;
  /// Reference displacement the relative error is measured against.
  double reference_mm = 0.0;
  std::optional<double> mean_dz_mm;
  /// Empty when the reference is not positive or mean_dz is empty.
  std::optional<double> relative_error_pct;
  double detection_rate = 0.0;
  int detected_frames = 0;
  int window_frames = 0;
};

struct TrajectoryPoint {
  std::int64_t frame = 0;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

struct BaselineReport {
  std::vector<int> tracked_ids;
  std::vector<int> excluded_ids;
  std::vector<std::string> warnings;
};

class DeformationTracker {
 public:
  /// IDs outside [0, dictionary_size) are counted as unknown and ignored.
  explicit DeformationTracker(int dictionary_size);

  /// Markers seen in fewer than `detection_floor` of the frames are excluded
  /// for the rest of the run. Throws kBaseline when frames is empty or no
  /// marker clears the floor.
  BaselineReport set_baseline(std::span<const FrameObservations> frames,
                              double detection_floor = 0.5);

  /// Frame indices must increase strictly (kParameter otherwise). Throws
  /// kBaseline before set_baseline.
  std::vector<DeformationReading> update(const FrameObservations& observations,
                                         std::int64_t frame);

  /// Statistics over frames in [first, last). Markers with no detection in
  /// the window are omitted. The relative error is taken against
  /// `commanded_mm` for every marker.
  std::vector<StepStatistics> step_statistics(int step, double commanded_mm,
                                              std::int64_t first, std::int64_t last) const;
  /// Same, with a per-marker reference displacement (markers absent from the
  /// map get no relative error).
  std::vector<StepStatistics> step_statistics(int step, double commanded_mm,
                                              std::int64_t first, std::int64_t last,
                                              const std::map<int, double>& reference_mm) const;

  /// Euclidean distance between two marker positions at `frame`. Throws
  /// kUnavailable unless both were detected in that frame.
  double inter_marker_distance(int id_a, int id_b, std::int64_t frame) const;

  /// Detected positions of one marker in frame order.
  std::vector<TrajectoryPoint> trajectory(int id) const;

  bool has_baseline() const { return has_baseline_; }
  const std::map<int, MarkerTrack>& tracks() const { return tracks_; }
  std::size_t unknown_id_count() const { return unknown_ids_; }

 private:
  const TrackSample* sample_at(int id, std::int64_t frame) const;

  int dictionary_size_;
  bool has_baseline_ = false;
  std::optional<std::int64_t> last_frame_;
  std::map<int, MarkerTrack> tracks_;
  std::size_t unknown_ids_ = 0;
};

/// Chordal L2 mean of rotations (projection of the arithmetic mean onto SO(3)).
Eigen::Matrix3d chordal_mean(std::span<const Eigen::Matrix3d> rotations);

void write_readings_csv_header(std::ostream& out);
void write_readings_csv_rows(std::ostream& out, std::span<const DeformationReading> readings);

void write_step_report_header(std::ostream& out);
void write_step_report_rows(std::ostream& out, std::span<const StepStatistics> stats);

}  // namespace qsts
