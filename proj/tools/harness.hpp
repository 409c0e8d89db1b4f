#pragma once

// Subcommand implementations behind the qsts command line tool.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "qsts/deformation.hpp"
#include "qsts/detector.hpp"
#include "qsts/dictionary.hpp"
#include "qsts/geometry.hpp"
#include "qsts/simulator.hpp"

namespace qsts::harness {

/// Markers whose true displacement at a step is below this get no relative
/// error (empty rel_err_pct) and stay out of the aggregates.
inline constexpr double kMinReferenceMm = 0.4;
/// Rounding slack on that comparison.
inline constexpr double kReferenceSlackMm = 1e-9;

struct CharacterizeOptions {
  SceneConfig scene;
  std::vector<double> steps = default_protocol_steps();
  int frames_per_step = 200;
  std::uint64_t seed = 1;
  DetectorParams detector;
  /// Camera used for pose estimation; the scene camera when empty.
  std::optional<CameraModel> calibration;
  double min_reference_mm = kMinReferenceMm;
  /// Output directory; nothing is written when empty.
  std::filesystem::path out_dir;
  bool force = false;
};

struct DistanceComparison {
  int step = 0;
  int id_a = 0;
  int id_b = 0;
  double estimated_mm = 0.0;
  double actual_mm = 0.0;
  double error_mm() const { return estimated_mm - actual_mm; }
};

struct CharacterizationReport {
  std::vector<StepStatistics> stats;
  std::vector<DistanceComparison> distances;
  std::vector<std::string> warnings;
  double max_relative_error_pct = 0.0;
  double mean_relative_error_pct = 0.0;
  int relative_error_samples = 0;
  /// Worst (marker, step) relative error, for reporting.
  int worst_id = -1;
  int worst_step = -1;
  double max_distance_error_mm = 0.0;
  /// Detections over (frames x placed markers).
  double detection_rate = 0.0;
  std::int64_t frames = 0;
  double mean_latency_ms = 0.0;
  std::size_t pose_failures = 0;
  std::size_t unknown_ids = 0;
  std::size_t baseline_markers = 0;
};

/// simulate -> detect -> pose -> baseline + tracking -> statistics.
/// Throws on configuration errors and when out_dir holds earlier outputs
/// without `force` (kIo).
CharacterizationReport characterize(const CharacterizeOptions& options,
                                    const MarkerDictionary& dict);

void write_summary(const CharacterizationReport& report, const CharacterizeOptions& options,
                   std::ostream& out);

struct SimulateOptions {
  SceneConfig scene;
  std::vector<double> steps = default_protocol_steps();
  int frames_per_step = 200;
  std::uint64_t seed = 1;
  std::filesystem::path out_dir;
  bool force = false;
};

/// Writes frames/frame_NNNNNN.pgm and truth.csv; returns the frame count.
std::int64_t simulate(const SimulateOptions& options, const MarkerDictionary& dict);

struct DetectOptions {
  std::vector<std::filesystem::path> frames;
  CameraModel camera;
  double marker_size_mm = 1.5;
  DetectorParams detector;
  std::filesystem::path out_dir;
  bool force = false;
};

struct DetectSummary {
  std::int64_t frames = 0;
  std::size_t detections = 0;
  std::size_t pose_failures = 0;
  double mean_latency_ms = 0.0;
  /// One entry per unreadable frame.
  std::vector<std::string> warnings;
};

/// PGM frames in, detections.csv and poses.csv out. A directory argument
/// expands to its .pgm files in name order; a file's position in that list is
/// its frame index. Unreadable frames are skipped with a warning.
DetectSummary detect(const DetectOptions& options, const MarkerDictionary& dict);

/// Estimates every detected marker's pose; failures are counted and dropped.
std::vector<MarkerObservation> estimate_poses(const std::vector<DetectedMarker>& detections,
                                              const CameraModel& camera, double marker_size_mm,
                                              std::size_t* failures = nullptr);

void write_pose_csv_header(std::ostream& out);
void write_pose_csv_rows(std::ostream& out, std::int64_t frame,
                         const std::vector<MarkerObservation>& poses);
/// `frame,step,plate_depth_mm`, written next to truth.csv.
void write_frame_index_header(std::ostream& out);
void write_frame_index_row(std::ostream& out, const ProtocolFrame& frame);

void write_distance_csv_header(std::ostream& out);
void write_distance_csv_rows(std::ostream& out, const std::vector<DistanceComparison>& rows);

struct ReportSummary {
  double max_relative_error_pct = 0.0;
  double mean_relative_error_pct = 0.0;
  int relative_error_samples = 0;
  double max_distance_error_mm = 0.0;
  double mean_detection_rate = 0.0;
};

/// Recomputes the summary from a characterize output directory
/// (step_report.csv, distances.csv).
ReportSummary summarize_outputs(const std::filesystem::path& dir);

struct ReportOptions {
  /// Directory holding readings.csv, truth.csv and frames.csv (poses.csv is
  /// optional and feeds the position files).
  std::filesystem::path in_dir;
  /// Defaults to in_dir / "report".
  std::filesystem::path out_dir;
  double min_reference_mm = kMinReferenceMm;
  bool force = false;
};

struct ErrorRow {
  int step = 0;
  double plate_depth_mm = 0.0;
  int id = 0;
  Eigen::Vector3d mean_delta = Eigen::Vector3d::Zero();
  Eigen::Vector3d true_delta = Eigen::Vector3d::Zero();
  std::optional<double> relative_error_pct;
  int frames = 0;
  double dz_error_mm() const { return mean_delta.z() - true_delta.z(); }
  double lateral_error_mm() const {
    return (mean_delta.head<2>() - true_delta.head<2>()).norm();
  }
};

struct JoinedReport {
  std::vector<ErrorRow> rows;
  double max_relative_error_pct = 0.0;
  double mean_relative_error_pct = 0.0;
  int relative_error_samples = 0;
  double max_abs_dz_error_mm = 0.0;
  std::size_t trajectory_files = 0;
};

/// Joins readings with ground truth per (frame, id) and writes error_table.csv,
/// xy_by_step.csv and trajectories/marker_NN.csv. Throws kFormat naming the
/// missing keys when a reading has no truth row or frame index entry.
JoinedReport report(const ReportOptions& options);

}  // namespace qsts::harness
