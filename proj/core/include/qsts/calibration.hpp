#pragma once

// Planar-target intrinsic calibration: closed-form initialization from
// per-view homographies followed by joint Levenberg-Marquardt refinement of
// intrinsics, distortion and every view pose.

#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "qsts/geometry.hpp"

namespace qsts {

/// One image of the checkerboard. Board points are inner-corner coordinates
/// in mm on z = 0 with (0, 0) at the top-left, x right and y down.
struct CalibrationView {
  std::vector<Eigen::Vector2d> board_pts;
  std::vector<Eigen::Vector2d> image_pts;
};

struct CalibrationResult {
  CameraIntrinsics intrinsics;
  Distortion distortion;
  std::vector<Pose> per_view_poses;
  double rms_reprojection = 0.0;
  /// RMS of the closed-form initialization (zero distortion).
  double initial_rms = 0.0;
  std::vector<double> cost_trace;
};

struct CalibrationOptions {
  bool enable_k3 = false;
  LmOptions lm{.max_iterations = 200};
};

/// Inner corners of a board with `squares_x` x `squares_y` squares.
std::vector<Eigen::Vector2d> checkerboard_corners(int squares_x = 10, int squares_y = 7,
                                                  double square_mm = 1.5);

/// Zero-skew closed form from >= 3 homographies (pixel units).
/// Throws kCalibration when the constraint system is rank deficient.
CameraIntrinsics closed_form_intrinsics(std::span<const Homography> board_to_pixel);

/// Throws kCalibration for fewer than 3 views, malformed views or a
/// degenerate view set.
CalibrationResult calibrate(std::span<const CalibrationView> views,
                            const CalibrationOptions& options = {});

void save_calibration(const CalibrationResult& result, const std::filesystem::path& path);
CameraModel load_calibration(const std::filesystem::path& path);

/// `view,board_x_mm,board_y_mm,img_x_px,img_y_px` rows, grouped by view id.
std::vector<CalibrationView> read_corner_csv(const std::filesystem::path& path);
void write_corner_csv(std::span<const CalibrationView> views, const std::filesystem::path& path);

}  // namespace qsts
