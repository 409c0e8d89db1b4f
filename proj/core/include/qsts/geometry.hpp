#pragma once

// Pinhole camera with Brown-Conrady distortion, DLT homographies and planar
// pose estimation (homography decomposition + Levenberg-Marquardt).
//
// Camera frame: +Z along the optical axis, away from the camera. All metric
// quantities are millimetres; image quantities are pixels with pixel centers
// at integer coordinates.

#include <array>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace qsts {

/// The camera intrinsic matrix [fx 0 cx; 0 fy cy; 0 0 1] (zero skew).
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  /// Throws kParameter unless fx, fy > 0 and everything is finite.
  void validate() const;
  Eigen::Matrix3d matrix() const;
  Eigen::Vector2d to_pixel(const Eigen::Vector2d& normalized) const {
    return {fx * normalized.x() + cx, fy * normalized.y() + cy};
  }
  Eigen::Vector2d to_normalized(const Eigen::Vector2d& pixel) const {
    return {(pixel.x() - cx) / fx, (pixel.y() - cy) / fy};
  }

  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

/// Radial (k1, k2, k3) and tangential (p1, p2) distortion in normalized
/// coordinates.
struct Distortion {
  double k1 = 0.0;
  double k2 = 0.0;
  double k3 = 0.0;
  double p1 = 0.0;
  double p2 = 0.0;

  /// Radius of the normalized domain where the model must stay invertible.
  static constexpr double kWorkingRadius = 0.7;

  bool is_zero() const { return k1 == 0 && k2 == 0 && k3 == 0 && p1 == 0 && p2 == 0; }
  Eigen::Vector2d apply(const Eigen::Vector2d& p) const;
  /// d apply / d p.
  Eigen::Matrix2d jacobian(const Eigen::Vector2d& p) const;
  /// Throws kParameter if coefficients are non-finite or the map folds over
  /// (non-positive Jacobian determinant) anywhere on the working domain.
  void validate() const;

  friend bool operator==(const Distortion&, const Distortion&) = default;
};

/// Rigid transform from an object frame into the camera frame.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose from_axis_angle(const Eigen::Vector3d& omega, const Eigen::Vector3d& t);
  Eigen::Vector3d axis_angle() const;
  Eigen::Vector3d transform(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }
};

/// Geodesic angle between two rotations, radians.
double rotation_angle_between(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b);
/// Closest rotation (Frobenius) to an arbitrary 3x3 matrix.
Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m);

class Homography {
 public:
  Homography() = default;
  /// Scales so the bottom-right entry is 1 when it is not ~0.
  explicit Homography(const Eigen::Matrix3d& m);

  const Eigen::Matrix3d& matrix() const { return m_; }
  Eigen::Vector2d apply(const Eigen::Vector2d& p) const;
  Homography inverse() const;

 private:
  Eigen::Matrix3d m_ = Eigen::Matrix3d::Identity();
};

Eigen::Vector2d distort(const Eigen::Vector2d& normalized, const Distortion& dist);

/// Newton inversion of the distortion map. Throws kParameter outside the
/// working domain and kNumerical if 100 iterations do not reach a residual
/// below 1e-12.
Eigen::Vector2d undistort(const Eigen::Vector2d& distorted, const Distortion& dist);

/// Forward model: rigid transform, perspective division, distortion, CIM.
/// Throws kProjection if the transformed point has z <= 1e-6.
Eigen::Vector2d project(const Eigen::Vector3d& point, const Pose& pose,
                        const CameraIntrinsics& cam, const Distortion& dist);

/// Pixel -> undistorted normalized image coordinate.
Eigen::Vector2d unproject_normalized(const Eigen::Vector2d& pixel,
                                     const CameraIntrinsics& cam, const Distortion& dist);

/// Normalized DLT over >= 4 correspondences mapping src onto dst. Throws
/// kDegenerate when the design matrix has a null space of dimension > 1.
Homography dlt_homography(std::span<const Eigen::Vector2d> src,
                          std::span<const Eigen::Vector2d> dst);

/// Corners of a square marker of side `side_mm` centered at the origin of the
/// z = 0 plane: top-left, top-right, bottom-right, bottom-left with x right
/// and y down, so a fronto-parallel marker has identity rotation.
std::array<Eigen::Vector3d, 4> marker_object_points(double side_mm);

struct LmOptions {
  int max_iterations = 100;
  double step_tolerance = 1e-10;
  double relative_cost_tolerance = 1e-12;
  /// Sum of squared residuals treated as an exact fit.
  double absolute_cost_tolerance = 1e-20;
  int max_damping_retries = 12;
};

struct PoseRefinement {
  Pose pose;
  /// Cost (sum of squared pixel residuals) at the start and after every
  /// accepted step.
  std::vector<double> cost_trace;
  int iterations = 0;
  /// Set when no damping level decreased the cost on the first iteration
  /// even though the cost was above tolerance.
  bool convergence_warning = false;
};

/// LM over (axis-angle, translation) minimizing pixel reprojection error.
/// Throws kProjection if the initial pose cannot project every point.
PoseRefinement refine_pose_lm(const Pose& initial, std::span<const Eigen::Vector3d> object_pts,
                              std::span<const Eigen::Vector2d> image_pts,
                              const CameraIntrinsics& cam, const Distortion& dist,
                              const LmOptions& options = {});

/// Closed-form pose of planar (z = 0) object points from the plane-to-image
/// homography, with t.z > 0. Throws kDegenerate or kPose.
Pose pose_from_homography(const Homography& plane_to_normalized);

/// Homography decomposition followed by refine_pose_lm. Object points must
/// lie on z = 0. Throws kDegenerate, kPose or kParameter.
Pose planar_pnp(std::span<const Eigen::Vector3d> object_pts,
                std::span<const Eigen::Vector2d> image_pts, const CameraIntrinsics& cam,
                const Distortion& dist);

/// Root mean square of per-point pixel residual norms.
double reprojection_rmse(const Pose& pose, std::span<const Eigen::Vector3d> object_pts,
                         std::span<const Eigen::Vector2d> image_pts,
                         const CameraIntrinsics& cam, const Distortion& dist);

/// Analytic derivatives of one projected pixel.
struct ProjectionJacobian {
  Eigen::Vector2d pixel;
  Eigen::Matrix<double, 2, 4> d_intrinsics;  // fx, fy, cx, cy
  Eigen::Matrix<double, 2, 5> d_distortion;  // k1, k2, p1, p2, k3
  Eigen::Matrix<double, 2, 6> d_pose;        // omega (axis-angle), t
};
ProjectionJacobian project_with_jacobian(const Eigen::Vector3d& point,
                                         const Eigen::Vector3d& omega,
                                         const Eigen::Vector3d& t,
                                         const CameraIntrinsics& cam,
                                         const Distortion& dist);

/// Stacked 2N x 6 Jacobian of pixel residuals w.r.t. (omega, t) of `pose`.
Eigen::MatrixXd pose_residual_jacobian(const Pose& pose,
                                       std::span<const Eigen::Vector3d> object_pts,
                                       const CameraIntrinsics& cam, const Distortion& dist);

/// The `qscam v1` calibration file.
struct CameraModel {
  CameraIntrinsics intrinsics;
  Distortion distortion;
};
void write_camera_model(const CameraModel& model, std::ostream& out);
CameraModel parse_camera_model(std::istream& in);
void save_camera_model(const CameraModel& model, const std::filesystem::path& path);
CameraModel load_camera_model(const std::filesystem::path& path);

}  // namespace qsts
