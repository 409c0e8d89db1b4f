#include "qsts/geometry.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "lm.hpp"
#include "qsts/error.hpp"

namespace qsts {

namespace {

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Eigen::Matrix3d rotation_from_axis_angle(const Eigen::Vector3d& omega) {
  const double theta = omega.norm();
  if (theta < 1e-300) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(theta, omega / theta).toRotationMatrix();
}

// d(R(omega) p) / d omega for the exponential map.
Eigen::Matrix3d rotated_point_jacobian(const Eigen::Vector3d& omega, const Eigen::Matrix3d& R,
                                       const Eigen::Vector3d& p) {
  const double theta2 = omega.squaredNorm();
  if (theta2 < 1e-16) return -skew(R * p);
  const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
  return -R * skew(p) *
         (omega * omega.transpose() + (R.transpose() - I) * skew(omega)) / theta2;
}

// Hartley conditioning: centroid to the origin, mean distance sqrt(2).
Eigen::Matrix3d conditioning_transform(std::span<const Eigen::Vector2d> pts) {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - centroid).norm();
  mean_dist /= static_cast<double>(pts.size());
  const double s = mean_dist > 0.0 ? std::sqrt(2.0) / mean_dist : 1.0;
  Eigen::Matrix3d T;
  T << s, 0, -s * centroid.x(), 0, s, -s * centroid.y(), 0, 0, 1;
  return T;
}

Eigen::Vector2d apply_h(const Eigen::Matrix3d& H, const Eigen::Vector2d& p) {
  const Eigen::Vector3d q = H * p.homogeneous();
  return q.hnormalized();
}

struct PoseProblem {
  std::span<const Eigen::Vector3d> object;
  std::span<const Eigen::Vector2d> image;
  const CameraIntrinsics& cam;
  const Distortion& dist;

  bool evaluate(const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* J) const {
    const Eigen::Vector3d omega = x.head<3>();
    const Eigen::Vector3d t = x.tail<3>();
    const auto n = static_cast<Eigen::Index>(object.size());
    r.resize(2 * n);
    if (J) J->resize(2 * n, 6);
    const Eigen::Matrix3d R = rotation_from_axis_angle(omega);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Vector3d pc = R * object[i] + t;
      if (!(pc.z() > 1e-6)) return false;
      if (J) {
        const ProjectionJacobian pj = project_with_jacobian(object[i], omega, t, cam, dist);
        r.segment<2>(2 * i) = pj.pixel - image[i];
        J->block<2, 6>(2 * i, 0) = pj.d_pose;
      } else {
        const Eigen::Vector2d xy = pc.head<2>() / pc.z();
        r.segment<2>(2 * i) = cam.to_pixel(dist.apply(xy)) - image[i];
      }
    }
    return true;
  }
};

void check_correspondences(std::size_t n_obj, std::size_t n_img, std::size_t min_count) {
  if (n_obj != n_img) {
    throw Error(ErrorKind::kParameter, "object and image point counts differ");
  }
  if (n_obj < min_count) {
    throw Error(ErrorKind::kParameter,
                "need at least " + std::to_string(min_count) + " correspondences");
  }
}

}  // namespace

void CameraIntrinsics::validate() const {
  if (!std::isfinite(fx) || !std::isfinite(fy) || !std::isfinite(cx) || !std::isfinite(cy)) {
    throw Error(ErrorKind::kParameter, "camera intrinsics must be finite");
  }
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorKind::kParameter, "focal lengths must be positive");
  }
}

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d K;
  K << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return K;
}

Eigen::Vector2d Distortion::apply(const Eigen::Vector2d& p) const {
  const double x = p.x();
  const double y = p.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
  return {x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
          y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y};
}

Eigen::Matrix2d Distortion::jacobian(const Eigen::Vector2d& p) const {
  const double x = p.x();
  const double y = p.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
  // d radial / d (r^2)
  const double dradial = k1 + r2 * (2.0 * k2 + 3.0 * r2 * k3);
  Eigen::Matrix2d J;
  J(0, 0) = radial + 2.0 * x * x * dradial + 2.0 * p1 * y + 6.0 * p2 * x;
  J(0, 1) = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y;
  J(1, 0) = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y;
  J(1, 1) = radial + 2.0 * y * y * dradial + 6.0 * p1 * y + 2.0 * p2 * x;
  return J;
}

void Distortion::validate() const {
  for (double c : {k1, k2, k3, p1, p2}) {
    if (!std::isfinite(c)) throw Error(ErrorKind::kParameter, "distortion must be finite");
  }
  constexpr int kRadii = 70;
  constexpr int kAngles = 72;
  for (int i = 0; i <= kRadii; ++i) {
    const double r = kWorkingRadius * i / kRadii;
    for (int j = 0; j < kAngles; ++j) {
      const double a = 2.0 * std::numbers::pi * j / kAngles;
      const Eigen::Vector2d p(r * std::cos(a), r * std::sin(a));
      if (!(jacobian(p).determinant() > 0.0)) {
        throw Error(ErrorKind::kParameter,
                    "distortion is not invertible on the working domain");
      }
    }
  }
}

Pose Pose::from_axis_angle(const Eigen::Vector3d& omega, const Eigen::Vector3d& t) {
  return Pose{rotation_from_axis_angle(omega), t};
}

Eigen::Vector3d Pose::axis_angle() const {
  const Eigen::AngleAxisd aa(rotation);
  return aa.angle() * aa.axis();
}

double rotation_angle_between(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  return Eigen::AngleAxisd(a.transpose() * b).angle();
}

Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
  D(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * D * svd.matrixV().transpose();
}

Homography::Homography(const Eigen::Matrix3d& m) : m_(m) {
  if (std::abs(m_(2, 2)) > 1e-12 * m_.norm()) m_ /= m_(2, 2);
}

Eigen::Vector2d Homography::apply(const Eigen::Vector2d& p) const { return apply_h(m_, p); }

Homography Homography::inverse() const { return Homography(m_.inverse()); }

Eigen::Vector2d distort(const Eigen::Vector2d& normalized, const Distortion& dist) {
  return dist.apply(normalized);
}

Eigen::Vector2d undistort(const Eigen::Vector2d& distorted, const Distortion& dist) {
  if (!(distorted.norm() <= Distortion::kWorkingRadius)) {
    throw Error(ErrorKind::kParameter, "undistort: point outside the working domain");
  }
  if (dist.is_zero()) return distorted;
  Eigen::Vector2d u = distorted;
  double residual = (dist.apply(u) - distorted).norm();
  for (int iter = 0; iter < 100 && residual > 1e-15; ++iter) {
    const Eigen::Vector2d step =
        dist.jacobian(u).partialPivLu().solve(dist.apply(u) - distorted);
    u -= step;
    const double next = (dist.apply(u) - distorted).norm();
    if (step.norm() < 1e-17 || next >= residual) {
      residual = std::min(next, residual);
      break;
    }
    residual = next;
  }
  if (!(residual < 1e-12)) {
    throw Error(ErrorKind::kNumerical, "undistort did not converge");
  }
  return u;
}

Eigen::Vector2d project(const Eigen::Vector3d& point, const Pose& pose,
                        const CameraIntrinsics& cam, const Distortion& dist) {
  const Eigen::Vector3d pc = pose.transform(point);
  if (!(pc.z() > 1e-6)) {
    throw Error(ErrorKind::kProjection, "point is at or behind the camera plane");
  }
  return cam.to_pixel(dist.apply(pc.head<2>() / pc.z()));
}

Eigen::Vector2d unproject_normalized(const Eigen::Vector2d& pixel,
                                     const CameraIntrinsics& cam, const Distortion& dist) {
  return undistort(cam.to_normalized(pixel), dist);
}

Homography dlt_homography(std::span<const Eigen::Vector2d> src,
                          std::span<const Eigen::Vector2d> dst) {
  check_correspondences(src.size(), dst.size(), 4);
  const Eigen::Matrix3d Ts = conditioning_transform(src);
  const Eigen::Matrix3d Td = conditioning_transform(dst);

  const auto n = static_cast<Eigen::Index>(src.size());
  // At least 9 rows so the null vector always appears among the singular values.
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(std::max<Eigen::Index>(2 * n, 9), 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector2d s = apply_h(Ts, src[static_cast<std::size_t>(i)]);
    const Eigen::Vector2d d = apply_h(Td, dst[static_cast<std::size_t>(i)]);
    A.row(2 * i) << -s.x(), -s.y(), -1, 0, 0, 0, d.x() * s.x(), d.x() * s.y(), d.x();
    A.row(2 * i + 1) << 0, 0, 0, -s.x(), -s.y(), -1, d.y() * s.x(), d.y() * s.y(), d.y();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(7) <= 1e-12 * sv(0)) {
    throw Error(ErrorKind::kDegenerate, "homography: degenerate point configuration");
  }
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d Hn;
  Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Eigen::Matrix3d H = Td.inverse() * Hn * Ts;
  if (!H.allFinite() || std::abs(H.determinant()) <= 1e-14 * std::pow(H.norm(), 3)) {
    throw Error(ErrorKind::kDegenerate, "homography: rank deficient");
  }
  return Homography(H);
}

std::array<Eigen::Vector3d, 4> marker_object_points(double side_mm) {
  const double h = side_mm / 2.0;
  return {Eigen::Vector3d(-h, -h, 0), Eigen::Vector3d(h, -h, 0), Eigen::Vector3d(h, h, 0),
          Eigen::Vector3d(-h, h, 0)};
}

ProjectionJacobian project_with_jacobian(const Eigen::Vector3d& point,
                                         const Eigen::Vector3d& omega,
                                         const Eigen::Vector3d& t,
                                         const CameraIntrinsics& cam,
                                         const Distortion& dist) {
  const Eigen::Matrix3d R = rotation_from_axis_angle(omega);
  const Eigen::Vector3d pc = R * point + t;
  if (!(pc.z() > 1e-6)) {
    throw Error(ErrorKind::kProjection, "point is at or behind the camera plane");
  }
  const double iz = 1.0 / pc.z();
  const Eigen::Vector2d xy(pc.x() * iz, pc.y() * iz);
  const Eigen::Vector2d xd = dist.apply(xy);

  ProjectionJacobian out;
  out.pixel = cam.to_pixel(xd);

  out.d_intrinsics << xd.x(), 0, 1, 0, 0, xd.y(), 0, 1;

  const double x = xy.x();
  const double y = xy.y();
  const double r2 = x * x + y * y;
  const double r4 = r2 * r2;
  Eigen::Matrix<double, 2, 5> dd;  // d distorted / d (k1, k2, p1, p2, k3)
  dd << x * r2, x * r4, 2 * x * y, r2 + 2 * x * x, x * r4 * r2,
        y * r2, y * r4, r2 + 2 * y * y, 2 * x * y, y * r4 * r2;
  const Eigen::DiagonalMatrix<double, 2> F(cam.fx, cam.fy);
  out.d_distortion = F * dd;

  Eigen::Matrix<double, 2, 3> dproj;
  dproj << iz, 0, -x * iz, 0, iz, -y * iz;
  const Eigen::Matrix<double, 2, 3> dpix_dpc = F * dist.jacobian(xy) * dproj;
  out.d_pose.leftCols<3>() = dpix_dpc * rotated_point_jacobian(omega, R, point);
  out.d_pose.rightCols<3>() = dpix_dpc;
  return out;
}

Eigen::MatrixXd pose_residual_jacobian(const Pose& pose,
                                       std::span<const Eigen::Vector3d> object_pts,
                                       const CameraIntrinsics& cam, const Distortion& dist) {
  const Eigen::Vector3d omega = pose.axis_angle();
  Eigen::MatrixXd J(2 * static_cast<Eigen::Index>(object_pts.size()), 6);
  for (std::size_t i = 0; i < object_pts.size(); ++i) {
    J.block<2, 6>(2 * static_cast<Eigen::Index>(i), 0) =
        project_with_jacobian(object_pts[i], omega, pose.translation, cam, dist).d_pose;
  }
  return J;
}

PoseRefinement refine_pose_lm(const Pose& initial, std::span<const Eigen::Vector3d> object_pts,
                              std::span<const Eigen::Vector2d> image_pts,
                              const CameraIntrinsics& cam, const Distortion& dist,
                              const LmOptions& options) {
  check_correspondences(object_pts.size(), image_pts.size(), 3);
  PoseProblem problem{object_pts, image_pts, cam, dist};
  Eigen::VectorXd x(6);
  x << initial.axis_angle(), initial.translation;
  const detail::LmOutcome lm = detail::levenberg_marquardt(problem, x, options);

  PoseRefinement out;
  out.pose = lm.cost_trace.size() > 1 ? Pose::from_axis_angle(x.head<3>(), x.tail<3>())
                                      : initial;
  out.cost_trace = lm.cost_trace;
  out.iterations = lm.iterations;
  out.convergence_warning = lm.convergence_warning;
  return out;
}

Pose pose_from_homography(const Homography& plane_to_normalized) {
  const Eigen::Matrix3d& H = plane_to_normalized.matrix();
  const double norm1 = H.col(0).norm();
  if (!(norm1 > 0.0)) throw Error(ErrorKind::kDegenerate, "homography has a zero column");
  double scale = 1.0 / norm1;
  if (H(2, 2) * scale < 0.0) scale = -scale;  // keep the plane in front (t.z > 0)
  const Eigen::Vector3d r1 = scale * H.col(0);
  const Eigen::Vector3d r2 = scale * H.col(1);
  const Eigen::Vector3d t = scale * H.col(2);
  if (!(t.z() > 0.0)) throw Error(ErrorKind::kPose, "no pose with the plane in front");
  Eigen::Matrix3d R;
  R << r1, r2, r1.cross(r2);
  return Pose{nearest_rotation(R), t};
}

Pose planar_pnp(std::span<const Eigen::Vector3d> object_pts,
                std::span<const Eigen::Vector2d> image_pts, const CameraIntrinsics& cam,
                const Distortion& dist) {
  check_correspondences(object_pts.size(), image_pts.size(), 4);
  std::vector<Eigen::Vector2d> plane;
  std::vector<Eigen::Vector2d> normalized;
  plane.reserve(object_pts.size());
  normalized.reserve(object_pts.size());
  for (std::size_t i = 0; i < object_pts.size(); ++i) {
    if (std::abs(object_pts[i].z()) > 1e-12) {
      throw Error(ErrorKind::kParameter, "planar_pnp: object points must lie on z = 0");
    }
    plane.push_back(object_pts[i].head<2>());
    normalized.push_back(unproject_normalized(image_pts[i], cam, dist));
  }
  const Pose init = pose_from_homography(dlt_homography(plane, normalized));
  const PoseRefinement refined = refine_pose_lm(init, object_pts, image_pts, cam, dist);
  if (!(refined.pose.translation.z() > 0.0)) {
    throw Error(ErrorKind::kPose, "refined pose places the marker behind the camera");
  }
  return refined.pose;
}

double reprojection_rmse(const Pose& pose, std::span<const Eigen::Vector3d> object_pts,
                         std::span<const Eigen::Vector2d> image_pts,
                         const CameraIntrinsics& cam, const Distortion& dist) {
  check_correspondences(object_pts.size(), image_pts.size(), 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < object_pts.size(); ++i) {
    sum += (project(object_pts[i], pose, cam, dist) - image_pts[i]).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(object_pts.size()));
}

void write_camera_model(const CameraModel& model, std::ostream& out) {
  const auto& k = model.intrinsics;
  const auto& d = model.distortion;
  out << std::setprecision(17);
  out << "qscam v1\n";
  out << "fx=" << k.fx << " fy=" << k.fy << " cx=" << k.cx << " cy=" << k.cy << '\n';
  out << "k1=" << d.k1 << " k2=" << d.k2 << " k3=" << d.k3 << " p1=" << d.p1
      << " p2=" << d.p2 << '\n';
}

CameraModel parse_camera_model(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "qscam v1") {
    throw Error(ErrorKind::kFormat, "missing 'qscam v1' header");
  }
  std::map<std::string, double> values;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string field;
    while (fields >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) {
        throw Error(ErrorKind::kFormat, "bad calibration field '" + field + "'");
      }
      std::size_t used = 0;
      double v = 0.0;
      const std::string text = field.substr(eq + 1);
      try {
        v = std::stod(text, &used);
      } catch (const std::logic_error&) {
        used = 0;
      }
      if (used == 0 || used != text.size()) {
        throw Error(ErrorKind::kFormat, "bad calibration value '" + field + "'");
      }
      values[field.substr(0, eq)] = v;
    }
  }
  auto need = [&](const char* key) {
    const auto it = values.find(key);
    if (it == values.end()) {
      throw Error(ErrorKind::kFormat, std::string("calibration file is missing ") + key);
    }
    return it->second;
  };
  CameraModel model;
  model.intrinsics = {need("fx"), need("fy"), need("cx"), need("cy")};
  model.distortion = {need("k1"), need("k2"), need("k3"), need("p1"), need("p2")};
  model.intrinsics.validate();
  model.distortion.validate();
  return model;
}

void save_camera_model(const CameraModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  write_camera_model(model, out);
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

CameraModel load_camera_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  try {
    return parse_camera_model(in);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace qsts
