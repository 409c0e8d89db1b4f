#include "qsts/calibration.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <string>

#include <Eigen/LU>
#include <Eigen/SVD>

#include "lm.hpp"
#include "qsts/error.hpp"
#include "qsts/text_io.hpp"

namespace qsts {

namespace {

Error calib_error(const std::string& what) { return Error(ErrorKind::kCalibration, what); }

// Zhang's v_ij row for b = (B11, B12, B22, B13, B23, B33).
Eigen::Matrix<double, 1, 6> v_row(const Eigen::Matrix3d& H, int i, int j) {
  const Eigen::Vector3d hi = H.col(i);
  const Eigen::Vector3d hj = H.col(j);
  Eigen::Matrix<double, 1, 6> v;
  v << hi(0) * hj(0), hi(0) * hj(1) + hi(1) * hj(0), hi(1) * hj(1),
      hi(2) * hj(0) + hi(0) * hj(2), hi(2) * hj(1) + hi(1) * hj(2), hi(2) * hj(2);
  return v;
}

struct CalibrationProblem {
  std::span<const CalibrationView> views;
  bool enable_k3;

  int distortion_params() const { return enable_k3 ? 5 : 4; }
  int intrinsic_block() const { return 4 + distortion_params(); }

  bool evaluate(const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* J) const {
    const CameraIntrinsics cam{x(0), x(1), x(2), x(3)};
    Distortion dist{x(4), x(5), enable_k3 ? x(8) : 0.0, x(6), x(7)};
    if (!(cam.fx > 0.0) || !(cam.fy > 0.0)) return false;

    Eigen::Index rows = 0;
    for (const auto& v : views) rows += 2 * static_cast<Eigen::Index>(v.board_pts.size());
    r.resize(rows);
    if (J) J->setZero(rows, x.size());

    const int base = intrinsic_block();
    Eigen::Index row = 0;
    for (std::size_t vi = 0; vi < views.size(); ++vi) {
      const Eigen::Index off = base + 6 * static_cast<Eigen::Index>(vi);
      const Eigen::Vector3d omega = x.segment<3>(off);
      const Eigen::Vector3d t = x.segment<3>(off + 3);
      const auto& view = views[vi];
      for (std::size_t k = 0; k < view.board_pts.size(); ++k, row += 2) {
        const Eigen::Vector3d P(view.board_pts[k].x(), view.board_pts[k].y(), 0.0);
        ProjectionJacobian pj;
        try {
          pj = project_with_jacobian(P, omega, t, cam, dist);
        } catch (const Error&) {
          return false;
        }
        r.segment<2>(row) = pj.pixel - view.image_pts[k];
        if (J) {
          J->block<2, 4>(row, 0) = pj.d_intrinsics;
          J->block<2, 4>(row, 4) = pj.d_distortion.leftCols<4>();
          if (enable_k3) J->block<2, 1>(row, 8) = pj.d_distortion.col(4);
          J->block<2, 6>(row, off) = pj.d_pose;
        }
      }
    }
    return true;
  }
};

}  // namespace

std::vector<Eigen::Vector2d> checkerboard_corners(int squares_x, int squares_y,
                                                  double square_mm) {
  std::vector<Eigen::Vector2d> pts;
  for (int row = 0; row < squares_y - 1; ++row) {
    for (int col = 0; col < squares_x - 1; ++col) {
      pts.emplace_back(col * square_mm, row * square_mm);
    }
  }
  return pts;
}

CameraIntrinsics closed_form_intrinsics(std::span<const Homography> board_to_pixel) {
  if (board_to_pixel.size() < 3) throw calib_error("closed form needs >= 3 homographies");

  // Condition pixel coordinates: H' = T H with T a pure scale + shift, so
  // K = T^-1 K' keeps zero skew.
  double mean_u = 0.0;
  double mean_v = 0.0;
  for (const auto& h : board_to_pixel) {
    const Eigen::Vector2d p = h.apply({0.0, 0.0});
    mean_u += p.x();
    mean_v += p.y();
  }
  mean_u /= static_cast<double>(board_to_pixel.size());
  mean_v /= static_cast<double>(board_to_pixel.size());
  const double s = 1.0 / std::max(1.0, std::hypot(mean_u, mean_v));
  Eigen::Matrix3d T;
  T << s, 0, -s * mean_u, 0, s, -s * mean_v, 0, 0, 1;

  const auto m = static_cast<Eigen::Index>(board_to_pixel.size());
  Eigen::MatrixXd V(2 * m + 1, 6);
  for (Eigen::Index i = 0; i < m; ++i) {
    Eigen::Matrix3d H = T * board_to_pixel[static_cast<std::size_t>(i)].matrix();
    H /= H.col(0).norm();
    V.row(2 * i) = v_row(H, 0, 1);
    V.row(2 * i + 1) = v_row(H, 0, 0) - v_row(H, 1, 1);
  }
  V.row(2 * m) << 0, 1, 0, 0, 0, 0;  // zero skew: B12 = 0

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(V, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(4) <= 1e-10 * sv(0)) {
    throw calib_error("view set is degenerate (absolute-conic constraints rank deficient)");
  }
  Eigen::Matrix<double, 6, 1> b = svd.matrixV().col(5);
  if (b(0) < 0.0) b = -b;
  const double B11 = b(0), B12 = b(1), B22 = b(2), B13 = b(3), B23 = b(4), B33 = b(5);

  const double denom = B11 * B22 - B12 * B12;
  const double v0 = (B12 * B13 - B11 * B23) / denom;
  const double lambda = B33 - (B13 * B13 + v0 * (B12 * B13 - B11 * B23)) / B11;
  const double alpha2 = lambda / B11;
  const double beta2 = lambda * B11 / denom;
  if (!(denom > 0.0) || !(alpha2 > 0.0) || !(beta2 > 0.0)) {
    throw calib_error("closed form produced a non-positive-definite conic");
  }
  const double alpha = std::sqrt(alpha2);
  const double beta = std::sqrt(beta2);
  const double u0 = -B13 * alpha2 / lambda;

  Eigen::Matrix3d Kc;
  Kc << alpha, 0, u0, 0, beta, v0, 0, 0, 1;
  const Eigen::Matrix3d K = T.inverse() * Kc;
  CameraIntrinsics cam{K(0, 0) / K(2, 2), K(1, 1) / K(2, 2), K(0, 2) / K(2, 2),
                       K(1, 2) / K(2, 2)};
  cam.validate();
  return cam;
}

CalibrationResult calibrate(std::span<const CalibrationView> views,
                            const CalibrationOptions& options) {
  if (views.size() < 3) {
    throw calib_error("calibration needs at least 3 views, got " +
                      std::to_string(views.size()));
  }
  std::vector<Homography> homographies;
  for (const auto& v : views) {
    if (v.board_pts.size() != v.image_pts.size() || v.board_pts.size() < 4) {
      throw calib_error("each view needs >= 4 matched board/image points");
    }
    try {
      homographies.push_back(dlt_homography(v.board_pts, v.image_pts));
    } catch (const Error& e) {
      throw calib_error(std::string("view homography failed: ") + e.what());
    }
  }
  const CameraIntrinsics init_cam = closed_form_intrinsics(homographies);
  const Eigen::Matrix3d K_inv = init_cam.matrix().inverse();

  CalibrationProblem problem{views, options.enable_k3};
  const int base = problem.intrinsic_block();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(base + 6 * static_cast<Eigen::Index>(views.size()));
  x.head<4>() << init_cam.fx, init_cam.fy, init_cam.cx, init_cam.cy;
  for (std::size_t i = 0; i < views.size(); ++i) {
    Pose pose;
    try {
      pose = pose_from_homography(Homography(K_inv * homographies[i].matrix()));
    } catch (const Error& e) {
      throw calib_error(std::string("view pose initialization failed: ") + e.what());
    }
    x.segment<3>(base + 6 * static_cast<Eigen::Index>(i)) = pose.axis_angle();
    x.segment<3>(base + 6 * static_cast<Eigen::Index>(i) + 3) = pose.translation;
  }

  detail::LmOutcome lm;
  try {
    lm = detail::levenberg_marquardt(problem, x, options.lm);
  } catch (const Error& e) {
    throw calib_error(std::string("refinement failed: ") + e.what());
  }

  std::size_t points = 0;
  for (const auto& v : views) points += v.board_pts.size();

  CalibrationResult out;
  out.intrinsics = {x(0), x(1), x(2), x(3)};
  out.distortion = {x(4), x(5), options.enable_k3 ? x(8) : 0.0, x(6), x(7)};
  for (std::size_t i = 0; i < views.size(); ++i) {
    const Eigen::Index off = base + 6 * static_cast<Eigen::Index>(i);
    out.per_view_poses.push_back(Pose::from_axis_angle(x.segment<3>(off), x.segment<3>(off + 3)));
  }
  out.cost_trace = lm.cost_trace;
  out.initial_rms = std::sqrt(lm.cost_trace.front() / static_cast<double>(points));
  out.rms_reprojection = std::sqrt(lm.cost_trace.back() / static_cast<double>(points));
  return out;
}

void save_calibration(const CalibrationResult& result, const std::filesystem::path& path) {
  save_camera_model({result.intrinsics, result.distortion}, path);
}

CameraModel load_calibration(const std::filesystem::path& path) {
  return load_camera_model(path);
}

std::vector<CalibrationView> read_corner_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) ||
      trim(line) != "view,board_x_mm,board_y_mm,img_x_px,img_y_px") {
    throw Error(ErrorKind::kFormat, path.string() + ": missing corner CSV header");
  }
  std::map<long long, CalibrationView> by_view;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 5) {
      throw Error(ErrorKind::kFormat, path.string() + ": bad corner row '" + line + "'");
    }
    auto& view = by_view[parse_int(cols[0], "view")];
    view.board_pts.emplace_back(parse_double(cols[1], "board_x_mm"),
                                parse_double(cols[2], "board_y_mm"));
    view.image_pts.emplace_back(parse_double(cols[3], "img_x_px"),
                                parse_double(cols[4], "img_y_px"));
  }
  std::vector<CalibrationView> views;
  for (auto& [id, v] : by_view) views.push_back(std::move(v));
  return views;
}

void write_corner_csv(std::span<const CalibrationView> views, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << "view,board_x_mm,board_y_mm,img_x_px,img_y_px\n";
  for (std::size_t v = 0; v < views.size(); ++v) {
    for (std::size_t k = 0; k < views[v].board_pts.size(); ++k) {
      out << v << ',' << format_fixed(views[v].board_pts[k].x(), 6) << ','
          << format_fixed(views[v].board_pts[k].y(), 6) << ','
          << format_fixed(views[v].image_pts[k].x(), 9) << ','
          << format_fixed(views[v].image_pts[k].y(), 9) << '\n';
    }
  }
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

}  // namespace qsts
