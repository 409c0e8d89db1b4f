#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <gtest/gtest.h>

#include "qsts/error.hpp"
#include "qsts/geometry.hpp"
#include "support.hpp"

namespace qsts {
namespace {

const CameraIntrinsics kCam{1000.0, 1000.0, 640.0, 360.0};
const CameraIntrinsics kSensorCam{1400.0, 1400.0, 640.0, 360.0};
const Distortion kMild{-0.05, 0.0, 0.0, 0.0, 0.0};

template <typename F>
ErrorKind error_kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::kIo;
}

std::vector<Eigen::Vector2d> project_all(std::span<const Eigen::Vector3d> pts, const Pose& pose,
                                         const CameraIntrinsics& cam, const Distortion& dist) {
  std::vector<Eigen::Vector2d> out;
  for (const auto& p : pts) out.push_back(project(p, pose, cam, dist));
  return out;
}

TEST(Project, PinholeExamples) {
  EXPECT_TRUE(project({0, 0, 100}, Pose{}, kCam, {}).isApprox(Eigen::Vector2d(640, 360), 1e-15));
  EXPECT_TRUE(project({10, 0, 100}, Pose{}, kCam, {}).isApprox(Eigen::Vector2d(740, 360), 1e-15));
  EXPECT_EQ(error_kind_of([] { project({0, 0, -5}, Pose{}, kCam, {}); }),
            ErrorKind::kProjection);
}

TEST(Project, MatchesDirectFormula) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Distortion d{-0.08, 0.02, 0.003, 0.001, -0.0005};
  for (int i = 0; i < 500; ++i) {
    const Pose pose = Pose::from_axis_angle({0.3 * u(rng), 0.3 * u(rng), 0.3 * u(rng)},
                                            {5 * u(rng), 5 * u(rng), 60 + 5 * u(rng)});
    const Eigen::Vector3d p(3 * u(rng), 3 * u(rng), 0.5 * u(rng));
    const Eigen::Vector3d c = pose.rotation * p + pose.translation;
    const double x = c.x() / c.z(), y = c.y() / c.z();
    const double r2 = x * x + y * y;
    const double radial = 1 + d.k1 * r2 + d.k2 * r2 * r2 + d.k3 * r2 * r2 * r2;
    const double xd = x * radial + 2 * d.p1 * x * y + d.p2 * (r2 + 2 * x * x);
    const double yd = y * radial + d.p1 * (r2 + 2 * y * y) + 2 * d.p2 * x * y;
    const Eigen::Vector2d expected(kCam.fx * xd + kCam.cx, kCam.fy * yd + kCam.cy);
    ASSERT_LT((project(p, pose, kCam, d) - expected).norm(), 1e-9);
  }
}

TEST(Distortion, IdentityAndFixedCenter) {
  const Eigen::Vector2d p(0.2, -0.3);
  EXPECT_EQ(distort(p, Distortion{}), p);
  const Distortion d{-0.3, 0.1, 0.05, 0.01, -0.02};
  EXPECT_EQ(distort(Eigen::Vector2d::Zero(), d), Eigen::Vector2d::Zero());
  EXPECT_EQ(undistort(Eigen::Vector2d::Zero(), d), Eigen::Vector2d::Zero());
}

TEST(Distortion, UndistortInvertsDistort) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Distortion d{-0.1, 0.0, 0.0, 0.0, 0.0};
  int n = 0;
  while (n < 2000) {
    const Eigen::Vector2d p(0.6 * u(rng), 0.6 * u(rng));
    if (p.norm() > 0.6) continue;
    ASSERT_LT((undistort(distort(p, d), d) - p).norm(), 1e-10) << p.transpose();
    ++n;
  }
}

TEST(Distortion, JacobianMatchesFiniteDifferences) {
  const Distortion d{-0.08, 0.02, 0.001, 0.001, -0.0005};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector2d p(u(rng), u(rng));
    const Eigen::Matrix2d j = d.jacobian(p);
    for (int k = 0; k < 2; ++k) {
      const Eigen::Vector2d h = 1e-6 * Eigen::Vector2d::Unit(k);
      const Eigen::Vector2d fd = (d.apply(p + h) - d.apply(p - h)) / 2e-6;
      ASSERT_LT((j.col(k) - fd).norm(), 1e-8);
    }
  }
}

TEST(Distortion, FoldOverIsRejected) {
  EXPECT_EQ(error_kind_of([] { Distortion{-2.0, 0, 0, 0, 0}.validate(); }),
            ErrorKind::kParameter);
  EXPECT_NO_THROW(kMild.validate());
  EXPECT_EQ(error_kind_of([] { undistort({0.9, 0.0}, kMild); }), ErrorKind::kParameter);
}

TEST(Intrinsics, Validation) {
  EXPECT_EQ(error_kind_of([] { CameraIntrinsics{-1, 1, 0, 0}.validate(); }),
            ErrorKind::kParameter);
  EXPECT_EQ(error_kind_of([] { CameraIntrinsics{1, NAN, 0, 0}.validate(); }),
            ErrorKind::kParameter);
}

const std::vector<Eigen::Vector2d> kUnitSquare = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};

TEST(Dlt, IdentityAndTranslation) {
  const Homography h = dlt_homography(kUnitSquare, kUnitSquare);
  EXPECT_TRUE(h.matrix().isApprox(Eigen::Matrix3d::Identity(), 1e-12));

  std::vector<Eigen::Vector2d> moved;
  for (const auto& p : kUnitSquare) moved.push_back(p + Eigen::Vector2d(2, 3));
  Eigen::Matrix3d t;
  t << 1, 0, 2, 0, 1, 3, 0, 0, 1;
  EXPECT_LT((dlt_homography(kUnitSquare, moved).matrix() - t).cwiseAbs().maxCoeff(), 1e-12);
}

// H with h33 = 1 from exactly four correspondences via the 8x8 system.
Eigen::Matrix3d solve_exact(const std::vector<Eigen::Vector2d>& s,
                            const std::vector<Eigen::Vector2d>& d) {
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = s[i].x(), y = s[i].y(), u = d[i].x(), v = d[i].y();
    a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> h = a.fullPivLu().solve(b);
  Eigen::Matrix3d m;
  m << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return m;
}

TEST(Dlt, MatchesExactSolve) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    // Jittered quad in pixels so the configuration stays well conditioned.
    std::vector<Eigen::Vector2d> src, dst;
    const Eigen::Vector2d base[4] = {{0, 0}, {100, 0}, {100, 100}, {0, 100}};
    for (int i = 0; i < 4; ++i) {
      src.push_back(base[i] + 20 * Eigen::Vector2d(u(rng), u(rng)));
      dst.push_back(Eigen::Vector2d(400, 300) + 1.5 * base[i] +
                    30 * Eigen::Vector2d(u(rng), u(rng)));
    }
    const Homography h = dlt_homography(src, dst);
    const Eigen::Matrix3d oracle = solve_exact(src, dst);
    for (int i = 0; i < 4; ++i) {
      ASSERT_LT((h.apply(src[i]) - dst[i]).norm(), 1e-9) << "trial " << trial;
      const Eigen::Vector3d q = oracle * src[i].homogeneous();
      ASSERT_LT((q.hnormalized() - dst[i]).norm(), 1e-9);
    }
    ASSERT_LT((h.matrix() - oracle).cwiseAbs().maxCoeff() / oracle.cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Dlt, CollinearPointsAreDegenerate) {
  const std::vector<Eigen::Vector2d> line = {{0, 0}, {1, 1}, {2, 2}, {3, 3}};
  EXPECT_EQ(error_kind_of([&] { dlt_homography(line, kUnitSquare); }), ErrorKind::kDegenerate);
}

TEST(Homography, InverseRoundTrip) {
  Eigen::Matrix3d m;
  m << 1.2, 0.1, 5, -0.2, 0.9, 3, 0.001, 0.002, 1;
  const Homography h(m);
  const Eigen::Vector2d p(12, -7);
  EXPECT_LT((h.inverse().apply(h.apply(p)) - p).norm(), 1e-12);
}

TEST(PoseMath, AxisAngleAndNearestRotation) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector3d w(u(rng), u(rng), u(rng));
    const Pose p = Pose::from_axis_angle(w, Eigen::Vector3d::Zero());
    ASSERT_LT((p.axis_angle() - w).norm(), 1e-12);
    ASSERT_NEAR(rotation_angle_between(p.rotation, Eigen::Matrix3d::Identity()), w.norm(),
                1e-12);
    const Eigen::Matrix3d noisy = p.rotation + 1e-3 * Eigen::Matrix3d::Random();
    const Eigen::Matrix3d r = nearest_rotation(noisy);
    ASSERT_LT((r.transpose() * r - Eigen::Matrix3d::Identity()).norm(), 1e-12);
    ASSERT_NEAR(r.determinant(), 1.0, 1e-12);
  }
}

TEST(PlanarPnp, FrontoParallelOnAxis) {
  const auto obj = marker_object_points(1.5);
  const Pose truth{Eigen::Matrix3d::Identity(), {0, 0, 55}};
  const auto img = project_all(obj, truth, kSensorCam, {});
  const Pose est = planar_pnp(obj, img, kSensorCam, {});
  EXPECT_LT((est.translation - truth.translation).norm(), 1e-6);
  EXPECT_LT(rotation_angle_between(est.rotation, truth.rotation), 1e-8);
}

TEST(PlanarPnp, TiltedThirtyDegrees) {
  const auto obj = marker_object_points(1.5);
  const Pose truth{Eigen::AngleAxisd(30.0 * M_PI / 180.0, Eigen::Vector3d::UnitX())
                       .toRotationMatrix(),
                   {0, 0, 55}};
  const auto img = project_all(obj, truth, kSensorCam, kMild);
  const Pose est = planar_pnp(obj, img, kSensorCam, kMild);
  EXPECT_LT(rotation_angle_between(est.rotation, truth.rotation), 1e-6);
  EXPECT_LT((est.translation - truth.translation).norm(), 1e-6);
}

TEST(PlanarPnp, DepthUnderCornerNoise) {
  const auto obj = marker_object_points(1.5);
  const Pose truth{Eigen::Matrix3d::Identity(), {0, 0, 55}};
  const auto clean = project_all(obj, truth, kSensorCam, kMild);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> noise(0.0, 0.2);
  std::vector<double> rel;
  for (int trial = 0; trial < 1000; ++trial) {
    auto img = clean;
    for (auto& p : img) p += Eigen::Vector2d(noise(rng), noise(rng));
    rel.push_back(std::abs(planar_pnp(obj, img, kSensorCam, kMild).translation.z() - 55.0) / 55.0);
  }
  std::nth_element(rel.begin(), rel.begin() + 500, rel.end());
  EXPECT_LT(rel[500], 0.02);
}

TEST(PlanarPnp, RejectsBadInput) {
  const auto obj = marker_object_points(1.5);
  const std::vector<Eigen::Vector2d> img = {{0, 0}, {1, 0}, {2, 0}};
  EXPECT_THROW(planar_pnp(obj, img, kSensorCam, {}), Error);
  const std::vector<Eigen::Vector2d> line = {{0, 0}, {1, 1}, {2, 2}, {3, 3}};
  EXPECT_THROW(planar_pnp(obj, line, kSensorCam, {}), Error);
}

TEST(RefinePose, GroundTruthIsFixedPoint) {
  const auto obj = marker_object_points(1.5);
  const Pose truth = Pose::from_axis_angle({0.2, -0.1, 0.3}, {1.0, -2.0, 54.0});
  const auto img = project_all(obj, truth, kSensorCam, kMild);
  const auto r = refine_pose_lm(truth, obj, img, kSensorCam, kMild);
  EXPECT_LT((r.pose.translation - truth.translation).norm(), 1e-12);
  EXPECT_LT(rotation_angle_between(r.pose.rotation, truth.rotation), 1e-12);
  EXPECT_FALSE(r.convergence_warning);
}

TEST(RefinePose, RecoversDepthOffset) {
  const auto obj = marker_object_points(1.5);
  const Pose truth = Pose::from_axis_angle({0.2, -0.1, 0.3}, {1.0, -2.0, 54.0});
  const auto img = project_all(obj, truth, kSensorCam, kMild);
  Pose start = truth;
  start.translation.z() += 2.0;
  const auto r = refine_pose_lm(start, obj, img, kSensorCam, kMild);
  EXPECT_LT((r.pose.translation - truth.translation).norm(), 1e-8);
  ASSERT_GE(r.cost_trace.size(), 2u);
  for (std::size_t i = 1; i < r.cost_trace.size(); ++i) {
    EXPECT_LE(r.cost_trace[i], r.cost_trace[i - 1]);
  }
}

// Central differences of the projected pixel against each parameter.
TEST(ProjectionJacobian, MatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Distortion d{-0.08, 0.02, 0.003, 0.001, -0.0005};
  const double h = 1e-6;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Vector3d w(0.5 * u(rng), 0.5 * u(rng), 0.5 * u(rng));
    const Eigen::Vector3d t(3 * u(rng), 3 * u(rng), 55 + 10 * u(rng));
    const Eigen::Vector3d p(u(rng), u(rng), 0.0);
    const auto j = project_with_jacobian(p, w, t, kSensorCam, d);

    auto pix = [&](const Eigen::Matrix<double, 15, 1>& x) {
      const CameraIntrinsics c{x(0), x(1), x(2), x(3)};
      const Distortion dd{x(4), x(5), x(8), x(6), x(7)};
      return project(p, Pose::from_axis_angle(x.segment<3>(9), x.segment<3>(12)), c, dd);
    };
    Eigen::Matrix<double, 15, 1> x0;
    x0 << kSensorCam.fx, kSensorCam.fy, kSensorCam.cx, kSensorCam.cy, d.k1, d.k2, d.p1, d.p2,
        d.k3, w, t;
    Eigen::Matrix<double, 2, 15> analytic;
    analytic << j.d_intrinsics, j.d_distortion, j.d_pose;
    for (int k = 0; k < 15; ++k) {
      Eigen::Matrix<double, 15, 1> xp = x0, xm = x0;
      xp(k) += h;
      xm(k) -= h;
      const Eigen::Vector2d fd = (pix(xp) - pix(xm)) / (2 * h);
      for (int r = 0; r < 2; ++r) {
        worst = std::max(worst, std::abs(analytic(r, k) - fd(r)) / std::max(1.0, std::abs(fd(r))));
      }
    }
    ASSERT_LT((j.pixel - pix(x0)).norm(), 1e-12);
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Reprojection, Rmse) {
  const auto obj = marker_object_points(1.5);
  const Pose truth{Eigen::Matrix3d::Identity(), {0, 0, 55}};
  auto img = project_all(obj, truth, kSensorCam, kMild);
  EXPECT_EQ(reprojection_rmse(truth, obj, img, kSensorCam, kMild), 0.0);
  img[2] += Eigen::Vector2d(3, 4);
  EXPECT_NEAR(reprojection_rmse(truth, obj, img, kSensorCam, kMild), 2.5, 1e-12);
}

TEST(Reprojection, MatchesIndependentResiduals) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> noise(0.0, 0.5);
  const auto obj = marker_object_points(2.0);
  const Pose pose = Pose::from_axis_angle({0.1, 0.2, -0.1}, {0.5, 0.2, 50});
  auto img = project_all(obj, pose, kSensorCam, kMild);
  for (auto& p : img) p += Eigen::Vector2d(noise(rng), noise(rng));
  double sum = 0.0;
  for (std::size_t i = 0; i < obj.size(); ++i) {
    const Eigen::Vector3d c = pose.rotation * obj[i] + pose.translation;
    const Eigen::Vector2d n = distort(c.hnormalized(), kMild);
    sum += (kSensorCam.to_pixel(n) - img[i]).squaredNorm();
  }
  EXPECT_NEAR(reprojection_rmse(pose, obj, img, kSensorCam, kMild), std::sqrt(sum / 4), 1e-12);
}

TEST(CameraFile, RoundTripAndValidation) {
  const CameraModel m{{1200.123456789012, 1180.5, 640.25, 359.75},
                      {-0.08, 0.02, 0.0012345678901, 0.001, -0.0005}};
  std::stringstream ss;
  write_camera_model(m, ss);
  const CameraModel back = parse_camera_model(ss);
  const auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(a), 1e-300); };
  EXPECT_LT(rel(back.intrinsics.fx, m.intrinsics.fx), 1e-12);
  EXPECT_LT(rel(back.distortion.k3, m.distortion.k3), 1e-12);
  EXPECT_EQ(back.intrinsics, m.intrinsics);
  EXPECT_EQ(back.distortion, m.distortion);

  std::istringstream missing("qscam v1\nfx=1 cx=0 cy=0\nk1=0 k2=0 k3=0 p1=0 p2=0\n");
  EXPECT_EQ(error_kind_of([&] { parse_camera_model(missing); }), ErrorKind::kFormat);
  std::istringstream negative("qscam v1\nfx=-1 fy=1 cx=0 cy=0\nk1=0 k2=0 k3=0 p1=0 p2=0\n");
  EXPECT_EQ(error_kind_of([&] { parse_camera_model(negative); }), ErrorKind::kParameter);
}

}  // namespace
}  // namespace qsts
