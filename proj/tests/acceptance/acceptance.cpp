// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
// exits nonzero if any hard criterion fails. Criterion 10 only warns.
//
//   qsts_acceptance          CI profile (20 frames per step)
//   qsts_acceptance --full   default profile (200 frames per step)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "harness.hpp"
#include "qsts/calibration.hpp"
#include "qsts/detector.hpp"
#include "qsts/error.hpp"
#include "qsts/geometry.hpp"
#include "qsts/simulator.hpp"
#include "support.hpp"

namespace {

using namespace qsts;
using Clock = std::chrono::steady_clock;

// Criterion bounds.
constexpr double kMaxRelErrPct = 5.0;
constexpr double kMeanRelErrPct = 3.0;
constexpr double kCiRuntimeS = 30.0;
constexpr double kFullRuntimeS = 300.0;
constexpr double kMaxDistanceErrMm = 0.5;
constexpr double kRoundTripRmsePx = 0.5;
constexpr double kRoundTripRuntimeS = 10.0;
constexpr double kPnpTranslationMm = 1e-6;
constexpr double kPnpRotationRad = 1e-6;
constexpr double kJacobianRelErr = 1e-4;
constexpr double kIntrinsicsRel = 1e-4;
constexpr double kDistortionAbs = 1e-5;
constexpr double kNoisyFocalRel = 0.005;
constexpr double kCalibrationRuntimeS = 30.0;
constexpr double kDltTransferPx = 1e-9;
constexpr double kUndistortTol = 1e-10;
constexpr double kDetectionRate = 0.99;
constexpr double kLatencyMs = 50.0;

const SceneConfig kScene;

int g_failures = 0;
std::map<int, std::string> g_lines;

void record(int n, const char* status, const std::string& detail) {
  char head[16];
  std::snprintf(head, sizeof head, "C%-2d %s  ", n, status);
  g_lines[n] = head + detail;
  std::fprintf(stderr, "%s\n", g_lines[n].c_str());
}

void verdict(int n, bool pass, const std::string& detail) {
  record(n, pass ? "PASS" : "FAIL", detail);
  if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// 1, 2, 8 (detection rate), 9, 10 share characterization runs.
void characterization(bool full) {
  test::TempDir dir("acceptance");
  harness::CharacterizeOptions o;
  o.frames_per_step = full ? 200 : 20;
  o.out_dir = dir / "a";
  const auto t0 = Clock::now();
  const auto r = harness::characterize(o, default_dictionary());
  const double runtime = seconds_since(t0);
  const double budget = full ? kFullRuntimeS : kCiRuntimeS;

  const bool all_markers = r.baseline_markers == 25;
  const bool c1 = all_markers && r.relative_error_samples > 0 &&
                  r.max_relative_error_pct < kMaxRelErrPct &&
                  r.mean_relative_error_pct <= kMeanRelErrPct && runtime < budget;
  verdict(1, c1,
          fmt("max rel err %.3f%%, mean %.3f%% over %.0f samples, %.1f s", r.max_relative_error_pct,
              r.mean_relative_error_pct, r.relative_error_samples, runtime) +
              (full ? " (200 frames/step)" : " (20 frames/step)"));

  double worst = 0.0;
  for (const auto& d : r.distances) worst = std::max(worst, std::abs(d.error_mm()));
  verdict(2, !r.distances.empty() && worst < kMaxDistanceErrMm && r.distances.size() == 6u * 300u,
          fmt("max |dE - dA| %.4f mm over %.0f pairs", worst, static_cast<double>(r.distances.size())));

  o.out_dir = dir / "b";
  harness::characterize(o, default_dictionary());
  bool same = true;
  std::string differing;
  for (const char* name : {"readings.csv", "step_report.csv", "distances.csv", "poses.csv",
                           "truth.csv", "frames.csv"}) {
    const std::string a = test::read_file(dir / "a" / name);
    if (a.empty() || a != test::read_file(dir / "b" / name)) {
      same = false;
      differing += std::string(" ") + name;
    }
  }
  const double rate = r.detection_rate;
  const double latency = r.mean_latency_ms;
  const bool det_ok = rate >= kDetectionRate;

  // 8: detection robustness.
  const MarkerDictionary& dict = default_dictionary();
  const auto placements =
      place_markers(kScene.dome(), kScene.grid, kScene.pitch_mm, kScene.marker_size_mm);
  const GrayImage frame = render(kScene, placements, dict, 7);
  auto ids = [&](const GrayImage& g) {
    std::set<int> s;
    for (const auto& d : detect_frame(g, dict)) s.insert(d.id);
    return s;
  };
  const auto reference = ids(frame);
  bool invariant = reference.size() == 25;
  for (const auto [a, b] : {std::pair{0.5, 40.0}, {1.0, -30.0}, {1.1, -25.0}, {0.7, 20.0}}) {
    GrayImage adj = frame;
    for (auto& p : adj.data()) {
      p = static_cast<std::uint8_t>(std::clamp(std::lround(a * p + b), 0L, 255L));
    }
    invariant = invariant && ids(adj) == reference;
  }
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> v(0, 255);
  std::size_t false_positives = 0;
  for (int i = 0; i < 100; ++i) {
    GrayImage noise(kScene.image_w, kScene.image_h);
    for (auto& p : noise.data()) p = static_cast<std::uint8_t>(v(rng));
    false_positives += detect_frame(noise, dict).size();
  }
  verdict(8, invariant && false_positives == 0 && det_ok,
          fmt("affine-invariant ids %.0f, false positives %.0f/100 frames, detection rate %.4f",
              invariant ? 1.0 : 0.0, static_cast<double>(false_positives), rate));

  verdict(9, same, same ? "readings, step_report, distances, poses, truth, frames identical"
                        : "differs:" + differing);

  const bool fast = latency <= kLatencyMs;
  record(10, fast ? "PASS" : "WARN",
         fmt("mean detect+pose latency %.2f ms/frame", latency) +
             (fast ? "" : " (soft target, not failing)"));
}

void roundtrip() {
  const auto t0 = Clock::now();
  const MarkerDictionary& dict = default_dictionary();
  const Renderer renderer(kScene.camera, kScene.image_w, kScene.image_h);
  int ok = 0;
  double sq = 0.0;
  int n = 0;
  for (int id = 0; id < static_cast<int>(dict.size()); ++id) {
    for (int r = 0; r < 4; ++r) {
      const auto m = test::placement_from_pose(id, test::fronto_pose(0, 0, 55, r), 1.5);
      const std::vector<MarkerPlacement> one{m};
      const auto img = quantize_with_noise(renderer.render_clean(one, dict), kScene.image_w,
                                           kScene.image_h, 0.0, 0, 0);
      const auto found = detect_frame(img, dict);
      if (found.size() != 1 || found[0].id != id || found[0].rotation != r) continue;
      ++ok;
      const auto truth = test::project_corners(m, kScene.camera);
      for (std::size_t c = 0; c < 4; ++c) {
        sq += (found[0].corners[c] - truth[c]).squaredNorm();
        ++n;
      }
    }
  }
  const double rmse = n ? std::sqrt(sq / n) : INFINITY;
  const double runtime = seconds_since(t0);
  verdict(3, ok == 4 * static_cast<int>(dict.size()) && ok == 200 && rmse < kRoundTripRmsePx && runtime < kRoundTripRuntimeS,
          fmt("%.0f/200 recovered, corner RMSE %.4f px, %.2f s", ok, rmse, runtime));
}

void pnp() {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> depth(40.0, 70.0), lateral(-0.3, 0.3);
  const auto obj = marker_object_points(1.5);
  const auto& cam = kScene.camera;
  double worst_t = 0.0, worst_r = 0.0;
  int failures = 0;
  for (int i = 0; i < 1000; ++i) {
    const double z = depth(rng);
    const Pose truth{test::random_tilted_rotation(rng, 50.0 * M_PI / 180.0),
                     Eigen::Vector3d(lateral(rng) * z, lateral(rng) * z, z)};
    std::vector<Eigen::Vector2d> img;
    for (const auto& p : obj) img.push_back(project(p, truth, cam.intrinsics, cam.distortion));
    try {
      const Pose est = planar_pnp(obj, img, cam.intrinsics, cam.distortion);
      worst_t = std::max(worst_t, (est.translation - truth.translation).norm());
      worst_r = std::max(worst_r, rotation_angle_between(est.rotation, truth.rotation));
    } catch (const Error&) {
      ++failures;
    }
  }
  verdict(4, failures == 0 && worst_t < kPnpTranslationMm && worst_r < kPnpRotationRad,
          fmt("max translation err %.2e mm, max rotation err %.2e rad, %.0f failures", worst_t,
              worst_r, failures));
}

void jacobians() {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> depth(40.0, 70.0), lateral(-0.3, 0.3), off(-0.5, 0.5);
  const CameraIntrinsics k0{1400.0, 1380.0, 640.0, 360.0};
  const Distortion d0{-0.08, 0.02, 0.01, 0.001, -0.0005};
  const auto obj = marker_object_points(1.5);
  double worst = 0.0;
  bool monotone = true;
  for (int i = 0; i < 100; ++i) {
    const double z = depth(rng);
    const Pose pose{test::random_tilted_rotation(rng, 50.0 * M_PI / 180.0),
                    Eigen::Vector3d(lateral(rng) * z, lateral(rng) * z, z)};
    const Eigen::Vector3d omega = pose.axis_angle();
    const Eigen::Vector3d& pt = obj[static_cast<std::size_t>(i % 4)];
    const auto jac = project_with_jacobian(pt, omega, pose.translation, k0, d0);
    Eigen::Matrix<double, 15, 1> x;
    x << k0.fx, k0.fy, k0.cx, k0.cy, d0.k1, d0.k2, d0.p1, d0.p2, d0.k3, omega, pose.translation;
    auto eval = [&](const Eigen::Matrix<double, 15, 1>& v) {
      const CameraIntrinsics k{v[0], v[1], v[2], v[3]};
      const Distortion d{v[4], v[5], v[8], v[6], v[7]};
      return project(pt, Pose::from_axis_angle(v.segment<3>(9), v.segment<3>(12)), k, d);
    };
    Eigen::Matrix<double, 2, 15> analytic;
    analytic << jac.d_intrinsics, jac.d_distortion, jac.d_pose;
    for (int c = 0; c < 15; ++c) {
      const double h = 1e-6 * std::max(1.0, std::abs(x[c]));
      auto xp = x, xm = x;
      xp[c] += h;
      xm[c] -= h;
      const Eigen::Vector2d fd = (eval(xp) - eval(xm)) / (2.0 * h);
      for (int r = 0; r < 2; ++r) {
        const double e = std::abs(analytic(r, c) - fd[r]) / std::max(1.0, std::abs(fd[r]));
        worst = std::max(worst, e);
      }
    }

    std::vector<Eigen::Vector2d> img;
    for (const auto& p : obj) img.push_back(project(p, pose, k0, d0));
    const Pose start = Pose::from_axis_angle(
        omega + Eigen::Vector3d(off(rng), off(rng), off(rng)) * 0.1,
        pose.translation + Eigen::Vector3d(off(rng), off(rng), 4.0 * off(rng)));
    const auto lm = refine_pose_lm(start, obj, img, k0, d0);
    for (std::size_t s = 1; s < lm.cost_trace.size(); ++s) {
      monotone = monotone && lm.cost_trace[s] <= lm.cost_trace[s - 1];
    }
  }
  verdict(5, worst < kJacobianRelErr && monotone,
          fmt("max relative Jacobian err %.2e, LM cost traces non-increasing: ", worst) +
              (monotone ? "yes" : "no"));
}

void calibration() {
  const auto t0 = Clock::now();
  const CameraModel truth{{1400.0, 1400.0, 640.0, 360.0}, {-0.05, 0.01, 0.0, 0.0005, -0.0003}};
  const auto clean = calibrate(synthetic_calibration_views(truth, 1280, 720, 36, 0.0, 1));
  const auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };
  const double k_err = std::max({rel(clean.intrinsics.fx, truth.intrinsics.fx),
                                 rel(clean.intrinsics.fy, truth.intrinsics.fy),
                                 rel(clean.intrinsics.cx, truth.intrinsics.cx),
                                 rel(clean.intrinsics.cy, truth.intrinsics.cy)});
  const Distortion& d = clean.distortion;
  const Distortion& t = truth.distortion;
  const double d_err = std::max({std::abs(d.k1 - t.k1), std::abs(d.k2 - t.k2), std::abs(d.k3 - t.k3),
                                 std::abs(d.p1 - t.p1), std::abs(d.p2 - t.p2)});
  const auto noisy = calibrate(synthetic_calibration_views(truth, 1280, 720, 36, 0.1, 2));
  const double f_err = std::max(rel(noisy.intrinsics.fx, truth.intrinsics.fx),
                                rel(noisy.intrinsics.fy, truth.intrinsics.fy));
  const double runtime = seconds_since(t0);
  verdict(6, k_err < kIntrinsicsRel && d_err < kDistortionAbs && f_err < kNoisyFocalRel &&
                 runtime < kCalibrationRuntimeS,
          fmt("noiseless intrinsics rel err %.2e, distortion err %.2e; noisy focal rel err %.2e; "
              "%.1f s",
              k_err, d_err, f_err, runtime));
}

void kernels() {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::vector<Eigen::Vector2d> square{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  double worst_dlt = 0.0;
  int dlt_cases = 0;
  while (dlt_cases < 1000) {
    Eigen::Matrix3d m;
    m << 40 + 20 * u(rng), 10 * u(rng), 640 + 300 * u(rng), 10 * u(rng), 40 + 20 * u(rng),
        360 + 200 * u(rng), 0.05 * u(rng), 0.05 * u(rng), 1.0;
    const Homography truth(m);
    std::vector<Eigen::Vector2d> dst;
    for (const auto& p : square) dst.push_back(truth.apply(p));
    Quad q{dst[0], dst[1], dst[2], dst[3]};
    if (!is_convex(q) && !is_convex({dst[3], dst[2], dst[1], dst[0]})) continue;
    const Homography est = dlt_homography(square, dst);
    for (std::size_t i = 0; i < 4; ++i) {
      worst_dlt = std::max(worst_dlt, (est.apply(square[i]) - dst[i]).norm());
    }
    // Transfer error on interior points too.
    for (int k = 0; k < 4; ++k) {
      const Eigen::Vector2d p(0.5 + 0.5 * u(rng), 0.5 + 0.5 * u(rng));
      worst_dlt = std::max(worst_dlt, (est.apply(p) - truth.apply(p)).norm());
    }
    ++dlt_cases;
  }

  const std::vector<Distortion> models{kScene.camera.distortion,
                                       {-0.08, 0.02, 0.0, 0.001, -0.0005},
                                       {0.05, -0.01, 0.002, -0.001, 0.001}};
  double worst_und = 0.0;
  int und_cases = 0;
  for (const auto& dist : models) {
    for (int i = 0; i < 1000;) {
      const double r = Distortion::kWorkingRadius * std::sqrt(0.5 * (u(rng) + 1.0));
      const double a = M_PI * u(rng);
      const Eigen::Vector2d p(r * std::cos(a), r * std::sin(a));
      // Pincushion models can push a point out of undistort's input domain.
      if (distort(p, dist).norm() > Distortion::kWorkingRadius) continue;
      ++i;
      worst_und = std::max(worst_und, (undistort(distort(p, dist), dist) - p).norm());
      ++und_cases;
    }
  }
  verdict(7, worst_dlt < kDltTransferPx && worst_und < kUndistortTol,
          fmt("DLT max transfer err %.2e px (%.0f quads), undistort(distort) max err %.2e (%.0f "
              "points)",
              worst_dlt, dlt_cases, worst_und, und_cases));
}

}  // namespace

int main(int argc, char** argv) {
  bool full = false;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--full") == 0) {
      full = true;
    } else {
      std::fprintf(stderr, "usage: qsts_acceptance [--full]\n");
      return 2;
    }
  }
  // Progress goes to stderr; the verdicts print in criterion order at the end.
  try {
    characterization(full);
    roundtrip();
    pnp();
    jacobians();
    calibration();
    kernels();
  } catch (const std::exception& e) {
    std::printf("aborted: %s\n", e.what());
    return 1;
  }
  for (const auto& [n, line] : g_lines) std::printf("%s\n", line.c_str());
  std::printf("%s: %d hard criteria failed\n", g_failures ? "FAIL" : "PASS", g_failures);
  return g_failures ? 1 : 0;
}
