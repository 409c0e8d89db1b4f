// qsts: simulate, detect, calibrate, characterize, report.
// Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "harness.hpp"
#include "qsts/calibration.hpp"
#include "qsts/error.hpp"
#include "qsts/simulator.hpp"
#include "qsts/text_io.hpp"

namespace {

namespace fs = std::filesystem;
using namespace qsts;

struct CommonFlags {
  std::string config;
  std::string dict;
  std::string calib;
  std::string out;
  std::uint64_t seed = 1;
  std::string steps;
  int frames_per_step = 200;
  std::optional<double> noise;
  bool force = false;
  int corrections = 0;
};

struct Loaded {
  SceneConfig scene;
  MarkerDictionary dict = default_dictionary();
  std::optional<CameraModel> calib;
  std::vector<double> steps = default_protocol_steps();
  DetectorParams detector;
};

// Everything that can fail because of what the user passed. Errors here map
// to exit code 2.
Loaded load(const CommonFlags& f) {
  Loaded l;
  if (!f.config.empty()) l.scene = load_scene_config(f.config);
  if (f.noise) l.scene.noise_sigma = *f.noise;
  if (!f.dict.empty()) l.dict = load_dictionary(f.dict);
  if (!f.calib.empty()) l.calib = load_calibration(f.calib);
  if (!f.steps.empty()) {
    l.steps.clear();
    for (const auto& s : split(f.steps, ',')) l.steps.push_back(parse_double(s, "--steps"));
  }
  if (f.frames_per_step < 1) throw Error(ErrorKind::kParameter, "--frames-per-step must be >= 1");
  if (f.corrections < 0 || f.corrections > l.dict.max_correctable()) {
    throw Error(ErrorKind::kParameter,
                "--corrections exceeds what the dictionary can correct (" +
                    std::to_string(l.dict.max_correctable()) + ")");
  }
  l.detector.max_corrections = f.corrections;
  l.scene.validate();
  return l;
}

void add_common(CLI::App* cmd, CommonFlags& f, bool protocol) {
  cmd->add_option("--config", f.config, "scene config (key=value)");
  cmd->add_option("--dict", f.dict, "marker dictionary file (default: built-in 4x4/50)");
  cmd->add_option("--calib", f.calib, "camera file (qscam v1)");
  cmd->add_option("--out", f.out, "output directory")->required();
  cmd->add_flag("--force", f.force, "overwrite existing outputs");
  cmd->add_option("--corrections", f.corrections, "bit corrections allowed when decoding");
  if (protocol) {
    cmd->add_option("--seed", f.seed, "noise seed");
    cmd->add_option("--steps", f.steps, "comma separated plate depths in mm");
    cmd->add_option("--frames-per-step", f.frames_per_step, "frames rendered per step");
    cmd->add_option("--noise", f.noise, "pixel noise sigma (intensity units)");
  }
}

int fail(int code, const std::exception& e) {
  std::cerr << "qsts: " << e.what() << '\n';
  return code;
}

// Bad inputs, parameters and output locations are configuration errors.
int runtime_exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kParameter:
    case ErrorKind::kFormat:
    case ErrorKind::kMalformedInput:
    case ErrorKind::kIo:
      return 2;
    default:
      return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantitative soft tactile sensor toolkit"};
  app.require_subcommand(1);

  CommonFlags sim_f, char_f, det_f;
  auto* sim = app.add_subcommand("simulate", "render the indentation protocol to PGM frames");
  add_common(sim, sim_f, true);

  auto* chr = app.add_subcommand("characterize", "run the full measurement protocol");
  add_common(chr, char_f, true);

  std::vector<std::string> frames;
  auto* det = app.add_subcommand("detect", "detect markers and poses in PGM frames");
  add_common(det, det_f, false);
  det->add_option("frames", frames, "PGM files or directories")->required();

  std::string corners, cal_out;
  bool synthetic = false, k3 = false, cal_force = false;
  double cal_noise = 0.0;
  int cal_views = 36;
  std::uint64_t cal_seed = 1;
  std::string cal_config;
  auto* cal = app.add_subcommand("calibrate", "estimate intrinsics from checkerboard corners");
  cal->add_option("--corners", corners, "corner CSV (view,board_x_mm,board_y_mm,img_x_px,img_y_px)");
  cal->add_flag("--synthetic", synthetic, "generate corners from the scene camera instead");
  cal->add_option("--config", cal_config, "scene config supplying the synthetic camera");
  cal->add_option("--views", cal_views, "synthetic view count");
  cal->add_option("--noise", cal_noise, "synthetic corner noise in px");
  cal->add_option("--seed", cal_seed, "synthetic corner seed");
  cal->add_flag("--k3", k3, "also estimate k3");
  cal->add_option("--out", cal_out, "output directory")->required();
  cal->add_flag("--force", cal_force, "overwrite existing outputs");

  std::string report_dir, report_out;
  bool report_force = false;
  auto* rep = app.add_subcommand("report", "join readings with ground truth and summarize");
  rep->add_option("--out", report_dir, "characterize output directory")->required();
  rep->add_option("--report-dir", report_out, "where tables go (default <out>/report)");
  rep->add_flag("--force", report_force, "overwrite existing report files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*sim || *chr) {
    const CommonFlags& f = *sim ? sim_f : char_f;
    Loaded l;
    try {
      l = load(f);
    } catch (const std::exception& e) {
      return fail(2, e);
    }
    try {
      if (*sim) {
        harness::SimulateOptions o{l.scene, l.steps, f.frames_per_step, f.seed, f.out, f.force};
        const auto n = harness::simulate(o, l.dict);
        std::cout << "wrote " << n << " frames to " << (fs::path(f.out) / "frames").string()
                  << '\n';
      } else {
        harness::CharacterizeOptions o;
        o.scene = l.scene;
        o.steps = l.steps;
        o.frames_per_step = f.frames_per_step;
        o.seed = f.seed;
        o.detector = l.detector;
        o.calibration = l.calib;
        o.out_dir = f.out;
        o.force = f.force;
        const auto report = harness::characterize(o, l.dict);
        harness::write_summary(report, o, std::cout);
      }
    } catch (const Error& e) {
      return fail(runtime_exit_code(e), e);
    } catch (const std::exception& e) {
      return fail(1, e);
    }
    return 0;
  }

  if (*det) {
    Loaded l;
    try {
      l = load(det_f);
    } catch (const std::exception& e) {
      return fail(2, e);
    }
    try {
      harness::DetectOptions o;
      for (const auto& p : frames) o.frames.emplace_back(p);
      o.camera = l.calib.value_or(l.scene.camera);
      o.marker_size_mm = l.scene.marker_size_mm;
      o.detector = l.detector;
      o.out_dir = det_f.out;
      o.force = det_f.force;
      const auto s = harness::detect(o, l.dict);
      for (const auto& w : s.warnings) std::cerr << "warning: " << w << '\n';
      std::cout << s.frames << " frames, " << s.detections << " detections, "
                << s.pose_failures << " pose failures, " << s.warnings.size() << " warnings\n"
                << "mean detect+pose " << format_fixed(s.mean_latency_ms, 2) << " ms/frame\n";
    } catch (const Error& e) {
      return fail(runtime_exit_code(e), e);
    } catch (const std::exception& e) {
      return fail(1, e);
    }
    return 0;
  }

  if (*cal) {
    std::vector<CalibrationView> views;
    try {
      if (synthetic == !corners.empty()) {
        throw Error(ErrorKind::kParameter, "pass exactly one of --corners or --synthetic");
      }
      if (synthetic) {
        const SceneConfig scene = cal_config.empty() ? SceneConfig{} : load_scene_config(cal_config);
        views = synthetic_calibration_views(scene.camera, scene.image_w, scene.image_h, cal_views,
                                            cal_noise, cal_seed);
      } else {
        views = read_corner_csv(corners);
      }
      if (views.size() < 3) {
        throw Error(ErrorKind::kCalibration, "calibration needs at least 3 views, got " +
                                                 std::to_string(views.size()));
      }
      const fs::path out_dir(cal_out);
      fs::create_directories(out_dir);
      if (!cal_force && fs::exists(out_dir / "camera.qscam")) {
        throw Error(ErrorKind::kIo, (out_dir / "camera.qscam").string() +
                                        " already exists (pass --force to overwrite)");
      }
    } catch (const std::exception& e) {
      return fail(2, e);
    }
    try {
      const fs::path out_dir(cal_out);
      if (synthetic) write_corner_csv(views, out_dir / "corners.csv");
      const auto result = calibrate(views, {.enable_k3 = k3});
      save_calibration(result, out_dir / "camera.qscam");
      const auto& c = result.intrinsics;
      const auto& d = result.distortion;
      std::cout << "views " << views.size() << ", rms " << format_fixed(result.rms_reprojection, 6)
                << " px (closed form " << format_fixed(result.initial_rms, 4) << " px)\n"
                << "fx " << format_fixed(c.fx, 4) << " fy " << format_fixed(c.fy, 4) << " cx "
                << format_fixed(c.cx, 4) << " cy " << format_fixed(c.cy, 4) << '\n'
                << "k1 " << format_fixed(d.k1, 6) << " k2 " << format_fixed(d.k2, 6) << " p1 "
                << format_fixed(d.p1, 6) << " p2 " << format_fixed(d.p2, 6) << " k3 "
                << format_fixed(d.k3, 6) << '\n';
    } catch (const std::exception& e) {
      return fail(1, e);
    }
    return 0;
  }

  if (*rep) {
    try {
      harness::ReportOptions o;
      o.in_dir = report_dir;
      o.out_dir = report_out;
      o.force = report_force;
      const auto j = harness::report(o);
      std::cout << "error table rows        " << j.rows.size() << '\n'
                << "max Z relative error    " << format_fixed(j.max_relative_error_pct, 3)
                << " %\nmean Z relative error   " << format_fixed(j.mean_relative_error_pct, 3)
                << " % over " << j.relative_error_samples << " marker-steps\n"
                << "max |dz error|          " << format_fixed(j.max_abs_dz_error_mm, 4) << " mm\n"
                << "trajectory files        " << j.trajectory_files << '\n';
      const fs::path dir(report_dir);
      if (fs::exists(dir / "step_report.csv") && fs::exists(dir / "distances.csv")) {
        const auto s = harness::summarize_outputs(dir);
        std::cout << "max distance error      " << format_fixed(s.max_distance_error_mm, 4)
                  << " mm\nmean detection rate     "
                  << format_fixed(100.0 * s.mean_detection_rate, 3) << " %\n";
      }
    } catch (const Error& e) {
      return fail(runtime_exit_code(e), e);
    } catch (const std::exception& e) {
      return fail(1, e);
    }
    return 0;
  }
  return 2;
}
