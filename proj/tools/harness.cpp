#include "harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "qsts/error.hpp"
#include "qsts/text_io.hpp"

namespace qsts::harness {

namespace {

namespace fs = std::filesystem;

void prepare_outputs(const fs::path& dir, const std::vector<std::string>& names, bool force) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error(ErrorKind::kIo, "cannot create output directory " + dir.string() +
                                    (ec ? ": " + ec.message() : std::string()));
  }
  if (force) return;
  for (const auto& n : names) {
    if (fs::exists(dir / n)) {
      throw Error(ErrorKind::kIo,
                  (dir / n).string() + " already exists (pass --force to overwrite)");
    }
  }
}

using CsvRows = std::vector<std::vector<std::string>>;

// Data rows of a headed CSV file, each checked for the column count.
CsvRows read_rows(const fs::path& p, std::size_t columns) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + p.string());
  std::string line;
  std::getline(in, line);
  CsvRows rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto cols = split(line, ',');
    if (cols.size() != columns) {
      throw Error(ErrorKind::kFormat, p.string() + ": bad row '" + line + "'");
    }
    rows.push_back(std::move(cols));
  }
  return rows;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + p.string());
  return out;
}

}  // namespace

std::vector<MarkerObservation> estimate_poses(const std::vector<DetectedMarker>& detections,
                                              const CameraModel& camera, double marker_size_mm,
                                              std::size_t* failures) {
  const auto object = marker_object_points(marker_size_mm);
  std::vector<MarkerObservation> out;
  out.reserve(detections.size());
  for (const auto& d : detections) {
    try {
      out.push_back({d.id, planar_pnp(object, d.corners, camera.intrinsics, camera.distortion)});
    } catch (const Error&) {
      if (failures) ++*failures;
    }
  }
  return out;
}

void write_pose_csv_header(std::ostream& out) { out << "frame,id,tx_mm,ty_mm,tz_mm,rx,ry,rz\n"; }

void write_pose_csv_rows(std::ostream& out, std::int64_t frame,
                         const std::vector<MarkerObservation>& poses) {
  for (const auto& p : poses) {
    const Eigen::Vector3d w = p.pose.axis_angle();
    const Eigen::Vector3d& t = p.pose.translation;
    out << frame << ',' << p.id << ',' << format_fixed(t.x(), 6) << ',' << format_fixed(t.y(), 6)
        << ',' << format_fixed(t.z(), 6) << ',' << format_fixed(w.x(), 6) << ','
        << format_fixed(w.y(), 6) << ',' << format_fixed(w.z(), 6) << '\n';
  }
}

void write_frame_index_header(std::ostream& out) { out << "frame,step,plate_depth_mm\n"; }

void write_frame_index_row(std::ostream& out, const ProtocolFrame& f) {
  out << f.frame << ',' << f.step << ',' << format_fixed(f.plate_depth_mm, 4) << '\n';
}

void write_distance_csv_header(std::ostream& out) {
  out << "step,id_a,id_b,d_E_mm,d_A_mm,err_mm\n";
}

void write_distance_csv_rows(std::ostream& out, const std::vector<DistanceComparison>& rows) {
  for (const auto& r : rows) {
    out << r.step << ',' << r.id_a << ',' << r.id_b << ',' << format_fixed(r.estimated_mm, 6)
        << ',' << format_fixed(r.actual_mm, 6) << ',' << format_fixed(r.error_mm(), 6) << '\n';
  }
}

CharacterizationReport characterize(const CharacterizeOptions& options,
                                    const MarkerDictionary& dict) {
  const SceneConfig& scene = options.scene;
  scene.validate();
  const CameraModel camera = options.calibration.value_or(scene.camera);

  const bool write = !options.out_dir.empty();
  std::ofstream readings_csv, poses_csv, truth_csv, frames_csv;
  if (write) {
    prepare_outputs(options.out_dir,
                    {"readings.csv", "step_report.csv", "distances.csv", "poses.csv",
                     "truth.csv", "frames.csv", "summary.txt"},
                    options.force);
    readings_csv = open_out(options.out_dir / "readings.csv");
    poses_csv = open_out(options.out_dir / "poses.csv");
    truth_csv = open_out(options.out_dir / "truth.csv");
    frames_csv = open_out(options.out_dir / "frames.csv");
    write_frame_index_header(frames_csv);
    write_readings_csv_header(readings_csv);
    write_pose_csv_header(poses_csv);
    write_truth_csv_header(truth_csv);
  }

  CharacterizationReport report;
  DeformationTracker tracker(static_cast<int>(dict.size()));
  std::vector<std::pair<std::int64_t, FrameObservations>> baseline_frames;
  std::vector<std::vector<MarkerTruth>> step_truth(options.steps.size());
  std::vector<std::pair<std::int64_t, std::int64_t>> step_window(options.steps.size(), {-1, -1});
  std::size_t detections = 0;
  double latency_total_ms = 0.0;
  const auto placed = static_cast<std::size_t>(scene.grid * scene.grid);

  auto track = [&](std::int64_t frame, const FrameObservations& obs) {
    const auto readings = tracker.update(obs, frame);
    if (write) write_readings_csv_rows(readings_csv, readings);
  };

  run_protocol(scene, options.steps, options.frames_per_step, options.seed, dict,
               [&](const ProtocolFrame& f) {
                 const auto t0 = std::chrono::steady_clock::now();
                 const auto found = detect_frame(*f.image, dict, options.detector);
                 auto obs = estimate_poses(found, camera, scene.marker_size_mm,
                                           &report.pose_failures);
                 const auto t1 = std::chrono::steady_clock::now();
                 latency_total_ms +=
                     std::chrono::duration<double, std::milli>(t1 - t0).count();
                 for (const auto& d : found) {
                   if (static_cast<std::size_t>(d.id) < placed) ++detections;
                 }
                 ++report.frames;

                 auto& win = step_window[static_cast<std::size_t>(f.step)];
                 if (win.first < 0) {
                   win.first = f.frame;
                   step_truth[static_cast<std::size_t>(f.step)] = *f.truth;
                 }
                 win.second = f.frame + 1;

                 if (write) {
                   write_pose_csv_rows(poses_csv, f.frame, obs);
                   write_truth_csv_rows(truth_csv, f.frame, *f.truth);
                   write_frame_index_row(frames_csv, f);
                 }

                 if (f.step == 0) {
                   baseline_frames.emplace_back(f.frame, std::move(obs));
                   return;
                 }
                 if (!tracker.has_baseline()) {
                   std::vector<FrameObservations> window;
                   for (const auto& b : baseline_frames) window.push_back(b.second);
                   const auto base = tracker.set_baseline(window);
                   report.warnings.insert(report.warnings.end(), base.warnings.begin(),
                                          base.warnings.end());
                   for (const auto& b : baseline_frames) track(b.first, b.second);
                 }
                 track(f.frame, obs);
               });
  if (!tracker.has_baseline()) {
    std::vector<FrameObservations> window;
    for (const auto& b : baseline_frames) window.push_back(b.second);
    const auto base = tracker.set_baseline(window);
    report.warnings.insert(report.warnings.end(), base.warnings.begin(), base.warnings.end());
    for (const auto& b : baseline_frames) track(b.first, b.second);
  }
  report.baseline_markers = tracker.tracks().size();
  report.unknown_ids = tracker.unknown_id_count();
  for (std::size_t id = 0; id < placed; ++id) {
    if (!tracker.tracks().count(static_cast<int>(id))) {
      report.warnings.push_back("marker " + std::to_string(id) + " not tracked");
    }
  }

  const GelDome dome = scene.dome();
  const auto base = place_markers(dome, scene.grid, scene.pitch_mm, scene.marker_size_mm);
  for (std::size_t k = 0; k < options.steps.size(); ++k) {
    const auto [first, last] = step_window[k];
    std::map<int, double> reference;
    std::map<int, Eigen::Vector3d> true_center;
    for (const auto& t : step_truth[k]) {
      const double dz = t.delta().z();
      if (dz >= options.min_reference_mm - kReferenceSlackMm) reference[t.id] = dz;
      true_center[t.id] = base[static_cast<std::size_t>(t.id)].center + t.displacement;
    }
    const auto stats = tracker.step_statistics(static_cast<int>(k), options.steps[k], first,
                                               last, reference);
    report.stats.insert(report.stats.end(), stats.begin(), stats.end());

    std::vector<int> ids;
    for (const auto& [id, tr] : tracker.tracks()) ids.push_back(id);
    for (std::size_t a = 0; a < ids.size(); ++a) {
      for (std::size_t b = a + 1; b < ids.size(); ++b) {
        if (!true_center.count(ids[a]) || !true_center.count(ids[b])) continue;
        double sum = 0.0;
        int n = 0;
        for (std::int64_t f = first; f < last; ++f) {
          try {
            sum += tracker.inter_marker_distance(ids[a], ids[b], f);
            ++n;
          } catch (const Error&) {
          }
        }
        if (n == 0) continue;
        DistanceComparison d{static_cast<int>(k), ids[a], ids[b], sum / n,
                             (true_center[ids[a]] - true_center[ids[b]]).norm()};
        report.max_distance_error_mm = std::max(report.max_distance_error_mm,
                                                std::abs(d.error_mm()));
        report.distances.push_back(d);
      }
    }
  }

  double rel_sum = 0.0;
  for (const auto& s : report.stats) {
    if (s.commanded_mm <= 0.0 || !s.relative_error_pct) continue;
    rel_sum += *s.relative_error_pct;
    ++report.relative_error_samples;
    if (*s.relative_error_pct >= report.max_relative_error_pct) {
      report.max_relative_error_pct = *s.relative_error_pct;
      report.worst_id = s.id;
      report.worst_step = s.step;
    }
  }
  if (report.relative_error_samples > 0) {
    report.mean_relative_error_pct = rel_sum / report.relative_error_samples;
  }
  report.detection_rate = report.frames > 0
                              ? static_cast<double>(detections) /
                                    (static_cast<double>(report.frames) * static_cast<double>(placed))
                              : 0.0;
  report.mean_latency_ms = report.frames > 0 ? latency_total_ms / report.frames : 0.0;
  if (report.pose_failures > 0) {
    report.warnings.push_back(std::to_string(report.pose_failures) + " pose estimates failed");
  }

  if (write) {
    auto step_csv = open_out(options.out_dir / "step_report.csv");
    write_step_report_header(step_csv);
    write_step_report_rows(step_csv, report.stats);
    auto dist_csv = open_out(options.out_dir / "distances.csv");
    write_distance_csv_header(dist_csv);
    write_distance_csv_rows(dist_csv, report.distances);
    auto summary = open_out(options.out_dir / "summary.txt");
    write_summary(report, options, summary);
    for (auto* s : {&readings_csv, &poses_csv, &truth_csv, &frames_csv}) {
      s->flush();
      if (!*s) throw Error(ErrorKind::kIo, "failed writing characterization CSVs");
    }
  }
  return report;
}

void write_summary(const CharacterizationReport& r, const CharacterizeOptions& options,
                   std::ostream& out) {
  out << "frames                  " << r.frames << " (" << options.steps.size() << " steps x "
      << options.frames_per_step << ")\n";
  out << "markers at baseline     " << r.baseline_markers << '\n';
  out << "detection rate          " << format_fixed(100.0 * r.detection_rate, 3) << " %\n";
  out << "max Z relative error    " << format_fixed(r.max_relative_error_pct, 3) << " %";
  if (r.worst_id >= 0) out << " (marker " << r.worst_id << ", step " << r.worst_step << ")";
  out << '\n';
  out << "mean Z relative error   " << format_fixed(r.mean_relative_error_pct, 3) << " % over "
      << r.relative_error_samples << " marker-steps with true dz >= "
      << format_fixed(options.min_reference_mm, 2) << " mm\n";
  out << "max distance error      " << format_fixed(r.max_distance_error_mm, 4) << " mm over "
      << r.distances.size() << " pair-steps\n";
  out << "mean detect+pose        " << format_fixed(r.mean_latency_ms, 2) << " ms/frame\n";
  for (const auto& w : r.warnings) out << "warning: " << w << '\n';
}

std::int64_t simulate(const SimulateOptions& options, const MarkerDictionary& dict) {
  prepare_outputs(options.out_dir, {"truth.csv", "frames.csv", "frames"}, options.force);
  fs::create_directories(options.out_dir / "frames");
  auto truth = open_out(options.out_dir / "truth.csv");
  auto index = open_out(options.out_dir / "frames.csv");
  write_truth_csv_header(truth);
  write_frame_index_header(index);
  std::int64_t count = 0;
  run_protocol(options.scene, options.steps, options.frames_per_step, options.seed, dict,
               [&](const ProtocolFrame& f) {
                 char name[32];
                 std::snprintf(name, sizeof name, "frame_%06lld.pgm",
                               static_cast<long long>(f.frame));
                 write_pgm(*f.image, options.out_dir / "frames" / name);
                 write_truth_csv_rows(truth, f.frame, *f.truth);
                 write_frame_index_row(index, f);
                 ++count;
               });
  if (!truth || !index) throw Error(ErrorKind::kIo, "failed writing truth.csv");
  return count;
}

DetectSummary detect(const DetectOptions& options, const MarkerDictionary& dict) {
  std::vector<fs::path> frames;
  for (const auto& p : options.frames) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.path().extension() == ".pgm") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      frames.insert(frames.end(), found.begin(), found.end());
    } else {
      frames.push_back(p);
    }
  }
  if (frames.empty()) throw Error(ErrorKind::kParameter, "no input frames");

  prepare_outputs(options.out_dir, {"detections.csv", "poses.csv"}, options.force);
  auto det_csv = open_out(options.out_dir / "detections.csv");
  auto pose_csv = open_out(options.out_dir / "poses.csv");
  write_detection_csv_header(det_csv);
  write_pose_csv_header(pose_csv);

  DetectSummary summary;
  double latency_total_ms = 0.0;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto frame = static_cast<std::int64_t>(k);
    GrayImage img;
    try {
      img = read_pgm(frames[k]);
    } catch (const Error& e) {
      summary.warnings.push_back("frame " + std::to_string(frame) + " skipped: " + e.what());
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto found = detect_frame(img, dict, options.detector);
    const auto poses = estimate_poses(found, options.camera, options.marker_size_mm,
                                      &summary.pose_failures);
    latency_total_ms += std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
    write_detection_csv_rows(det_csv, frame, found);
    write_pose_csv_rows(pose_csv, frame, poses);
    summary.detections += found.size();
    ++summary.frames;
  }
  if (!det_csv || !pose_csv) throw Error(ErrorKind::kIo, "failed writing detection outputs");
  if (summary.frames > 0) summary.mean_latency_ms = latency_total_ms / summary.frames;
  return summary;
}

ReportSummary summarize_outputs(const fs::path& dir) {
  ReportSummary s;
  double rel_sum = 0.0;
  double rate_sum = 0.0;
  const auto steps = read_rows(dir / "step_report.csv", 6);
  for (const auto& c : steps) {
    rate_sum += parse_double(c[5], "detection_rate");
    if (parse_double(c[1], "commanded_mm") <= 0.0 || trim(c[4]).empty()) continue;
    const double e = parse_double(c[4], "rel_err_pct");
    s.max_relative_error_pct = std::max(s.max_relative_error_pct, e);
    rel_sum += e;
    ++s.relative_error_samples;
  }
  if (s.relative_error_samples > 0) s.mean_relative_error_pct = rel_sum / s.relative_error_samples;
  if (!steps.empty()) s.mean_detection_rate = rate_sum / static_cast<double>(steps.size());
  for (const auto& c : read_rows(dir / "distances.csv", 6)) {
    s.max_distance_error_mm =
        std::max(s.max_distance_error_mm, std::abs(parse_double(c[5], "err_mm")));
  }
  return s;
}

JoinedReport report(const ReportOptions& options) {
  const fs::path& in = options.in_dir;
  const fs::path out_dir = options.out_dir.empty() ? in / "report" : options.out_dir;

  struct FrameInfo {
    int step = 0;
    double depth = 0.0;
  };
  std::map<std::int64_t, FrameInfo> frames;
  for (const auto& c : read_rows(in / "frames.csv", 3)) {
    frames[parse_int(c[0], "frame")] = {static_cast<int>(parse_int(c[1], "step")),
                                        parse_double(c[2], "plate_depth_mm")};
  }
  std::map<std::pair<std::int64_t, int>, Eigen::Vector3d> truth;
  for (const auto& c : read_rows(in / "truth.csv", 5)) {
    truth[{parse_int(c[0], "frame"), static_cast<int>(parse_int(c[1], "id"))}] =
        Eigen::Vector3d(parse_double(c[2], "true_dx_mm"), parse_double(c[3], "true_dy_mm"),
                        parse_double(c[4], "true_dz_mm"));
  }

  struct Accum {
    Eigen::Vector3d est = Eigen::Vector3d::Zero();
    Eigen::Vector3d truth = Eigen::Vector3d::Zero();
    int n = 0;
  };
  std::map<std::pair<int, int>, Accum> acc;
  std::vector<std::string> missing;
  for (const auto& c : read_rows(in / "readings.csv", 5)) {
    const std::int64_t frame = parse_int(c[0], "frame");
    const int id = static_cast<int>(parse_int(c[1], "id"));
    const auto f = frames.find(frame);
    const auto t = truth.find({frame, id});
    if (f == frames.end() || t == truth.end()) {
      missing.push_back("frame " + std::to_string(frame) + " id " + std::to_string(id));
      continue;
    }
    auto& a = acc[{f->second.step, id}];
    a.est += Eigen::Vector3d(parse_double(c[2], "dx_mm"), parse_double(c[3], "dy_mm"),
                             parse_double(c[4], "dz_mm"));
    a.truth += t->second;
    ++a.n;
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t k = 0; k < missing.size() && k < 10; ++k) {
      list += (k ? ", " : "") + missing[k];
    }
    if (missing.size() > 10) list += ", and " + std::to_string(missing.size() - 10) + " more";
    throw Error(ErrorKind::kFormat, "no ground truth for " + list);
  }

  std::map<int, double> step_depth;
  for (const auto& [frame, info] : frames) step_depth.emplace(info.step, info.depth);

  JoinedReport r;
  double rel_sum = 0.0;
  for (const auto& [key, a] : acc) {
    ErrorRow row;
    row.step = key.first;
    row.plate_depth_mm = step_depth[key.first];
    row.id = key.second;
    row.mean_delta = a.est / a.n;
    row.true_delta = a.truth / a.n;
    row.frames = a.n;
    if (row.true_delta.z() >= options.min_reference_mm - kReferenceSlackMm) {
      row.relative_error_pct = 100.0 * std::abs(row.dz_error_mm()) / row.true_delta.z();
      r.max_relative_error_pct = std::max(r.max_relative_error_pct, *row.relative_error_pct);
      rel_sum += *row.relative_error_pct;
      ++r.relative_error_samples;
    }
    r.max_abs_dz_error_mm = std::max(r.max_abs_dz_error_mm, std::abs(row.dz_error_mm()));
    r.rows.push_back(row);
  }
  if (r.relative_error_samples > 0) r.mean_relative_error_pct = rel_sum / r.relative_error_samples;

  prepare_outputs(out_dir, {"error_table.csv", "xy_by_step.csv", "trajectories"}, options.force);
  auto table = open_out(out_dir / "error_table.csv");
  table << "step,plate_depth_mm,id,mean_dx_mm,mean_dy_mm,mean_dz_mm,true_dx_mm,true_dy_mm,"
           "true_dz_mm,err_dz_mm,err_xy_mm,rel_err_pct,frames\n";
  for (const auto& row : r.rows) {
    table << row.step << ',' << format_fixed(row.plate_depth_mm, 4) << ',' << row.id;
    for (int i = 0; i < 3; ++i) table << ',' << format_fixed(row.mean_delta[i], 6);
    for (int i = 0; i < 3; ++i) table << ',' << format_fixed(row.true_delta[i], 6);
    table << ',' << format_fixed(row.dz_error_mm(), 6) << ','
          << format_fixed(row.lateral_error_mm(), 6) << ','
          << (row.relative_error_pct ? format_fixed(*row.relative_error_pct, 4) : "") << ','
          << row.frames << '\n';
  }
  if (!table) throw Error(ErrorKind::kIo, "failed writing error_table.csv");

  // Positions come from the pose log when there is one.
  std::map<int, std::vector<std::pair<std::int64_t, Eigen::Vector3d>>> tracks;
  if (fs::exists(in / "poses.csv")) {
    for (const auto& c : read_rows(in / "poses.csv", 8)) {
      tracks[static_cast<int>(parse_int(c[1], "id"))].emplace_back(
          parse_int(c[0], "frame"),
          Eigen::Vector3d(parse_double(c[2], "tx_mm"), parse_double(c[3], "ty_mm"),
                          parse_double(c[4], "tz_mm")));
    }
  }
  auto xy = open_out(out_dir / "xy_by_step.csv");
  xy << "step,id,x_mm,y_mm,z_mm,frames\n";
  fs::create_directories(out_dir / "trajectories");
  for (const auto& [id, points] : tracks) {
    char name[32];
    std::snprintf(name, sizeof name, "marker_%02d.csv", id);
    auto traj = open_out(out_dir / "trajectories" / name);
    traj << "frame,x,y,z\n";
    std::map<int, std::pair<Eigen::Vector3d, int>> per_step;
    for (const auto& [frame, p] : points) {
      traj << frame << ',' << format_fixed(p.x(), 6) << ',' << format_fixed(p.y(), 6) << ','
           << format_fixed(p.z(), 6) << '\n';
      const auto f = frames.find(frame);
      if (f == frames.end()) continue;
      auto& s = per_step.try_emplace(f->second.step, Eigen::Vector3d::Zero(), 0).first->second;
      s.first += p;
      ++s.second;
    }
    if (!traj) throw Error(ErrorKind::kIo, "failed writing trajectory for marker " + std::to_string(id));
    ++r.trajectory_files;
    for (const auto& [step, s] : per_step) {
      const Eigen::Vector3d m = s.first / s.second;
      xy << step << ',' << id << ',' << format_fixed(m.x(), 6) << ',' << format_fixed(m.y(), 6)
         << ',' << format_fixed(m.z(), 6) << ',' << s.second << '\n';
    }
  }
  if (!xy) throw Error(ErrorKind::kIo, "failed writing xy_by_step.csv");
  return r;
}

}  // namespace qsts::harness
