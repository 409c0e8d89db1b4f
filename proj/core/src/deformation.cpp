#include "qsts/deformation.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>

#include "qsts/error.hpp"
#include "qsts/text_io.hpp"

namespace qsts {

Eigen::Matrix3d chordal_mean(std::span<const Eigen::Matrix3d> rotations) {
  if (rotations.empty()) throw Error(ErrorKind::kParameter, "chordal mean of no rotations");
  Eigen::Matrix3d sum = Eigen::Matrix3d::Zero();
  for (const auto& r : rotations) sum += r - rotations.front();
  return nearest_rotation(rotations.front() + sum / static_cast<double>(rotations.size()));
}

DeformationTracker::DeformationTracker(int dictionary_size) : dictionary_size_(dictionary_size) {
  if (dictionary_size <= 0) throw Error(ErrorKind::kParameter, "dictionary size must be positive");
}

BaselineReport DeformationTracker::set_baseline(std::span<const FrameObservations> frames,
                                                double detection_floor) {
  if (frames.empty()) throw Error(ErrorKind::kBaseline, "baseline window has no frames");

  std::map<int, std::vector<Pose>> seen;
  for (const auto& frame : frames) {
    std::set<int> in_frame;
    for (const auto& obs : frame) {
      if (obs.id < 0 || obs.id >= dictionary_size_) continue;
      if (!in_frame.insert(obs.id).second) continue;
      seen[obs.id].push_back(obs.pose);
    }
  }

  BaselineReport report;
  tracks_.clear();
  const double needed = detection_floor * static_cast<double>(frames.size());
  for (const auto& [id, poses] : seen) {
    if (static_cast<double>(poses.size()) < needed) {
      report.excluded_ids.push_back(id);
      report.warnings.push_back("marker " + std::to_string(id) + " seen in " +
                                std::to_string(poses.size()) + "/" +
                                std::to_string(frames.size()) +
                                " baseline frames; excluded");
      continue;
    }
    MarkerTrack track;
    track.id = id;
    track.anchor = poses.front().translation;
    Eigen::Vector3d offset = Eigen::Vector3d::Zero();
    std::vector<Eigen::Matrix3d> rotations;
    for (const auto& p : poses) {
      offset += p.translation - track.anchor;
      rotations.push_back(p.rotation);
    }
    track.baseline.translation = track.anchor + offset / static_cast<double>(poses.size());
    track.baseline.rotation = chordal_mean(rotations);
    tracks_.emplace(id, std::move(track));
    report.tracked_ids.push_back(id);
  }
  if (tracks_.empty()) {
    throw Error(ErrorKind::kBaseline, "no marker reached the baseline detection floor");
  }
  has_baseline_ = true;
  last_frame_.reset();
  unknown_ids_ = 0;
  return report;
}

std::vector<DeformationReading> DeformationTracker::update(const FrameObservations& observations,
                                                           std::int64_t frame) {
  if (!has_baseline_) throw Error(ErrorKind::kBaseline, "update before baseline");
  if (last_frame_ && frame <= *last_frame_) {
    throw Error(ErrorKind::kParameter, "frame indices must increase");
  }
  last_frame_ = frame;

  std::map<int, const Pose*> current;
  for (const auto& obs : observations) {
    if (obs.id < 0 || obs.id >= dictionary_size_) {
      ++unknown_ids_;
      continue;
    }
    current.emplace(obs.id, &obs.pose);
  }

  std::vector<DeformationReading> readings;
  for (auto& [id, track] : tracks_) {
    auto it = current.find(id);
    if (it == current.end()) {
      track.history.push_back({frame, false, Pose{}});
      continue;
    }
    track.history.push_back({frame, true, *it->second});
    readings.push_back({frame, id, track.baseline.translation - it->second->translation});
  }
  return readings;
}

std::vector<StepStatistics> DeformationTracker::step_statistics(int step, double commanded_mm,
                                                                std::int64_t first,
                                                                std::int64_t last) const {
  std::map<int, double> reference;
  for (const auto& [id, track] : tracks_) reference[id] = commanded_mm;
  return step_statistics(step, commanded_mm, first, last, reference);
}

std::vector<StepStatistics> DeformationTracker::step_statistics(
    int step, double commanded_mm, std::int64_t first, std::int64_t last,
    const std::map<int, double>& reference_mm) const {
  if (last <= first) throw Error(ErrorKind::kParameter, "empty statistics window");
  std::vector<StepStatistics> out;
  for (const auto& [id, track] : tracks_) {
    StepStatistics s;
    s.step = step;
    s.commanded_mm = commanded_mm;
    s.id = id;
    s.window_frames = static_cast<int>(last - first);
    double offset = 0.0;
    for (const auto& sample : track.history) {
      if (sample.frame < first || sample.frame >= last || !sample.detected) continue;
      offset += sample.pose.translation.z() - track.anchor.z();
      ++s.detected_frames;
    }
    if (s.detected_frames == 0) continue;
    s.detection_rate = static_cast<double>(s.detected_frames) / s.window_frames;
    s.mean_dz_mm = track.baseline.translation.z() - (track.anchor.z() + offset / s.detected_frames);
    auto ref = reference_mm.find(id);
    if (ref != reference_mm.end()) {
      s.reference_mm = ref->second;
      if (ref->second > 0.0 && s.mean_dz_mm) {
        s.relative_error_pct = std::abs(*s.mean_dz_mm - ref->second) / ref->second * 100.0;
      }
    }
    out.push_back(s);
  }
  return out;
}

const TrackSample* DeformationTracker::sample_at(int id, std::int64_t frame) const {
  auto it = tracks_.find(id);
  if (it == tracks_.end()) return nullptr;
  const auto& h = it->second.history;
  auto pos = std::lower_bound(h.begin(), h.end(), frame,
                              [](const TrackSample& s, std::int64_t f) { return s.frame < f; });
  if (pos == h.end() || pos->frame != frame || !pos->detected) return nullptr;
  return &*pos;
}

double DeformationTracker::inter_marker_distance(int id_a, int id_b, std::int64_t frame) const {
  const TrackSample* a = sample_at(id_a, frame);
  const TrackSample* b = sample_at(id_b, frame);
  if (!a || !b) {
    throw Error(ErrorKind::kUnavailable, "markers " + std::to_string(id_a) + " and " +
                                             std::to_string(id_b) +
                                             " not both detected in frame " +
                                             std::to_string(frame));
  }
  return (a->pose.translation - b->pose.translation).norm();
}

std::vector<TrajectoryPoint> DeformationTracker::trajectory(int id) const {
  std::vector<TrajectoryPoint> out;
  auto it = tracks_.find(id);
  if (it == tracks_.end()) return out;
  for (const auto& s : it->second.history) {
    if (s.detected) out.push_back({s.frame, s.pose.translation});
  }
  return out;
}

void write_readings_csv_header(std::ostream& out) { out << "frame,id,dx_mm,dy_mm,dz_mm\n"; }

void write_readings_csv_rows(std::ostream& out, std::span<const DeformationReading> readings) {
  for (const auto& r : readings) {
    out << r.frame << ',' << r.id << ',' << format_fixed(r.delta.x(), 6) << ','
        << format_fixed(r.delta.y(), 6) << ',' << format_fixed(r.delta.z(), 6) << '\n';
  }
}

void write_step_report_header(std::ostream& out) {
  out << "step,commanded_mm,id,mean_dz_mm,rel_err_pct,detection_rate\n";
}

void write_step_report_rows(std::ostream& out, std::span<const StepStatistics> stats) {
  for (const auto& s : stats) {
    out << s.step << ',' << format_fixed(s.commanded_mm, 4) << ',' << s.id << ','
        << (s.mean_dz_mm ? format_fixed(*s.mean_dz_mm, 6) : std::string()) << ','
        << (s.relative_error_pct ? format_fixed(*s.relative_error_pct, 4) : std::string()) << ','
        << format_fixed(s.detection_rate, 4) << '\n';
  }
}

}  // namespace qsts
