#include "qsts/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <set>
#include <string>

#include <Eigen/Geometry>

#include "qsts/error.hpp"
#include "qsts/text_io.hpp"

namespace qsts {

namespace {

Error param_error(const std::string& what) { return Error(ErrorKind::kParameter, what); }

}  // namespace

Eigen::Vector3d GelDome::sphere_center() const {
  return {center.x(), center.y(), apex_z() - sphere_radius};
}

double GelDome::surface_z(double x, double y) const {
  const double r = std::hypot(x - center.x(), y - center.y());
  if (r > 0.5 * chord_width * (1.0 + 1e-12)) {
    throw param_error("point (" + format_fixed(x, 3) + ", " + format_fixed(y, 3) +
                      ") lies outside the dome chord");
  }
  return sphere_center().z() + std::sqrt(std::max(0.0, sphere_radius * sphere_radius - r * r));
}

GelDome build_dome(double w_s_mm, double t_s_mm, double standoff_mm) {
  if (!(w_s_mm > 0.0) || !(t_s_mm > 0.0) || !(standoff_mm > 0.0)) {
    throw param_error("dome width, height and standoff must be positive");
  }
  GelDome d;
  d.chord_width = w_s_mm;
  d.cap_height = t_s_mm;
  const double half = 0.5 * w_s_mm;
  d.sphere_radius = (t_s_mm * t_s_mm + half * half) / (2.0 * t_s_mm);
  d.center = {0.0, 0.0, standoff_mm - t_s_mm};
  return d;
}

Pose MarkerPlacement::pose() const {
  const Eigen::Vector3d u = (corners[1] - corners[0]).normalized();
  const Eigen::Vector3d v = (corners[3] - corners[0]).normalized();
  Eigen::Matrix3d r;
  r.col(0) = u;
  r.col(1) = v;
  r.col(2) = u.cross(v);
  return {nearest_rotation(r), center};
}

namespace {

MarkerPlacement make_placement(int id, const Eigen::Vector3d& center, const Eigen::Vector3d& u,
                               const Eigen::Vector3d& v, const Eigen::Vector3d& normal,
                               double half) {
  MarkerPlacement m;
  m.id = id;
  m.center = center;
  m.normal = normal;
  m.corners = {center - half * u - half * v, center + half * u - half * v,
               center + half * u + half * v, center - half * u + half * v};
  return m;
}

}  // namespace

std::vector<MarkerPlacement> place_markers(const GelDome& dome, int count_per_side,
                                           double pitch_mm, double marker_size_mm) {
  if (count_per_side < 1) throw param_error("grid count must be >= 1");
  if (!(marker_size_mm > 0.0)) throw param_error("marker size must be positive");
  if (count_per_side > 1 && pitch_mm < marker_size_mm) {
    throw param_error("grid pitch is smaller than the marker size");
  }
  const double half = 0.5 * marker_size_mm;
  const double extent = 0.5 * (count_per_side - 1) * pitch_mm + half;
  if (std::hypot(extent, extent) > 0.5 * dome.chord_width) {
    throw param_error("marker grid footprint exceeds the dome chord");
  }

  const Eigen::Vector3d sc = dome.sphere_center();
  std::vector<MarkerPlacement> out;
  for (int row = 0; row < count_per_side; ++row) {
    for (int col = 0; col < count_per_side; ++col) {
      const double x = dome.center.x() + (col - 0.5 * (count_per_side - 1)) * pitch_mm;
      const double y = dome.center.y() + (row - 0.5 * (count_per_side - 1)) * pitch_mm;
      const Eigen::Vector3d p(x, y, dome.surface_z(x, y));
      const Eigen::Vector3d n = (sc - p).normalized();
      const Eigen::Vector3d ex = Eigen::Vector3d::UnitX();
      const Eigen::Vector3d u = (ex - ex.dot(n) * n).normalized();
      const Eigen::Vector3d v = u.cross(n);
      out.push_back(make_placement(row * count_per_side + col, p, u, v, n, half));
    }
  }
  return out;
}

Eigen::Vector3d indent_point(const Eigen::Vector3d& p, const GelDome& dome, double plate_depth_mm,
                             double spread_factor) {
  const double plane_z = dome.apex_z() - plate_depth_mm;
  if (!(p.z() > plane_z)) return p;
  const double height = p.z() - plane_z;
  const Eigen::Vector2d rxy(p.x() - dome.center.x(), p.y() - dome.center.y());
  const Eigen::Vector2d radial = rxy / std::max(rxy.norm(), 1e-12);
  return {p.x() + spread_factor * height * radial.x(), p.y() + spread_factor * height * radial.y(),
          plane_z};
}

Indentation indent(std::span<const MarkerPlacement> placements, const GelDome& dome,
                   double plate_depth_mm, double spread_factor) {
  if (!(plate_depth_mm >= 0.0) || plate_depth_mm > dome.cap_height) {
    throw param_error("plate depth must lie in [0, cap height]");
  }
  if (!(spread_factor >= 0.0) || spread_factor > 1.0) {
    throw param_error("spread factor must lie in [0, 1]");
  }
  const double plane_z = dome.apex_z() - plate_depth_mm;
  Indentation out;
  for (const auto& m : placements) {
    bool contact = m.center.z() > plane_z;
    for (const auto& c : m.corners) contact = contact || c.z() > plane_z;

    const Eigen::Vector3d center = indent_point(m.center, dome, plate_depth_mm, spread_factor);
    MarkerPlacement moved = m;
    if (contact) {
      const double half = 0.5 * (m.corners[1] - m.corners[0]).norm();
      const Eigen::Vector3d u0 = m.corners[1] - m.corners[0];
      const Eigen::Vector3d u = Eigen::Vector3d(u0.x(), u0.y(), 0.0).normalized();
      const Eigen::Vector3d n(0.0, 0.0, -1.0);
      moved = make_placement(m.id, center, u, u.cross(n), n, half);
    }
    out.truth.push_back({m.id, center - m.center});
    out.placements.push_back(std::move(moved));
  }
  return out;
}

void SceneConfig::validate() const {
  camera.intrinsics.validate();
  camera.distortion.validate();
  if (image_w <= 0 || image_h <= 0) throw param_error("image size must be positive");
  if (grid < 1) throw param_error("grid must be >= 1");
  if (!(marker_size_mm > 0.0)) throw param_error("marker size must be positive");
  if (grid > 1 && pitch_mm < marker_size_mm) throw param_error("pitch smaller than marker size");
  if (!(t_s_mm > 0.0) || !(w_s_mm > 0.0) || !(standoff_mm > t_s_mm)) {
    throw param_error("dome dimensions must be positive with standoff > t_s");
  }
  if (!(plate_depth_mm >= 0.0) || plate_depth_mm > t_s_mm) {
    throw param_error("plate depth must lie in [0, t_s]");
  }
  if (!(spread_factor >= 0.0) || spread_factor > 1.0) {
    throw param_error("spread factor must lie in [0, 1]");
  }
  if (!(noise_sigma >= 0.0)) throw param_error("noise sigma must be >= 0");
}

SceneConfig parse_scene_config(std::istream& in, const std::filesystem::path& base_dir) {
  SceneConfig s;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::kFormat, "scene config line " + std::to_string(line_no) +
                                          ": expected key=value");
    }
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    auto& cam = s.camera.intrinsics;
    auto& dist = s.camera.distortion;
    if (key == "calib") {
      std::filesystem::path p(value);
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      s.camera = load_camera_model(p);
    } else if (key == "w_s_mm") {
      s.w_s_mm = parse_double(value, key);
    } else if (key == "t_s_mm") {
      s.t_s_mm = parse_double(value, key);
    } else if (key == "standoff_mm") {
      s.standoff_mm = parse_double(value, key);
    } else if (key == "grid") {
      s.grid = static_cast<int>(parse_int(value, key));
    } else if (key == "pitch_mm") {
      s.pitch_mm = parse_double(value, key);
    } else if (key == "marker_size_mm") {
      s.marker_size_mm = parse_double(value, key);
    } else if (key == "plate_depth_mm") {
      s.plate_depth_mm = parse_double(value, key);
    } else if (key == "spread_factor") {
      s.spread_factor = parse_double(value, key);
    } else if (key == "noise_sigma") {
      s.noise_sigma = parse_double(value, key);
    } else if (key == "image_w") {
      s.image_w = static_cast<int>(parse_int(value, key));
    } else if (key == "image_h") {
      s.image_h = static_cast<int>(parse_int(value, key));
    } else if (key == "fx") {
      cam.fx = parse_double(value, key);
    } else if (key == "fy") {
      cam.fy = parse_double(value, key);
    } else if (key == "cx") {
      cam.cx = parse_double(value, key);
    } else if (key == "cy") {
      cam.cy = parse_double(value, key);
    } else if (key == "k1") {
      dist.k1 = parse_double(value, key);
    } else if (key == "k2") {
      dist.k2 = parse_double(value, key);
    } else if (key == "k3") {
      dist.k3 = parse_double(value, key);
    } else if (key == "p1") {
      dist.p1 = parse_double(value, key);
    } else if (key == "p2") {
      dist.p2 = parse_double(value, key);
    } else {
      throw Error(ErrorKind::kFormat, "scene config line " + std::to_string(line_no) +
                                          ": unknown key '" + key + "'");
    }
  }
  s.validate();
  return s;
}

SceneConfig load_scene_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  return parse_scene_config(in, path.parent_path());
}

void write_scene_config(const SceneConfig& s, std::ostream& out) {
  const auto& c = s.camera.intrinsics;
  const auto& d = s.camera.distortion;
  auto kv = [&out](const char* k, double v) { out << k << '=' << format_fixed(v, 9) << '\n'; };
  kv("w_s_mm", s.w_s_mm);
  kv("t_s_mm", s.t_s_mm);
  kv("standoff_mm", s.standoff_mm);
  out << "grid=" << s.grid << '\n';
  kv("pitch_mm", s.pitch_mm);
  kv("marker_size_mm", s.marker_size_mm);
  kv("plate_depth_mm", s.plate_depth_mm);
  kv("spread_factor", s.spread_factor);
  kv("noise_sigma", s.noise_sigma);
  out << "image_w=" << s.image_w << "\nimage_h=" << s.image_h << '\n';
  kv("fx", c.fx);
  kv("fy", c.fy);
  kv("cx", c.cx);
  kv("cy", c.cy);
  kv("k1", d.k1);
  kv("k2", d.k2);
  kv("k3", d.k3);
  kv("p1", d.p1);
  kv("p2", d.p2);
}

Renderer::Renderer(const CameraModel& camera, int width, int height)
    : camera_(camera), width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw param_error("render size must be positive");
  camera_.intrinsics.validate();
}

namespace {

using Polygon2 = std::vector<Eigen::Vector2d>;

// One Sutherland-Hodgman pass against the half-plane sign * (p[axis] - bound) <= 0.
Polygon2 clip_axis(const Polygon2& in, int axis, double bound, double sign) {
  Polygon2 out;
  if (in.empty()) return out;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const Eigen::Vector2d& a = in[i];
    const Eigen::Vector2d& b = in[(i + 1) % in.size()];
    const double da = sign * (a[axis] - bound);
    const double db = sign * (b[axis] - bound);
    if (da <= 0.0) out.push_back(a);
    if ((da < 0.0 && db > 0.0) || (da > 0.0 && db < 0.0)) {
      out.push_back(a + (b - a) * (da / (da - db)));
    }
  }
  return out;
}

double polygon_area(const Polygon2& p) {
  double a = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& u = p[i];
    const auto& v = p[(i + 1) % p.size()];
    a += u.x() * v.y() - v.x() * u.y();
  }
  return 0.5 * std::abs(a);
}

// Adds weight * (area of quad inside each pixel) to the image. Pixel (x, y)
// covers [x - 0.5, x + 0.5] x [y - 0.5, y + 0.5].
void accumulate_quad(std::vector<double>& img, int width, int height,
                     const std::array<Eigen::Vector2d, 4>& quad, double weight) {
  double x0 = quad[0].x(), x1 = x0, y0 = quad[0].y(), y1 = y0;
  for (const auto& p : quad) {
    x0 = std::min(x0, p.x());
    x1 = std::max(x1, p.x());
    y0 = std::min(y0, p.y());
    y1 = std::max(y1, p.y());
  }
  const int px0 = std::max(0, static_cast<int>(std::floor(x0 + 0.5)));
  const int px1 = std::min(width - 1, static_cast<int>(std::floor(x1 + 0.5)));
  const int py0 = std::max(0, static_cast<int>(std::floor(y0 + 0.5)));
  const int py1 = std::min(height - 1, static_cast<int>(std::floor(y1 + 0.5)));
  const Polygon2 poly(quad.begin(), quad.end());
  for (int y = py0; y <= py1; ++y) {
    const Polygon2 row = clip_axis(clip_axis(poly, 1, y - 0.5, -1.0), 1, y + 0.5, 1.0);
    if (row.size() < 3) continue;
    for (int x = px0; x <= px1; ++x) {
      const Polygon2 cell = clip_axis(clip_axis(row, 0, x - 0.5, -1.0), 0, x + 0.5, 1.0);
      if (cell.size() < 3) continue;
      img[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
          static_cast<std::size_t>(x)] += weight * polygon_area(cell);
    }
  }
}

}  // namespace

std::vector<double> Renderer::render_clean(std::span<const MarkerPlacement> placements,
                                           const MarkerDictionary& dict) const {
  std::vector<double> img(static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_),
                          kBackgroundIntensity);
  const int n = dict.n();
  const int cells = n + 2;
  for (const auto& m : placements) {
    if (m.id < 0 || static_cast<std::size_t>(m.id) >= dict.size()) {
      throw param_error("placement id " + std::to_string(m.id) + " not in dictionary");
    }
    // Projected raster lattice: (cells + 1)^2 points spanning the marker.
    const Eigen::Vector3d du = (m.corners[1] - m.corners[0]) / cells;
    const Eigen::Vector3d dv = (m.corners[3] - m.corners[0]) / cells;
    std::vector<Eigen::Vector2d> grid(static_cast<std::size_t>((cells + 1) * (cells + 1)));
    for (int j = 0; j <= cells; ++j) {
      for (int i = 0; i <= cells; ++i) {
        try {
          grid[static_cast<std::size_t>(j * (cells + 1) + i)] =
              project(m.corners[0] + i * du + j * dv, Pose{}, camera_.intrinsics,
                      camera_.distortion);
        } catch (const Error& e) {
          throw Error(ErrorKind::kProjection, "marker " + std::to_string(m.id) + ": " + e.what());
        }
      }
    }
    const auto at = [&](int i, int j) { return grid[static_cast<std::size_t>(j * (cells + 1) + i)]; };
    const auto cell_quad = [&](int i0, int j0, int i1, int j1) {
      return std::array<Eigen::Vector2d, 4>{at(i0, j0), at(i1, j0), at(i1, j1), at(i0, j1)};
    };

    // The whole marker goes down black; white cells are then lifted to white.
    // Both steps add exact coverage, so shared pixel edges composite correctly.
    for (int j = 0; j < cells; ++j) {
      for (int i = 0; i < cells; ++i) {
        accumulate_quad(img, width_, height_, cell_quad(i, j, i + 1, j + 1),
                        kBlackIntensity - kBackgroundIntensity);
      }
    }
    const MarkerCode& code = dict.code(static_cast<std::size_t>(m.id));
    for (int row = 0; row < n; ++row) {
      for (int col = 0; col < n; ++col) {
        if (code.get(row, col)) continue;
        accumulate_quad(img, width_, height_, cell_quad(col + 1, row + 1, col + 2, row + 2),
                        kWhiteIntensity - kBlackIntensity);
      }
    }
  }
  return img;
}

GrayImage quantize_with_noise(std::span<const double> clean, int width, int height, double sigma,
                              std::uint64_t seed, std::uint64_t frame) {
  if (clean.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw Error(ErrorKind::kMalformedInput, "clean buffer does not match image size");
  }
  std::vector<std::uint8_t> px(clean.size());
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(frame), static_cast<std::uint32_t>(frame >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1.0);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    double v = clean[i];
    if (sigma > 0.0) v += noise(rng);
    px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
  }
  return GrayImage(width, height, std::move(px));
}

GrayImage render(const SceneConfig& scene, std::span<const MarkerPlacement> placements,
                 const MarkerDictionary& dict, std::uint64_t seed) {
  scene.validate();
  const Renderer renderer(scene.camera, scene.image_w, scene.image_h);
  const auto clean = renderer.render_clean(placements, dict);
  return quantize_with_noise(clean, scene.image_w, scene.image_h, scene.noise_sigma, seed, 0);
}

std::vector<double> default_protocol_steps() { return {0.0, 0.4, 0.8, 1.2, 1.6, 2.0}; }

void run_protocol(const SceneConfig& scene, std::span<const double> steps, int frames_per_step,
                  std::uint64_t seed, const MarkerDictionary& dict,
                  const std::function<void(const ProtocolFrame&)>& sink) {
  scene.validate();
  if (steps.empty() || steps.front() != 0.0) throw param_error("protocol steps must start at 0");
  for (std::size_t i = 1; i < steps.size(); ++i) {
    if (steps[i] < steps[i - 1]) throw param_error("protocol steps must be non-decreasing");
  }
  if (frames_per_step < 1) throw param_error("frames per step must be >= 1");
  if (static_cast<std::size_t>(scene.grid) * static_cast<std::size_t>(scene.grid) > dict.size()) {
    throw param_error("dictionary has fewer codes than grid markers");
  }

  const GelDome dome = scene.dome();
  const auto base = place_markers(dome, scene.grid, scene.pitch_mm, scene.marker_size_mm);
  const Renderer renderer(scene.camera, scene.image_w, scene.image_h);
  std::int64_t frame = 0;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const Indentation ind = indent(base, dome, steps[k], scene.spread_factor);
    const auto clean = renderer.render_clean(ind.placements, dict);
    for (int f = 0; f < frames_per_step; ++f, ++frame) {
      const GrayImage img = quantize_with_noise(clean, scene.image_w, scene.image_h,
                                                scene.noise_sigma, seed,
                                                static_cast<std::uint64_t>(frame));
      sink({frame, static_cast<int>(k), steps[k], &img, &ind.truth});
    }
  }
}

std::vector<CalibrationView> synthetic_calibration_views(const CameraModel& camera, int width,
                                                         int height, int count, double noise_px,
                                                         std::uint64_t seed) {
  if (count < 1) throw param_error("view count must be >= 1");
  const auto board = checkerboard_corners();
  const Eigen::Vector2d board_center = 0.5 * (board.front() + board.back());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, noise_px > 0.0 ? noise_px : 1.0);
  const double pi = std::acos(-1.0);

  std::vector<CalibrationView> views;
  int attempts = 0;
  while (static_cast<int>(views.size()) < count) {
    if (++attempts > 1000 * count) {
      throw Error(ErrorKind::kGeneration, "could not place calibration views inside the image");
    }
    const double tilt = unit(rng) * pi / 4.0;
    const double azimuth = unit(rng) * 2.0 * pi;
    const double spin = unit(rng) * 2.0 * pi;
    const double depth = 35.0 + 30.0 * unit(rng);
    const Eigen::Matrix3d rot =
        (Eigen::AngleAxisd(tilt, Eigen::Vector3d(std::cos(azimuth), std::sin(azimuth), 0.0)) *
         Eigen::AngleAxisd(spin, Eigen::Vector3d::UnitZ()))
            .toRotationMatrix();
    const Eigen::Vector2d target((unit(rng) - 0.5) * 0.5 * width, (unit(rng) - 0.5) * 0.5 * height);
    const Eigen::Vector3d center(target.x() / camera.intrinsics.fx * depth,
                                 target.y() / camera.intrinsics.fy * depth, depth);
    const Pose pose{rot, center - rot * Eigen::Vector3d(board_center.x(), board_center.y(), 0.0)};

    CalibrationView view;
    bool ok = true;
    for (const auto& b : board) {
      const Eigen::Vector3d cam_pt = pose.transform({b.x(), b.y(), 0.0});
      const Eigen::Vector2d m(cam_pt.x() / cam_pt.z(), cam_pt.y() / cam_pt.z());
      if (m.norm() > 0.9 * Distortion::kWorkingRadius) {
        ok = false;
        break;
      }
      Eigen::Vector2d px = project({b.x(), b.y(), 0.0}, pose, camera.intrinsics, camera.distortion);
      if (noise_px > 0.0) px += Eigen::Vector2d(noise(rng), noise(rng));
      if (px.x() < 0.0 || px.y() < 0.0 || px.x() > width - 1.0 || px.y() > height - 1.0) {
        ok = false;
        break;
      }
      view.board_pts.push_back(b);
      view.image_pts.push_back(px);
    }
    if (ok) views.push_back(std::move(view));
  }
  return views;
}

void write_truth_csv_header(std::ostream& out) {
  out << "frame,id,true_dx_mm,true_dy_mm,true_dz_mm\n";
}

void write_truth_csv_rows(std::ostream& out, std::int64_t frame,
                          std::span<const MarkerTruth> truth) {
  for (const auto& t : truth) {
    const Eigen::Vector3d d = t.delta();
    out << frame << ',' << t.id << ',' << format_fixed(d.x(), 6) << ',' << format_fixed(d.y(), 6)
        << ',' << format_fixed(d.z(), 6) << '\n';
  }
}

}  // namespace qsts
