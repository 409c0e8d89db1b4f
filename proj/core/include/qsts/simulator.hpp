#pragma once

// Synthetic dome-gel sensor: cap geometry, marker layout, plate-clipping
// indentation, rendering and the stepped indentation protocol.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "qsts/calibration.hpp"
#include "qsts/dictionary.hpp"
#include "qsts/geometry.hpp"
#include "qsts/imaging.hpp"

namespace qsts {

inline constexpr double kBackgroundIntensity = 230.0;
inline constexpr double kBlackIntensity = 25.0;
inline constexpr double kWhiteIntensity = 230.0;

/// Spherical cap with its apex on the optical axis, farthest from the camera.
struct GelDome {
  double chord_width = 0.0;
  double cap_height = 0.0;
  double sphere_radius = 0.0;
  /// Base-plane center in the camera frame.
  Eigen::Vector3d center = Eigen::Vector3d::Zero();

  double apex_z() const { return center.z() + cap_height; }
  Eigen::Vector3d sphere_center() const;
  /// Surface z at radial offset (x, y); throws kParameter outside the chord.
  double surface_z(double x, double y) const;
};

GelDome build_dome(double w_s_mm, double t_s_mm, double standoff_mm);

/// Corners in detector order (marker top-left, top-right, bottom-right,
/// bottom-left). `normal` points from the surface toward the camera.
struct MarkerPlacement {
  int id = 0;
  std::array<Eigen::Vector3d, 4> corners;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d(0, 0, -1);

  /// Pose of the marker frame (x along corner 0->1, y along 0->3, origin at
  /// the center), i.e. what planar PnP recovers.
  Pose pose() const;
};

std::vector<MarkerPlacement> place_markers(const GelDome& dome, int count_per_side,
                                           double pitch_mm, double marker_size_mm);

/// Ground truth per marker: `displacement` is new - old center position.
struct MarkerTruth {
  int id = 0;
  Eigen::Vector3d displacement = Eigen::Vector3d::Zero();
  /// Same sign convention as deformation readings (old - new).
  Eigen::Vector3d delta() const { return -displacement; }
};

struct Indentation {
  std::vector<MarkerPlacement> placements;
  std::vector<MarkerTruth> truth;
};

/// Applies the clipping model to one surface point.
Eigen::Vector3d indent_point(const Eigen::Vector3d& p, const GelDome& dome, double plate_depth_mm,
                             double spread_factor);

/// Marker centers follow indent_point. Markers are treated as rigid printed
/// patches: one that touches the plate is laid flat against it, otherwise it
/// keeps its orientation.
Indentation indent(std::span<const MarkerPlacement> placements, const GelDome& dome,
                   double plate_depth_mm, double spread_factor);

struct SceneConfig {
  CameraModel camera{{1400.0, 1400.0, 640.0, 360.0}, {-0.05, 0.0, 0.0, 0.0, 0.0}};
  int image_w = 1280;
  int image_h = 720;
  double w_s_mm = 33.8;
  double t_s_mm = 4.5;
  double standoff_mm = 55.0;
  int grid = 5;
  double pitch_mm = 4.0;
  double marker_size_mm = 1.5;
  double plate_depth_mm = 0.0;
  double spread_factor = 0.2;
  double noise_sigma = 2.0;

  /// Throws kParameter on violated invariants.
  void validate() const;
  GelDome dome() const { return build_dome(w_s_mm, t_s_mm, standoff_mm); }
};

/// Flat key=value text; `calib=<path>` loads a camera file relative to the
/// config's directory. Unknown keys are format errors.
SceneConfig parse_scene_config(std::istream& in,
                               const std::filesystem::path& base_dir = {});
SceneConfig load_scene_config(const std::filesystem::path& path);
void write_scene_config(const SceneConfig& scene, std::ostream& out);

/// Renders noiseless marker scenes for a fixed camera. Each raster cell is
/// projected to an image quad and its exact area coverage of every pixel is
/// accumulated (box-filtered rendering).
class Renderer {
 public:
  Renderer(const CameraModel& camera, int width, int height);

  /// Intensities before noise and quantization. Throws kProjection when a
  /// marker corner is not in front of the camera.
  std::vector<double> render_clean(std::span<const MarkerPlacement> placements,
                                   const MarkerDictionary& dict) const;

  int width() const { return width_; }
  int height() const { return height_; }

 private:
  CameraModel camera_;
  int width_;
  int height_;
};

/// Adds N(0, sigma^2) noise from the (seed, frame) substream, rounds and
/// clamps to [0, 255].
GrayImage quantize_with_noise(std::span<const double> clean, int width, int height, double sigma,
                              std::uint64_t seed, std::uint64_t frame);

/// One noisy frame of `placements` (frame substream 0).
GrayImage render(const SceneConfig& scene, std::span<const MarkerPlacement> placements,
                 const MarkerDictionary& dict, std::uint64_t seed);

struct ProtocolFrame {
  std::int64_t frame = 0;
  int step = 0;
  double plate_depth_mm = 0.0;
  const GrayImage* image = nullptr;
  const std::vector<MarkerTruth>* truth = nullptr;
};

std::vector<double> default_protocol_steps();

/// Streams frames_per_step frames per step. Steps must start at 0 and be
/// non-decreasing (kParameter).
void run_protocol(const SceneConfig& scene, std::span<const double> steps, int frames_per_step,
                  std::uint64_t seed, const MarkerDictionary& dict,
                  const std::function<void(const ProtocolFrame&)>& sink);

/// Checkerboard corner correspondences seen through `camera` from `count`
/// random board poses (tilt up to 45 deg, 35-65 mm away), each fully inside
/// the image. Gaussian noise of `noise_px` is added to the image points.
std::vector<CalibrationView> synthetic_calibration_views(const CameraModel& camera, int width,
                                                         int height, int count, double noise_px,
                                                         std::uint64_t seed);

void write_truth_csv_header(std::ostream& out);
void write_truth_csv_rows(std::ostream& out, std::int64_t frame,
                          std::span<const MarkerTruth> truth);

}  // namespace qsts
