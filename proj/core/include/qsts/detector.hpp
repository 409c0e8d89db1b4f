#pragma once

// Frame-level marker detection: quad candidates from adaptive thresholding
// and border following, perspective removal, bit sampling and dictionary
// lookup.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "qsts/dictionary.hpp"
#include "qsts/imaging.hpp"

namespace qsts {

using Quad = std::array<Eigen::Vector2d, 4>;

struct DetectorParams {
  int threshold_window = 23;
  double threshold_offset = 7.0;
  double min_perimeter_px = 40.0;
  double max_perimeter_px = 4000.0;
  double min_corner_separation_px = 10.0;
  /// Douglas-Peucker tolerance as a fraction of the contour perimeter.
  double polygon_epsilon_ratio = 0.03;
  /// Fit each quad side to sub-pixel edge locations and intersect the lines.
  bool subpixel_edges = true;
  /// Optional gradient-based corner refinement on top of the edge fit.
  bool refine_corners = false;
  int cell_px = 8;
  /// Payload bits per side; detect_frame takes it from the dictionary.
  int payload_bits = 4;
  double border_black_fraction = 0.9;
  int max_corrections = 0;
};

/// Convex quad with corners in counter-clockwise order in image coordinates,
/// i.e. positive shoelace area with y pointing down (screen order top-left,
/// top-right, bottom-right, bottom-left for an upright square).
struct CandidateQuad {
  Quad corners;
};

struct DetectedMarker {
  int id = 0;
  /// corners[0] is the marker's own top-left corner; same winding as
  /// CandidateQuad.
  Quad corners;
  int rotation = 0;
  int hamming_distance = 0;
};

struct BitSample {
  MarkerCode code;
  bool border_ok = false;
};

double signed_area(const Quad& q);
bool is_convex(const Quad& q);

std::vector<CandidateQuad> find_candidates(const GrayImage& gray,
                                           const DetectorParams& params = {});

/// Resamples the quad onto a ((n + 2) * cell_px)^2 canonical square with the
/// quad's corner 0 at the top-left. Returns nullopt for degenerate quads.
std::optional<GrayImage> unwarp(const GrayImage& gray, const CandidateQuad& quad,
                                int cell_px = 8, int n = 4);

/// Otsu-binarizes the canonical image and lets each cell vote by majority of
/// its interior pixels.
BitSample sample_bits(const GrayImage& canonical, int n = 4,
                      double border_black_fraction = 0.9);

/// Iterative gradient-orthogonality corner refinement in a 5x5 window.
Quad refine_corners_gradient(const GrayImage& gray, const Quad& corners);

/// Full pipeline. At most one detection per ID, sorted by ID.
std::vector<DetectedMarker> detect_frame(const GrayImage& gray, const MarkerDictionary& dict,
                                         const DetectorParams& params = {});

/// `frame,id,rotation,hamming,c0x,c0y,...,c3y` with 4 decimals.
void write_detection_csv_header(std::ostream& out);
void write_detection_csv_rows(std::ostream& out, std::int64_t frame,
                              const std::vector<DetectedMarker>& detections);

}  // namespace qsts
