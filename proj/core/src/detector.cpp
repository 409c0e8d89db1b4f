#include "qsts/detector.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>

#include <Eigen/Eigenvalues>

#include "qsts/error.hpp"
#include "qsts/geometry.hpp"
#include "qsts/text_io.hpp"

namespace qsts {

namespace {

struct Line {
  Eigen::Vector2d point;
  Eigen::Vector2d direction;  // unit
};

std::optional<Eigen::Vector2d> intersect(const Line& a, const Line& b) {
  Eigen::Matrix2d M;
  M << a.direction, -b.direction;
  if (std::abs(M.determinant()) < 1e-9) return std::nullopt;
  const Eigen::Vector2d st = M.partialPivLu().solve(b.point - a.point);
  return a.point + st(0) * a.direction;
}

std::optional<Line> fit_line(const std::vector<Eigen::Vector2d>& pts) {
  if (pts.size() < 3) return std::nullopt;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : pts) cov += (p - mean) * (p - mean).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  return Line{mean, eig.eigenvectors().col(1).normalized()};
}

// Locates one quad side to sub-pixel accuracy. Along normals sampled over the
// middle of the side, the edge offset is recovered from the integral of the
// normalized intensity profile, which is exact for a blurred step edge.
std::optional<Line> fit_side(const GrayImage& gray, const Eigen::Vector2d& a,
                             const Eigen::Vector2d& b, double requested_half_width) {
  const Eigen::Vector2d ab = b - a;
  const double len = ab.norm();
  if (len < 4.0) return std::nullopt;
  const Eigen::Vector2d dir = ab / len;
  const Eigen::Vector2d inward(-dir.y(), dir.x());

  constexpr double kNominalStep = 0.25;
  const int steps = std::max(8, static_cast<int>(std::round(2.0 * requested_half_width / kNominalStep)));
  const double half_width = 0.5 * steps * kNominalStep;
  constexpr double kStep = kNominalStep;
  const int plateau = std::max(2, steps / 8);
  std::vector<double> profile(static_cast<std::size_t>(steps + 1));

  std::vector<Eigen::Vector2d> edge_points;
  const int samples = std::max(5, static_cast<int>(len * 0.6));
  for (int k = 0; k < samples; ++k) {
    const double t = 0.2 + 0.6 * (k + 0.5) / samples;
    const Eigen::Vector2d base = a + t * ab;
    for (int i = 0; i <= steps; ++i) {
      const Eigen::Vector2d p = base + (-half_width + i * kStep) * inward;
      profile[static_cast<std::size_t>(i)] = gray.sample(p.x(), p.y());
    }
    double light = 0.0;
    double dark = 0.0;
    for (int i = 0; i < plateau; ++i) {
      light += profile[static_cast<std::size_t>(i)];
      dark += profile[static_cast<std::size_t>(steps - i)];
    }
    light /= plateau;
    dark /= plateau;
    const double contrast = light - dark;
    if (contrast < 20.0) continue;
    // Trapezoid integral of the darkness fraction over [-w, w].
    double area = 0.0;
    for (int i = 0; i < steps; ++i) {
      const double f0 = (light - profile[static_cast<std::size_t>(i)]) / contrast;
      const double f1 = (light - profile[static_cast<std::size_t>(i + 1)]) / contrast;
      area += 0.5 * (f0 + f1) * kStep;
    }
    const double offset = half_width - area;
    if (std::abs(offset) > half_width) continue;
    edge_points.push_back(base + offset * inward);
  }
  if (edge_points.size() < static_cast<std::size_t>(std::max(3, samples / 2))) {
    return std::nullopt;
  }
  auto line = fit_line(edge_points);
  if (line && line->direction.dot(dir) < 0.0) line->direction = -line->direction;
  return line;
}

std::optional<Quad> refine_edges(const GrayImage& gray, const Quad& corners, int cells) {
  Quad cur = corners;
  for (int pass = 0; pass < 2; ++pass) {
    double mean_side = 0.0;
    for (int i = 0; i < 4; ++i) mean_side += (cur[(i + 1) % 4] - cur[i]).norm();
    mean_side /= 4.0;
    const double half_width = std::clamp(0.5 * mean_side / cells, 1.5, 4.0);

    std::array<Line, 4> lines;
    for (int i = 0; i < 4; ++i) {
      const auto line = fit_side(gray, cur[i], cur[(i + 1) % 4], half_width);
      if (!line) return std::nullopt;
      lines[i] = *line;
    }
    Quad next;
    for (int i = 0; i < 4; ++i) {
      const auto p = intersect(lines[(i + 3) % 4], lines[i]);
      if (!p) return std::nullopt;
      next[i] = *p;
    }
    for (int i = 0; i < 4; ++i) {
      if ((next[i] - cur[i]).norm() > 0.35 * mean_side) return std::nullopt;
    }
    cur = next;
  }
  return cur;
}

bool point_in_convex_quad(const Quad& q, const Eigen::Vector2d& p) {
  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector2d e = q[(i + 1) % 4] - q[i];
    const Eigen::Vector2d v = p - q[i];
    if (e.x() * v.y() - e.y() * v.x() <= 0.0) return false;
  }
  return true;
}

double min_corner_separation(const Quad& q) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) best = std::min(best, (q[i] - q[j]).norm());
  }
  return best;
}

int otsu_threshold(const GrayImage& img) {
  std::array<double, 256> hist{};
  for (std::uint8_t v : img.data()) hist[v] += 1.0;
  const double total = static_cast<double>(img.data().size());
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[static_cast<std::size_t>(i)];
  double w0 = 0.0;
  double sum0 = 0.0;
  double best_var = 0.0;
  int best = -1;  // no pixel is dark
  for (int t = 0; t < 256; ++t) {
    w0 += hist[static_cast<std::size_t>(t)];
    sum0 += t * hist[static_cast<std::size_t>(t)];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double var = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (var > best_var) {
      best_var = var;
      best = t;
    }
  }
  return best;
}

}  // namespace

double signed_area(const Quad& q) {
  double a = 0.0;
  for (int i = 0; i < 4; ++i) {
    const auto& p = q[i];
    const auto& n = q[(i + 1) % 4];
    a += p.x() * n.y() - n.x() * p.y();
  }
  return 0.5 * a;
}

bool is_convex(const Quad& q) {
  int sign = 0;
  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector2d e0 = q[(i + 1) % 4] - q[i];
    const Eigen::Vector2d e1 = q[(i + 2) % 4] - q[(i + 1) % 4];
    const double cross = e0.x() * e1.y() - e0.y() * e1.x();
    if (cross == 0.0) return false;
    const int s = cross > 0.0 ? 1 : -1;
    if (sign == 0) sign = s;
    if (s != sign) return false;
  }
  return true;
}

std::vector<CandidateQuad> find_candidates(const GrayImage& gray, const DetectorParams& params) {
  std::vector<CandidateQuad> out;
  if (gray.empty()) return out;
  const int window = std::min(params.threshold_window,
                              (std::min(gray.width(), gray.height()) - 1) | 1);
  if (window < 3) return out;
  const BinaryImage bin = adaptive_threshold(gray, window, params.threshold_offset);
  const int cells = params.payload_bits + 2;

  for (const Contour& contour : trace_contours(bin)) {
    const double perimeter = contour.perimeter();
    if (perimeter < params.min_perimeter_px || perimeter > params.max_perimeter_px) continue;
    const Polygon poly = approx_polygon(contour, params.polygon_epsilon_ratio * perimeter);
    if (poly.vertices.size() != 4) continue;

    Quad q;
    for (int i = 0; i < 4; ++i) {
      q[i] = Eigen::Vector2d(poly.vertices[static_cast<std::size_t>(i)].x,
                             poly.vertices[static_cast<std::size_t>(i)].y);
    }
    if (!is_convex(q)) continue;
    if (signed_area(q) < 0.0) std::swap(q[1], q[3]);
    if (min_corner_separation(q) < params.min_corner_separation_px) continue;

    if (params.subpixel_edges) {
      const auto refined = refine_edges(gray, q, cells);
      if (!refined) continue;
      q = *refined;
    }
    if (params.refine_corners) q = refine_corners_gradient(gray, q);
    if (!is_convex(q) || signed_area(q) <= 0.0) continue;
    if (min_corner_separation(q) < params.min_corner_separation_px) continue;
    out.push_back({q});
  }

  // Drop quads nested inside another (payload blocks inside a marker).
  std::vector<bool> nested(out.size(), false);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = 0; j < out.size() && !nested[i]; ++j) {
      if (i == j || signed_area(out[j].corners) <= signed_area(out[i].corners)) continue;
      nested[i] = std::all_of(out[i].corners.begin(), out[i].corners.end(),
                              [&](const Eigen::Vector2d& p) {
                                return point_in_convex_quad(out[j].corners, p);
                              });
    }
  }
  std::vector<CandidateQuad> kept;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!nested[i]) kept.push_back(out[i]);
  }
  return kept;
}

std::optional<GrayImage> unwarp(const GrayImage& gray, const CandidateQuad& quad, int cell_px,
                                int n) {
  if (cell_px < 4) throw Error(ErrorKind::kParameter, "unwarp: cell_px must be >= 4");
  const int side = (n + 2) * cell_px;
  const std::array<Eigen::Vector2d, 4> canonical{
      Eigen::Vector2d(0, 0), Eigen::Vector2d(side, 0), Eigen::Vector2d(side, side),
      Eigen::Vector2d(0, side)};
  Homography to_image;
  try {
    to_image = dlt_homography(canonical, quad.corners);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kDegenerate) return std::nullopt;
    throw;
  }
  GrayImage out(side, side);
  for (int v = 0; v < side; ++v) {
    for (int u = 0; u < side; ++u) {
      const Eigen::Vector2d p = to_image.apply({u + 0.5, v + 0.5});
      out.at(u, v) = static_cast<std::uint8_t>(
          std::clamp(std::lround(gray.sample(p.x(), p.y())), 0L, 255L));
    }
  }
  return out;
}

BitSample sample_bits(const GrayImage& canonical, int n, double border_black_fraction) {
  const int cells = n + 2;
  const int cell_px = canonical.width() / cells;
  BitSample out{MarkerCode(n), false};
  if (cell_px < 1) return out;

  auto [lo, hi] = std::minmax_element(canonical.data().begin(), canonical.data().end());
  const bool has_contrast = (*hi - *lo) >= 20;
  const int threshold = otsu_threshold(canonical);
  const int margin = cell_px / 4;

  int border_cells = 0;
  int border_black = 0;
  for (int cy = 0; cy < cells; ++cy) {
    for (int cx = 0; cx < cells; ++cx) {
      int dark = 0;
      int total = 0;
      for (int y = cy * cell_px + margin; y < (cy + 1) * cell_px - margin; ++y) {
        for (int x = cx * cell_px + margin; x < (cx + 1) * cell_px - margin; ++x) {
          dark += canonical.at(x, y) <= threshold ? 1 : 0;
          ++total;
        }
      }
      const bool black = 2 * dark > total;
      const bool border = cx == 0 || cy == 0 || cx == cells - 1 || cy == cells - 1;
      if (border) {
        ++border_cells;
        border_black += black ? 1 : 0;
      } else {
        out.code.set(cy - 1, cx - 1, black);
      }
    }
  }
  out.border_ok = has_contrast && border_black >= border_black_fraction * border_cells;
  return out;
}

Quad refine_corners_gradient(const GrayImage& gray, const Quad& corners) {
  Quad out = corners;
  constexpr int kHalf = 2;
  for (auto& q : out) {
    for (int iter = 0; iter < 20; ++iter) {
      Eigen::Matrix2d G = Eigen::Matrix2d::Zero();
      Eigen::Vector2d b = Eigen::Vector2d::Zero();
      for (int dy = -kHalf; dy <= kHalf; ++dy) {
        for (int dx = -kHalf; dx <= kHalf; ++dx) {
          const Eigen::Vector2d p = q + Eigen::Vector2d(dx, dy);
          const Eigen::Vector2d g(
              0.5 * (gray.sample(p.x() + 1, p.y()) - gray.sample(p.x() - 1, p.y())),
              0.5 * (gray.sample(p.x(), p.y() + 1) - gray.sample(p.x(), p.y() - 1)));
          const Eigen::Matrix2d gg = g * g.transpose();
          G += gg;
          b += gg * p;
        }
      }
      if (std::abs(G.determinant()) < 1e-6) break;
      const Eigen::Vector2d next = G.ldlt().solve(b);
      const double move = (next - q).norm();
      if (!next.allFinite() || (next - corners[&q - out.data()]).norm() > kHalf) break;
      q = next;
      if (move < 1e-3) break;
    }
  }
  return out;
}

std::vector<DetectedMarker> detect_frame(const GrayImage& gray, const MarkerDictionary& dict,
                                         const DetectorParams& params) {
  DetectorParams local = params;
  local.payload_bits = dict.n();
  std::map<int, std::pair<DetectedMarker, double>> best;  // id -> (marker, area)
  for (const CandidateQuad& cand : find_candidates(gray, local)) {
    const auto canonical = unwarp(gray, cand, params.cell_px, dict.n());
    if (!canonical) continue;
    const BitSample bits = sample_bits(*canonical, dict.n(), params.border_black_fraction);
    if (!bits.border_ok) continue;
    const auto m = match(bits.code, dict, params.max_corrections);
    if (!m) continue;

    DetectedMarker det;
    det.id = m->id;
    det.rotation = m->rotation;
    det.hamming_distance = m->distance;
    for (int k = 0; k < 4; ++k) det.corners[k] = cand.corners[(k + m->rotation) % 4];
    const double area = signed_area(cand.corners);

    auto it = best.find(det.id);
    if (it == best.end()) {
      best.emplace(det.id, std::make_pair(det, area));
    } else if (det.hamming_distance < it->second.first.hamming_distance ||
               (det.hamming_distance == it->second.first.hamming_distance &&
                area > it->second.second)) {
      it->second = {det, area};
    }
  }
  std::vector<DetectedMarker> out;
  out.reserve(best.size());
  for (auto& [id, entry] : best) out.push_back(entry.first);
  return out;
}

void write_detection_csv_header(std::ostream& out) {
  out << "frame,id,rotation,hamming,c0x,c0y,c1x,c1y,c2x,c2y,c3x,c3y\n";
}

void write_detection_csv_rows(std::ostream& out, std::int64_t frame,
                              const std::vector<DetectedMarker>& detections) {
  for (const DetectedMarker& d : detections) {
    out << frame << ',' << d.id << ',' << d.rotation << ',' << d.hamming_distance;
    for (const auto& c : d.corners) {
      out << ',' << format_fixed(c.x(), 4) << ',' << format_fixed(c.y(), 4);
    }
    out << '\n';
  }
}

}  // namespace qsts
