#include "qsts/imaging.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "qsts/error.hpp"

namespace qsts {

namespace {

// Moore neighborhood, clockwise on screen (y down) starting east.
constexpr std::array<PixelPoint, 8> kDirs{{
    {1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}}};

int dir_index(int dx, int dy) {
  for (int i = 0; i < 8; ++i) {
    if (kDirs[i].x == dx && kDirs[i].y == dy) return i;
  }
  return -1;
}

double segment_distance(const PixelPoint& p, const PixelPoint& a,
                        const PixelPoint& b) {
  const double vx = b.x - a.x;
  const double vy = b.y - a.y;
  const double wx = p.x - a.x;
  const double wy = p.y - a.y;
  const double len2 = vx * vx + vy * vy;
  if (len2 == 0.0) return std::hypot(wx, wy);
  const double t = std::clamp((wx * vx + wy * vy) / len2, 0.0, 1.0);
  return std::hypot(wx - t * vx, wy - t * vy);
}

// Douglas-Peucker on contour indices [first, last] (last may wrap past the
// end). Appends the kept interior indices, excluding both endpoints.
void simplify_chain(const std::vector<PixelPoint>& pts, std::size_t first,
                    std::size_t last, double epsilon,
                    std::vector<std::size_t>& kept) {
  const std::size_t n = pts.size();
  struct Span {
    std::size_t a, b;
  };
  std::vector<Span> stack{{first, last}};
  std::vector<std::size_t> out;
  while (!stack.empty()) {
    const Span s = stack.back();
    stack.pop_back();
    double best = -1.0;
    std::size_t best_i = s.a;
    for (std::size_t i = s.a + 1; i < s.b; ++i) {
      const double d = segment_distance(pts[i % n], pts[s.a % n], pts[s.b % n]);
      if (d > best) {
        best = d;
        best_i = i;
      }
    }
    if (best > epsilon) {
      out.push_back(best_i);
      stack.push_back({s.a, best_i});
      stack.push_back({best_i, s.b});
    }
  }
  std::sort(out.begin(), out.end());
  kept.insert(kept.end(), out.begin(), out.end());
}

void skip_pgm_space(std::istream& in) {
  while (true) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' ||
               c == '\f') {
      in.get();
    } else {
      return;
    }
  }
}

int read_pgm_int(std::istream& in, const std::filesystem::path& path) {
  skip_pgm_space(in);
  int value = 0;
  if (!(in >> value) || value < 0) {
    throw Error(ErrorKind::kFormat, "bad PGM header in " + path.string());
  }
  return value;
}

}  // namespace

GrayImage::GrayImage(int width, int height, std::uint8_t fill)
    : width_(width), height_(height) {
  if (width < 1 || height < 1) {
    throw Error(ErrorKind::kParameter, "image dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height),
               fill);
}

GrayImage::GrayImage(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (width < 1 || height < 1 ||
      data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw Error(ErrorKind::kMalformedInput, "image data does not match dimensions");
  }
}

std::uint8_t GrayImage::clamped(int x, int y) const {
  return at(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1));
}

double GrayImage::sample(double x, double y) const {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const double ax = x - fx;
  const double ay = y - fy;
  const double top = (1.0 - ax) * clamped(x0, y0) + ax * clamped(x0 + 1, y0);
  const double bottom = (1.0 - ax) * clamped(x0, y0 + 1) + ax * clamped(x0 + 1, y0 + 1);
  return (1.0 - ay) * top + ay * bottom;
}

BinaryImage::BinaryImage(int width, int height, bool fill)
    : width_(width), height_(height) {
  if (width < 1 || height < 1) {
    throw Error(ErrorKind::kParameter, "image dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height),
               fill ? 1 : 0);
}

std::size_t BinaryImage::count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), 1));
}

double Contour::perimeter() const {
  double total = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const PixelPoint& a = points[i];
    const PixelPoint& b = points[(i + 1) % points.size()];
    total += std::hypot(double(b.x - a.x), double(b.y - a.y));
  }
  return total;
}

GrayImage to_grayscale(std::span<const std::uint8_t> rgb, int width, int height) {
  if (width < 1 || height < 1 ||
      rgb.size() != 3 * static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw Error(ErrorKind::kMalformedInput, "RGB buffer does not match dimensions");
  }
  std::vector<std::uint8_t> out(rgb.size() / 3);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double luma =
        0.299 * rgb[3 * i] + 0.587 * rgb[3 * i + 1] + 0.114 * rgb[3 * i + 2];
    out[i] = static_cast<std::uint8_t>(std::clamp(std::lround(luma), 0L, 255L));
  }
  return GrayImage(width, height, std::move(out));
}

BinaryImage adaptive_threshold(const GrayImage& img, int window, double offset_c) {
  if (window < 3 || window % 2 == 0 || window > std::min(img.width(), img.height())) {
    throw Error(ErrorKind::kParameter,
                "threshold window must be odd, >= 3 and fit inside the image");
  }
  const int r = window / 2;
  const int w = img.width();
  const int h = img.height();
  const int pw = w + 2 * r;
  const int ph = h + 2 * r;

  // Integral image over the edge-replicated padding; row 0 / column 0 are zero.
  std::vector<std::uint32_t> integral(static_cast<std::size_t>(pw + 1) * (ph + 1), 0);
  auto I = [&](int x, int y) -> std::uint32_t& {
    return integral[static_cast<std::size_t>(y) * (pw + 1) + x];
  };
  for (int y = 0; y < ph; ++y) {
    std::uint32_t row = 0;
    for (int x = 0; x < pw; ++x) {
      row += img.clamped(x - r, y - r);
      I(x + 1, y + 1) = I(x + 1, y) + row;
    }
  }

  const double area = static_cast<double>(window) * window;
  BinaryImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Window over padded coordinates [x, x + window) x [y, y + window).
      const double sum = static_cast<double>(I(x + window, y + window)) -
                         I(x, y + window) - I(x + window, y) + I(x, y);
      if (img.at(x, y) < sum / area - offset_c) out.set(x, y, true);
    }
  }
  return out;
}

std::vector<Contour> trace_contours(const BinaryImage& bin) {
  const int w = bin.width();
  const int h = bin.height();
  std::vector<Contour> contours;
  if (w == 0 || h == 0) return contours;

  std::vector<int> label(static_cast<std::size_t>(w) * h, 0);
  auto lab = [&](int x, int y) -> int& {
    return label[static_cast<std::size_t>(y) * w + x];
  };
  std::vector<PixelPoint> queue;
  int next_label = 0;

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!bin.at(x, y) || lab(x, y) != 0) continue;

      // Flood-fill the component so later scan rows skip it.
      ++next_label;
      queue.assign(1, {x, y});
      lab(x, y) = next_label;
      for (std::size_t qi = 0; qi < queue.size(); ++qi) {
        const PixelPoint p = queue[qi];
        for (const PixelPoint& d : kDirs) {
          const int nx = p.x + d.x;
          const int ny = p.y + d.y;
          if (bin.get_or_false(nx, ny) && lab(nx, ny) == 0) {
            lab(nx, ny) = next_label;
            queue.push_back({nx, ny});
          }
        }
      }

      // Moore-neighbor border following from the top-left pixel, whose west
      // neighbor is background. Stops on re-entering the first move.
      const PixelPoint start{x, y};
      Contour contour;
      contour.points.push_back(start);
      PixelPoint cur = start;
      int back = 4;
      int first_move = -1;
      while (true) {
        int found = -1;
        for (int k = 1; k <= 8; ++k) {
          const int d = (back + k) % 8;
          if (bin.get_or_false(cur.x + kDirs[d].x, cur.y + kDirs[d].y)) {
            found = d;
            break;
          }
        }
        if (found < 0) break;  // isolated pixel
        if (cur == start) {
          if (first_move < 0) {
            first_move = found;
          } else if (found == first_move) {
            contour.points.pop_back();  // the closing return to start
            break;
          }
        }
        const PixelPoint prev_bg{cur.x + kDirs[(found + 7) % 8].x,
                                 cur.y + kDirs[(found + 7) % 8].y};
        const PixelPoint nxt{cur.x + kDirs[found].x, cur.y + kDirs[found].y};
        back = dir_index(prev_bg.x - nxt.x, prev_bg.y - nxt.y);
        cur = nxt;
        contour.points.push_back(cur);
      }
      if (contour.points.size() >= 3) contours.push_back(std::move(contour));
    }
  }
  return contours;
}

Polygon approx_polygon(const Contour& contour, double epsilon) {
  if (!(epsilon > 0.0)) {
    throw Error(ErrorKind::kParameter, "epsilon must be positive");
  }
  const auto& pts = contour.points;
  Polygon poly;
  if (pts.empty()) return poly;

  auto farthest_from = [&](std::size_t ref) {
    std::size_t best = ref;
    double best_d = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double d = std::hypot(double(pts[i].x - pts[ref].x),
                                  double(pts[i].y - pts[ref].y));
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  };
  // Anchor on an approximate diameter so the split is stable.
  std::size_t a = farthest_from(0);
  std::size_t b = farthest_from(a);
  if (a == b) {
    poly.vertices.push_back(pts[a]);
    return poly;
  }
  if (a > b) std::swap(a, b);

  std::vector<std::size_t> kept{a};
  simplify_chain(pts, a, b, epsilon, kept);
  kept.push_back(b);
  simplify_chain(pts, b, a + pts.size(), epsilon, kept);

  for (std::size_t i : kept) poly.vertices.push_back(pts[i % pts.size()]);
  return poly;
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '5') {
    throw Error(ErrorKind::kFormat, "not a binary PGM (P5): " + path.string());
  }
  const int width = read_pgm_int(in, path);
  const int height = read_pgm_int(in, path);
  const int maxval = read_pgm_int(in, path);
  if (maxval != 255) {
    throw Error(ErrorKind::kFormat, "PGM maxval must be 255: " + path.string());
  }
  if (width < 1 || height < 1) {
    throw Error(ErrorKind::kFormat, "PGM has empty dimensions: " + path.string());
  }
  const int sep = in.get();
  if (sep == EOF || !std::isspace(sep)) {
    throw Error(ErrorKind::kFormat, "missing PGM header terminator: " + path.string());
  }
  std::vector<std::uint8_t> data(static_cast<std::size_t>(width) * height);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (in.gcount() != static_cast<std::streamsize>(data.size())) {
    throw Error(ErrorKind::kFormat, "truncated PGM payload: " + path.string());
  }
  return GrayImage(width, height, std::move(data));
}

void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  const auto data = img.data();
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

GrayImage rotate90(const GrayImage& img, int quarter_turns) {
  const int turns = ((quarter_turns % 4) + 4) % 4;
  GrayImage cur = img;
  for (int t = 0; t < turns; ++t) {
    GrayImage next(cur.height(), cur.width());
    for (int y = 0; y < cur.height(); ++y) {
      for (int x = 0; x < cur.width(); ++x) {
        next.at(cur.height() - 1 - y, x) = cur.at(x, y);
      }
    }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace qsts
