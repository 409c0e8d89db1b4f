#pragma once

// Raster primitives: 8-bit grayscale frames, binarization, border following,
// polygon simplification and binary PGM persistence.
//
// Pixel coordinates follow the usual image convention: x grows rightward, y
// grows downward and the center of pixel (i, j) sits at (i, j).

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace qsts {

struct PixelPoint {
  int x = 0;
  int y = 0;

  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

class GrayImage {
 public:
  GrayImage() = default;
  /// Uniform image. Throws kParameter unless width, height >= 1.
  GrayImage(int width, int height, std::uint8_t fill = 0);
  /// Adopts row-major data; throws kMalformedInput on a size mismatch.
  GrayImage(int width, int height, std::vector<std::uint8_t> data);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  std::uint8_t at(int x, int y) const { return data_[index(x, y)]; }
  std::uint8_t& at(int x, int y) { return data_[index(x, y)]; }

  /// Edge-replicated read.
  std::uint8_t clamped(int x, int y) const;
  /// Bilinear interpolation with edge replication.
  double sample(double x, double y) const;

  std::span<const std::uint8_t> data() const { return data_; }
  std::span<std::uint8_t> data() { return data_; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

class BinaryImage {
 public:
  BinaryImage() = default;
  BinaryImage(int width, int height, bool fill = false);

  int width() const { return width_; }
  int height() const { return height_; }

  bool at(int x, int y) const { return data_[index(x, y)] != 0; }
  void set(int x, int y, bool v) { data_[index(x, y)] = v ? 1 : 0; }
  /// Out-of-range reads are background.
  bool get_or_false(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_ && at(x, y);
  }

  std::size_t count() const;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Closed outer boundary of one 8-connected foreground component.
struct Contour {
  std::vector<PixelPoint> points;

  double perimeter() const;
};

/// Interleaved 8-bit RGB to BT.601 luma. Throws kMalformedInput when
/// rgb.size() != 3 * width * height.
GrayImage to_grayscale(std::span<const std::uint8_t> rgb, int width, int height);

/// Local-mean thresholding: a pixel is foreground iff it is darker than the
/// mean of its window x window neighborhood (edge-replicated) minus offset_c.
BinaryImage adaptive_threshold(const GrayImage& img, int window, double offset_c);

/// Outer borders of all 8-connected foreground components, in raster order of
/// each component's first pixel. Components too small to form a closed
/// boundary of three or more pixels are skipped.
std::vector<Contour> trace_contours(const BinaryImage& bin);

/// Closed Douglas-Peucker simplification. The result is a subset of the
/// contour points; fewer than three vertices means the contour collapsed.
struct Polygon {
  std::vector<PixelPoint> vertices;

  bool degenerate() const { return vertices.size() < 3; }
};
Polygon approx_polygon(const Contour& contour, double epsilon);

GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const GrayImage& img, const std::filesystem::path& path);

/// Rotates an image by 90 degrees clockwise `quarter_turns` times.
GrayImage rotate90(const GrayImage& img, int quarter_turns);

}  // namespace qsts
