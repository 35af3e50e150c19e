#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "descsel/core.hpp"
#include "descsel/io.hpp"
#include "descsel/metrics.hpp"

namespace descsel {

/// Binary image, row-major, (0,0) at the top-left. Nonzero is foreground.
class Mask {
 public:
  Mask() = default;
  Mask(int width, int height) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) throw ContractError("mask dimensions must be positive");
    pixels_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  bool in_bounds(int x, int y) const noexcept { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  /// Out-of-bounds reads are background.
  bool at(int x, int y) const noexcept {
    return in_bounds(x, y) && pixels_[static_cast<std::size_t>(y) * width_ + x] != 0;
  }

  void set(int x, int y, bool on = true) {
    if (!in_bounds(x, y)) throw ContractError("mask pixel out of bounds");
    pixels_[static_cast<std::size_t>(y) * width_ + x] = on ? 1 : 0;
  }

  std::size_t count() const noexcept {
    return static_cast<std::size_t>(std::count(pixels_.begin(), pixels_.end(), std::uint8_t{1}));
  }

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Inclusive pixel bounds.
struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  long long area() const noexcept {
    return static_cast<long long>(x1 - x0 + 1) * static_cast<long long>(y1 - y0 + 1);
  }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct ShapeFeatures {
  std::size_t area = 0;
  double perimeter = 0.0;
  BoundingBox bbox;
  double roundness = 0.0;
  double rectangularity = 0.0;
};

struct ShapeOptions {
  bool largest_component = false;
};

namespace detail {

// Moore neighbourhood, clockwise with y pointing down, starting west.
inline constexpr std::array<int, 8> kDx{-1, -1, 0, 1, 1, 1, 0, -1};
inline constexpr std::array<int, 8> kDy{0, -1, -1, -1, 0, 1, 1, 1};

inline int direction_of(int dx, int dy) {
  for (int d = 0; d < 8; ++d) {
    if (kDx[d] == dx && kDy[d] == dy) return d;
  }
  throw std::logic_error("contour tracer: offset is not a neighbour");
}

/// Component id per pixel (-1 background) and the pixel count of each
/// 8-connected component, numbered in raster order of their first pixel.
struct Components {
  std::vector<int> id;
  std::vector<std::size_t> sizes;
};

inline Components label_components(const Mask& m) {
  Components c;
  c.id.assign(static_cast<std::size_t>(m.width()) * m.height(), -1);
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      const auto at = static_cast<std::size_t>(y) * m.width() + x;
      if (!m.at(x, y) || c.id[at] >= 0) continue;
      const int label = static_cast<int>(c.sizes.size());
      c.sizes.push_back(0);
      c.id[at] = label;
      stack.emplace_back(x, y);
      while (!stack.empty()) {
        const auto [px, py] = stack.back();
        stack.pop_back();
        ++c.sizes.back();
        for (int d = 0; d < 8; ++d) {
          const int nx = px + kDx[d];
          const int ny = py + kDy[d];
          if (!m.at(nx, ny)) continue;
          const auto nat = static_cast<std::size_t>(ny) * m.width() + nx;
          if (c.id[nat] >= 0) continue;
          c.id[nat] = label;
          stack.emplace_back(nx, ny);
        }
      }
    }
  }
  return c;
}

}  // namespace detail

inline std::size_t count_components(const Mask& m) { return detail::label_components(m).sizes.size(); }

/// Keeps only the largest 8-connected component (first in raster order on
/// ties).
inline Mask keep_largest_component(const Mask& m) {
  const auto comps = detail::label_components(m);
  if (comps.sizes.empty()) throw ContractError("mask has no foreground pixels");
  const auto best = static_cast<int>(std::max_element(comps.sizes.begin(), comps.sizes.end()) - comps.sizes.begin());
  Mask out(m.width(), m.height());
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (comps.id[static_cast<std::size_t>(y) * m.width() + x] == best) out.set(x, y);
    }
  }
  return out;
}

inline BoundingBox tight_bbox(const Mask& m) {
  BoundingBox b{m.width(), m.height(), -1, -1};
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (!m.at(x, y)) continue;
      b.x0 = std::min(b.x0, x);
      b.y0 = std::min(b.y0, y);
      b.x1 = std::max(b.x1, x);
      b.y1 = std::max(b.y1, y);
    }
  }
  if (b.x1 < 0) throw ContractError("mask has no foreground pixels");
  return b;
}

/// Length of the outer boundary of the component containing the first
/// foreground pixel in raster order, traced through the Moore neighbourhood.
/// Axial steps count 1, diagonal steps sqrt(2). Holes do not contribute.
inline double outer_contour_length(const Mask& m) {
  int sx = -1, sy = -1;
  for (int y = 0; y < m.height() && sx < 0; ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (m.at(x, y)) {
        sx = x;
        sy = y;
        break;
      }
    }
  }
  if (sx < 0) throw ContractError("mask has no foreground pixels");

  struct Step {
    int x, y, dir, back;
  };
  // From (x, y) with its backtrack neighbour in direction `back`, scan
  // clockwise for the next foreground neighbour.
  auto next = [&](int x, int y, int back) -> Step {
    for (int k = 1; k <= 8; ++k) {
      const int d = (back + k) % 8;
      const int nx = x + detail::kDx[d];
      const int ny = y + detail::kDy[d];
      if (!m.at(nx, ny)) continue;
      const int pd = (d + 7) % 8;
      const int bx = x + detail::kDx[pd];
      const int by = y + detail::kDy[pd];
      return {nx, ny, d, detail::direction_of(bx - nx, by - ny)};
    }
    return {x, y, -1, back};
  };

  // the pixel west of the raster-first pixel is always background
  const Step first = next(sx, sy, 0);
  if (first.dir < 0) return 0.0;

  std::size_t axial = 0, diagonal = 0;
  (first.dir % 2 == 1 ? diagonal : axial) += 1;
  Step cur = first;
  const std::size_t limit = 8 * m.count() + 8;
  for (std::size_t guard = 0;; ++guard) {
    if (guard > limit) throw std::logic_error("contour tracer did not terminate");
    const Step s = next(cur.x, cur.y, cur.back);
    if (cur.x == sx && cur.y == sy && s.x == first.x && s.y == first.y) break;
    (s.dir % 2 == 1 ? diagonal : axial) += 1;
    cur = s;
  }
  return static_cast<double>(axial) + static_cast<double>(diagonal) * std::numbers::sqrt2;
}

/// Area, contour perimeter, bounding box, roundness 4*pi*A/P^2 and
/// rectangularity A/A_bb of a single-component mask.
inline ShapeFeatures shape_features(const Mask& input, const ShapeOptions& opts = {}) {
  const auto comps = detail::label_components(input);
  if (comps.sizes.empty()) throw ContractError("mask has no foreground pixels");
  Mask kept;
  const Mask* m = &input;
  if (comps.sizes.size() > 1) {
    if (!opts.largest_component) {
      throw ContractError("mask has " + std::to_string(comps.sizes.size()) + " 8-connected components");
    }
    kept = keep_largest_component(input);
    m = &kept;
  }
  ShapeFeatures f;
  f.area = m->count();
  f.bbox = tight_bbox(*m);
  f.perimeter = outer_contour_length(*m);
  if (f.perimeter == 0.0) throw ContractError("mask contour has zero length; roundness is undefined");
  const double a = static_cast<double>(f.area);
  f.roundness = 4.0 * std::numbers::pi * a / (f.perimeter * f.perimeter);
  f.rectangularity = a / static_cast<double>(f.bbox.area());
  return f;
}

/// Tight bounding box grown by `margin` on every side and clamped to the image.
inline BoundingBox crop_bbox_with_margin(const Mask& m, int margin) {
  if (margin < 0) throw ContractError("margin must be non-negative");
  auto b = tight_bbox(m);
  b.x0 = std::max(0, b.x0 - margin);
  b.y0 = std::max(0, b.y0 - margin);
  b.x1 = std::min(m.width() - 1, b.x1 + margin);
  b.y1 = std::min(m.height() - 1, b.y1 + margin);
  return b;
}

/// Spearman correlation between a mask-derived feature and the similarity
/// values of one descriptor over the same images.
inline double shape_correlation(std::span<const double> features, std::span<const double> vlm_outputs) {
  return spearman(features, vlm_outputs);
}

namespace detail {

class PgmCursor {
 public:
  PgmCursor(const std::string& data, std::string where) : data_(data), where_(std::move(where)) {}

  void skip_space_and_comments() {
    while (pos_ < data_.size()) {
      const char c = data_[pos_];
      if (c == '#') {
        while (pos_ < data_.size() && data_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  long read_uint() {
    skip_space_and_comments();
    const auto start = pos_;
    long v = 0;
    while (pos_ < data_.size() && std::isdigit(static_cast<unsigned char>(data_[pos_]))) {
      v = v * 10 + (data_[pos_] - '0');
      if (v > 1'000'000'000L) fail("number too large");
      ++pos_;
    }
    if (pos_ == start) fail("expected an unsigned integer");
    return v;
  }

  std::string_view token(std::size_t n) {
    if (pos_ + n > data_.size()) fail("truncated file");
    auto out = std::string_view(data_).substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  void advance(std::size_t n) { pos_ += n; }
  unsigned char byte_at(std::size_t off) const { return static_cast<unsigned char>(data_[pos_ + off]); }

  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(where_ + ": " + msg); }

 private:
  const std::string& data_;
  std::string where_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Plain (P2) or raw (P5) PGM. Nonzero samples are foreground.
inline Mask parse_pgm(const std::string& data, const std::string& where = "<pgm>") {
  detail::PgmCursor cur(data, where);
  const auto magic = cur.token(2);
  if (magic != "P2" && magic != "P5") cur.fail("not a P2/P5 PGM file");
  const auto width = cur.read_uint();
  const auto height = cur.read_uint();
  const auto maxval = cur.read_uint();
  if (width <= 0 || height <= 0) cur.fail("invalid dimensions");
  if (maxval <= 0 || maxval > 65535) cur.fail("invalid maxval");
  Mask m(static_cast<int>(width), static_cast<int>(height));
  if (magic == "P2") {
    for (long y = 0; y < height; ++y) {
      for (long x = 0; x < width; ++x) {
        const auto v = cur.read_uint();
        if (v > maxval) cur.fail("sample exceeds maxval");
        if (v != 0) m.set(static_cast<int>(x), static_cast<int>(y));
      }
    }
    cur.skip_space_and_comments();
    if (cur.remaining() != 0) cur.fail("trailing data after pixel samples");
    return m;
  }
  // exactly one whitespace byte separates the header from raster data
  cur.token(1);
  const std::size_t bytes_per = maxval < 256 ? 1 : 2;
  const std::size_t need = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * bytes_per;
  if (cur.remaining() != need) cur.fail("raster size does not match header");
  for (long y = 0; y < height; ++y) {
    for (long x = 0; x < width; ++x) {
      const std::size_t off = (static_cast<std::size_t>(y) * width + x) * bytes_per;
      unsigned v = cur.byte_at(off);
      if (bytes_per == 2) v = (v << 8) | cur.byte_at(off + 1);
      if (v > static_cast<unsigned>(maxval)) cur.fail("sample exceeds maxval");
      if (v != 0) m.set(static_cast<int>(x), static_cast<int>(y));
    }
  }
  return m;
}

inline Mask read_pgm(const std::filesystem::path& path) {
  return parse_pgm(detail::read_file(path), path.string());
}

/// Raw P5, foreground 255.
inline std::string format_pgm(const Mask& m) {
  std::string out = "P5\n" + std::to_string(m.width()) + " " + std::to_string(m.height()) + "\n255\n";
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) out += m.at(x, y) ? static_cast<char>(0xFF) : '\0';
  }
  return out;
}

/// Header `image_id,area,perimeter,roundness,rectangularity,x0,y0,x1,y1`.
inline std::string shape_csv_header() { return "image_id,area,perimeter,roundness,rectangularity,x0,y0,x1,y1\n"; }

inline std::string format_shape_row(const std::string& image_id, const ShapeFeatures& f) {
  detail::check_cell_text(image_id, "image_id");
  return image_id + "," + std::to_string(f.area) + "," + detail::format_double(f.perimeter) + "," +
         detail::format_double(f.roundness) + "," + detail::format_double(f.rectangularity) + "," +
         std::to_string(f.bbox.x0) + "," + std::to_string(f.bbox.y0) + "," + std::to_string(f.bbox.x1) + "," +
         std::to_string(f.bbox.y1) + "\n";
}

}  // namespace descsel
