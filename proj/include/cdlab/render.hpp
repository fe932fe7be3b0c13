#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cdlab/grid.hpp"
#include "cdlab/linalg.hpp"

namespace cdlab {

/// 8-bit RGB raster, row 0 at the top.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};

/// Scatter of `samples` over iso-density lines of each field (levels at
/// 10%, 30%, 50%, 70%, 90% of its maximum), one colour per field.
/// Throws std::invalid_argument on empty samples or a degenerate size.
Image render_scatter(std::span<const Vec2> samples, std::span<const GridField> contours, const Bounds& bounds,
                     int width, int height);

/// Binary PPM (P6). Throws std::runtime_error naming the path on I/O failure.
void write_ppm(const Image& image, const std::string& path);

}  // namespace cdlab
