#include "cdlab/render.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <stdexcept>

namespace cdlab {

namespace {

using Rgb = std::array<std::uint8_t, 3>;

constexpr std::array<Rgb, 6> kPalette{{
    {31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {148, 103, 189}, {255, 127, 14}, {23, 190, 207}}};

void put(Image& img, int px, int py, const Rgb& c) {
  if (px < 0 || py < 0 || px >= img.width || py >= img.height) return;
  const std::size_t k = 3 * (static_cast<std::size_t>(py) * img.width + px);
  img.rgb[k] = c[0];
  img.rgb[k + 1] = c[1];
  img.rgb[k + 2] = c[2];
}

Vec2 pixel_center(const Bounds& b, int width, int height, int px, int py) {
  return {b.x_min + (px + 0.5) * (b.x_max - b.x_min) / width, b.y_max - (py + 0.5) * (b.y_max - b.y_min) / height};
}

}  // namespace

Image render_scatter(std::span<const Vec2> samples, std::span<const GridField> contours, const Bounds& bounds,
                     int width, int height) {
  if (samples.empty()) throw std::invalid_argument("render_scatter needs at least one sample");
  if (width < 2 || height < 2) throw std::invalid_argument("render_scatter needs an image of at least 2x2");
  if (!(bounds.x_max > bounds.x_min) || !(bounds.y_max > bounds.y_min)) {
    throw std::invalid_argument("render_scatter needs nonempty bounds");
  }
  Image img{width, height, std::vector<std::uint8_t>(3 * static_cast<std::size_t>(width) * height, 255)};

  // A pixel is on a contour when the level lies between its value and that of
  // its right or lower neighbour.
  std::vector<double> v(static_cast<std::size_t>(width) * height);
  for (std::size_t f = 0; f < contours.size(); ++f) {
    const GridField& field = contours[f];
    const double peak = *std::max_element(field.values().begin(), field.values().end());
    for (int py = 0; py < height; ++py) {
      for (int px = 0; px < width; ++px) {
        v[static_cast<std::size_t>(py) * width + px] = field.interpolate(pixel_center(bounds, width, height, px, py));
      }
    }
    const Rgb& colour = kPalette[f % kPalette.size()];
    for (double frac : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      const double level = frac * peak;
      for (int py = 0; py + 1 < height; ++py) {
        for (int px = 0; px + 1 < width; ++px) {
          const double a = v[static_cast<std::size_t>(py) * width + px] - level;
          const double r = v[static_cast<std::size_t>(py) * width + px + 1] - level;
          const double d = v[static_cast<std::size_t>(py + 1) * width + px] - level;
          if ((a < 0) != (r < 0) || (a < 0) != (d < 0)) put(img, px, py, colour);
        }
      }
    }
  }

  const Rgb dot{20, 20, 20};
  for (const Vec2& s : samples) {
    const double fx = (s.x - bounds.x_min) / (bounds.x_max - bounds.x_min) * width;
    const double fy = (bounds.y_max - s.y) / (bounds.y_max - bounds.y_min) * height;
    if (!(fx >= 0.0 && fx < width && fy >= 0.0 && fy < height)) continue;
    const int px = static_cast<int>(fx);
    const int py = static_cast<int>(fy);
    put(img, px, py, dot);
    put(img, px + 1, py, dot);
    put(img, px, py + 1, dot);
    put(img, px + 1, py + 1, dot);
  }
  return img;
}

void write_ppm(const Image& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace cdlab
