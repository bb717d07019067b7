#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "touchfuse/sim/geometry.hpp"

namespace touchfuse::sim {

// Fixed orthographic side-view camera over a square world window.
struct Camera {
  Vec2 min_corner{-0.15, 0.0};
  double extent = 0.5;  // meters covered by the image side
  int image_size = 32;

  double pixel_size() const { return extent / image_size; }
  // Pixel centers; image row 0 is the top of the window.
  Vec2 pixel_to_world(int row, int col) const {
    return {min_corner.x + (col + 0.5) * pixel_size(),
            min_corner.y + extent - (row + 0.5) * pixel_size()};
  }
  // Continuous pixel coordinates (col, row) of a world point.
  Vec2 world_to_pixel(Vec2 w) const {
    return {(w.x - min_corner.x) / pixel_size() - 0.5,
            (min_corner.y + extent - w.y) / pixel_size() - 0.5};
  }
};

struct DrawBody {
  Polygon poly;
  std::array<double, 3> color{0.5, 0.5, 0.5};
  double depth = 0.6;   // distance from the camera plane, meters
  int body_id = -1;     // link index for arm bodies; -1 for statics
};

// Flat-shaded rasterization at pixel centers, painter's order far-to-near.
struct RenderResult {
  std::vector<double> rgb;    // [3, S, S] planar, values in [0, 1]
  std::vector<double> depth;  // [S, S] meters from the camera plane
  std::vector<int> body_id;   // [S, S]; -1 where no arm body covers the pixel
};

struct RenderStyle {
  std::array<double, 3> background{26.0 / 255, 31.0 / 255, 38.0 / 255};
  double background_depth = 1.0;  // max range
};

RenderResult render_scene(const Camera& cam, const std::vector<DrawBody>& bodies,
                          const RenderStyle& style = {});

}  // namespace touchfuse::sim
