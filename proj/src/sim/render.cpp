#include "touchfuse/sim/render.hpp"

#include <algorithm>
#include <cmath>

namespace touchfuse::sim {

RenderResult render_scene(const Camera& cam, const std::vector<DrawBody>& bodies,
                          const RenderStyle& style) {
  const int s = cam.image_size;
  RenderResult out;
  out.rgb.assign(3 * s * s, 0.0);
  out.depth.assign(s * s, style.background_depth);
  out.body_id.assign(s * s, -1);
  for (int i = 0; i < s * s; ++i) {
    out.rgb[i] = style.background[0];
    out.rgb[s * s + i] = style.background[1];
    out.rgb[2 * s * s + i] = style.background[2];
  }

  // far to near; stable order for equal depths keeps rendering deterministic
  std::vector<std::size_t> order(bodies.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return bodies[a].depth > bodies[b].depth;
  });

  for (std::size_t idx : order) {
    const DrawBody& body = bodies[idx];
    Vec2 lo, hi;
    body.poly.bounds(lo, hi);
    const Vec2 plo = cam.world_to_pixel({lo.x, hi.y});  // top-left pixel coords
    const Vec2 phi = cam.world_to_pixel({hi.x, lo.y});
    const int c0 = std::max(0, static_cast<int>(std::floor(plo.x)));
    const int c1 = std::min(s - 1, static_cast<int>(std::ceil(phi.x)));
    const int r0 = std::max(0, static_cast<int>(std::floor(plo.y)));
    const int r1 = std::min(s - 1, static_cast<int>(std::ceil(phi.y)));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        if (!point_in_polygon(body.poly, cam.pixel_to_world(r, c))) continue;
        const int i = r * s + c;
        out.rgb[i] = body.color[0];
        out.rgb[s * s + i] = body.color[1];
        out.rgb[2 * s * s + i] = body.color[2];
        out.depth[i] = body.depth;
        out.body_id[i] = body.body_id;
      }
    }
  }
  return out;
}

}  // namespace touchfuse::sim
