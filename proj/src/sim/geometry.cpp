#include "touchfuse/sim/geometry.hpp"

#include <algorithm>
#include <limits>

namespace touchfuse::sim {

void Polygon::bounds(Vec2& lo, Vec2& hi) const {
  lo = {std::numeric_limits<double>::max(), std::numeric_limits<double>::max()};
  hi = {-lo.x, -lo.y};
  for (const Vec2& v : verts) {
    lo.x = std::min(lo.x, v.x);
    lo.y = std::min(lo.y, v.y);
    hi.x = std::max(hi.x, v.x);
    hi.y = std::max(hi.y, v.y);
  }
}

bool point_in_polygon(const Polygon& poly, Vec2 p) {
  const std::size_t n = poly.verts.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = poly.verts[i];
    const Vec2 b = poly.verts[(i + 1) % n];
    if ((b - a).cross(p - a) < 0.0) return false;  // CCW: inside is left
  }
  return true;
}

bool point_penetration(const Polygon& poly, Vec2 p, double& depth, Vec2& normal) {
  const std::size_t n = poly.verts.size();
  double best = -std::numeric_limits<double>::max();
  Vec2 best_normal{0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = poly.verts[i];
    const Vec2 b = poly.verts[(i + 1) % n];
    const Vec2 outward = -((b - a).perp().normalized());  // CCW: left is inside
    const double signed_dist = (p - a).dot(outward);      // negative inside
    if (signed_dist > 0.0) return false;
    if (signed_dist > best) {
      best = signed_dist;
      best_normal = outward;
    }
  }
  depth = -best;
  normal = best_normal;
  return true;
}

std::vector<ContactPoint> polygon_contacts(const Polygon& peg, const Polygon& fixed) {
  std::vector<ContactPoint> out;
  Vec2 plo, phi, flo, fhi;
  peg.bounds(plo, phi);
  fixed.bounds(flo, fhi);
  if (plo.x > fhi.x || phi.x < flo.x || plo.y > fhi.y || phi.y < flo.y) return out;

  double depth;
  Vec2 normal;
  // Peg vertices inside the fixed body: exit through the fixed body's face.
  for (const Vec2& v : peg.verts) {
    if (point_penetration(fixed, v, depth, normal))
      out.push_back({v, normal, depth});
  }
  // Fixed vertices inside the peg (hole lips digging into peg sides): the peg
  // must retreat along the negated nearest peg-face normal.
  for (const Vec2& v : fixed.verts) {
    if (point_penetration(peg, v, depth, normal))
      out.push_back({v, -normal, depth});
  }
  return out;
}

Vec2 penalty_force(const ContactPoint& c, Vec2 v_point, const PenaltyParams& p) {
  // Penetration rate: positive while the peg point moves against the normal.
  const double ddot = -v_point.dot(c.normal);
  const double fn = std::max(0.0, p.stiffness * c.depth + p.damping * ddot);
  const Vec2 t = c.normal.perp();
  const double vt = v_point.dot(t);
  const double ft = -p.friction * fn * std::clamp(vt / p.slip_reg, -1.0, 1.0);
  return c.normal * fn + t * ft;
}

}  // namespace touchfuse::sim
