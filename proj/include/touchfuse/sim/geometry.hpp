#pragma once

#include <vector>

#include "touchfuse/sim/planar.hpp"

namespace touchfuse::sim {

// Convex polygon, counter-clockwise winding.
struct Polygon {
  std::vector<Vec2> verts;

  static Polygon rect(Vec2 lo, Vec2 hi) {
    return Polygon{{{lo.x, lo.y}, {hi.x, lo.y}, {hi.x, hi.y}, {lo.x, hi.y}}};
  }
  Polygon translated(Vec2 d) const {
    Polygon p = *this;
    for (Vec2& v : p.verts) v = v + d;
    return p;
  }
  Polygon transformed(Vec2 origin, double angle) const {
    Polygon p = *this;
    for (Vec2& v : p.verts) v = origin + rotate(v, angle);
    return p;
  }
  void bounds(Vec2& lo, Vec2& hi) const;
};

bool point_in_polygon(const Polygon& poly, Vec2 p);

// For a point inside the polygon: depth and outward normal of the nearest
// face (the cheapest exit direction). Returns false if the point is outside.
bool point_penetration(const Polygon& poly, Vec2 p, double& depth, Vec2& normal);

// One penalty contact: a point on the peg with the direction the peg must
// move to separate.
struct ContactPoint {
  Vec2 point;
  Vec2 normal;  // unit, push-peg-out direction
  double depth = 0.0;
};

// Vertex-vs-polygon contact sampling both ways (peg vertices in the static
// polygon, static vertices in the peg).
std::vector<ContactPoint> polygon_contacts(const Polygon& peg, const Polygon& fixed);

struct PenaltyParams {
  double stiffness = 1e4;   // N/m
  double damping = 50.0;    // N s/m
  double friction = 0.3;    // Coulomb mu
  double slip_reg = 1e-3;   // m/s, viscous regularization of stiction
};

struct Wrench {
  Vec2 force{0.0, 0.0};
  double torque = 0.0;  // about a given reference point
};

// Penalty contact force at one contact. v_point is the velocity of the peg
// material point; the other body is static. Normal force k*depth + c*ddot,
// clamped >= 0; tangential Coulomb friction with viscous regularization.
Vec2 penalty_force(const ContactPoint& c, Vec2 v_point, const PenaltyParams& p);

}  // namespace touchfuse::sim
