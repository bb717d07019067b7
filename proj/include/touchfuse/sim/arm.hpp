#pragma once

#include <stdexcept>
#include <vector>

#include "touchfuse/sim/planar.hpp"

namespace touchfuse::sim {

struct LinkParams {
  double length = 0.3;   // m
  double mass = 1.0;     // kg
  double inertia = 0.0;  // kg m^2 about the COM; <= 0 means uniform rod
};

// Planar revolute serial chain. Frames: joint i sits at position p_i with
// cumulative angle theta_i = sum(q_0..q_i); the end-effector frame is the tip
// of the last link.
class ArmModel {
 public:
  ArmModel(std::vector<LinkParams> links, Vec2 base, double gravity_y = 0.0);

  std::size_t dof() const { return links_.size(); }
  const std::vector<LinkParams>& links() const { return links_; }
  Vec2 base() const { return base_; }
  double gravity() const { return gravity_y_; }
  void set_gravity(double g) { gravity_y_ = g; }

  struct Frames {
    std::vector<Vec2> joint_pos;   // dof()+1 entries; last is the EE origin
    std::vector<double> theta;     // cumulative angles, dof() entries
    Pose ee;                       // (x, y, alpha = theta.back())
  };
  Frames forward_kinematics(const std::vector<double>& q) const;

  // 3xN task Jacobian, rows (xdot, ydot, alphadot).
  Mat jacobian(const std::vector<double>& q) const;
  // The Jdot*qdot term appearing in xdd = J qdd + Jdot qdot.
  Vec3 jdot_qdot(const std::vector<double>& q, const std::vector<double>& qd) const;

  // Joint-space dynamics: M(q) qdd + c(q, qd) = tau, with c holding
  // Coriolis/centrifugal and gravity terms (computed by Newton-Euler
  // recursion; M assembled column-wise from unit accelerations).
  Mat mass_matrix(const std::vector<double>& q) const;
  std::vector<double> bias_forces(const std::vector<double>& q,
                                  const std::vector<double>& qd) const;

  double kinetic_energy(const std::vector<double>& q,
                        const std::vector<double>& qd) const;

  // Inverse dynamics tau = M qdd + c; gravity included unless disabled.
  std::vector<double> rnea(const std::vector<double>& q,
                           const std::vector<double>& qd,
                           const std::vector<double>& qdd,
                           bool with_gravity) const;

  // Analytic planar 2R+orientation inverse kinematics for a 3-link arm:
  // returns joint angles reaching the given EE pose, elbow sign selectable.
  // Returns false when out of reach.
  bool inverse_kinematics(const Pose& target, bool elbow_up,
                          std::vector<double>& q_out) const;

 private:
  std::vector<LinkParams> links_;
  Vec2 base_;
  double gravity_y_;
};

}  // namespace touchfuse::sim
