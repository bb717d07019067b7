#pragma once

#include <vector>

#include "touchfuse/sim/env.hpp"

namespace touchfuse::control {

using sim::Vec3;

struct ControllerConfig {
  Vec3 kp{400.0, 400.0, 100.0};
  Vec3 kv{40.0, 40.0, 20.0};  // 2*sqrt(kp): critical damping
  double policy_hz = 20.0;
  double torque_hz = 500.0;
  Vec3 action_limits{0.01, 0.01, 0.05};  // per policy tick: m, m, rad
  double null_damping = 2.0;             // joint damping projected into the null space
  double singular_eps = 1e-6;            // min eigenvalue of J M^-1 J^T
};

struct TrajectorySample {
  Vec3 p{0, 0, 0};
  Vec3 v{0, 0, 0};
  Vec3 a{0, 0, 0};
};

// Minimum-jerk quintic between start and start+dp over one policy period,
// zero boundary velocity/acceleration, sampled at the torque rate.
struct TrajectorySegment {
  std::vector<TrajectorySample> samples;  // k: time k / torque_hz
  double dt = 0.0;
};

TrajectorySegment generate_trajectory(const Vec3& p_start, const Vec3& dp,
                                      double period, double torque_hz);

// Quintic evaluated at an arbitrary time within [0, period].
TrajectorySample quintic_at(const Vec3& p_start, const Vec3& dp, double period,
                            double t);

// a_u = a_des - kp (x - x_des) - kv (v - v_des)
Vec3 impedance_accel(const Vec3& x, const Vec3& v, const TrajectorySample& des,
                     const ControllerConfig& gains);

struct OscResult {
  std::vector<double> tau;
  bool singular = false;  // damped pseudo-inverse engaged
};

// Dynamically consistent operational-space torques:
// tau = J^T Lambda (a_u - Jdot qdot) + bias(q, qd), Lambda = (J M^-1 J^T)^-1.
// Near singularities the task-space inertia solve is damped and flagged.
// Joint damping is projected into the Jacobian null space when dof > 3.
OscResult osc_torque(const Vec3& a_u, const std::vector<double>& q,
                     const std::vector<double>& qd, const sim::ArmModel& arm,
                     const ControllerConfig& cfg,
                     const std::vector<double>& torque_limits);

struct ControlStepResult {
  sim::SensorFrame frame;
  bool singular = false;
  double max_tracking_error = 0.0;  // position norm over the period
};

// Runs one 20 Hz policy period: interpolate, track with the impedance law,
// map to torques at the torque rate, step the physics at 1 kHz.
ControlStepResult control_step(const Vec3& action, sim::Env& env,
                               const ControllerConfig& cfg);

}  // namespace touchfuse::control
