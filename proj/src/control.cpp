#include "touchfuse/control.hpp"

#include <algorithm>
#include <cmath>

namespace touchfuse::control {

using sim::Mat;

TrajectorySample quintic_at(const Vec3& p_start, const Vec3& dp, double period,
                            double t) {
  const double tau = std::clamp(t / period, 0.0, 1.0);
  const double t2 = tau * tau, t3 = t2 * tau, t4 = t3 * tau, t5 = t4 * tau;
  const double s = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
  const double sd = (30.0 * t2 - 60.0 * t3 + 30.0 * t4) / period;
  const double sdd = (60.0 * tau - 180.0 * t2 + 120.0 * t3) / (period * period);
  TrajectorySample out;
  for (int i = 0; i < 3; ++i) {
    out.p[i] = p_start[i] + s * dp[i];
    out.v[i] = sd * dp[i];
    out.a[i] = sdd * dp[i];
  }
  return out;
}

TrajectorySegment generate_trajectory(const Vec3& p_start, const Vec3& dp,
                                      double period, double torque_hz) {
  TrajectorySegment seg;
  seg.dt = 1.0 / torque_hz;
  const int n = static_cast<int>(std::lround(period * torque_hz));
  seg.samples.reserve(n + 1);
  for (int k = 0; k <= n; ++k)
    seg.samples.push_back(quintic_at(p_start, dp, period, k * seg.dt));
  return seg;
}

Vec3 impedance_accel(const Vec3& x, const Vec3& v, const TrajectorySample& des,
                     const ControllerConfig& gains) {
  Vec3 a;
  for (int i = 0; i < 3; ++i) {
    double err = x[i] - des.p[i];
    if (i == 2) err = sim::wrap_angle(err);
    a[i] = des.a[i] - gains.kp[i] * err - gains.kv[i] * (v[i] - des.v[i]);
  }
  return a;
}

OscResult osc_torque(const Vec3& a_u, const std::vector<double>& q,
                     const std::vector<double>& qd, const sim::ArmModel& arm,
                     const ControllerConfig& cfg,
                     const std::vector<double>& torque_limits) {
  const std::size_t n = arm.dof();
  const Mat j = arm.jacobian(q);
  const Mat m = arm.mass_matrix(q);
  const Mat minv = sim::spd_inverse(m);
  const Mat jt = j.transposed();
  Mat a = j * (minv * jt);  // 3x3 task-space mobility

  OscResult out;
  if (sim::symmetric3_min_eigenvalue(a) < cfg.singular_eps) {
    out.singular = true;
    for (int i = 0; i < 3; ++i) a(i, i) += cfg.singular_eps;
  }

  const Vec3 jdqd = arm.jdot_qdot(q, qd);
  const std::vector<double> rhs{a_u[0] - jdqd[0], a_u[1] - jdqd[1], a_u[2] - jdqd[2]};
  const std::vector<double> f = sim::spd_solve(a, rhs);  // Lambda (a_u - Jdot qdot)

  std::vector<double> tau(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    tau[i] = jt(i, 0) * f[0] + jt(i, 1) * f[1] + jt(i, 2) * f[2];

  const std::vector<double> bias = arm.bias_forces(q, qd);
  for (std::size_t i = 0; i < n; ++i) tau[i] += bias[i];

  if (n > 3) {
    // dynamically consistent null-space projection of joint damping
    // N^T = I - J^T Jbar^T, Jbar = M^-1 J^T Lambda
    const Mat lambda = sim::spd_inverse(a);
    const Mat jbar = minv * (jt * lambda);
    std::vector<double> damp(n);
    for (std::size_t i = 0; i < n; ++i) damp[i] = -cfg.null_damping * qd[i];
    const std::vector<double> jbtd = jbar.transposed() * damp;  // 3
    const std::vector<double> jt_jbtd = jt * jbtd;              // n
    for (std::size_t i = 0; i < n; ++i) tau[i] += damp[i] - jt_jbtd[i];
  }

  for (std::size_t i = 0; i < n; ++i)
    tau[i] = std::clamp(tau[i], -torque_limits[i], torque_limits[i]);
  out.tau = std::move(tau);
  return out;
}

ControlStepResult control_step(const Vec3& action, sim::Env& env,
                               const ControllerConfig& cfg) {
  Vec3 dp;
  for (int i = 0; i < 3; ++i)
    dp[i] = std::clamp(action[i], -cfg.action_limits[i], cfg.action_limits[i]);

  const double period = 1.0 / cfg.policy_hz;
  const sim::Pose start = env.ee_pose();
  const Vec3 p0{start.x, start.y, start.alpha};
  const TrajectorySegment seg = generate_trajectory(p0, dp, period, cfg.torque_hz);

  const double phys_dt = env.config().physics_dt;
  const int total_ticks = static_cast<int>(std::lround(period / phys_dt));
  const int hold = std::max(1, static_cast<int>(std::lround(1.0 / (cfg.torque_hz * phys_dt))));

  ControlStepResult result;
  std::vector<double> tau(env.dof(), 0.0);
  for (int tick = 0; tick < total_ticks; ++tick) {
    if (env.unstable()) break;
    if (tick % hold == 0) {
      const std::size_t k = std::min<std::size_t>(tick / hold, seg.samples.size() - 1);
      const sim::Pose ee = env.ee_pose();
      const Vec3 x{ee.x, ee.y, ee.alpha};
      const Vec3 v = env.ee_velocity();
      const Vec3 a_u = impedance_accel(x, v, seg.samples[k], cfg);
      OscResult osc = osc_torque(a_u, env.q(), env.qd(), env.arm(), cfg,
                                 env.config().torque_limits);
      result.singular = result.singular || osc.singular;
      tau = std::move(osc.tau);
      const double ex = x[0] - seg.samples[k].p[0];
      const double ey = x[1] - seg.samples[k].p[1];
      result.max_tracking_error =
          std::max(result.max_tracking_error, std::hypot(ex, ey));
    }
    env.step(tau);
  }
  result.frame = env.make_frame({dp[0], dp[1], dp[2]});
  return result;
}

}  // namespace touchfuse::control
