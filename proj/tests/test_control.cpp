#include <cmath>

#include "doctest.h"
#include "touchfuse/common.hpp"
#include "touchfuse/control.hpp"

using namespace touchfuse;
using namespace touchfuse::control;
using namespace touchfuse::sim;

namespace {

// random non-singular state via inverse kinematics of interior poses
bool sample_state(Rng& rng, const ArmModel& arm, std::vector<double>& q,
                  std::vector<double>& qd) {
  Pose p;
  p.x = rng.uniform(-0.05, 0.25);
  p.y = rng.uniform(0.15, 0.45);
  p.alpha = rng.uniform(-2.2, -0.9);
  if (!arm.inverse_kinematics(p, true, q)) return false;
  const Mat j = arm.jacobian(q);
  const Mat a = j * (spd_inverse(arm.mass_matrix(q)) * j.transposed());
  if (symmetric3_min_eigenvalue(a) < 1e-3) return false;
  qd.resize(3);
  for (double& v : qd) v = rng.uniform(-1.0, 1.0);
  return true;
}

}  // namespace

TEST_CASE("zero displacement gives a constant trajectory") {
  const TrajectorySegment seg = generate_trajectory({0.1, 0.2, -1.5}, {0, 0, 0},
                                                    0.05, 500.0);
  REQUIRE(seg.samples.size() == 26);  // 25 intervals + endpoint
  for (const TrajectorySample& s : seg.samples) {
    CHECK(s.p[0] == doctest::Approx(0.1));
    CHECK(s.v[0] == 0.0);
    CHECK(s.v[1] == 0.0);
    CHECK(s.a[2] == 0.0);
  }
}

TEST_CASE("trajectory endpoints and boundary conditions are exact") {
  const Vec3 p0{0.05, 0.3, -1.4};
  const Vec3 dp{0.01, -0.008, 0.04};
  const TrajectorySegment seg = generate_trajectory(p0, dp, 0.05, 500.0);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(seg.samples.front().p[i] - p0[i]) < 1e-12);
    CHECK(std::abs(seg.samples.back().p[i] - (p0[i] + dp[i])) < 1e-12);
    CHECK(std::abs(seg.samples.front().v[i]) < 1e-12);
    CHECK(std::abs(seg.samples.back().v[i]) < 1e-12);
    CHECK(std::abs(seg.samples.front().a[i]) < 1e-12);
    CHECK(std::abs(seg.samples.back().a[i]) < 1e-12);
  }
}

TEST_CASE("quintic midpoint velocity is 1.875 dp / T per axis") {
  const double period = 0.05;
  const Vec3 dp{0.01, -0.02, 0.05};
  const TrajectorySample mid = quintic_at({0, 0, 0}, dp, period, period / 2.0);
  for (int i = 0; i < 3; ++i)
    CHECK(mid.v[i] == doctest::Approx(1.875 * dp[i] / period).epsilon(1e-12));
}

TEST_CASE("trajectory velocity/acceleration are consistent derivatives") {
  const Vec3 p0{0, 0, 0};
  const Vec3 dp{0.01, 0.005, -0.03};
  const double period = 0.05;
  for (double t : {0.004, 0.011, 0.027, 0.042}) {
    const double h = 1e-7;
    const TrajectorySample a = quintic_at(p0, dp, period, t - h);
    const TrajectorySample b = quintic_at(p0, dp, period, t + h);
    const TrajectorySample c = quintic_at(p0, dp, period, t);
    for (int i = 0; i < 3; ++i) {
      CHECK(c.v[i] == doctest::Approx((b.p[i] - a.p[i]) / (2 * h)).epsilon(1e-5));
      CHECK(c.a[i] == doctest::Approx((b.v[i] - a.v[i]) / (2 * h)).epsilon(1e-5));
    }
  }
}

TEST_CASE("impedance law: zero error gives zero command, pure offset gives -kp e") {
  ControllerConfig cfg;
  TrajectorySample des;
  des.p = {0.1, 0.2, -1.5};
  CHECK(impedance_accel(des.p, {0, 0, 0}, des, cfg)[0] == 0.0);
  Vec3 x = des.p;
  x[0] += 0.01;
  const Vec3 a = impedance_accel(x, {0, 0, 0}, des, cfg);
  CHECK(a[0] == doctest::Approx(-cfg.kp[0] * 0.01));
  CHECK(a[1] == 0.0);
}

TEST_CASE("impedance law matches an independent evaluation on random inputs") {
  Rng rng(5);
  ControllerConfig cfg;
  for (int t = 0; t < 50; ++t) {
    TrajectorySample des;
    Vec3 x, v;
    for (int i = 0; i < 3; ++i) {
      des.p[i] = rng.normal();
      des.v[i] = rng.normal();
      des.a[i] = rng.normal();
      x[i] = des.p[i] + rng.uniform(-0.3, 0.3);  // keep angle error unwrapped
      v[i] = rng.normal();
    }
    const Vec3 a = impedance_accel(x, v, des, cfg);
    for (int i = 0; i < 3; ++i) {
      const double expect =
          des.a[i] - cfg.kp[i] * (x[i] - des.p[i]) - cfg.kv[i] * (v[i] - des.v[i]);
      CHECK(a[i] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("osc at rest with zero command produces zero torque") {
  WorldConfig wc;
  ArmModel arm(wc.links, wc.arm_base);
  ControllerConfig cfg;
  const OscResult r = osc_torque({0, 0, 0}, {0.5, -0.9, 0.3}, {0, 0, 0}, arm, cfg,
                                 wc.torque_limits);
  for (double t : r.tau) CHECK(std::abs(t) < 1e-12);
  CHECK_FALSE(r.singular);
}

TEST_CASE("osc torques achieve the commanded task acceleration within 1%") {
  WorldConfig wc;
  ArmModel arm(wc.links, wc.arm_base);
  ControllerConfig cfg;
  Rng rng(11);
  int checked = 0;
  while (checked < 100) {
    std::vector<double> q, qd;
    if (!sample_state(rng, arm, q, qd)) continue;
    Vec3 a_u;
    for (int i = 0; i < 3; ++i) a_u[i] = rng.uniform(-2.0, 2.0);
    const std::vector<double> huge_limits{1e4, 1e4, 1e4};
    const OscResult r = osc_torque(a_u, q, qd, arm, cfg, huge_limits);
    REQUIRE_FALSE(r.singular);
    // forward dynamics: qdd = M^-1 (tau - c); achieved xdd = J qdd + Jdot qd
    const std::vector<double> bias = arm.bias_forces(q, qd);
    std::vector<double> rhs(3);
    for (int i = 0; i < 3; ++i) rhs[i] = r.tau[i] - bias[i];
    const std::vector<double> qdd = spd_solve(arm.mass_matrix(q), rhs);
    const Mat j = arm.jacobian(q);
    const Vec3 jdqd = arm.jdot_qdot(q, qd);
    for (int row = 0; row < 3; ++row) {
      double xdd = jdqd[row];
      for (int c = 0; c < 3; ++c) xdd += j(row, c) * qdd[c];
      const double denom = std::max(1.0, std::abs(a_u[row]));
      CHECK(std::abs(xdd - a_u[row]) / denom < 0.01);
    }
    ++checked;
  }
}

TEST_CASE("osc torque is linear in the commanded acceleration") {
  WorldConfig wc;
  ArmModel arm(wc.links, wc.arm_base);
  ControllerConfig cfg;
  Rng rng(13);
  std::vector<double> q, qd;
  REQUIRE(sample_state(rng, arm, q, qd));
  const std::vector<double> zero_qd(3, 0.0);
  const std::vector<double> huge{1e6, 1e6, 1e6};
  const Vec3 a{1.0, -0.5, 0.7};
  const OscResult r1 = osc_torque(a, q, zero_qd, arm, cfg, huge);
  const OscResult r2 =
      osc_torque({2.0 * a[0], 2.0 * a[1], 2.0 * a[2]}, q, zero_qd, arm, cfg, huge);
  for (int i = 0; i < 3; ++i)
    CHECK(r2.tau[i] == doctest::Approx(2.0 * r1.tau[i]).epsilon(1e-9));
}

TEST_CASE("task-space inertia is SPD at random non-singular states") {
  WorldConfig wc;
  ArmModel arm(wc.links, wc.arm_base);
  Rng rng(17);
  int checked = 0;
  while (checked < 50) {
    std::vector<double> q, qd;
    if (!sample_state(rng, arm, q, qd)) continue;
    const Mat j = arm.jacobian(q);
    const Mat a = j * (spd_inverse(arm.mass_matrix(q)) * j.transposed());
    const Mat lambda = spd_inverse(a);
    CHECK(symmetric3_min_eigenvalue(lambda) > 0.0);
    CHECK(is_spd(lambda));
    ++checked;
  }
}

TEST_CASE("near-singular configurations fall back to a damped solve and flag it") {
  // two links stretched: positional block of J M^-1 J^T degenerates as the
  // arm straightens; force it with an almost-straight elbow
  WorldConfig wc;
  ArmModel arm(wc.links, wc.arm_base);
  ControllerConfig cfg;
  cfg.singular_eps = 1e-2;  // pull the threshold up to make the case decisive
  const std::vector<double> q{0.3, 1e-9, 1e-9};
  const OscResult r = osc_torque({1, 1, 0}, q, {0, 0, 0}, arm, cfg, wc.torque_limits);
  CHECK(r.singular);
  for (double t : r.tau) CHECK(std::isfinite(t));
}

TEST_CASE("zero-action regulation holds the end-effector within 1 mm over 5 s") {
  WorldConfig wc;
  Env env(wc);
  env.reset(21);
  ControllerConfig cfg;
  const Pose start = env.ee_pose();
  double max_drift = 0.0;
  for (int step = 0; step < 100; ++step) {  // 5 s at 20 Hz
    control_step({0, 0, 0}, env, cfg);
    REQUIRE_FALSE(env.unstable());
    const Pose p = env.ee_pose();
    max_drift = std::max(max_drift, std::hypot(p.x - start.x, p.y - start.y));
  }
  CHECK(max_drift < 1e-3);
}

TEST_CASE("a 2 cm step lands within 10% of the target in two periods") {
  // action limits cap one period at 1 cm, so command two 1 cm steps
  WorldConfig wc;
  Env env(wc);
  env.reset(22);
  ControllerConfig cfg;
  const Pose start = env.ee_pose();
  control_step({0.01, 0, 0}, env, cfg);
  control_step({0.01, 0, 0}, env, cfg);
  const Pose p = env.ee_pose();
  CHECK(std::abs(p.x - (start.x + 0.02)) < 0.002);
  CHECK(std::abs(p.y - start.y) < 0.002);
}

TEST_CASE("pushing into the box develops steady bounded contact and compliance") {
  WorldConfig wc;
  Env env(wc);
  env.reset(23);
  ControllerConfig cfg;
  // descend toward the box top right of the hole, then keep pushing down
  bool contact_seen = false;
  double max_force = 0.0;
  for (int step = 0; step < 120; ++step) {
    control_step({0.002, -0.01, 0.0}, env, cfg);
    REQUIRE_FALSE(env.unstable());
    const Vec3 w = env.last_sensor_wrench();
    const double f = std::hypot(w[0], w[1]);
    max_force = std::max(max_force, f);
    if (f > 0.5) contact_seen = true;
  }
  CHECK(contact_seen);
  CHECK(max_force < 200.0);  // bounded, no divergence
  // still able to slide laterally while pushing down
  const double x0 = env.ee_pose().x;
  for (int step = 0; step < 40; ++step) {
    control_step({0.008, -0.004, 0.0}, env, cfg);
    REQUIRE_FALSE(env.unstable());
  }
  CHECK(env.ee_pose().x - x0 > 0.05);
}
