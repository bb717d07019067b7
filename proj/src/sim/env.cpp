#include "touchfuse/sim/env.hpp"

#include <algorithm>
#include <cmath>

#include "touchfuse/common.hpp"

namespace touchfuse::sim {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kAlphaDown = -kPi / 2.0;  // peg pointing into the hole
}  // namespace

HoleShape hole_shape_from_string(const std::string& s) {
  if (s == "slot") return HoleShape::kSlot;
  if (s == "vee") return HoleShape::kVee;
  if (s == "step") return HoleShape::kStep;
  throw std::invalid_argument("unknown hole shape '" + s + "'");
}

std::string to_string(HoleShape s) {
  switch (s) {
    case HoleShape::kSlot: return "slot";
    case HoleShape::kVee: return "vee";
    case HoleShape::kStep: return "step";
  }
  return "slot";
}

Env::Env(const WorldConfig& cfg)
    : cfg_(cfg), arm_(cfg.links, cfg.arm_base, cfg.gravity_y) {
  if (cfg_.clearance <= 0.0 || cfg_.hole_depth <= 0.0)
    throw std::invalid_argument("WorldConfig: clearance and hole depth must be > 0");
  if (cfg_.contact.stiffness < 0.0 || cfg_.contact.damping < 0.0)
    throw std::invalid_argument("WorldConfig: contact stiffness/damping must be >= 0");
  camera_.min_corner = cfg_.camera_min;
  camera_.extent = cfg_.camera_extent;
  camera_.image_size = cfg_.image_size;

  const double w = cfg_.peg_width, l = cfg_.peg_length;
  switch (cfg_.hole_shape) {
    case HoleShape::kSlot:
      peg_local_ = Polygon{{{0, -w / 2}, {l, -w / 2}, {l, w / 2}, {0, w / 2}}};
      break;
    case HoleShape::kVee: {
      const double tip = cfg_.hole_depth;  // tapered tip as deep as the hole
      peg_local_ = Polygon{{{0, -w / 2}, {l - tip, -w / 2}, {l, 0}, {l - tip, w / 2}, {0, w / 2}}};
      break;
    }
    case HoleShape::kStep: {
      const double ch = 0.006;  // chamfered corner
      peg_local_ = Polygon{{{0, -w / 2}, {l, -w / 2}, {l, w / 2 - ch}, {l - ch, w / 2}, {0, w / 2}}};
      break;
    }
  }

  q_.assign(arm_.dof(), 0.0);
  qd_.assign(arm_.dof(), 0.0);
  box_x_ = cfg_.box_center_x;
  window_.assign(static_cast<std::size_t>(3 * cfg_.force_window), 0.0);
  rebuild_statics();
}

void Env::rebuild_statics() {
  statics_.clear();
  const double bhw = cfg_.box_half_width;
  const double bty = cfg_.box_top_y;
  const double hd = cfg_.hole_depth;
  const double whw = cfg_.peg_width / 2.0 + cfg_.clearance;
  mouth_half_width_ = whw;
  // box-local frame: origin at the hole mouth center, box top at y=0
  std::vector<Polygon> local;
  switch (cfg_.hole_shape) {
    case HoleShape::kSlot:
      local.push_back(Polygon::rect({-bhw, -bty}, {-whw, 0}));
      local.push_back(Polygon::rect({whw, -bty}, {bhw, 0}));
      local.push_back(Polygon::rect({-whw, -bty}, {whw, -hd}));
      break;
    case HoleShape::kVee:
      local.push_back(Polygon{{{-bhw, -bty}, {0, -hd}, {-whw, 0}, {-bhw, 0}}});
      local.push_back(Polygon{{{bhw, -bty}, {bhw, 0}, {whw, 0}, {0, -hd}}});
      break;
    case HoleShape::kStep: {
      const double ch = 0.006 + cfg_.clearance;
      local.push_back(Polygon::rect({-bhw, -bty}, {-whw, 0}));
      local.push_back(Polygon{{{whw, -bty}, {bhw, -bty}, {bhw, 0}, {whw + ch, 0}, {whw, -ch}}});
      local.push_back(Polygon::rect({-whw, -bty}, {whw, -hd}));
      break;
    }
  }
  const Vec2 origin{box_x_, cfg_.box_top_y};
  for (const Polygon& p : local) statics_.push_back(p.translated(origin));
  // ground strip left and right of the box
  statics_.push_back(Polygon::rect({-0.8, -0.05}, {0.8, 0.0}));
}

Pose Env::ee_pose() const { return arm_.forward_kinematics(q_).ee; }

Vec3 Env::ee_velocity() const {
  const Mat j = arm_.jacobian(q_);
  const std::vector<double> v = j * qd_;
  return {v[0], v[1], v[2]};
}

Vec2 Env::peg_tip() const {
  const Pose ee = ee_pose();
  return Vec2{ee.x, ee.y} + rotate({cfg_.peg_length, 0.0}, ee.alpha);
}

Polygon Env::peg_polygon_world() const {
  const Pose ee = ee_pose();
  return peg_local_.transformed({ee.x, ee.y}, ee.alpha);
}

RewardState Env::reward_state() const {
  const Vec2 tip = peg_tip();
  const double sx = tip.x - box_x_;
  const double raw = tip.y - cfg_.box_top_y;
  const bool inside = std::abs(sx) <= mouth_half_width_;
  RewardState rs;
  rs.s = {sx, 0.0, inside ? raw : std::max(raw, 0.0)};
  rs.s_psi = std::abs(wrap_angle(ee_pose().alpha - kAlphaDown)) / kPi;
  return rs;
}

void Env::set_state(const std::vector<double>& q, const std::vector<double>& qd,
                    double box_x) {
  if (q.size() != arm_.dof() || qd.size() != arm_.dof())
    throw std::invalid_argument("set_state: wrong joint dimension");
  q_ = q;
  qd_ = qd;
  box_x_ = box_x;
  rebuild_statics();
}

void Env::push_wrench_sample(const Vec3& w) {
  const int n = cfg_.force_window;
  window_[0 * n + window_head_] = w[0];
  window_[1 * n + window_head_] = w[1];
  window_[2 * n + window_head_] = w[2];
  window_head_ = (window_head_ + 1) % n;
}

void Env::step(const std::vector<double>& tau) {
  if (unstable_) return;  // terminated; caller should reset
  if (tau.size() != arm_.dof())
    throw std::invalid_argument("Env::step: torque vector has wrong dimension");
  for (double t : tau)
    if (!std::isfinite(t))
      throw std::invalid_argument("Env::step: non-finite torque command");

  std::vector<double> tau_cmd(arm_.dof());
  for (std::size_t i = 0; i < arm_.dof(); ++i)
    tau_cmd[i] = std::clamp(tau[i], -cfg_.torque_limits[i], cfg_.torque_limits[i]);

  // contact wrench at the EE (world frame)
  const ArmModel::Frames frames = arm_.forward_kinematics(q_);
  const Pose ee = frames.ee;
  const Polygon peg = peg_local_.transformed({ee.x, ee.y}, ee.alpha);
  const Mat j = arm_.jacobian(q_);
  const std::vector<double> eev = j * qd_;
  const Vec2 v_ee{eev[0], eev[1]};
  const double omega = eev[2];

  Vec2 f_total{0.0, 0.0};
  double tz_total = 0.0;
  double max_pen = 0.0;
  bool touching = false;
  for (const Polygon& fixed : statics_) {
    for (const ContactPoint& c : polygon_contacts(peg, fixed)) {
      touching = true;
      max_pen = std::max(max_pen, c.depth);
      const Vec2 r = c.point - Vec2{ee.x, ee.y};
      const Vec2 v_point = v_ee + r.perp() * omega;
      const Vec2 f = penalty_force(c, v_point, cfg_.contact);
      f_total = f_total + f;
      tz_total += r.cross(f);
    }
  }
  any_contact_period_ = any_contact_period_ || touching;
  if (max_pen > cfg_.unstable_penetration_factor * cfg_.clearance) {
    unstable_ = true;
    diagnostic_ = "penetration " + std::to_string(max_pen) + " m exceeded " +
                  std::to_string(cfg_.unstable_penetration_factor) + "x clearance";
    return;
  }

  // semi-implicit Euler on M qdd = tau + J^T f - c
  std::vector<double> rhs(arm_.dof());
  for (std::size_t i = 0; i < arm_.dof(); ++i)
    rhs[i] = tau_cmd[i] + j(0, i) * f_total.x + j(1, i) * f_total.y + j(2, i) * tz_total;
  const std::vector<double> bias = arm_.bias_forces(q_, qd_);
  for (std::size_t i = 0; i < arm_.dof(); ++i) rhs[i] -= bias[i];
  const Mat m = arm_.mass_matrix(q_);
  const std::vector<double> qdd = spd_solve(m, rhs);
  for (std::size_t i = 0; i < arm_.dof(); ++i) {
    qd_[i] += cfg_.physics_dt * qdd[i];
    q_[i] += cfg_.physics_dt * qd_[i];
  }
  time_ += cfg_.physics_dt;

  for (double v : q_)
    if (!std::isfinite(v)) {
      unstable_ = true;
      diagnostic_ = "non-finite joint state";
      return;
    }

  // sensor sample: contact wrench expressed in the EE frame, 1 kHz
  const Vec2 f_ee = rotate(f_total, -ee.alpha);
  last_wrench_ee_ = {f_ee.x, f_ee.y, tz_total};
  push_wrench_sample(last_wrench_ee_);
}

std::vector<DrawBody> Env::scene_bodies() const {
  const ArmModel::Frames frames = arm_.forward_kinematics(q_);
  std::vector<DrawBody> bodies;
  // box parts and ground
  for (std::size_t i = 0; i < statics_.size(); ++i) {
    DrawBody b;
    b.poly = statics_[i];
    const bool ground = (i + 1 == statics_.size());
    b.color = ground ? std::array<double, 3>{46.0 / 255, 46.0 / 255, 51.0 / 255}
                     : std::array<double, 3>{140.0 / 255, 89.0 / 255, 51.0 / 255};
    b.depth = ground ? 0.70 : 0.60;
    b.body_id = -1;
    bodies.push_back(std::move(b));
  }
  // links as oriented rectangles in their own frames
  for (std::size_t i = 0; i < arm_.dof(); ++i) {
    const double hw = cfg_.link_draw_width / 2.0;
    Polygon local{{{0, -hw},
                   {arm_.links()[i].length, -hw},
                   {arm_.links()[i].length, hw},
                   {0, hw}}};
    DrawBody b;
    b.poly = local.transformed(frames.joint_pos[i], frames.theta[i]);
    b.color = {64.0 / 255, (128.0 + 15.0 * static_cast<double>(i)) / 255, 191.0 / 255};
    b.depth = 0.50;
    b.body_id = static_cast<int>(i);
    bodies.push_back(std::move(b));
  }
  // peg rides the last link's frame
  DrawBody peg;
  peg.poly = peg_polygon_world();
  peg.color = {217.0 / 255, 204.0 / 255, 77.0 / 255};
  peg.depth = 0.45;
  peg.body_id = static_cast<int>(arm_.dof()) - 1;
  bodies.push_back(std::move(peg));
  return bodies;
}

RenderResult Env::render() const { return render_scene(camera_, scene_bodies()); }

SensorFrame Env::make_frame(const std::array<double, 3>& action_taken) {
  SensorFrame f;
  const RenderResult r = render();
  f.rgb = r.rgb;
  f.depth = r.depth;
  // chronological window, oldest first
  const int n = cfg_.force_window;
  f.force_window.assign(static_cast<std::size_t>(3 * n), 0.0);
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < n; ++k)
      f.force_window[c * n + k] = window_[c * n + (window_head_ + k) % n];
  const Pose ee = ee_pose();
  const Vec3 v = ee_velocity();
  f.proprio = {ee.x, ee.y, ee.alpha, v[0], v[1], v[2]};
  f.action = action_taken;
  f.sim_time = time_;
  f.q = q_;
  f.qd = qd_;
  f.box_x = box_x_;
  double peak = 0.0;
  for (int k = 0; k < n; ++k) {
    const double fx = f.force_window[0 * n + k];
    const double fy = f.force_window[1 * n + k];
    const double tz = f.force_window[2 * n + k] / cfg_.sensor_torque_lever;
    peak = std::max(peak, std::sqrt(fx * fx + fy * fy + tz * tz));
  }
  f.contact_gt = peak >= cfg_.contact_gt_floor;
  f.any_contact = any_contact_period_;
  any_contact_period_ = false;
  f.reward_state = reward_state();
  return f;
}

SensorFrame Env::reset(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "env.reset"));
  unstable_ = false;
  diagnostic_.clear();
  time_ = 0.0;
  any_contact_period_ = false;
  window_.assign(window_.size(), 0.0);
  window_head_ = 0;
  last_wrench_ee_ = {0.0, 0.0, 0.0};

  box_x_ = cfg_.box_center_x + rng.uniform(-cfg_.box_x_range, cfg_.box_x_range);
  rebuild_statics();

  for (int attempt = 0; attempt < 100; ++attempt) {
    const double tip_x = box_x_ + rng.uniform(-cfg_.start_x_range, cfg_.start_x_range);
    const double tip_y =
        cfg_.box_top_y + rng.uniform(cfg_.start_min_height, cfg_.start_max_height);
    const double alpha =
        kAlphaDown + rng.uniform(-cfg_.start_alpha_range, cfg_.start_alpha_range);
    const Vec2 ee = Vec2{tip_x, tip_y} - rotate({cfg_.peg_length, 0.0}, alpha);
    std::vector<double> q;
    if (!arm_.inverse_kinematics({ee.x, ee.y, alpha}, /*elbow_up=*/true, q)) continue;

    const ArmModel::Frames frames = arm_.forward_kinematics(q);
    bool clear = true;
    // peg clear of every static body
    const Polygon peg = peg_local_.transformed(
        {frames.ee.x, frames.ee.y}, frames.ee.alpha);
    for (const Polygon& s : statics_)
      if (!polygon_contacts(peg, s).empty()) clear = false;
    // links stay above the box top
    for (std::size_t i = 0; i + 1 < frames.joint_pos.size() && clear; ++i) {
      for (int k = 0; k <= 4; ++k) {
        const double tfrac = static_cast<double>(k) / 4.0;
        const Vec2 p = frames.joint_pos[i] +
                       (frames.joint_pos[i + 1] - frames.joint_pos[i]) * tfrac;
        for (const Polygon& s : statics_)
          if (point_in_polygon(s, p)) clear = false;
      }
    }
    if (!clear) continue;

    q_ = q;
    qd_.assign(arm_.dof(), 0.0);
    return make_frame({0.0, 0.0, 0.0});
  }
  throw std::runtime_error("Env::reset: no collision-free start found in 100 tries (seed " +
                           std::to_string(seed) + ")");
}

}  // namespace touchfuse::sim
