#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "touchfuse/sim/arm.hpp"
#include "touchfuse/sim/geometry.hpp"
#include "touchfuse/sim/render.hpp"

namespace touchfuse::sim {

enum class HoleShape { kSlot, kVee, kStep };

HoleShape hole_shape_from_string(const std::string& s);
std::string to_string(HoleShape s);

struct WorldConfig {
  // arm
  std::vector<LinkParams> links{{0.30, 2.0, 0.0}, {0.25, 1.2, 0.0}, {0.18, 0.6, 0.0}};
  Vec2 arm_base{-0.30, 0.55};
  double gravity_y = 0.0;  // off in-plane by default
  std::vector<double> torque_limits{60.0, 40.0, 20.0};
  // box with hole
  HoleShape hole_shape = HoleShape::kSlot;
  double clearance = 2e-3;   // m, per side at the mouth
  double hole_depth = 0.04;  // h_d
  double box_top_y = 0.16;
  double box_half_width = 0.18;
  double box_center_x = 0.10;
  double box_x_range = 0.05;  // mouth center sampled uniformly +- this
  // peg (rigidly attached to the last link, pointing along the EE x-axis)
  double peg_width = 0.016;
  double peg_length = 0.07;
  double link_draw_width = 0.034;
  // contact
  PenaltyParams contact;
  double physics_dt = 1e-3;
  double unstable_penetration_factor = 10.0;  // x clearance terminates
  // camera
  int image_size = 32;
  Vec2 camera_min{-0.15, 0.0};
  double camera_extent = 0.5;
  // sensors
  int force_window = 32;
  double sensor_torque_lever = 0.1;  // m; wrench norm uses tau/lever
  double contact_gt_floor = 0.1;     // N-equivalent ground-truth floor
  // episode start sampling (relative to the hole mouth)
  double start_x_range = 0.10;
  double start_min_height = 0.06;
  double start_max_height = 0.22;
  double start_alpha_range = 0.3;  // around straight-down
};

// Reward-facing state: s = (s_x, s_y=0, s_axis) is the peg tip relative to
// the hole mouth; s_axis counts as negative depth only while the tip is
// within the mouth's lateral span. s_psi is |angle error| / pi in [0, 1].
struct RewardState {
  Vec3 s{0.0, 0.0, 0.0};
  double s_psi = 0.0;
};

struct SensorFrame {
  std::vector<double> rgb;           // [3, S, S]
  std::vector<double> depth;         // [S, S]
  std::vector<double> force_window;  // [C, W], index W-1 newest
  std::array<double, 6> proprio{};   // x, y, alpha, xd, yd, alphad
  std::array<double, 3> action{};    // executed (dx, dy, dalpha) this period
  double sim_time = 0.0;
  // ground truth, logged but never fed to the model
  std::vector<double> q, qd;
  double box_x = 0.0;
  bool contact_gt = false;   // window peak wrench norm >= gt floor
  bool any_contact = false;  // geometric contact during the last period
  RewardState reward_state;
};

// Planar torque-controlled arm with a peg, a holed box, penalty contact, and
// sensor synthesis. One instance per worker; no shared mutable state.
class Env {
 public:
  explicit Env(const WorldConfig& cfg);

  const WorldConfig& config() const { return cfg_; }
  const ArmModel& arm() const { return arm_; }
  const Camera& camera() const { return camera_; }
  std::size_t dof() const { return arm_.dof(); }

  // Seed fixes the box pose and the collision-free arm start. Throws
  // std::runtime_error (naming the seed) if no valid start in 100 tries.
  SensorFrame reset(std::uint64_t seed);

  // One physics tick under the given joint torques (clamped to limits).
  void step(const std::vector<double>& tau);

  // Renders, snapshots the force window, clears the per-period contact
  // accumulator, and stamps the executed action.
  SensorFrame make_frame(const std::array<double, 3>& action_taken);

  bool unstable() const { return unstable_; }
  const std::string& diagnostic() const { return diagnostic_; }
  double time() const { return time_; }

  const std::vector<double>& q() const { return q_; }
  const std::vector<double>& qd() const { return qd_; }
  double box_x() const { return box_x_; }
  Pose ee_pose() const;
  Vec3 ee_velocity() const;
  Vec2 peg_tip() const;
  double mouth_half_width() const { return mouth_half_width_; }
  RewardState reward_state() const;

  // Replay/label support: place the world in an exact recorded state.
  void set_state(const std::vector<double>& q, const std::vector<double>& qd,
                 double box_x);

  Polygon peg_polygon_world() const;
  const std::vector<Polygon>& static_polygons() const { return statics_; }
  std::vector<DrawBody> scene_bodies() const;
  RenderResult render() const;

  // Most recent instantaneous contact wrench at the EE, sensor (EE) frame.
  Vec3 last_sensor_wrench() const { return last_wrench_ee_; }

 private:
  void rebuild_statics();
  void push_wrench_sample(const Vec3& w);

  WorldConfig cfg_;
  ArmModel arm_;
  Camera camera_;
  Polygon peg_local_;  // EE frame
  std::vector<Polygon> statics_;
  double mouth_half_width_ = 0.0;

  std::vector<double> q_, qd_;
  double box_x_ = 0.0;
  double time_ = 0.0;
  bool unstable_ = false;
  std::string diagnostic_;
  bool any_contact_period_ = false;

  std::vector<double> window_;  // [C, W] ring, flattened
  int window_head_ = 0;         // next write slot
  Vec3 last_wrench_ee_{0.0, 0.0, 0.0};
};

}  // namespace touchfuse::sim
