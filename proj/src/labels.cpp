#include "touchfuse/labels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace touchfuse::labels {

using sim::Vec2;

FlowLabel gen_flow_label(sim::Env& scratch, const std::vector<double>& q_t,
                         const std::vector<double>& q_t1, double box_x) {
  const std::vector<double> zeros(q_t.size(), 0.0);
  scratch.set_state(q_t, zeros, box_x);
  const sim::RenderResult r = scratch.render();
  const sim::ArmModel::Frames ft = scratch.arm().forward_kinematics(q_t);
  const sim::ArmModel::Frames ft1 = scratch.arm().forward_kinematics(q_t1);
  const sim::Camera& cam = scratch.camera();
  const int s = cam.image_size;

  FlowLabel out;
  out.flow.assign(2 * s * s, 0.0);
  out.mask.assign(s * s, 0);
  for (int row = 0; row < s; ++row) {
    for (int col = 0; col < s; ++col) {
      const int i = row * s + col;
      const int body = r.body_id[i];
      if (body < 0) continue;
      out.mask[i] = 1;
      const Vec2 pw = cam.pixel_to_world(row, col);
      const Vec2 local = sim::rotate(pw - ft.joint_pos[body], -ft.theta[body]);
      const Vec2 moved = ft1.joint_pos[body] + sim::rotate(local, ft1.theta[body]);
      const Vec2 from = cam.world_to_pixel(pw);
      const Vec2 to = cam.world_to_pixel(moved);
      out.flow[i] = to.x - from.x;          // u: columns
      out.flow[s * s + i] = to.y - from.y;  // v: rows
    }
  }
  return out;
}

bool gen_contact_label(const std::vector<double>& force_window, int window_len,
                       const ContactLabelConfig& cfg) {
  if (static_cast<int>(force_window.size()) != 3 * window_len)
    throw std::invalid_argument("gen_contact_label: window must be [3, W]");
  double peak = 0.0;
  for (int k = 0; k < window_len; ++k) {
    const double fx = force_window[0 * window_len + k];
    const double fy = force_window[1 * window_len + k];
    const double tz = force_window[2 * window_len + k] / cfg.torque_lever;
    peak = std::max(peak, std::sqrt(fx * fx + fy * fy + tz * tz));
  }
  return peak > cfg.threshold;
}

double warp_consistency_error(const FlowLabel& label,
                              const std::vector<std::uint8_t>& mask_t1, int size) {
  // distance transform (BFS, chessboard-ish via 8-neighborhood) of mask_t1
  std::vector<double> dist(size * size, std::numeric_limits<double>::max());
  std::queue<int> frontier;
  for (int i = 0; i < size * size; ++i)
    if (mask_t1[i]) {
      dist[i] = 0.0;
      frontier.push(i);
    }
  if (frontier.empty()) return std::numeric_limits<double>::max();
  while (!frontier.empty()) {
    const int i = frontier.front();
    frontier.pop();
    const int r = i / size, c = i % size;
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        if (dr == 0 && dc == 0) continue;
        const int nr = r + dr, nc = c + dc;
        if (nr < 0 || nr >= size || nc < 0 || nc >= size) continue;
        const int ni = nr * size + nc;
        const double nd = dist[i] + std::hypot(static_cast<double>(dr),
                                               static_cast<double>(dc));
        if (nd < dist[ni] - 1e-12) {
          dist[ni] = nd;
          frontier.push(ni);
        }
      }
  }

  double sum = 0.0;
  std::size_t count = 0;
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const int i = r * size + c;
      if (!label.mask[i]) continue;
      const double uc = c + label.flow[i];
      const double vr = r + label.flow[size * size + i];
      const int tc = std::clamp(static_cast<int>(std::lround(uc)), 0, size - 1);
      const int tr = std::clamp(static_cast<int>(std::lround(vr)), 0, size - 1);
      sum += dist[tr * size + tc];
      ++count;
    }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

}  // namespace touchfuse::labels
