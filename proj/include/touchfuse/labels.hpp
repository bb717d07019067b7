#pragma once

#include <cstdint>
#include <vector>

#include "touchfuse/sim/env.hpp"

namespace touchfuse::labels {

struct FlowLabel {
  std::vector<double> flow;    // [2, S, S] pixel displacements (u: cols, v: rows)
  std::vector<std::uint8_t> mask;  // [S, S] robot pixels at time t
};

// Optical flow of robot pixels from kinematics, not images: each masked pixel
// is unprojected, expressed in its link frame at time t, carried to t+1, and
// reprojected. Flow is zero outside the mask.
FlowLabel gen_flow_label(sim::Env& scratch, const std::vector<double>& q_t,
                         const std::vector<double>& q_t1, double box_x);

struct ContactLabelConfig {
  double threshold = 1.0;      // N-equivalent on the window wrench norm
  double torque_lever = 0.1;   // m
};

// True iff the max wrench norm over the window exceeds the threshold.
bool gen_contact_label(const std::vector<double>& force_window, int window_len,
                       const ContactLabelConfig& cfg);

// Mean distance (pixels) from flow-warped mask pixels of frame t to the
// nearest robot pixel of frame t+1; the flow/render consistency metric.
double warp_consistency_error(const FlowLabel& label,
                              const std::vector<std::uint8_t>& mask_t1, int size);

}  // namespace touchfuse::labels
