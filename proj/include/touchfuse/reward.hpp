#pragma once

#include <string>
#include <vector>

#include "touchfuse/sim/env.hpp"

namespace touchfuse::reward {

using sim::RewardState;
using sim::Vec3;

struct RewardConfig {
  double lambda = 10.0;  // tanh scale, 1/m
  double c_r = 1.0;
  double c_a = 1.0;
  double c_i = 50.0;  // default resolved to 2/h_d by config loading
  Vec3 eps_align{0.01, 0.01, 0.01};
  double eps_psi = 0.2;
  double eps_complete = 1e-3;
  double hole_depth = 0.04;  // h_d
  double completion_reward = 5.0;
};

enum class RewardCase { kReaching, kAligned, kInserted, kCompleted };

struct RewardValue {
  double value = 0.0;
  RewardCase which = RewardCase::kReaching;
};

// Staged reward, cases checked completion > insertion > alignment > reaching.
// s_psi must already be normalized to [0, 1].
RewardValue staged_reward(const Vec3& s, double s_psi, const RewardConfig& cfg);

enum class EpisodeOutcome { kCompleted, kInserted, kTouched, kFailed };

std::string to_string(EpisodeOutcome o);

struct StepRecord {
  RewardState state;
  bool contact = false;
};

EpisodeOutcome categorize_episode(const std::vector<StepRecord>& steps,
                                  const RewardConfig& cfg);

// Sum of rewards over the episode divided by the highest attainable
// (completion reward every step over the full horizon).
double normalized_return(const std::vector<double>& rewards, std::size_t horizon,
                         const RewardConfig& cfg);

}  // namespace touchfuse::reward
