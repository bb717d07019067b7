#include "touchfuse/reward.hpp"

#include <cmath>

namespace touchfuse::reward {

RewardValue staged_reward(const Vec3& s, double s_psi, const RewardConfig& cfg) {
  const double sz = s[2];
  const double abs_sz = std::abs(sz);
  // (c) completion; only reachable from inside the hole (see ledger: the
  // unguarded printed condition also fires far above the mouth)
  if (sz < 0.0 && cfg.hole_depth - abs_sz <= cfg.eps_complete)
    return {cfg.completion_reward, RewardCase::kCompleted};
  // (i) insertion
  if (sz < 0.0)
    return {2.0 + cfg.c_i * (cfg.hole_depth - abs_sz), RewardCase::kInserted};
  // (a) alignment: |s| <= eps elementwise and angle within tolerance
  if (std::abs(s[0]) <= cfg.eps_align[0] && std::abs(s[1]) <= cfg.eps_align[1] &&
      abs_sz <= cfg.eps_align[2] && s_psi <= cfg.eps_psi) {
    const double snorm = std::sqrt(s[0] * s[0] + s[1] * s[1] + s[2] * s[2]);
    const double enorm = std::sqrt(cfg.eps_align[0] * cfg.eps_align[0] +
                                   cfg.eps_align[1] * cfg.eps_align[1] +
                                   cfg.eps_align[2] * cfg.eps_align[2]);
    const double v = 1.0 + cfg.c_a * (1.0 - snorm / enorm) * (1.0 - s_psi / cfg.eps_psi);
    return {v, RewardCase::kAligned};
  }
  // (r) reaching
  const double snorm = std::sqrt(s[0] * s[0] + s[1] * s[1] + s[2] * s[2]);
  const double v = cfg.c_r * (1.0 - std::tanh(cfg.lambda * snorm)) * (1.0 - s_psi);
  return {v, RewardCase::kReaching};
}

std::string to_string(EpisodeOutcome o) {
  switch (o) {
    case EpisodeOutcome::kCompleted: return "completed";
    case EpisodeOutcome::kInserted: return "inserted";
    case EpisodeOutcome::kTouched: return "touched";
    case EpisodeOutcome::kFailed: return "failed";
  }
  return "failed";
}

EpisodeOutcome categorize_episode(const std::vector<StepRecord>& steps,
                                  const RewardConfig& cfg) {
  bool inserted = false, touched = false;
  for (const StepRecord& r : steps) {
    const RewardValue rv = staged_reward(r.state.s, r.state.s_psi, cfg);
    if (rv.which == RewardCase::kCompleted) return EpisodeOutcome::kCompleted;
    if (r.state.s[2] < 0.0) inserted = true;
    if (r.contact) touched = true;
  }
  if (inserted) return EpisodeOutcome::kInserted;
  if (touched) return EpisodeOutcome::kTouched;
  return EpisodeOutcome::kFailed;
}

double normalized_return(const std::vector<double>& rewards, std::size_t horizon,
                         const RewardConfig& cfg) {
  double sum = 0.0;
  for (double r : rewards) sum += r;
  return sum / (cfg.completion_reward * static_cast<double>(horizon));
}

}  // namespace touchfuse::reward
