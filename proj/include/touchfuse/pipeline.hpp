#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "touchfuse/config.hpp"
#include "touchfuse/dataset.hpp"
#include "touchfuse/rl.hpp"

namespace touchfuse::pipeline {

inline constexpr const char* kVersion = "touchfuse 0.1.0";

// Writes the resolved config, seed, and version next to every command's
// outputs so runs replay exactly.
void archive_run(const std::string& out_dir, const RunConfig& cfg, std::uint64_t seed,
                 const nlohmann::json& extra = nlohmann::json::object());

// Rolls out the 50/50 random/heuristic mix and writes raw (v1) episode logs
// plus the dataset index. Returns the dataset directory.
struct CollectResult {
  std::string dataset_dir;
  int episodes = 0;
  std::size_t states = 0;
};
CollectResult collect(const RunConfig& cfg, std::uint64_t seed,
                      const std::string& out_dir, int workers);

struct TrainReprResult {
  std::string checkpoint;          // final (last good) model checkpoint
  nlohmann::json report;           // per-head losses, accuracies, ratios
  bool aborted_non_finite = false;
};
TrainReprResult train_representation(const RunConfig& cfg, std::uint64_t seed,
                                     const std::string& dataset_dir,
                                     const std::string& out_dir, int workers);

struct TrainPolicyResult {
  std::string policy_checkpoint;  // best-by-training-return checkpoint
  std::string final_checkpoint;
  std::string curve_file;  // JSONL, one object per update
  int updates = 0;
  double kl_within_bound_fraction = 0.0;
  double value_fit_monotone_fraction = 0.0;
  std::uint64_t repr_hash_before = 0, repr_hash_after = 0;
};
TrainPolicyResult train_policy(const RunConfig& cfg, std::uint64_t seed,
                               const std::string& repr_checkpoint,
                               const std::string& out_dir, int workers);

struct EvalResult {
  int episodes = 0;
  int completed = 0, inserted = 0, touched = 0, failed = 0;
  double mean_normalized_return = 0.0;
  std::string report_file;  // JSONL, one object per episode

  double completion_rate() const {
    return episodes ? static_cast<double>(completed) / episodes : 0.0;
  }
};
// policy_checkpoint may be empty: evaluates the random policy baseline.
EvalResult evaluate(const RunConfig& cfg, std::uint64_t seed,
                    const std::string& policy_checkpoint, const std::string& out_dir,
                    int workers);

struct AblateCell {
  std::string name;
  RunConfig cfg;
  bool random_baseline = false;
};
std::vector<AblateCell> ablate_cells(const RunConfig& base, const std::string& axis);

struct AblateResult {
  nlohmann::json table;  // per cell x seed: outcomes and returns
  std::string csv_file;
};
AblateResult ablate(const RunConfig& cfg, std::uint64_t seed, const std::string& axis,
                    const std::string& out_dir, int workers, bool resume);

}  // namespace touchfuse::pipeline
