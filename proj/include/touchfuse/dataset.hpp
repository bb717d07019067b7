#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "touchfuse/config.hpp"
#include "touchfuse/labels.hpp"
#include "touchfuse/model.hpp"
#include "touchfuse/sim/env.hpp"

namespace touchfuse::dataset {

// Record-oriented episode logs: a one-line JSON header, then fixed-size
// binary records (one per policy tick). Schema v1 holds raw sensor frames and
// ground truth; v2 appends the self-supervised labels.
//
// Per-record layout, little-endian:
//   rgb       3*S*S   u8   (x255; the renderer palette is exact under this)
//   depth     S*S     f32
//   force     C*W     f32
//   proprio   6       f64
//   action    3       f64
//   sim_time  1       f64
//   q, qd     2*dof   f64
//   contact_gt, any_contact  2 u8
//   reward s  3       f64
//   s_psi     1       f64
// v2 appends:
//   flow      2*S*S   i16  (fixed point, 1/256 px)
//   mask      ceil(S*S/8)  bitset
//   contact_label, contact_next  2 u8
//   next_ee_pose 3    f64
constexpr int kSchemaRaw = 1;
constexpr int kSchemaLabeled = 2;

struct LoggedFrame {
  sim::SensorFrame frame;
  // labels (schema v2; valid for all but the last frame of an episode)
  std::vector<double> flow;
  std::vector<std::uint8_t> flow_mask;
  bool contact_next = false;
  std::array<double, 3> next_ee_pose{};
  bool contact_label = false;  // thresholded from this frame's own window
};

struct EpisodeHeader {
  int schema_version = kSchemaRaw;
  std::uint64_t episode_seed = 0;
  std::string policy;  // "random" | "heuristic" | "trained"
  int n_frames = 0;
  int image_size = 32;
  int force_channels = 3;
  int force_window = 32;
  int dof = 3;
  double box_x = 0.0;
};

void write_episode(const std::string& path, const EpisodeHeader& header,
                   const std::vector<LoggedFrame>& frames);
std::pair<EpisodeHeader, std::vector<LoggedFrame>> read_episode(const std::string& path);

std::uint64_t file_checksum(const std::string& path);

struct EpisodeMeta {
  std::string file;
  std::uint64_t seed = 0;
  std::string policy;
  int n_frames = 0;
  std::uint64_t checksum = 0;
  int schema_version = kSchemaRaw;
  std::vector<std::uint8_t> contact_classes;  // per frame, from labels
};

// Dataset directory: episode files + index.json with per-episode metadata,
// checksums, and the contact-class index used by pairing.
class Dataset {
 public:
  static Dataset open(const std::string& dir);  // verifies checksums
  static void write_index(const std::string& dir, const std::vector<EpisodeMeta>& episodes,
                          const nlohmann::json& stats);

  const std::string& dir() const { return dir_; }
  const std::vector<EpisodeMeta>& episodes() const { return episodes_; }
  const nlohmann::json& stats() const { return stats_; }
  bool labeled() const;
  std::size_t n_samples() const;  // trainable samples: n_frames-1 per episode

  std::pair<EpisodeHeader, std::vector<LoggedFrame>> load_episode(std::size_t i) const;

  // Train/test split by whole episodes, fixed by seed.
  struct Split {
    std::vector<std::size_t> train, test;
  };
  Split split(double test_fraction, std::uint64_t seed) const;

 private:
  std::string dir_;
  std::vector<EpisodeMeta> episodes_;
  nlohmann::json stats_;
};

// In-memory view for training: all labeled episodes decoded on demand.
class SampleStore {
 public:
  SampleStore(const Dataset& ds, const std::vector<std::size_t>& episode_ids);

  std::size_t size() const { return flat_.size(); }
  // Assembles the training sample; with probability 1/2 swaps the force
  // window with an opposite-contact-class frame (the pairing objective).
  // Throws if the store holds only one contact class.
  model::TrainingSample sample(std::size_t i, Rng& rng, bool allow_swap = true) const;
  model::TrainingSample plain_sample(std::size_t i) const;
  double contact_positive_fraction() const;
  bool has_both_contact_classes() const {
    return !global_pos_.empty() && !global_neg_.empty();
  }

 private:
  struct Ref {
    std::size_t episode;  // index into episodes_
    int t;
  };
  const LoggedFrame& frame(std::size_t episode, int t) const {
    return episodes_[episode].second[t];
  }
  model::TrainingSample assemble(const Ref& r) const;

  std::vector<std::pair<EpisodeHeader, std::vector<LoggedFrame>>> episodes_;
  std::vector<Ref> flat_;
  std::vector<std::vector<int>> contact_pos_, contact_neg_;  // per episode frame ids
  std::vector<std::pair<std::size_t, int>> global_pos_, global_neg_;
};

// Model-facing view of a sensor frame.
model::ModelInputs inputs_from_frame(const sim::SensorFrame& f);

// Offline label generation: reads v1 episodes, writes v2 next to them, and
// refreshes the index (with contact classes and dataset statistics).
void label_dataset(const std::string& dir, const pipeline::RunConfig& cfg, int workers);

}  // namespace touchfuse::dataset
