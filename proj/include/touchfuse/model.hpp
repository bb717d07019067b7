#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "touchfuse/gaussian.hpp"
#include "touchfuse/nn.hpp"

namespace touchfuse::model {

enum class Variant { kFull, kDeterministic, kReconstruction };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct LossWeights {
  double flow = 1.0;
  double mask = 1.0;
  double contact = 1.0;
  double ee_pose = 1.0;
  double pairing = 1.0;
  double kl = 1.0;
  double recon_image = 1.0;
  double recon_proprio = 1.0;
  double recon_force = 1.0;
};

struct ModelConfig {
  int d = 128;
  int image_size = 32;  // paper scale 128, desk default 32
  int force_channels = 3;
  int force_window = 32;
  Variant variant = Variant::kFull;
  std::set<std::string> modalities{"rgb", "depth", "force", "proprio"};
  LossWeights loss_weights;
  int pairing_hidden = 32;        // 0: plain logistic head
  bool pairing_conditioned = false;
  bool include_prior = true;
  double var_floor = 1e-6;
  int cond_width = 128;
  int action_dim = 3;
  int proprio_dim = 6;
  // input scaling to O(1)
  std::array<double, 3> action_limits{0.01, 0.01, 0.05};
  double force_scale = 10.0;   // Newtons per unit
  double pose_scale = 0.5;     // meters per unit (x, y); alpha scaled by pi/2
  double depth_scale = 1.0;    // meters per unit

  int flow_out() const { return image_size / 4; }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// One frame's model-facing inputs, already flattened.
struct ModelInputs {
  std::vector<double> rgb;    // [3, S, S], values in [0, 1]
  std::vector<double> depth;  // [S, S], meters
  std::vector<double> force;  // [C, W]
  std::array<double, 6> proprio{};
  std::array<double, 3> action{};  // physical units
};

// Self-supervised targets attached to one frame.
struct TrainingSample {
  ModelInputs in;
  std::vector<double> flow;             // [2, S, S] pixels
  std::vector<std::uint8_t> flow_mask;  // [S, S]
  bool contact_next = false;
  std::array<double, 3> next_ee_pose{};  // physical units
  bool paired = true;
};

struct LossBreakdown {
  double total = 0.0;
  std::map<std::string, double> terms;
  double contact_prob = 0.0;
  double pairing_prob = 0.0;
};

// The representation network: modality encoders, PoE (or concatenation)
// fusion, action conditioning, and the decoder heads for the self-supervised
// objectives (or input reconstruction, for that baseline variant).
class MultimodalModel {
 public:
  MultimodalModel(ModelConfig cfg, std::uint64_t seed);
  MultimodalModel(ModelConfig cfg, ParameterSet params);  // from checkpoint

  const ModelConfig& config() const { return cfg_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }

  // Per-modality posteriors (full/reconstruction variants). Order follows the
  // canonical modality order rgb, depth, force, proprio restricted to the
  // unmasked set.
  std::vector<DiagGaussian> encode(const ModelInputs& in) const;

  // Fused latent for policy use: mean of the PoE posterior (no sampling), or
  // the deterministic fusion output.
  std::vector<double> encode_mean(const ModelInputs& in) const;

  // Training loss graph over one sample. The reparameterization noise is
  // supplied by the caller (length d). Head probabilities and the per-term
  // breakdown are reported through `out`.
  Var build_loss(Tape& tape, ParamBinder& bind, const TrainingSample& sample,
                 const Tensor& noise, LossBreakdown* out) const;

  // Convenience: loss breakdown without gradients.
  LossBreakdown eval_loss(const TrainingSample& sample, const Tensor& noise) const;

  // Action-conditioned head outputs (mean-latent path, full/deterministic).
  struct HeadOutputs {
    std::vector<double> flow;       // [2, S, S], mask already applied
    std::vector<double> mask_prob;  // [S, S]
    double contact_prob = 0.0;
    std::array<double, 3> ee_pose{};  // physical units
    double pairing_prob = 0.5;
  };
  HeadOutputs predict_heads(const ModelInputs& in) const;

  void save(const std::string& path, const nlohmann::json& extra_fields) const;
  static MultimodalModel load(const std::string& path, nlohmann::json* extra_out);

 private:
  struct Encoders {
    std::vector<VarGaussian> experts;          // full/reconstruction
    std::vector<Var> det_features;             // deterministic (2d each)
    std::vector<std::string> names;            // modality order used
    std::map<int, Var> skip_feats;             // resolution -> feature map
  };
  Encoders build_encoders(Tape& tape, ParamBinder& bind, const ModelInputs& in) const;
  Var build_latent(Tape& tape, ParamBinder& bind, const Encoders& enc,
                   const Tensor* noise, VarGaussian* fused_out) const;

  void create_params(std::uint64_t seed);

  ModelConfig cfg_;
  ParameterSet params_;
};

}  // namespace touchfuse::model
