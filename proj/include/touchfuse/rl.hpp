#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "touchfuse/common.hpp"

namespace touchfuse::rl {

// Small fully-connected net (tanh hidden, linear output) over one flat
// parameter vector, with hand-written reverse (gradients) and forward (JVP)
// passes. TRPO needs exact Fisher-vector products, hence the JVP.
class Mlp {
 public:
  Mlp(std::vector<int> widths, std::uint64_t seed);

  int n_params() const { return n_params_; }
  int in_dim() const { return widths_.front(); }
  int out_dim() const { return widths_.back(); }
  const std::vector<double>& params() const { return params_; }
  std::vector<double>& params() { return params_; }

  struct Workspace {
    std::vector<std::vector<double>> post;  // activations per layer (incl. input)
  };

  std::vector<double> forward(const std::vector<double>& x, Workspace* ws) const;

  // Accumulates d(dy . y)/d(params) into grad (size n_params); returns dL/dx
  // if dx is non-null.
  void backward(const Workspace& ws, const std::vector<double>& dy,
                std::vector<double>& grad, std::vector<double>* dx) const;

  // Directional derivative of the output w.r.t. parameters along v.
  std::vector<double> jvp_params(const Workspace& ws,
                                 const std::vector<double>& v) const;

 private:
  std::vector<int> widths_;
  std::vector<int> w_offsets_, b_offsets_;
  std::vector<double> params_;
  int n_params_ = 0;
};

struct PolicyConfig {
  int latent_dim = 64;
  int hidden = 64;
  double log_std_init = -0.5;
  double log_std_min = -5.0;
  double log_std_max = 1.0;
};

// Diagonal-Gaussian policy in normalized action units ([-1,1] per axis at
// execution); log-probs are computed on the raw (pre-clamp) sample.
class GaussianPolicy {
 public:
  GaussianPolicy(const PolicyConfig& cfg, std::uint64_t seed);

  int n_params() const;
  std::vector<double> get_params() const;        // [mlp..., log_std x3]
  void set_params(const std::vector<double>& p); // log-std clamped to bounds

  std::array<double, 3> mean(const std::vector<double>& latent) const;
  const std::array<double, 3>& log_std() const { return log_std_; }

  struct Sample {
    std::array<double, 3> action;  // raw, pre-clamp
    double log_prob = 0.0;
  };
  Sample sample(const std::vector<double>& latent, Rng& rng) const;
  double log_prob(const std::vector<double>& latent,
                  const std::array<double, 3>& action) const;

  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }

 private:
  Mlp net_;
  std::array<double, 3> log_std_;
  PolicyConfig cfg_;
};

struct RolloutBatch {
  std::vector<std::vector<double>> obs;
  std::vector<std::array<double, 3>> actions;  // raw samples
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<std::size_t> episode_starts;  // ascending, first is 0
  std::vector<double> advantages;     // filled by compute_gae
  std::vector<double> value_targets;  // advantages + values

  std::size_t size() const { return rewards.size(); }
};

// GAE(lambda, gamma) per episode (no bootstrapping across boundaries);
// optionally normalizes advantages to zero mean/unit variance per batch.
void compute_gae(RolloutBatch& batch, double gamma, double lambda,
                 bool normalize_advantages);

// Conjugate gradient for SPD systems given a matrix-vector product.
struct CgResult {
  std::vector<double> x;
  double residual = 0.0;
  bool converged = false;
  int iterations = 0;
};
CgResult conjugate_gradient(
    const std::function<std::vector<double>(const std::vector<double>&)>& matvec,
    const std::vector<double>& b, int max_iters, double tol);

struct TrpoConfig {
  double max_kl = 1e-2;
  double damping = 0.1;
  int cg_iters = 10;
  double cg_tol = 1e-10;
  int line_search_steps = 10;
  double line_search_factor = 0.5;
  double kl_acceptance_slack = 1.5;
};

struct TrpoDiagnostics {
  double surrogate_before = 0.0;
  double surrogate_delta = 0.0;
  double kl_after = 0.0;
  bool accepted = false;
  int line_search_index = -1;
  bool cg_converged = false;
  double cg_residual = 0.0;
};

// Surrogate objective mean(ratio * advantage) and its gradient at the current
// parameters; exposed for diagnostics and tests.
double surrogate_objective(const GaussianPolicy& policy, const RolloutBatch& batch);
std::vector<double> surrogate_gradient(const GaussianPolicy& policy,
                                       const RolloutBatch& batch);
// Mean KL(old || new) over batch states, old = the sampling-time parameters.
double mean_kl(const GaussianPolicy& old_policy, const GaussianPolicy& new_policy,
               const RolloutBatch& batch);
// Exact Gaussian Fisher-vector product at the current parameters
// (E[Jmu^T Sigma^-1 Jmu] plus 2I on the log-std block).
std::vector<double> fisher_vector_product(const GaussianPolicy& policy,
                                          const RolloutBatch& batch,
                                          const std::vector<double>& v);

TrpoDiagnostics trpo_update(GaussianPolicy& policy, const RolloutBatch& batch,
                            const TrpoConfig& cfg);

// Value baseline: tanh MLP fit by Adam on standardized targets.
class ValueNet {
 public:
  ValueNet(int latent_dim, int hidden, std::uint64_t seed);
  double predict(const std::vector<double>& latent) const;
  // Several epochs of minibatch regression; returns the per-epoch MSE (in
  // standardized units) for monotonicity diagnostics.
  std::vector<double> fit(const std::vector<std::vector<double>>& obs,
                          const std::vector<double>& targets, int epochs,
                          double lr, int minibatch, std::uint64_t seed);

 private:
  Mlp net_;
  std::vector<double> adam_m_, adam_v_;
  std::int64_t adam_step_ = 0;
  double target_mean_ = 0.0;
  double target_std_ = 1.0;
};

}  // namespace touchfuse::rl
