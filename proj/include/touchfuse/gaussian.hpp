#pragma once

#include <vector>

#include "touchfuse/autodiff.hpp"
#include "touchfuse/tensor.hpp"

namespace touchfuse {

// Diagonal-covariance Gaussian. Every encoder output and the fused posterior
// live here.
struct DiagGaussian {
  std::vector<double> mu;
  std::vector<double> var;

  std::size_t dim() const { return mu.size(); }
  void validate() const;  // sizes match, var > 0 and finite

  static DiagGaussian standard(std::size_t d) {
    return DiagGaussian{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
  }
};

// Normalized product of Gaussian densities: precisions add, means are
// precision-weighted. include_prior appends an implicit N(0, I) expert.
// Per-dimension terms are summed in a sorted canonical order so the result is
// bit-exactly permutation invariant.
DiagGaussian poe_fuse(const std::vector<DiagGaussian>& experts, bool include_prior);

// KL(q || N(0, I)) = 1/2 sum(var + mu^2 - 1 - ln var); always >= 0.
double kl_to_standard_normal(const DiagGaussian& q);

// sample = mu + sqrt(var) * noise. Noise is supplied by the caller so the
// draw is deterministic given a seed.
std::vector<double> reparam_sample(const DiagGaussian& q,
                                   const std::vector<double>& noise);

// Scalar loss kernels (element means).
double bce(const std::vector<double>& prob, const std::vector<double>& label);
double mse(const std::vector<double>& pred, const std::vector<double>& target);
// Flow fields are [2,H,W]: all u components then all v components.
double epe(const std::vector<double>& flow, const std::vector<double>& target,
           std::size_t npix);

// ---- differentiable counterparts (tensor-engine graphs) --------------------

struct VarGaussian {
  Var mu;
  Var var;
};

VarGaussian poe_fuse_v(const std::vector<VarGaussian>& experts, bool include_prior);
Var kl_to_standard_normal_v(const VarGaussian& q);
Var reparam_sample_v(const VarGaussian& q, const Tensor& noise);

}  // namespace touchfuse
