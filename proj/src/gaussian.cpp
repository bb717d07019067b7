#include "touchfuse/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace touchfuse {

void DiagGaussian::validate() const {
  if (mu.size() != var.size())
    throw std::invalid_argument("DiagGaussian: mu/var length mismatch");
  for (double v : var)
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::invalid_argument("DiagGaussian: variance must be positive and finite");
  for (double m : mu)
    if (!std::isfinite(m))
      throw std::invalid_argument("DiagGaussian: mean must be finite");
}

DiagGaussian poe_fuse(const std::vector<DiagGaussian>& experts, bool include_prior) {
  if (experts.empty())
    throw std::invalid_argument("poe_fuse: at least one expert required");
  const std::size_t d = experts[0].dim();
  for (const DiagGaussian& e : experts) {
    e.validate();
    if (e.dim() != d)
      throw std::invalid_argument("poe_fuse: expert dimension mismatch");
  }
  DiagGaussian out;
  out.mu.resize(d);
  out.var.resize(d);
  // (precision, precision-weighted mean) pairs, sorted before summation so
  // any expert ordering produces the identical float result.
  std::vector<std::pair<double, double>> terms;
  for (std::size_t j = 0; j < d; ++j) {
    terms.clear();
    for (const DiagGaussian& e : experts)
      terms.emplace_back(1.0 / e.var[j], e.mu[j] / e.var[j]);
    if (include_prior) terms.emplace_back(1.0, 0.0);
    std::sort(terms.begin(), terms.end());
    double prec = 0.0, wmean = 0.0;
    for (const auto& [p, w] : terms) {
      prec += p;
      wmean += w;
    }
    out.var[j] = 1.0 / prec;
    out.mu[j] = wmean / prec;
  }
  return out;
}

double kl_to_standard_normal(const DiagGaussian& q) {
  q.validate();
  double acc = 0.0;
  for (std::size_t j = 0; j < q.dim(); ++j)
    acc += q.var[j] + q.mu[j] * q.mu[j] - 1.0 - std::log(q.var[j]);
  return 0.5 * acc;
}

std::vector<double> reparam_sample(const DiagGaussian& q,
                                   const std::vector<double>& noise) {
  if (noise.size() != q.dim())
    throw std::invalid_argument("reparam_sample: noise dimension mismatch");
  std::vector<double> s(q.dim());
  for (std::size_t j = 0; j < q.dim(); ++j)
    s[j] = q.mu[j] + std::sqrt(q.var[j]) * noise[j];
  return s;
}

double bce(const std::vector<double>& prob, const std::vector<double>& label) {
  if (prob.size() != label.size())
    throw std::invalid_argument("bce: size mismatch");
  constexpr double kEps = 1e-7;
  double acc = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double p = std::min(std::max(prob[i], kEps), 1.0 - kEps);
    acc += -(label[i] * std::log(p) + (1.0 - label[i]) * std::log(1.0 - p));
  }
  return acc / static_cast<double>(prob.size());
}

double mse(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != target.size())
    throw std::invalid_argument("mse: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

double epe(const std::vector<double>& flow, const std::vector<double>& target,
           std::size_t npix) {
  if (flow.size() != target.size() || flow.size() != 2 * npix)
    throw std::invalid_argument("epe: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < npix; ++i) {
    const double du = flow[i] - target[i];
    const double dv = flow[npix + i] - target[npix + i];
    acc += std::sqrt(du * du + dv * dv);
  }
  return acc / static_cast<double>(npix);
}

VarGaussian poe_fuse_v(const std::vector<VarGaussian>& experts, bool include_prior) {
  if (experts.empty())
    throw std::invalid_argument("poe_fuse_v: at least one expert required");
  Tape* tape = experts[0].mu.tape();
  const std::size_t d = experts[0].mu.numel();
  for (const VarGaussian& e : experts)
    if (e.mu.numel() != d || e.var.numel() != d)
      throw std::invalid_argument("poe_fuse_v: expert dimension mismatch");

  Var prec_sum, wmean_sum;
  for (const VarGaussian& e : experts) {
    Var prec = reciprocal(e.var);
    Var wmean = mul(e.mu, prec);
    prec_sum = prec_sum.valid() ? add(prec_sum, prec) : prec;
    wmean_sum = wmean_sum.valid() ? add(wmean_sum, wmean) : wmean;
  }
  if (include_prior) {
    // N(0, I): precision 1, weighted mean 0 per dimension
    prec_sum = add_scalar(prec_sum, 1.0);
  }
  (void)tape;
  VarGaussian out;
  out.var = reciprocal(prec_sum);
  out.mu = mul(wmean_sum, out.var);
  return out;
}

Var kl_to_standard_normal_v(const VarGaussian& q) {
  // 1/2 sum(var + mu^2 - 1 - ln var)
  Var inner = sub(add(q.var, square(q.mu)), add_scalar(log_v(q.var), 1.0));
  return mul_scalar(sum(inner), 0.5);
}

Var reparam_sample_v(const VarGaussian& q, const Tensor& noise) {
  Var n = q.mu.tape()->input(noise);
  return add(q.mu, mul(sqrt_v(q.var), n));
}

}  // namespace touchfuse
