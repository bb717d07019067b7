#include "touchfuse/nn.hpp"

#include <algorithm>
#include <cmath>

namespace touchfuse {

Tensor& ParameterSet::add(const std::string& name, Shape shape,
                          std::uint64_t seed, double fan_in, double fan_out) {
  Rng rng(derive_seed(seed, name));
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return add_value(name, std::move(t));
}

Tensor& ParameterSet::add_zeros(const std::string& name, Shape shape) {
  return add_value(name, Tensor::zeros(std::move(shape)));
}

Tensor& ParameterSet::add_value(const std::string& name, Tensor value) {
  if (entries_.count(name))
    throw std::invalid_argument("ParameterSet: duplicate parameter '" + name + "'");
  Entry e;
  e.m = Tensor::zeros(value.shape);
  e.v = Tensor::zeros(value.shape);
  e.grad = Tensor::zeros(value.shape);
  e.value = std::move(value);
  auto [it, ok] = entries_.emplace(name, std::move(e));
  (void)ok;
  return it->second.value;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::invalid_argument("ParameterSet: unknown parameter '" + name + "'");
  return it->second.value;
}

Tensor& ParameterSet::mutable_value(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::invalid_argument("ParameterSet: unknown parameter '" + name + "'");
  return it->second.value;
}

Tensor& ParameterSet::grad(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::invalid_argument("ParameterSet: unknown parameter '" + name + "'");
  return it->second.grad;
}

void ParameterSet::zero_grads() {
  for (auto& [name, e] : entries_)
    std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
}

void ParameterSet::accumulate_grad(const std::string& name,
                                   const std::vector<double>& g, double scale) {
  Tensor& dst = grad(name);
  if (dst.numel() != g.size())
    throw std::invalid_argument("accumulate_grad: size mismatch for '" + name + "'");
  for (std::size_t i = 0; i < g.size(); ++i) dst.data[i] += scale * g[i];
}

void ParameterSet::adam_step(const AdamConfig& cfg) {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
  for (auto& [name, e] : entries_) {
    bool finite = true;
    for (double g : e.grad.data)
      if (!std::isfinite(g)) {
        finite = false;
        break;
      }
    if (!finite) {
      ++skipped_;
      std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
      continue;
    }
    for (std::size_t i = 0; i < e.value.numel(); ++i) {
      const double g = e.grad.data[i];
      e.m.data[i] = cfg.beta1 * e.m.data[i] + (1.0 - cfg.beta1) * g;
      e.v.data[i] = cfg.beta2 * e.v.data[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = e.m.data[i] / bc1;
      const double vhat = e.v.data[i] / bc2;
      e.value.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
  }
}

std::size_t ParameterSet::total_params() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.value.numel();
  return n;
}

std::uint64_t ParameterSet::value_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [name, e] : entries_) {
    mix(name.data(), name.size());
    mix(e.value.data.data(), e.value.data.size() * sizeof(double));
  }
  return h;
}

void ParamBinder::harvest(ParameterSet& into, double scale) const {
  for (const auto& [name, var] : bound_) {
    if (var.node()->grad.empty()) continue;  // never touched by backward
    into.accumulate_grad(name, var.node()->grad, scale);
  }
}

std::vector<std::string> GradCheckReport::failing(double tolerance) const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (!(e.max_rel_error < tolerance)) out.push_back(e.name);
  return out;
}

GradCheckReport grad_check(
    const std::function<Var(Tape&, ParamBinder&)>& build, ParameterSet& params,
    double step) {
  // Analytic pass.
  ParameterSet analytic_grads = params;  // copies values; we reuse grad buffers
  analytic_grads.zero_grads();
  {
    Tape tape;
    ParamBinder bind(tape, params);
    Var loss = build(tape, bind);
    tape.backward(loss);
    bind.harvest(analytic_grads, 1.0);
  }

  auto eval = [&]() {
    Tape tape(/*grad_enabled=*/false);
    ParamBinder bind(tape, params);
    return build(tape, bind).scalar();
  };

  GradCheckReport report;
  for (auto& [name, entry] : params.entries()) {
    GradCheckEntry ge;
    ge.name = name;
    Tensor& value = entry.value;
    const Tensor& ag = analytic_grads.grad(name);
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const double saved = value.data[i];
      value.data[i] = saved + step;
      const double up = eval();
      value.data[i] = saved - step;
      const double down = eval();
      value.data[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = ag.data[i];
      // Unit floor: below it the comparison is absolute, so finite-difference
      // roundoff (~1e-10 here) cannot drown out a near-zero true gradient.
      const double denom = std::max({std::abs(a), std::abs(numeric), 1.0});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > ge.max_rel_error) {
        ge.max_rel_error = rel;
        ge.worst_index = i;
        ge.analytic = a;
        ge.numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, ge.max_rel_error);
    report.entries.push_back(std::move(ge));
  }
  return report;
}

}  // namespace touchfuse
