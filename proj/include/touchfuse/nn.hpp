#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "touchfuse/autodiff.hpp"
#include "touchfuse/common.hpp"
#include "touchfuse/tensor.hpp"

namespace touchfuse {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named parameter store with Adam state and an external gradient accumulator.
// Single writer; concurrent readers are fine while no update is running.
class ParameterSet {
 public:
  struct Entry {
    Tensor value;
    Tensor m;  // first moment
    Tensor v;  // second moment
    Tensor grad;
  };

  // Xavier-uniform (+-sqrt(6/(fan_in+fan_out))) for weights, zeros for biases.
  // Seeded per name so initialization does not depend on creation order.
  Tensor& add(const std::string& name, Shape shape, std::uint64_t seed,
              double fan_in, double fan_out);
  Tensor& add_zeros(const std::string& name, Shape shape);
  Tensor& add_value(const std::string& name, Tensor value);

  bool has(const std::string& name) const { return entries_.count(name) > 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& mutable_value(const std::string& name);
  Tensor& grad(const std::string& name);

  void zero_grads();
  // Accumulates g into the named gradient buffer, scaled by `scale`.
  void accumulate_grad(const std::string& name, const std::vector<double>& g,
                       double scale = 1.0);

  // Bias-corrected Adam on every parameter with a populated gradient.
  // Parameters with non-finite gradients are skipped (counted), then all
  // gradients are cleared.
  void adam_step(const AdamConfig& cfg);

  std::int64_t step_count() const { return step_; }
  std::int64_t skipped_updates() const { return skipped_; }

  std::size_t total_params() const;
  std::uint64_t value_hash() const;  // FNV-1a over raw parameter bytes

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }

  void set_step_count(std::int64_t s) { step_ = s; }

 private:
  std::map<std::string, Entry> entries_;  // ordered: deterministic iteration
  std::int64_t step_ = 0;
  std::int64_t skipped_ = 0;
};

// Records tape-parameter bindings so gradients can be pulled back out by name.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, const ParameterSet& params)
      : tape_(tape), params_(params) {}

  Var operator()(const std::string& name) {
    Var v = tape_.param(params_.get(name));
    bound_.emplace_back(name, v);
    return v;
  }

  // After tape.backward(), adds every bound parameter's gradient into the
  // accumulator, scaled (e.g. by 1/batch).
  void harvest(ParameterSet& into, double scale = 1.0) const;

  const std::vector<std::pair<std::string, Var>>& bound() const { return bound_; }

 private:
  Tape& tape_;
  const ParameterSet& params_;
  std::vector<std::pair<std::string, Var>> bound_;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  std::vector<std::string> failing(double tolerance) const;
  bool pass(double tolerance) const { return max_rel_error < tolerance; }
};

// Central finite differences of a scalar-valued graph against analytic
// gradients. `build` must construct the loss from the given tape/binder on
// every call. Parameter values are perturbed in place and restored.
GradCheckReport grad_check(
    const std::function<Var(Tape&, ParamBinder&)>& build, ParameterSet& params,
    double step = 1e-5);

}  // namespace touchfuse
