#pragma once

#include <string>

#include "json.hpp"
#include "touchfuse/control.hpp"
#include "touchfuse/labels.hpp"
#include "touchfuse/model.hpp"
#include "touchfuse/reward.hpp"
#include "touchfuse/sim/env.hpp"

namespace touchfuse::pipeline {

struct CollectConfig {
  int n_states = 20000;
  int episode_steps = 200;
  double heuristic_fraction = 0.5;  // by episode
};

struct TrainReprConfig {
  int epochs = 20;
  int batch_size = 64;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double test_fraction = 0.1;  // split by whole episodes
};

struct RlSchedule {
  int episode_steps = 200;
  int batch_size = 1000;
  int n_updates = 100;
  double gamma = 0.995;
  double gae_lambda = 0.97;
  double max_kl = 1e-2;
  double damping = 0.1;
  int cg_iters = 10;
  int line_search_steps = 10;
  double line_search_factor = 0.5;
  int value_epochs = 5;
  double value_lr = 3e-3;
  int value_minibatch = 64;
  int policy_hidden = 64;
  int value_hidden = 64;
  double log_std_init = -0.5;
};

struct EvalConfig {
  int n_episodes = 50;
};

// The one nested configuration document every command consumes. Parsed
// schema-strict: unknown keys anywhere are rejected.
struct RunConfig {
  int schema_version = 1;
  model::ModelConfig model;
  sim::WorldConfig world;
  control::ControllerConfig controller;
  reward::RewardConfig reward;
  labels::ContactLabelConfig labels;
  CollectConfig collect;
  TrainReprConfig train_repr;
  RlSchedule rl;
  EvalConfig eval;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
  void save(const std::string& path) const;
};

// The desk-scale defaults used throughout: d=64, 32x32 images, slot task.
RunConfig desk_config();

}  // namespace touchfuse::pipeline
