#include "touchfuse/config.hpp"

#include <fstream>
#include <set>

namespace touchfuse::pipeline {

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!j.is_object())
    throw std::invalid_argument("config: '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + where);
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["schema_version"] = schema_version;
  j["model"] = model.to_json();
  j["world"] = {
      {"hole_shape", sim::to_string(world.hole_shape)},
      {"clearance", world.clearance},
      {"hole_depth", world.hole_depth},
      {"box_center_x", world.box_center_x},
      {"box_x_range", world.box_x_range},
      {"contact_stiffness", world.contact.stiffness},
      {"contact_damping", world.contact.damping},
      {"friction", world.contact.friction},
      {"physics_dt", world.physics_dt},
      {"gravity_y", world.gravity_y},
      {"contact_gt_floor", world.contact_gt_floor},
      {"start_x_range", world.start_x_range},
      {"start_min_height", world.start_min_height},
      {"start_max_height", world.start_max_height},
      {"start_alpha_range", world.start_alpha_range},
  };
  j["controller"] = {
      {"kp", controller.kp},
      {"kv", controller.kv},
      {"policy_hz", controller.policy_hz},
      {"torque_hz", controller.torque_hz},
      {"action_limits", controller.action_limits},
      {"null_damping", controller.null_damping},
  };
  j["reward"] = {
      {"lambda", reward.lambda},
      {"c_r", reward.c_r},
      {"c_a", reward.c_a},
      {"c_i", reward.c_i},
      {"eps_align", reward.eps_align},
      {"eps_psi", reward.eps_psi},
      {"eps_complete", reward.eps_complete},
  };
  j["labels"] = {
      {"contact_threshold", labels.threshold},
      {"torque_lever", labels.torque_lever},
  };
  j["collect"] = {
      {"n_states", collect.n_states},
      {"episode_steps", collect.episode_steps},
      {"heuristic_fraction", collect.heuristic_fraction},
  };
  j["train_repr"] = {
      {"epochs", train_repr.epochs},
      {"batch_size", train_repr.batch_size},
      {"lr", train_repr.lr},
      {"beta1", train_repr.beta1},
      {"beta2", train_repr.beta2},
      {"test_fraction", train_repr.test_fraction},
  };
  j["rl"] = {
      {"episode_steps", rl.episode_steps},
      {"batch_size", rl.batch_size},
      {"n_updates", rl.n_updates},
      {"gamma", rl.gamma},
      {"gae_lambda", rl.gae_lambda},
      {"max_kl", rl.max_kl},
      {"damping", rl.damping},
      {"cg_iters", rl.cg_iters},
      {"line_search_steps", rl.line_search_steps},
      {"line_search_factor", rl.line_search_factor},
      {"value_epochs", rl.value_epochs},
      {"value_lr", rl.value_lr},
      {"value_minibatch", rl.value_minibatch},
      {"policy_hidden", rl.policy_hidden},
      {"value_hidden", rl.value_hidden},
      {"log_std_init", rl.log_std_init},
  };
  j["eval"] = {{"n_episodes", eval.n_episodes}};
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  check_keys(j, {"schema_version", "model", "world", "controller", "reward", "labels",
                 "collect", "train_repr", "rl", "eval"},
             "root");
  c.schema_version = j.value("schema_version", 1);
  if (c.schema_version != 1)
    throw std::invalid_argument("config: unsupported schema_version");

  if (j.contains("model")) {
    check_keys(j.at("model"),
               {"d", "image_size", "force_channels", "force_window", "variant",
                "modalities", "loss_weights", "pairing_hidden", "pairing_conditioned",
                "include_prior", "var_floor", "cond_width", "action_dim", "proprio_dim",
                "action_limits", "force_scale", "pose_scale", "depth_scale"},
               "model");
    if (j.at("model").contains("loss_weights"))
      check_keys(j.at("model").at("loss_weights"),
                 {"flow", "mask", "contact", "ee_pose", "pairing", "kl", "recon_image",
                  "recon_proprio", "recon_force"},
                 "model.loss_weights");
    c.model = model::ModelConfig::from_json(j.at("model"));
  }

  if (j.contains("world")) {
    const auto& w = j.at("world");
    check_keys(w,
               {"hole_shape", "clearance", "hole_depth", "box_center_x", "box_x_range",
                "contact_stiffness", "contact_damping", "friction", "physics_dt",
                "gravity_y", "contact_gt_floor", "start_x_range", "start_min_height",
                "start_max_height", "start_alpha_range"},
               "world");
    if (w.contains("hole_shape"))
      c.world.hole_shape = sim::hole_shape_from_string(w.at("hole_shape"));
    c.world.clearance = w.value("clearance", c.world.clearance);
    c.world.hole_depth = w.value("hole_depth", c.world.hole_depth);
    c.world.box_center_x = w.value("box_center_x", c.world.box_center_x);
    c.world.box_x_range = w.value("box_x_range", c.world.box_x_range);
    c.world.contact.stiffness = w.value("contact_stiffness", c.world.contact.stiffness);
    c.world.contact.damping = w.value("contact_damping", c.world.contact.damping);
    c.world.contact.friction = w.value("friction", c.world.contact.friction);
    c.world.physics_dt = w.value("physics_dt", c.world.physics_dt);
    c.world.gravity_y = w.value("gravity_y", c.world.gravity_y);
    c.world.contact_gt_floor = w.value("contact_gt_floor", c.world.contact_gt_floor);
    c.world.start_x_range = w.value("start_x_range", c.world.start_x_range);
    c.world.start_min_height = w.value("start_min_height", c.world.start_min_height);
    c.world.start_max_height = w.value("start_max_height", c.world.start_max_height);
    c.world.start_alpha_range = w.value("start_alpha_range", c.world.start_alpha_range);
  }

  if (j.contains("controller")) {
    const auto& k = j.at("controller");
    check_keys(k, {"kp", "kv", "policy_hz", "torque_hz", "action_limits", "null_damping"},
               "controller");
    if (k.contains("kp")) c.controller.kp = k.at("kp");
    if (k.contains("kv")) {
      c.controller.kv = k.at("kv");
    } else if (k.contains("kp")) {
      for (int i = 0; i < 3; ++i) c.controller.kv[i] = 2.0 * std::sqrt(c.controller.kp[i]);
    }
    c.controller.policy_hz = k.value("policy_hz", c.controller.policy_hz);
    c.controller.torque_hz = k.value("torque_hz", c.controller.torque_hz);
    if (k.contains("action_limits")) c.controller.action_limits = k.at("action_limits");
    c.controller.null_damping = k.value("null_damping", c.controller.null_damping);
  }

  if (j.contains("reward")) {
    const auto& r = j.at("reward");
    check_keys(r, {"lambda", "c_r", "c_a", "c_i", "eps_align", "eps_psi", "eps_complete"},
               "reward");
    c.reward.lambda = r.value("lambda", c.reward.lambda);
    c.reward.c_r = r.value("c_r", c.reward.c_r);
    c.reward.c_a = r.value("c_a", c.reward.c_a);
    if (r.contains("c_i")) c.reward.c_i = r.at("c_i");
    if (r.contains("eps_align")) c.reward.eps_align = r.at("eps_align");
    c.reward.eps_psi = r.value("eps_psi", c.reward.eps_psi);
    c.reward.eps_complete = r.value("eps_complete", c.reward.eps_complete);
  }

  if (j.contains("labels")) {
    check_keys(j.at("labels"), {"contact_threshold", "torque_lever"}, "labels");
    c.labels.threshold = j.at("labels").value("contact_threshold", c.labels.threshold);
    c.labels.torque_lever = j.at("labels").value("torque_lever", c.labels.torque_lever);
  }

  if (j.contains("collect")) {
    check_keys(j.at("collect"), {"n_states", "episode_steps", "heuristic_fraction"},
               "collect");
    c.collect.n_states = j.at("collect").value("n_states", c.collect.n_states);
    c.collect.episode_steps =
        j.at("collect").value("episode_steps", c.collect.episode_steps);
    c.collect.heuristic_fraction =
        j.at("collect").value("heuristic_fraction", c.collect.heuristic_fraction);
  }

  if (j.contains("train_repr")) {
    const auto& t = j.at("train_repr");
    check_keys(t, {"epochs", "batch_size", "lr", "beta1", "beta2", "test_fraction"},
               "train_repr");
    c.train_repr.epochs = t.value("epochs", c.train_repr.epochs);
    c.train_repr.batch_size = t.value("batch_size", c.train_repr.batch_size);
    c.train_repr.lr = t.value("lr", c.train_repr.lr);
    c.train_repr.beta1 = t.value("beta1", c.train_repr.beta1);
    c.train_repr.beta2 = t.value("beta2", c.train_repr.beta2);
    c.train_repr.test_fraction = t.value("test_fraction", c.train_repr.test_fraction);
  }

  if (j.contains("rl")) {
    const auto& r = j.at("rl");
    check_keys(r,
               {"episode_steps", "batch_size", "n_updates", "gamma", "gae_lambda",
                "max_kl", "damping", "cg_iters", "line_search_steps",
                "line_search_factor", "value_epochs", "value_lr", "value_minibatch",
                "policy_hidden", "value_hidden", "log_std_init"},
               "rl");
    c.rl.episode_steps = r.value("episode_steps", c.rl.episode_steps);
    c.rl.batch_size = r.value("batch_size", c.rl.batch_size);
    c.rl.n_updates = r.value("n_updates", c.rl.n_updates);
    c.rl.gamma = r.value("gamma", c.rl.gamma);
    c.rl.gae_lambda = r.value("gae_lambda", c.rl.gae_lambda);
    c.rl.max_kl = r.value("max_kl", c.rl.max_kl);
    c.rl.damping = r.value("damping", c.rl.damping);
    c.rl.cg_iters = r.value("cg_iters", c.rl.cg_iters);
    c.rl.line_search_steps = r.value("line_search_steps", c.rl.line_search_steps);
    c.rl.line_search_factor = r.value("line_search_factor", c.rl.line_search_factor);
    c.rl.value_epochs = r.value("value_epochs", c.rl.value_epochs);
    c.rl.value_lr = r.value("value_lr", c.rl.value_lr);
    c.rl.value_minibatch = r.value("value_minibatch", c.rl.value_minibatch);
    c.rl.policy_hidden = r.value("policy_hidden", c.rl.policy_hidden);
    c.rl.value_hidden = r.value("value_hidden", c.rl.value_hidden);
    c.rl.log_std_init = r.value("log_std_init", c.rl.log_std_init);
  }

  if (j.contains("eval")) {
    check_keys(j.at("eval"), {"n_episodes"}, "eval");
    c.eval.n_episodes = j.at("eval").value("n_episodes", c.eval.n_episodes);
  }

  // cross-section consistency
  c.world.image_size = c.model.image_size;
  c.world.force_window = c.model.force_window;
  c.reward.hole_depth = c.world.hole_depth;
  if (!j.contains("reward") || !j.at("reward").contains("c_i"))
    c.reward.c_i = 2.0 / c.world.hole_depth;
  c.controller.action_limits = {c.model.action_limits[0], c.model.action_limits[1],
                                c.model.action_limits[2]};
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json j;
  is >> j;
  return from_json(j);
}

void RunConfig::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("config: cannot write " + path);
  os << to_json().dump(2) << "\n";
}

RunConfig desk_config() {
  nlohmann::json j;
  // Desk-scale KL weight: at 20k samples a unit-weight KL collapses the
  // posterior before the heads can use the latent (the pairing head never
  // leaves chance). 0.01 keeps the latent informative; the knob is part of
  // the run config, model defaults stay unit.
  j["model"] = {{"d", 64}, {"image_size", 32}, {"loss_weights", {{"kl", 0.01}}}};
  return RunConfig::from_json(j);
}

}  // namespace touchfuse::pipeline
