#include <cmath>
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "touchfuse/common.hpp"
#include "touchfuse/control.hpp"
#include "touchfuse/gaussian.hpp"
#include "touchfuse/model.hpp"
#include "touchfuse/pipeline.hpp"
#include "touchfuse/rl.hpp"

using namespace touchfuse;

namespace {

pipeline::RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return pipeline::desk_config();
  return pipeline::RunConfig::load(path);
}

int run_grad_check() {
  int failures = 0;
  {
    // every primitive, 20 seeds
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
      ParameterSet params;
      params.add("x", {2, 6, 6}, s + 1, 6, 6);
      params.add("k", {3, 2, 3, 3}, s + 2, 18, 27);
      params.add("b", {3}, s + 3, 1, 1);
      auto build = [&](Tape& tape, ParamBinder& bind) {
        (void)tape;
        Var c = conv2d(bind("x"), bind("k"), bind("b"), 2);
        Var acts = concat({reshape(sigmoid(c), {c.numel()}),
                           reshape(tanh_v(c), {c.numel()}),
                           reshape(softplus(c), {c.numel()}),
                           reshape(leaky_relu(c, 0.1), {c.numel()}),
                           reshape(upsample2x(c), {4 * c.numel()})});
        return mean(mul(acts, acts));
      };
      worst = std::max(worst, grad_check(build, params, 1e-5).max_rel_error);
    }
    const bool ok = worst < 1e-6;
    failures += ok ? 0 : 1;
    std::printf("[%s] primitives gradient check (20 seeds): max rel err %.3g (< 1e-6)\n",
                ok ? "PASS" : "FAIL", worst);
  }
  {
    model::ModelConfig cfg;
    cfg.d = 16;
    cfg.image_size = 8;
    model::MultimodalModel net(cfg, 7);
    Rng rng(11);
    model::TrainingSample ts;
    const int s = cfg.image_size;
    ts.in.rgb.resize(3 * s * s);
    for (double& v : ts.in.rgb) v = rng.uniform();
    ts.in.depth.assign(s * s, 0.5);
    ts.in.force.resize(cfg.force_channels * cfg.force_window);
    for (double& v : ts.in.force) v = rng.normal() * 2.0;
    for (double& v : ts.in.proprio) v = rng.normal() * 0.2;
    ts.in.action = {0.004, -0.002, 0.01};
    ts.flow.assign(2 * s * s, 0.1);
    ts.flow_mask.assign(s * s, 1);
    ts.contact_next = true;
    ts.next_ee_pose = {0.1, 0.3, -1.5};
    Tensor noise = Tensor::zeros({16});
    for (double& v : noise.data) v = rng.normal();
    auto build = [&](Tape& tape, ParamBinder& bind) {
      return net.build_loss(tape, bind, ts, noise, nullptr);
    };
    const GradCheckReport rep = grad_check(build, net.params(), 1e-5);
    const bool ok = rep.max_rel_error < 1e-4;
    failures += ok ? 0 : 1;
    std::printf("[%s] full fusion model d=16 8x8: max rel err %.3g (< 1e-4), %zu params\n",
                ok ? "PASS" : "FAIL", rep.max_rel_error, net.params().total_params());
  }
  return failures;
}

int run_oracle_check() {
  int failures = 0;
  {
    // PoE against the analytic two-Gaussian product
    Rng rng(5);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      const double mu = rng.uniform(-2, 2), var = rng.uniform(0.1, 4.0);
      DiagGaussian f = poe_fuse({DiagGaussian{{mu}, {var}}}, true);
      const double prec = 1.0 / var + 1.0;
      worst = std::max(worst, std::abs(f.var[0] - 1.0 / prec));
      worst = std::max(worst, std::abs(f.mu[0] - (mu / var) / prec));
    }
    const bool ok = worst < 1e-12;
    failures += ok ? 0 : 1;
    std::printf("[%s] PoE closed-form check: max err %.3g\n", ok ? "PASS" : "FAIL", worst);
  }
  {
    // quintic midpoint velocity
    const auto mid = control::quintic_at({0, 0, 0}, {0.01, 0.02, -0.05}, 0.05, 0.025);
    const bool ok = std::abs(mid.v[0] - 1.875 * 0.01 / 0.05) < 1e-12;
    failures += ok ? 0 : 1;
    std::printf("[%s] quintic midpoint velocity = 1.875 dp/T\n", ok ? "PASS" : "FAIL");
  }
  {
    // GAE telescoping with lambda = 1
    rl::RolloutBatch b;
    Rng rng(7);
    b.episode_starts = {0};
    for (int t = 0; t < 10; ++t) {
      b.obs.push_back({0.0});
      b.actions.push_back({0, 0, 0});
      b.log_probs.push_back(0);
      b.rewards.push_back(rng.uniform());
      b.values.push_back(rng.normal());
    }
    rl::compute_gae(b, 0.99, 1.0, false);
    double ret = 0.0, g = 1.0;
    for (int t = 0; t < 10; ++t) {
      ret += g * b.rewards[t];
      g *= 0.99;
    }
    const bool ok = std::abs(b.advantages[0] - (ret - b.values[0])) < 1e-10;
    failures += ok ? 0 : 1;
    std::printf("[%s] GAE(lambda=1) telescopes to return - value\n", ok ? "PASS" : "FAIL");
  }
  {
    // CG on a small SPD system
    auto matvec = [](const std::vector<double>& v) {
      return std::vector<double>{4 * v[0] + v[1], v[0] + 3 * v[1]};
    };
    const rl::CgResult r = rl::conjugate_gradient(matvec, {1.0, 2.0}, 10, 1e-12);
    const bool ok = std::abs(4 * r.x[0] + r.x[1] - 1.0) < 1e-8 &&
                    std::abs(r.x[0] + 3 * r.x[1] - 2.0) < 1e-8;
    failures += ok ? 0 : 1;
    std::printf("[%s] conjugate gradient solves SPD systems\n", ok ? "PASS" : "FAIL");
  }
  return failures;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"touchfuse: multimodal representation + policy learning for planar peg insertion"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "runs/out", dataset_dir, checkpoint;
  std::uint64_t seed = 0;
  int workers = 0;
  bool resume = false;
  std::string axis = "modalities";

  auto add_common = [&](CLI::App* cmd, bool needs_out = true) {
    cmd->add_option("--config", config_path, "run configuration JSON");
    cmd->add_option("--seed", seed, "master seed");
    if (needs_out) cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--workers", workers, "worker count (0: TOUCHFUSE_THREADS or cores)");
    cmd->add_flag("--resume", resume, "resume from per-cell checkpoints where possible");
  };

  CLI::App* c_collect = app.add_subcommand("collect", "roll out random+heuristic policies into a dataset");
  add_common(c_collect);

  CLI::App* c_label = app.add_subcommand("label", "generate self-supervised labels offline");
  add_common(c_label, false);
  c_label->add_option("dataset", dataset_dir, "dataset directory")->required();

  CLI::App* c_repr = app.add_subcommand("train-repr", "train the representation model");
  add_common(c_repr);
  c_repr->add_option("dataset", dataset_dir, "labeled dataset directory")->required();

  CLI::App* c_pol = app.add_subcommand("train-policy", "train the TRPO policy on a frozen representation");
  add_common(c_pol);
  c_pol->add_option("representation", checkpoint, "representation checkpoint")->required();

  CLI::App* c_eval = app.add_subcommand("eval", "evaluate a policy checkpoint (or the random baseline)");
  add_common(c_eval);
  c_eval->add_option("policy", checkpoint, "policy checkpoint; omit for the random baseline");

  CLI::App* c_abl = app.add_subcommand("ablate", "run an ablation sweep");
  add_common(c_abl);
  c_abl->add_option("--axis", axis, "modalities | variant | latent_dim | headline");

  CLI::App* c_grad = app.add_subcommand("grad-check", "gradient checks for primitives and the fusion model");
  CLI::App* c_oracle = app.add_subcommand("oracle-check", "fast analytic oracle checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_collect->parsed()) {
      const auto cfg = load_config_or_default(config_path);
      const auto res = pipeline::collect(cfg, seed, out_dir, workers);
      std::printf("collected %d episodes (%zu states) into %s\n", res.episodes,
                  res.states, res.dataset_dir.c_str());
    } else if (c_label->parsed()) {
      const auto cfg = load_config_or_default(config_path);
      dataset::label_dataset(dataset_dir, cfg, workers);
      std::printf("labeled dataset %s\n", dataset_dir.c_str());
    } else if (c_repr->parsed()) {
      const auto cfg = load_config_or_default(config_path);
      const auto res = pipeline::train_representation(cfg, seed, dataset_dir, out_dir, workers);
      std::printf("representation checkpoint: %s\n", res.checkpoint.c_str());
      if (res.report.contains("test"))
        std::printf("test metrics: %s\n", res.report.at("test").dump().c_str());
      if (res.aborted_non_finite) {
        std::fprintf(stderr, "%s\n",
                     nlohmann::json{{"error",
                                     {{"type", "non_finite_loss"},
                                      {"message", "training aborted; last good checkpoint retained"}}}}
                         .dump()
                         .c_str());
        return 2;
      }
    } else if (c_pol->parsed()) {
      const auto cfg = load_config_or_default(config_path);
      const auto res = pipeline::train_policy(cfg, seed, checkpoint, out_dir, workers);
      std::printf("policy checkpoint: %s\ncurve: %s\nKL within bound: %.1f%%\n",
                  res.policy_checkpoint.c_str(), res.curve_file.c_str(),
                  100.0 * res.kl_within_bound_fraction);
    } else if (c_eval->parsed()) {
      const auto cfg = load_config_or_default(config_path);
      const auto res = pipeline::evaluate(cfg, seed, checkpoint, out_dir, workers);
      std::printf(
          "episodes %d: completed %.1f%% inserted %.1f%% touched %.1f%% failed %.1f%%; "
          "mean normalized return %.4f\n",
          res.episodes, 100.0 * res.completed / res.episodes,
          100.0 * res.inserted / res.episodes, 100.0 * res.touched / res.episodes,
          100.0 * res.failed / res.episodes, res.mean_normalized_return);
    } else if (c_abl->parsed()) {
      const auto cfg = load_config_or_default(config_path);
      const auto res = pipeline::ablate(cfg, seed, axis, out_dir, workers, resume);
      std::printf("ablation table written to %s\n%s\n", res.csv_file.c_str(),
                  res.table.dump(2).c_str());
    } else if (c_grad->parsed()) {
      return run_grad_check() == 0 ? 0 : 3;
    } else if (c_oracle->parsed()) {
      return run_oracle_check() == 0 ? 0 : 3;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n",
                 nlohmann::json{{"error", {{"type", "runtime"}, {"message", e.what()}}}}
                     .dump()
                     .c_str());
    return 1;
  }
  return 0;
}
