#include "touchfuse/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <numeric>

#include "touchfuse/checkpoint.hpp"
#include "touchfuse/control.hpp"
#include "touchfuse/reward.hpp"

namespace touchfuse::pipeline {

namespace fs = std::filesystem;

namespace {

std::string ep_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ep_%06d.bin", index);
  return buf;
}

std::array<double, 3> scaled_action(const std::array<double, 3>& raw,
                                    const control::ControllerConfig& ctrl) {
  std::array<double, 3> out;
  for (int i = 0; i < 3; ++i)
    out[i] = std::clamp(raw[i], -1.0, 1.0) * ctrl.action_limits[i];
  return out;
}

// Data-collection behaviors: a uniform random policy and the contact-seeking
// heuristic (proportional descent to 1 cm above the box top, then a gentle
// push with lateral/rotational jitter).
std::array<double, 3> random_policy_action(Rng& rng) {
  return {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
}

std::array<double, 3> heuristic_action(const sim::Env& env,
                                       const control::ControllerConfig& ctrl,
                                       Rng& rng) {
  const sim::Vec2 tip = env.peg_tip();
  const double target_x = env.box_x();
  const double target_y = env.config().box_top_y + 0.01;
  std::array<double, 3> a{0.0, 0.0, 0.0};
  if (tip.y - target_y > 0.005) {
    // proportional descent toward the approach point
    a[0] = 0.5 * (target_x - tip.x) / ctrl.action_limits[0];
    a[1] = 0.5 * (target_y - tip.y) / ctrl.action_limits[1];
  } else {
    a[0] = rng.uniform(-0.005, 0.005) / ctrl.action_limits[0];
    a[1] = -0.003 / ctrl.action_limits[1];
    a[2] = rng.uniform(-0.05, 0.05) / ctrl.action_limits[2];
  }
  for (double& v : a) v = std::clamp(v, -1.0, 1.0);
  return a;
}

}  // namespace

void archive_run(const std::string& out_dir, const RunConfig& cfg, std::uint64_t seed,
                 const nlohmann::json& extra) {
  fs::create_directories(out_dir);
  cfg.save((fs::path(out_dir) / "config.json").string());
  nlohmann::json meta = extra;
  meta["seed"] = seed;
  meta["version"] = kVersion;
  std::ofstream os(fs::path(out_dir) / "run.json");
  os << meta.dump(2) << "\n";
}

// ---- collect ---------------------------------------------------------------

CollectResult collect(const RunConfig& cfg, std::uint64_t seed,
                      const std::string& out_dir, int workers) {
  const int steps = cfg.collect.episode_steps;
  const int episodes =
      static_cast<int>((cfg.collect.n_states + steps - 1) / steps);
  fs::create_directories(out_dir);
  archive_run(out_dir, cfg, seed, {{"command", "collect"}});

  std::vector<dataset::EpisodeMeta> metas(episodes);
  std::atomic<bool> failed{false};
  std::string failure;
  std::mutex failure_mu;

  parallel_for(episodes, resolve_workers(workers), [&](std::size_t begin,
                                                       std::size_t end, int) {
    sim::Env env(cfg.world);
    for (std::size_t i = begin; i < end && !failed; ++i) {
      const bool heuristic =
          std::floor((i + 1) * cfg.collect.heuristic_fraction) >
          std::floor(i * cfg.collect.heuristic_fraction);
      const std::uint64_t ep_seed = derive_seed(seed, "collect.episode", i);
      Rng act_rng(derive_seed(seed, "collect.action", i));
      try {
        std::vector<dataset::LoggedFrame> frames;
        dataset::LoggedFrame first;
        first.frame = env.reset(ep_seed);
        frames.push_back(std::move(first));
        for (int t = 0; t < steps; ++t) {
          const std::array<double, 3> raw =
              heuristic ? heuristic_action(env, cfg.controller, act_rng)
                        : random_policy_action(act_rng);
          const auto res =
              control::control_step(scaled_action(raw, cfg.controller), env,
                                    cfg.controller);
          if (env.unstable()) break;
          dataset::LoggedFrame lf;
          lf.frame = res.frame;
          frames.push_back(std::move(lf));
        }
        dataset::EpisodeHeader header;
        header.schema_version = dataset::kSchemaRaw;
        header.episode_seed = ep_seed;
        header.policy = heuristic ? "heuristic" : "random";
        header.image_size = cfg.world.image_size;
        header.force_channels = 3;
        header.force_window = cfg.world.force_window;
        header.dof = static_cast<int>(env.dof());
        header.box_x = env.box_x();
        const std::string file = ep_filename(static_cast<int>(i));
        const std::string path = (fs::path(out_dir) / file).string();
        dataset::write_episode(path, header, frames);
        dataset::EpisodeMeta m;
        m.file = file;
        m.seed = ep_seed;
        m.policy = header.policy;
        m.n_frames = static_cast<int>(frames.size());
        m.checksum = dataset::file_checksum(path);
        m.schema_version = dataset::kSchemaRaw;
        metas[i] = std::move(m);
      } catch (const std::exception& e) {
        std::scoped_lock lock(failure_mu);
        failed = true;
        failure = e.what();
      }
    }
  });
  if (failed) throw std::runtime_error("collect: " + failure);

  std::size_t states = 0;
  for (const auto& m : metas) states += std::max(0, m.n_frames - 1);
  nlohmann::json stats{{"episodes", episodes},
                       {"states", states},
                       {"labeled", false},
                       {"heuristic_fraction", cfg.collect.heuristic_fraction}};
  dataset::Dataset::write_index(out_dir, metas, stats);
  return {out_dir, episodes, states};
}

// ---- representation training -------------------------------------------------

namespace {

struct HeadStats {
  std::map<std::string, double> loss_sum;
  std::map<std::string, std::size_t> loss_count;
  std::size_t contact_correct = 0, contact_total = 0;
  std::size_t pairing_correct = 0, pairing_total = 0;

  void add(const model::LossBreakdown& lb, const model::TrainingSample& ts) {
    for (const auto& [k, v] : lb.terms) {
      loss_sum[k] += v;
      loss_count[k] += 1;
    }
    if (lb.terms.count("contact")) {
      contact_correct += (lb.contact_prob > 0.5) == ts.contact_next ? 1 : 0;
      ++contact_total;
    }
    if (lb.terms.count("pairing")) {
      pairing_correct += (lb.pairing_prob > 0.5) == ts.paired ? 1 : 0;
      ++pairing_total;
    }
  }
  void merge(const HeadStats& o) {
    for (const auto& [k, v] : o.loss_sum) loss_sum[k] += v;
    for (const auto& [k, v] : o.loss_count) loss_count[k] += v;
    contact_correct += o.contact_correct;
    contact_total += o.contact_total;
    pairing_correct += o.pairing_correct;
    pairing_total += o.pairing_total;
  }
  nlohmann::json to_json() const {
    nlohmann::json j;
    for (const auto& [k, v] : loss_sum)
      j["loss"][k] = v / std::max<std::size_t>(1, loss_count.at(k));
    if (contact_total)
      j["contact_accuracy"] = static_cast<double>(contact_correct) / contact_total;
    if (pairing_total)
      j["pairing_accuracy"] = static_cast<double>(pairing_correct) / pairing_total;
    return j;
  }
};

}  // namespace

TrainReprResult train_representation(const RunConfig& cfg, std::uint64_t seed,
                                     const std::string& dataset_dir,
                                     const std::string& out_dir, int workers) {
  fs::create_directories(out_dir);
  archive_run(out_dir, cfg, seed,
              {{"command", "train-repr"}, {"dataset", dataset_dir}});

  dataset::Dataset ds = dataset::Dataset::open(dataset_dir);
  if (!ds.labeled())
    throw std::runtime_error("train-repr: dataset is not labeled; run `label` first");
  const auto split = ds.split(cfg.train_repr.test_fraction, seed);
  dataset::SampleStore train_store(ds, split.train);
  dataset::SampleStore test_store(ds, split.test);

  model::MultimodalModel net(cfg.model, derive_seed(seed, "model.init"));
  const bool pairing_active = cfg.model.variant != model::Variant::kReconstruction &&
                              cfg.model.loss_weights.pairing > 0.0;
  if (pairing_active && !train_store.has_both_contact_classes())
    throw std::runtime_error(
        "train-repr: training split holds only one contact class; the pairing "
        "objective needs both (collect more contact-rich data)");
  const bool swap_pairs = pairing_active;
  const bool swap_pairs_test = pairing_active && test_store.has_both_contact_classes();

  const int w = resolve_workers(workers);
  std::vector<ParameterSet> worker_grads(w, net.params());
  for (auto& g : worker_grads) g.zero_grads();

  AdamConfig adam;
  adam.lr = cfg.train_repr.lr;
  adam.beta1 = cfg.train_repr.beta1;
  adam.beta2 = cfg.train_repr.beta2;

  const std::size_t n = train_store.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  auto eval_store = [&](const dataset::SampleStore& store, const char* tag,
                        bool swap) {
    HeadStats stats;
    std::vector<HeadStats> per_worker(w);
    parallel_for(store.size(), w, [&](std::size_t begin, std::size_t end, int wi) {
      for (std::size_t i = begin; i < end; ++i) {
        Rng rng(derive_seed(seed, std::string("repr.eval.") + tag, i));
        const model::TrainingSample ts = store.sample(i, rng, swap);
        Tensor noise = Tensor::zeros({static_cast<std::size_t>(cfg.model.d)});
        for (double& v : noise.data) v = rng.normal();
        per_worker[wi].add(net.eval_loss(ts, noise), ts);
      }
    });
    for (const auto& pw : per_worker) stats.merge(pw);
    return stats;
  };

  TrainReprResult result;
  nlohmann::json epochs_log = nlohmann::json::array();
  const std::string ckpt_path = (fs::path(out_dir) / "repr.ckpt").string();
  bool have_checkpoint = false;

  for (int epoch = 0; epoch < cfg.train_repr.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(seed, "repr.epoch", epoch));
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

    HeadStats train_stats;
    bool non_finite = false;
    const std::size_t bsz = static_cast<std::size_t>(cfg.train_repr.batch_size);
    for (std::size_t start = 0; start < n && !non_finite; start += bsz) {
      const std::size_t end = std::min(n, start + bsz);
      std::vector<HeadStats> per_worker(w);
      parallel_for(end - start, w, [&](std::size_t b, std::size_t e, int wi) {
        for (std::size_t k = b; k < e; ++k) {
          const std::size_t pos = start + k;
          Rng rng(derive_seed(seed, "repr.rng",
                              static_cast<std::uint64_t>(epoch) * n + pos));
          const model::TrainingSample ts = train_store.sample(order[pos], rng, swap_pairs);
          Tensor noise = Tensor::zeros({static_cast<std::size_t>(cfg.model.d)});
          for (double& v : noise.data) v = rng.normal();
          Tape tape;
          ParamBinder bind(tape, net.params());
          model::LossBreakdown lb;
          Var loss = net.build_loss(tape, bind, ts, noise, &lb);
          tape.backward(loss);
          bind.harvest(worker_grads[wi], 1.0 / static_cast<double>(end - start));
          per_worker[wi].add(lb, ts);
        }
      });
      double batch_total = 0.0;
      for (int wi = 0; wi < w; ++wi) {
        train_stats.merge(per_worker[wi]);
        for (auto& [name, entry] : worker_grads[wi].entries()) {
          net.params().accumulate_grad(name, entry.grad.data);
          std::fill(entry.grad.data.begin(), entry.grad.data.end(), 0.0);
        }
      }
      for (const auto& [k, v] : train_stats.loss_sum) batch_total += v;
      if (!std::isfinite(batch_total)) {
        non_finite = true;
        break;
      }
      net.params().adam_step(adam);
    }

    if (non_finite) {
      result.aborted_non_finite = true;
      break;  // last good checkpoint (previous epoch) stays on disk
    }

    const HeadStats test_stats = eval_store(test_store, "test", swap_pairs_test);
    nlohmann::json entry;
    entry["epoch"] = epoch;
    entry["train"] = train_stats.to_json();
    entry["test"] = test_stats.to_json();
    epochs_log.push_back(entry);
    {
      std::ofstream os(fs::path(out_dir) / "train_log.json");
      os << epochs_log.dump(2) << "\n";
    }
    net.save(ckpt_path, {{"epoch", epoch}, {"dataset", dataset_dir}, {"seed", seed}});
    have_checkpoint = true;
  }

  if (!have_checkpoint)
    throw std::runtime_error("train-repr: no epoch completed with finite loss");

  // latent statistics over the training set (mean path) for policy-time
  // normalization
  std::vector<double> mean(cfg.model.d, 0.0), m2(cfg.model.d, 0.0);
  {
    std::mutex mu;
    parallel_for(train_store.size(), w, [&](std::size_t begin, std::size_t end, int) {
      std::vector<double> lmean(cfg.model.d, 0.0), lm2(cfg.model.d, 0.0);
      for (std::size_t i = begin; i < end; ++i) {
        const model::TrainingSample ts = train_store.plain_sample(i);
        const std::vector<double> z = net.encode_mean(ts.in);
        for (int k = 0; k < cfg.model.d; ++k) {
          lmean[k] += z[k];
          lm2[k] += z[k] * z[k];
        }
      }
      std::scoped_lock lock(mu);
      for (int k = 0; k < cfg.model.d; ++k) {
        mean[k] += lmean[k];
        m2[k] += lm2[k];
      }
    });
  }
  std::vector<double> stddev(cfg.model.d, 1.0);
  const double cnt = static_cast<double>(train_store.size());
  for (int k = 0; k < cfg.model.d; ++k) {
    mean[k] /= cnt;
    stddev[k] = std::sqrt(std::max(m2[k] / cnt - mean[k] * mean[k], 1e-8));
  }

  nlohmann::json final_extra{{"dataset", dataset_dir},
                             {"seed", seed},
                             {"latent_mean", mean},
                             {"latent_std", stddev},
                             {"epochs", epochs_log.size()}};
  net.save(ckpt_path, final_extra);

  // Table-II-style report: final train/test losses, accuracies, ratios
  nlohmann::json report;
  if (!epochs_log.empty()) {
    const nlohmann::json& last = epochs_log.back();
    report["train"] = last.at("train");
    report["test"] = last.at("test");
    nlohmann::json ratios;
    if (last.at("train").contains("loss"))
      for (const auto& [k, v] : last.at("train").at("loss").items()) {
        const double train_v = v.get<double>();
        if (last.at("test").contains("loss") && last.at("test").at("loss").contains(k) &&
            train_v != 0.0)
          ratios[k] = last.at("test").at("loss").at(k).get<double>() / train_v;
      }
    report["test_train_ratio"] = ratios;
  }
  report["epochs"] = epochs_log;
  report["contact_positive_fraction"] = train_store.contact_positive_fraction();
  {
    std::ofstream os(fs::path(out_dir) / "report.json");
    os << report.dump(2) << "\n";
  }
  // plot-ready CSV
  {
    std::ofstream os(fs::path(out_dir) / "losses.csv");
    os << "epoch,split,head,loss\n";
    for (const auto& e : epochs_log)
      for (const char* split : {"train", "test"})
        if (e.at(split).contains("loss"))
          for (const auto& [k, v] : e.at(split).at("loss").items())
            os << e.at("epoch") << "," << split << "," << k << "," << v << "\n";
  }

  result.checkpoint = ckpt_path;
  result.report = report;
  return result;
}

// ---- policy training -----------------------------------------------------------

namespace {

struct EpisodeRollout {
  std::vector<std::vector<double>> obs;
  std::vector<std::array<double, 3>> actions;
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<reward::StepRecord> records;
  bool unstable = false;
  std::uint64_t seed = 0;
};

struct LatentStats {
  std::vector<double> mean, stddev;
  std::vector<double> normalize(const std::vector<double>& z) const {
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i)
      out[i] = (z[i] - mean[i]) / stddev[i];
    return out;
  }
};

EpisodeRollout run_episode(sim::Env& env, const RunConfig& cfg,
                           const model::MultimodalModel* net,
                           const LatentStats* stats, const rl::GaussianPolicy* policy,
                           std::uint64_t ep_seed, std::uint64_t action_seed,
                           int steps, bool deterministic) {
  EpisodeRollout out;
  out.seed = ep_seed;
  Rng rng(action_seed);
  sim::SensorFrame frame = env.reset(ep_seed);
  for (int t = 0; t < steps; ++t) {
    std::array<double, 3> raw{};
    double logp = 0.0;
    if (policy) {
      const std::vector<double> z =
          stats->normalize(net->encode_mean(dataset::inputs_from_frame(frame)));
      if (deterministic) {
        raw = policy->mean(z);
        logp = policy->log_prob(z, raw);
      } else {
        const rl::GaussianPolicy::Sample s = policy->sample(z, rng);
        raw = s.action;
        logp = s.log_prob;
      }
      out.obs.push_back(std::move(z));
    } else {
      raw = random_policy_action(rng);
      out.obs.emplace_back();
    }
    const auto res =
        control::control_step(scaled_action(raw, cfg.controller), env, cfg.controller);
    if (env.unstable()) {
      out.unstable = true;
      return out;
    }
    frame = res.frame;
    const sim::RewardState rs = frame.reward_state;
    out.actions.push_back(raw);
    out.log_probs.push_back(logp);
    out.rewards.push_back(reward::staged_reward(rs.s, rs.s_psi, cfg.reward).value);
    out.records.push_back({rs, frame.any_contact});
  }
  return out;
}

nlohmann::json outcome_histogram(const std::vector<reward::EpisodeOutcome>& outcomes) {
  int counts[4] = {0, 0, 0, 0};
  for (const auto o : outcomes) counts[static_cast<int>(o)]++;
  const double n = std::max<std::size_t>(1, outcomes.size());
  return {{"completed", counts[0] / n * 100.0},
          {"inserted", counts[1] / n * 100.0},
          {"touched", counts[2] / n * 100.0},
          {"failed", counts[3] / n * 100.0}};
}

}  // namespace

TrainPolicyResult train_policy(const RunConfig& cfg, std::uint64_t seed,
                               const std::string& repr_checkpoint,
                               const std::string& out_dir, int workers) {
  fs::create_directories(out_dir);
  archive_run(out_dir, cfg, seed,
              {{"command", "train-policy"}, {"representation", repr_checkpoint}});

  nlohmann::json repr_extra;
  model::MultimodalModel net = model::MultimodalModel::load(repr_checkpoint, &repr_extra);
  if (net.config().d != cfg.model.d ||
      net.config().variant != cfg.model.variant)
    throw std::runtime_error(
        "train-policy: representation checkpoint does not match the run config");
  if (!repr_extra.contains("latent_mean"))
    throw std::runtime_error(
        "train-policy: checkpoint lacks latent statistics; re-run train-repr");
  LatentStats stats{repr_extra.at("latent_mean").get<std::vector<double>>(),
                    repr_extra.at("latent_std").get<std::vector<double>>()};

  TrainPolicyResult result;
  result.repr_hash_before = net.params().value_hash();

  rl::PolicyConfig pcfg;
  pcfg.latent_dim = cfg.model.d;
  pcfg.hidden = cfg.rl.policy_hidden;
  pcfg.log_std_init = cfg.rl.log_std_init;
  rl::GaussianPolicy policy(pcfg, derive_seed(seed, "policy.init"));
  rl::ValueNet vnet(cfg.model.d, cfg.rl.value_hidden, derive_seed(seed, "value.init"));

  rl::TrpoConfig tcfg;
  tcfg.max_kl = cfg.rl.max_kl;
  tcfg.damping = cfg.rl.damping;
  tcfg.cg_iters = cfg.rl.cg_iters;
  tcfg.line_search_steps = cfg.rl.line_search_steps;
  tcfg.line_search_factor = cfg.rl.line_search_factor;

  const int w = resolve_workers(workers);
  const int eps_per_update =
      std::max(1, (cfg.rl.batch_size + cfg.rl.episode_steps - 1) / cfg.rl.episode_steps);

  const std::string curve_path = (fs::path(out_dir) / "curve.jsonl").string();
  std::ofstream curve(curve_path);
  std::uint64_t episode_counter = 0;
  double best_return = -1e300;
  int kl_within = 0, value_mono = 0;
  const std::string best_path = (fs::path(out_dir) / "policy_best.ckpt").string();
  const std::string final_path = (fs::path(out_dir) / "policy_final.ckpt").string();

  auto save_policy = [&](const std::string& path, int update) {
    ParameterSet ps;
    const std::vector<double> pp = policy.get_params();
    ps.add_value("policy.flat",
                 Tensor({pp.size()}, std::vector<double>(pp.begin(), pp.end())));
    nlohmann::json extra{{"kind", "policy"},
                         {"update", update},
                         {"d", cfg.model.d},
                         {"policy_hidden", cfg.rl.policy_hidden},
                         {"log_std_init", cfg.rl.log_std_init},
                         {"latent_mean", stats.mean},
                         {"latent_std", stats.stddev},
                         {"representation", repr_checkpoint},
                         {"representation_hash", result.repr_hash_before}};
    save_checkpoint(path, ps, extra);
  };

  for (int update = 0; update < cfg.rl.n_updates; ++update) {
    // parallel rollout collection; episode seeds come from a global counter so
    // batch composition is identical for any worker count. Unstable episodes
    // are discarded (their seed logged) and fresh ones drawn.
    std::vector<EpisodeRollout> rollouts;
    while (static_cast<int>(rollouts.size()) < eps_per_update) {
      const int need = eps_per_update - static_cast<int>(rollouts.size());
      std::vector<EpisodeRollout> drawn(need);
      std::vector<std::uint64_t> ep_ids(need);
      for (int e = 0; e < need; ++e) ep_ids[e] = episode_counter++;
      parallel_for(need, w, [&](std::size_t begin, std::size_t end, int) {
        sim::Env env(cfg.world);
        for (std::size_t e = begin; e < end; ++e)
          drawn[e] = run_episode(
              env, cfg, &net, &stats, &policy,
              derive_seed(seed, "rollout.env", ep_ids[e]),
              derive_seed(seed, "rollout.act", ep_ids[e]), cfg.rl.episode_steps,
              /*deterministic=*/false);
      });
      for (EpisodeRollout& r : drawn) {
        if (r.unstable) {
          curve << nlohmann::json{{"discarded_episode_seed", r.seed}}.dump() << "\n";
          continue;
        }
        rollouts.push_back(std::move(r));
      }
    }

    rl::RolloutBatch batch;
    std::vector<double> episode_returns;
    std::vector<reward::EpisodeOutcome> outcomes;
    for (const EpisodeRollout& r : rollouts) {
      batch.episode_starts.push_back(batch.size());
      double ret = 0.0;
      for (std::size_t t = 0; t < r.rewards.size(); ++t) {
        batch.obs.push_back(r.obs[t]);
        batch.actions.push_back(r.actions[t]);
        batch.log_probs.push_back(r.log_probs[t]);
        batch.rewards.push_back(r.rewards[t]);
        ret += r.rewards[t];
      }
      episode_returns.push_back(ret);
      outcomes.push_back(reward::categorize_episode(r.records, cfg.reward));
    }
    batch.values.resize(batch.size());
    parallel_for(batch.size(), w, [&](std::size_t begin, std::size_t end, int) {
      for (std::size_t i = begin; i < end; ++i)
        batch.values[i] = vnet.predict(batch.obs[i]);
    });

    rl::compute_gae(batch, cfg.rl.gamma, cfg.rl.gae_lambda, true);
    const std::vector<double> vlosses =
        vnet.fit(batch.obs, batch.value_targets, cfg.rl.value_epochs, cfg.rl.value_lr,
                 cfg.rl.value_minibatch, derive_seed(seed, "value.fit", update));
    bool mono = true;
    for (std::size_t i = 1; i < vlosses.size(); ++i)
      if (vlosses[i] > vlosses[i - 1] + 1e-12) mono = false;
    value_mono += mono ? 1 : 0;

    const rl::TrpoDiagnostics diag = rl::trpo_update(policy, batch, tcfg);
    if (diag.kl_after <= tcfg.kl_acceptance_slack * tcfg.max_kl + 1e-12) ++kl_within;

    double mean_return = 0.0, mean_norm = 0.0;
    for (double r : episode_returns) mean_return += r;
    mean_return /= std::max<std::size_t>(1, episode_returns.size());
    for (const EpisodeRollout& r : rollouts)
      mean_norm += reward::normalized_return(r.rewards, cfg.rl.episode_steps, cfg.reward);
    mean_norm /= std::max<std::size_t>(1, rollouts.size());

    nlohmann::json line{{"update", update},
                        {"episodes", eps_per_update},
                        {"mean_return", mean_return},
                        {"mean_normalized_return", mean_norm},
                        {"kl", diag.kl_after},
                        {"surrogate_delta", diag.surrogate_delta},
                        {"accepted", diag.accepted},
                        {"cg_converged", diag.cg_converged},
                        {"value_fit_monotone", mono},
                        {"outcomes", outcome_histogram(outcomes)}};
    curve << line.dump() << "\n";
    curve.flush();

    if (mean_norm > best_return) {
      best_return = mean_norm;
      save_policy(best_path, update);
    }
    ++result.updates;
  }
  save_policy(final_path, cfg.rl.n_updates - 1);

  result.policy_checkpoint = best_path;
  result.final_checkpoint = final_path;
  result.curve_file = curve_path;
  result.kl_within_bound_fraction =
      static_cast<double>(kl_within) / std::max(1, result.updates);
  result.value_fit_monotone_fraction =
      static_cast<double>(value_mono) / std::max(1, result.updates);
  result.repr_hash_after = net.params().value_hash();
  if (result.repr_hash_after != result.repr_hash_before)
    throw std::runtime_error("train-policy: frozen representation was modified");
  return result;
}

// ---- evaluation -------------------------------------------------------------------

EvalResult evaluate(const RunConfig& cfg, std::uint64_t seed,
                    const std::string& policy_checkpoint, const std::string& out_dir,
                    int workers) {
  fs::create_directories(out_dir);
  archive_run(out_dir, cfg, seed,
              {{"command", "eval"},
               {"policy", policy_checkpoint.empty() ? "random" : policy_checkpoint}});

  std::unique_ptr<model::MultimodalModel> net;
  std::unique_ptr<rl::GaussianPolicy> policy;
  LatentStats stats;
  if (!policy_checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(policy_checkpoint);
    const std::string repr_path = ck.extra.at("representation");
    nlohmann::json repr_extra;
    net = std::make_unique<model::MultimodalModel>(
        model::MultimodalModel::load(repr_path, &repr_extra));
    if (net->params().value_hash() !=
        ck.extra.at("representation_hash").get<std::uint64_t>())
      throw std::runtime_error("eval: representation hash mismatch with policy manifest");
    rl::PolicyConfig pcfg;
    pcfg.latent_dim = ck.extra.at("d");
    pcfg.hidden = ck.extra.at("policy_hidden");
    policy = std::make_unique<rl::GaussianPolicy>(pcfg, 0);
    const Tensor& flat = ck.params.get("policy.flat");
    policy->set_params(flat.data);
    stats.mean = ck.extra.at("latent_mean").get<std::vector<double>>();
    stats.stddev = ck.extra.at("latent_std").get<std::vector<double>>();
  }

  const int n = cfg.eval.n_episodes;
  std::vector<reward::EpisodeOutcome> outcomes(n);
  std::vector<double> norm_returns(n);
  std::vector<nlohmann::json> lines(n);
  parallel_for(n, resolve_workers(workers), [&](std::size_t begin, std::size_t end, int) {
    sim::Env env(cfg.world);
    for (std::size_t i = begin; i < end; ++i) {
      const EpisodeRollout r =
          run_episode(env, cfg, net.get(), policy ? &stats : nullptr, policy.get(),
                      derive_seed(seed, "eval.env", i), derive_seed(seed, "eval.act", i),
                      cfg.rl.episode_steps, /*deterministic=*/true);
      outcomes[i] = r.unstable ? reward::EpisodeOutcome::kFailed
                               : reward::categorize_episode(r.records, cfg.reward);
      norm_returns[i] =
          reward::normalized_return(r.rewards, cfg.rl.episode_steps, cfg.reward);
      lines[i] = {{"episode", i},
                  {"outcome", reward::to_string(outcomes[i])},
                  {"normalized_return", norm_returns[i]},
                  {"seed", derive_seed(seed, "eval.env", i)}};
    }
  });

  EvalResult res;
  res.episodes = n;
  for (int i = 0; i < n; ++i) {
    switch (outcomes[i]) {
      case reward::EpisodeOutcome::kCompleted: ++res.completed; break;
      case reward::EpisodeOutcome::kInserted: ++res.inserted; break;
      case reward::EpisodeOutcome::kTouched: ++res.touched; break;
      case reward::EpisodeOutcome::kFailed: ++res.failed; break;
    }
    res.mean_normalized_return += norm_returns[i];
  }
  res.mean_normalized_return /= std::max(1, n);
  res.report_file = (fs::path(out_dir) / "eval.jsonl").string();
  std::ofstream os(res.report_file);
  for (const auto& l : lines) os << l.dump() << "\n";
  nlohmann::json summary{
      {"episodes", n},
      {"outcomes",
       {{"completed", 100.0 * res.completed / std::max(1, n)},
        {"inserted", 100.0 * res.inserted / std::max(1, n)},
        {"touched", 100.0 * res.touched / std::max(1, n)},
        {"failed", 100.0 * res.failed / std::max(1, n)}}},
      {"mean_normalized_return", res.mean_normalized_return}};
  std::ofstream sum(fs::path(out_dir) / "eval_summary.json");
  sum << summary.dump(2) << "\n";
  return res;
}

// ---- ablation ------------------------------------------------------------------------

std::vector<AblateCell> ablate_cells(const RunConfig& base, const std::string& axis) {
  std::vector<AblateCell> cells;
  auto push = [&](const std::string& name, auto mutate) {
    AblateCell c;
    c.name = name;
    c.cfg = base;
    mutate(c.cfg);
    cells.push_back(std::move(c));
  };
  if (axis == "modalities") {
    push("full", [](RunConfig&) {});
    push("no-rgb", [](RunConfig& c) {
      c.model.modalities = {"depth", "force", "proprio"};
    });
    push("no-depth", [](RunConfig& c) {
      c.model.modalities = {"rgb", "force", "proprio"};
    });
    push("no-haptics", [](RunConfig& c) {
      c.model.modalities = {"rgb", "depth", "proprio"};
    });
  } else if (axis == "variant") {
    push("full", [](RunConfig&) {});
    push("deterministic", [](RunConfig& c) {
      c.model.variant = model::Variant::kDeterministic;
    });
    push("no-pairing", [](RunConfig& c) { c.model.loss_weights.pairing = 0.0; });
    push("reconstruction", [](RunConfig& c) {
      c.model.variant = model::Variant::kReconstruction;
    });
  } else if (axis == "latent_dim") {
    for (int d : {16, 64, 128, 256})
      push("d" + std::to_string(d), [d](RunConfig& c) { c.model.d = d; });
  } else if (axis == "headline") {
    // criterion sweep: modality ablations plus no-pairing and random baseline
    push("full", [](RunConfig&) {});
    push("no-rgb", [](RunConfig& c) {
      c.model.modalities = {"depth", "force", "proprio"};
    });
    push("no-depth", [](RunConfig& c) {
      c.model.modalities = {"rgb", "force", "proprio"};
    });
    push("no-haptics", [](RunConfig& c) {
      c.model.modalities = {"rgb", "depth", "proprio"};
    });
    push("no-pairing", [](RunConfig& c) { c.model.loss_weights.pairing = 0.0; });
    AblateCell rnd;
    rnd.name = "random";
    rnd.cfg = base;
    rnd.random_baseline = true;
    cells.push_back(std::move(rnd));
  } else {
    throw std::invalid_argument(
        "ablate: axis must be one of modalities, variant, latent_dim, headline");
  }
  return cells;
}

AblateResult ablate(const RunConfig& cfg, std::uint64_t seed, const std::string& axis,
                    const std::string& out_dir, int workers, bool resume) {
  fs::create_directories(out_dir);
  archive_run(out_dir, cfg, seed, {{"command", "ablate"}, {"axis", axis}});
  const std::vector<AblateCell> cells = ablate_cells(cfg, axis);

  // one dataset per seed, shared by every cell (collection does not depend on
  // the model config)
  const std::string data_dir = (fs::path(out_dir) / "dataset").string();
  if (!fs::exists(fs::path(data_dir) / "index.json")) {
    collect(cfg, seed, data_dir, workers);
    dataset::label_dataset(data_dir, cfg, workers);
  } else {
    dataset::Dataset ds = dataset::Dataset::open(data_dir);
    if (!ds.labeled()) dataset::label_dataset(data_dir, cfg, workers);
  }

  nlohmann::json table = nlohmann::json::array();
  for (const AblateCell& cell : cells) {
    const std::string cell_dir = (fs::path(out_dir) / cell.name).string();
    const std::string summary_path = (fs::path(cell_dir) / "cell_summary.json").string();
    if (resume && fs::exists(summary_path)) {
      nlohmann::json j;
      std::ifstream is(summary_path);
      is >> j;
      table.push_back(j);
      continue;
    }
    fs::create_directories(cell_dir);
    EvalResult ev;
    double kl_within = 1.0, value_mono = 1.0;
    if (cell.random_baseline) {
      ev = evaluate(cell.cfg, seed, "", cell_dir + "/eval", workers);
    } else {
      const TrainReprResult repr = train_representation(
          cell.cfg, seed, data_dir, cell_dir + "/repr", workers);
      const TrainPolicyResult pol = train_policy(cell.cfg, seed, repr.checkpoint,
                                                 cell_dir + "/policy", workers);
      ev = evaluate(cell.cfg, seed, pol.policy_checkpoint, cell_dir + "/eval", workers);
      kl_within = pol.kl_within_bound_fraction;
      value_mono = pol.value_fit_monotone_fraction;
    }
    nlohmann::json row{{"cell", cell.name},
                       {"seed", seed},
                       {"completed", 100.0 * ev.completed / std::max(1, ev.episodes)},
                       {"inserted", 100.0 * ev.inserted / std::max(1, ev.episodes)},
                       {"touched", 100.0 * ev.touched / std::max(1, ev.episodes)},
                       {"failed", 100.0 * ev.failed / std::max(1, ev.episodes)},
                       {"mean_normalized_return", ev.mean_normalized_return},
                       {"kl_within_bound_fraction", kl_within},
                       {"value_fit_monotone_fraction", value_mono}};
    std::ofstream os(summary_path);
    os << row.dump(2) << "\n";
    table.push_back(row);
  }

  AblateResult res;
  res.table = table;
  res.csv_file = (fs::path(out_dir) / "ablate_report.csv").string();
  std::ofstream csv(res.csv_file);
  csv << "cell,seed,completed,inserted,touched,failed,mean_normalized_return\n";
  for (const auto& row : table)
    csv << row.at("cell").get<std::string>() << "," << row.at("seed") << ","
        << row.at("completed") << "," << row.at("inserted") << ","
        << row.at("touched") << "," << row.at("failed") << ","
        << row.at("mean_normalized_return") << "\n";
  std::ofstream js(fs::path(out_dir) / "ablate_summary.json");
  js << table.dump(2) << "\n";
  return res;
}

}  // namespace touchfuse::pipeline
