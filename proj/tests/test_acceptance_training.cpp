// Training-scale acceptance criteria: desk representation quality and the
// directional ablation sweep (which also closes the TRPO KL-bound check).
// Artifacts are cached under ./acceptance_runs and reused on rerun; set
// TOUCHFUSE_ACCEPT_FRESH=1 to rebuild everything from scratch.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "touchfuse/dataset.hpp"
#include "touchfuse/pipeline.hpp"

using namespace touchfuse;
namespace fs = std::filesystem;

namespace {

void report(const std::string& criterion, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %s: %s\n", pass ? "PASS" : "FAIL", criterion.c_str(),
              detail.c_str());
  std::fflush(stdout);
}

bool fresh_requested() {
  const char* env = std::getenv("TOUCHFUSE_ACCEPT_FRESH");
  return env && env[0] == '1';
}

void ensure_dataset(const pipeline::RunConfig& cfg, std::uint64_t seed,
                    const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "index.json"))
    pipeline::collect(cfg, seed, dir, 0);
  dataset::Dataset ds = dataset::Dataset::open(dir);
  if (!ds.labeled()) dataset::label_dataset(dir, cfg, 0);
}

}  // namespace

TEST_CASE("criterion 7: desk-scale representation quality") {
  const std::string root = "acceptance_runs/crit7";
  if (fresh_requested()) fs::remove_all(root);
  fs::create_directories(root);
  const pipeline::RunConfig cfg = pipeline::desk_config();
  const std::uint64_t seed = 7;

  const std::string report_path = root + "/repr/report.json";
  if (!fs::exists(report_path)) {
    ensure_dataset(cfg, seed, root + "/data");
    pipeline::train_representation(cfg, seed, root + "/data", root + "/repr", 0);
  }
  nlohmann::json rep;
  {
    std::ifstream is(report_path);
    REQUIRE(is.good());
    is >> rep;
  }
  REQUIRE(rep.at("epochs").size() == static_cast<std::size_t>(cfg.train_repr.epochs));
  const double contact = rep.at("test").at("contact_accuracy");
  const double pairing = rep.at("test").at("pairing_accuracy");
  const bool pass = contact >= 0.95 && pairing >= 0.80;
  report("7", pass,
         "20 epochs on a 20k-state desk dataset: held-out contact accuracy " +
             std::to_string(contact) + " (>= 0.95), pairing accuracy " +
             std::to_string(pairing) + " (>= 0.80)");
  CHECK(pass);
}

TEST_CASE("criteria 8 and 6 (training half): directional ablation and KL bound") {
  const std::string root = "acceptance_runs/crit8";
  if (fresh_requested()) fs::remove_all(root);
  fs::create_directories(root);

  pipeline::RunConfig cfg = pipeline::desk_config();
  cfg.collect.n_states = 8000;
  cfg.train_repr.epochs = 10;
  cfg.rl.n_updates = 80;  // 400 episodes of 200 steps
  cfg.eval.n_episodes = 50;

  const std::vector<std::uint64_t> seeds{101, 202, 303};
  std::map<std::string, std::vector<nlohmann::json>> rows;
  double min_kl_fraction = 1.0;
  for (std::uint64_t seed : seeds) {
    const pipeline::AblateResult res = pipeline::ablate(
        cfg, seed, "headline", root + "/seed_" + std::to_string(seed), 0,
        /*resume=*/true);
    for (const auto& row : res.table) {
      rows[row.at("cell").get<std::string>()].push_back(row);
      if (row.contains("kl_within_bound_fraction") &&
          row.at("cell").get<std::string>() != "random")
        min_kl_fraction = std::min(min_kl_fraction,
                                   row.at("kl_within_bound_fraction").get<double>());
    }
  }

  auto mean_completion = [&](const std::string& cell) {
    double acc = 0.0;
    for (const auto& row : rows.at(cell)) acc += row.at("completed").get<double>();
    return acc / static_cast<double>(rows.at(cell).size());
  };
  const double full = mean_completion("full");
  const double no_rgb = mean_completion("no-rgb");
  const double no_depth = mean_completion("no-depth");
  const double no_haptics = mean_completion("no-haptics");
  const double no_pairing = mean_completion("no-pairing");
  const double random = mean_completion("random");

  std::printf(
      "  mean completion %% over %zu seeds: full %.1f | no-rgb %.1f | no-depth %.1f "
      "| no-haptics %.1f | no-pairing %.1f | random %.1f\n",
      seeds.size(), full, no_rgb, no_depth, no_haptics, no_pairing, random);

  const bool ordering = full >= no_rgb && full >= no_depth && full >= no_haptics &&
                        full >= no_pairing;
  const bool beats_random = full > random && full >= 2.0 * random && full > 0.0;
  report("8", ordering && beats_random,
         "full >= each single-modality ablation and >= no-pairing: " +
             std::string(ordering ? "yes" : "no") +
             "; full strictly above random by >= 2x: " +
             std::string(beats_random ? "yes" : "no"));
  CHECK(ordering);
  CHECK(beats_random);

  const bool kl_ok = min_kl_fraction >= 0.95;
  report("6", kl_ok,
         "(training half) post-update KL <= 1.5 * max_kl in " +
             std::to_string(100.0 * min_kl_fraction) +
             "% of updates (worst cell) across the sweep (>= 95%)");
  CHECK(kl_ok);
}
