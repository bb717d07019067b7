#include <cmath>
#include <numeric>

#include "doctest.h"
#include "touchfuse/common.hpp"
#include "touchfuse/rl.hpp"

using namespace touchfuse;
using namespace touchfuse::rl;

namespace {

std::vector<double> random_latent(Rng& rng, int d) {
  std::vector<double> v(d);
  for (double& x : v) x = rng.normal();
  return v;
}

RolloutBatch random_batch(Rng& rng, int d, int episodes, int steps) {
  RolloutBatch b;
  for (int e = 0; e < episodes; ++e) {
    b.episode_starts.push_back(b.size());
    for (int t = 0; t < steps; ++t) {
      b.obs.push_back(random_latent(rng, d));
      b.actions.push_back({rng.normal(), rng.normal(), rng.normal()});
      b.log_probs.push_back(rng.normal());
      b.rewards.push_back(rng.uniform());
      b.values.push_back(rng.normal());
    }
  }
  return b;
}

}  // namespace

TEST_CASE("Mlp gradients match finite differences") {
  Mlp net({5, 8, 2}, 3);
  Rng rng(1);
  const std::vector<double> x = random_latent(rng, 5);
  const std::vector<double> dy{0.7, -0.3};
  Mlp::Workspace ws;
  net.forward(x, &ws);
  std::vector<double> grad(net.n_params(), 0.0);
  std::vector<double> dx;
  net.backward(ws, dy, grad, &dx);
  const double h = 1e-6;
  for (int i = 0; i < net.n_params(); ++i) {
    const double saved = net.params()[i];
    net.params()[i] = saved + h;
    const auto up = net.forward(x, nullptr);
    net.params()[i] = saved - h;
    const auto down = net.forward(x, nullptr);
    net.params()[i] = saved;
    const double fd = (dy[0] * (up[0] - down[0]) + dy[1] * (up[1] - down[1])) / (2 * h);
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-4));
  }
  // input gradient
  for (int j = 0; j < 5; ++j) {
    std::vector<double> xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    const auto up = net.forward(xp, nullptr);
    const auto down = net.forward(xm, nullptr);
    const double fd = (dy[0] * (up[0] - down[0]) + dy[1] * (up[1] - down[1])) / (2 * h);
    CHECK(dx[j] == doctest::Approx(fd).epsilon(1e-4));
  }
}

TEST_CASE("Mlp JVP matches finite differences along random directions") {
  Mlp net({4, 6, 3}, 7);
  Rng rng(2);
  const std::vector<double> x = random_latent(rng, 4);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> v(net.n_params());
    for (double& d : v) d = rng.normal();
    Mlp::Workspace ws;
    net.forward(x, &ws);
    const std::vector<double> jv = net.jvp_params(ws, v);
    const double h = 1e-7;
    std::vector<double> saved = net.params();
    for (int i = 0; i < net.n_params(); ++i) net.params()[i] = saved[i] + h * v[i];
    const auto up = net.forward(x, nullptr);
    for (int i = 0; i < net.n_params(); ++i) net.params()[i] = saved[i] - h * v[i];
    const auto down = net.forward(x, nullptr);
    net.params() = saved;
    for (int k = 0; k < 3; ++k)
      CHECK(jv[k] == doctest::Approx((up[k] - down[k]) / (2 * h)).epsilon(1e-5));
  }
}

TEST_CASE("vanishing policy noise collapses samples onto the mean") {
  PolicyConfig cfg;
  cfg.latent_dim = 8;
  cfg.log_std_init = -5.0;
  GaussianPolicy pi(cfg, 5);
  Rng rng(3);
  const std::vector<double> z = random_latent(rng, 8);
  const auto mu = pi.mean(z);
  double mean_dev = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const auto s = pi.sample(z, rng);
    for (int k = 0; k < 3; ++k) mean_dev += std::abs(s.action[k] - mu[k]);
  }
  // normalized action limits are 1 per axis
  CHECK(mean_dev / 3000.0 < 1e-2);
}

TEST_CASE("log-prob of the mean action matches the closed form") {
  PolicyConfig cfg;
  cfg.latent_dim = 4;
  GaussianPolicy pi(cfg, 9);
  Rng rng(4);
  const std::vector<double> z = random_latent(rng, 4);
  const auto mu = pi.mean(z);
  double expect = 0.0;
  for (int k = 0; k < 3; ++k)
    expect += -0.5 * (std::log(2.0 * 3.14159265358979323846) + 2.0 * pi.log_std()[k]);
  CHECK(pi.log_prob(z, mu) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("empirical action covariance matches exp(2 log_std) within 5%") {
  PolicyConfig cfg;
  cfg.latent_dim = 4;
  cfg.log_std_init = -0.7;
  GaussianPolicy pi(cfg, 11);
  Rng rng(5);
  const std::vector<double> z = random_latent(rng, 4);
  const int n = 100000;
  std::array<double, 3> sum{}, sum2{};
  for (int i = 0; i < n; ++i) {
    const auto s = pi.sample(z, rng);
    for (int k = 0; k < 3; ++k) {
      sum[k] += s.action[k];
      sum2[k] += s.action[k] * s.action[k];
    }
  }
  for (int k = 0; k < 3; ++k) {
    const double mean = sum[k] / n;
    const double var = sum2[k] / n - mean * mean;
    CHECK(var == doctest::Approx(std::exp(2.0 * pi.log_std()[k])).epsilon(0.05));
  }
}

TEST_CASE("non-finite latent inputs are rejected") {
  PolicyConfig cfg;
  cfg.latent_dim = 2;
  GaussianPolicy pi(cfg, 1);
  CHECK_THROWS_AS(pi.mean({1.0, std::nan("")}), std::invalid_argument);
}

TEST_CASE("GAE with lambda=1 telescopes to discounted return minus value") {
  Rng rng(6);
  RolloutBatch b = random_batch(rng, 3, 2, 12);
  const double gamma = 0.97;
  compute_gae(b, gamma, 1.0, /*normalize=*/false);
  std::vector<std::size_t> starts = b.episode_starts;
  starts.push_back(b.size());
  for (std::size_t e = 0; e + 1 < starts.size(); ++e) {
    for (std::size_t t = starts[e]; t < starts[e + 1]; ++t) {
      double ret = 0.0, g = 1.0;
      for (std::size_t k = t; k < starts[e + 1]; ++k) {
        ret += g * b.rewards[k];
        g *= gamma;
      }
      CHECK(b.advantages[t] == doctest::Approx(ret - b.values[t]).epsilon(1e-10));
    }
  }
}

TEST_CASE("GAE with lambda=0 is the one-step TD residual") {
  Rng rng(7);
  RolloutBatch b = random_batch(rng, 3, 1, 10);
  const double gamma = 0.99;
  compute_gae(b, gamma, 0.0, false);
  for (std::size_t t = 0; t < b.size(); ++t) {
    const double next_v = t + 1 < b.size() ? b.values[t + 1] : 0.0;
    const double td = b.rewards[t] + gamma * next_v - b.values[t];
    CHECK(b.advantages[t] == doctest::Approx(td).epsilon(1e-12));
  }
}

TEST_CASE("GAE matches the brute-force double sum within 1e-10") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    RolloutBatch b = random_batch(rng, 2, 3, 10);
    const double gamma = 0.995, lambda = 0.97;
    compute_gae(b, gamma, lambda, false);
    std::vector<std::size_t> starts = b.episode_starts;
    starts.push_back(b.size());
    for (std::size_t e = 0; e + 1 < starts.size(); ++e) {
      const std::size_t begin = starts[e], end = starts[e + 1];
      for (std::size_t t = begin; t < end; ++t) {
        double acc = 0.0;
        for (std::size_t l = 0; t + l < end; ++l) {
          const std::size_t k = t + l;
          const double next_v = k + 1 < end ? b.values[k + 1] : 0.0;
          const double delta = b.rewards[k] + gamma * next_v - b.values[k];
          acc += std::pow(gamma * lambda, static_cast<double>(l)) * delta;
        }
        CHECK(std::abs(b.advantages[t] - acc) < 1e-10);
      }
    }
  }
}

TEST_CASE("episode boundaries stop advantage propagation") {
  Rng rng(9);
  RolloutBatch two = random_batch(rng, 2, 2, 8);
  RolloutBatch first;
  first.episode_starts = {0};
  for (int t = 0; t < 8; ++t) {
    first.obs.push_back(two.obs[t]);
    first.actions.push_back(two.actions[t]);
    first.log_probs.push_back(two.log_probs[t]);
    first.rewards.push_back(two.rewards[t]);
    first.values.push_back(two.values[t]);
  }
  compute_gae(two, 0.99, 0.95, false);
  compute_gae(first, 0.99, 0.95, false);
  for (int t = 0; t < 8; ++t)
    CHECK(two.advantages[t] == doctest::Approx(first.advantages[t]).epsilon(1e-12));
}

TEST_CASE("conjugate gradient matches a direct solve within 1e-8") {
  Rng rng(10);
  const int n = 20;
  // SPD matrix A = B B^T + n I
  std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
  std::vector<std::vector<double>> bmat(n, std::vector<double>(n));
  for (auto& row : bmat)
    for (double& v : row) v = rng.normal();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      for (int k = 0; k < n; ++k) a[i][j] += bmat[i][k] * bmat[j][k];
      if (i == j) a[i][j] += n;
    }
  std::vector<double> rhs(n);
  for (double& v : rhs) v = rng.normal();

  auto matvec = [&](const std::vector<double>& v) {
    std::vector<double> out(n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) out[i] += a[i][j] * v[j];
    return out;
  };
  const CgResult cg = conjugate_gradient(matvec, rhs, 200, 1e-12);
  CHECK(cg.converged);

  // Gaussian elimination oracle
  std::vector<std::vector<double>> aug = a;
  std::vector<double> x = rhs;
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(aug[r][col]) > std::abs(aug[piv][col])) piv = r;
    std::swap(aug[piv], aug[col]);
    std::swap(x[piv], x[col]);
    for (int r = col + 1; r < n; ++r) {
      const double f = aug[r][col] / aug[col][col];
      for (int c = col; c < n; ++c) aug[r][c] -= f * aug[col][c];
      x[r] -= f * x[col];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    for (int c = r + 1; c < n; ++c) x[r] -= aug[r][c] * x[c];
    x[r] /= aug[r][r];
  }
  for (int i = 0; i < n; ++i) CHECK(std::abs(cg.x[i] - x[i]) < 1e-8);
}

TEST_CASE("Fisher-vector products are symmetric and match the KL curvature") {
  PolicyConfig cfg;
  cfg.latent_dim = 6;
  cfg.hidden = 16;
  GaussianPolicy pi(cfg, 13);
  Rng rng(11);
  RolloutBatch b = random_batch(rng, 6, 2, 20);
  for (std::size_t i = 0; i < b.size(); ++i) {
    b.actions[i] = pi.sample(b.obs[i], rng).action;
    b.log_probs[i] = pi.log_prob(b.obs[i], b.actions[i]);
  }
  compute_gae(b, 0.99, 0.95, true);

  // symmetry
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> x(pi.n_params()), y(pi.n_params());
    for (double& v : x) v = rng.normal();
    for (double& v : y) v = rng.normal();
    const auto fx = fisher_vector_product(pi, b, x);
    const auto fy = fisher_vector_product(pi, b, y);
    const double xfy = std::inner_product(x.begin(), x.end(), fy.begin(), 0.0);
    const double yfx = std::inner_product(y.begin(), y.end(), fx.begin(), 0.0);
    CHECK(std::abs(xfy - yfx) <=
          1e-8 * std::max({1.0, std::abs(xfy), std::abs(yfx)}));
  }

  // v^T F v ~ 2 KL(theta, theta + eps v) / eps^2
  GaussianPolicy old_pi = pi;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> v(pi.n_params());
    for (double& d : v) d = rng.normal();
    const auto fv = fisher_vector_product(pi, b, v);
    const double vfv = std::inner_product(v.begin(), v.end(), fv.begin(), 0.0);
    const double eps = 1e-4;
    std::vector<double> theta = old_pi.get_params();
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += eps * v[i];
    GaussianPolicy perturbed = old_pi;
    perturbed.set_params(theta);
    const double kl = mean_kl(old_pi, perturbed, b);
    CHECK(vfv == doctest::Approx(2.0 * kl / (eps * eps)).epsilon(5e-3));
  }
}

TEST_CASE("surrogate gradient matches finite differences") {
  PolicyConfig cfg;
  cfg.latent_dim = 4;
  cfg.hidden = 8;
  GaussianPolicy pi(cfg, 17);
  Rng rng(13);
  RolloutBatch b = random_batch(rng, 4, 1, 30);
  for (std::size_t i = 0; i < b.size(); ++i) {
    b.actions[i] = pi.sample(b.obs[i], rng).action;
    b.log_probs[i] = pi.log_prob(b.obs[i], b.actions[i]);
  }
  compute_gae(b, 0.99, 0.95, true);
  const std::vector<double> g = surrogate_gradient(pi, b);
  const std::vector<double> theta = pi.get_params();
  const double h = 1e-6;
  Rng pick(14);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t i = pick.uniform_int(theta.size());
    std::vector<double> tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    pi.set_params(tp);
    const double up = surrogate_objective(pi, b);
    pi.set_params(tm);
    const double down = surrogate_objective(pi, b);
    pi.set_params(theta);
    const double fd = (up - down) / (2 * h);
    CHECK(g[i] == doctest::Approx(fd).epsilon(1e-4));
  }
}

TEST_CASE("zero advantages leave the policy unchanged") {
  PolicyConfig cfg;
  cfg.latent_dim = 4;
  GaussianPolicy pi(cfg, 19);
  Rng rng(15);
  RolloutBatch b = random_batch(rng, 4, 1, 20);
  for (std::size_t i = 0; i < b.size(); ++i) {
    b.actions[i] = pi.sample(b.obs[i], rng).action;
    b.log_probs[i] = pi.log_prob(b.obs[i], b.actions[i]);
  }
  b.advantages.assign(b.size(), 0.0);
  b.value_targets.assign(b.size(), 0.0);
  const std::vector<double> before = pi.get_params();
  const TrpoDiagnostics d = trpo_update(pi, b, {});
  CHECK_FALSE(d.accepted);
  CHECK(pi.get_params() == before);
}

TEST_CASE("accepted TRPO steps improve the surrogate within the KL budget") {
  PolicyConfig cfg;
  cfg.latent_dim = 6;
  cfg.hidden = 16;
  Rng rng(16);
  int accepted = 0;
  for (int trial = 0; trial < 10; ++trial) {
    GaussianPolicy pi(cfg, 100 + trial);
    GaussianPolicy old_pi = pi;
    RolloutBatch b = random_batch(rng, 6, 2, 40);
    for (std::size_t i = 0; i < b.size(); ++i) {
      b.actions[i] = pi.sample(b.obs[i], rng).action;
      b.log_probs[i] = pi.log_prob(b.obs[i], b.actions[i]);
    }
    compute_gae(b, 0.995, 0.97, true);
    TrpoConfig tcfg;
    const TrpoDiagnostics d = trpo_update(pi, b, tcfg);
    if (d.accepted) {
      ++accepted;
      CHECK(d.surrogate_delta > 0.0);
      CHECK(d.kl_after <= tcfg.kl_acceptance_slack * tcfg.max_kl + 1e-12);
      CHECK(mean_kl(old_pi, pi, b) ==
            doctest::Approx(d.kl_after).epsilon(1e-9));
    }
  }
  CHECK(accepted >= 8);  // random batches nearly always admit an ascent step
}

TEST_CASE("value net fits constant-reward discounted returns within 5%") {
  // observations encode the timestep so the return curve is learnable
  const double gamma = 0.99;
  const int steps = 50;
  RolloutBatch b;
  for (int e = 0; e < 4; ++e) {
    b.episode_starts.push_back(b.size());
    for (int t = 0; t < steps; ++t) {
      const double tt = static_cast<double>(t) / steps;
      b.obs.push_back({tt, tt * tt, std::sin(3.0 * tt), std::cos(3.0 * tt)});
      b.actions.push_back({0, 0, 0});
      b.log_probs.push_back(0.0);
      b.rewards.push_back(1.0);
      b.values.push_back(0.0);
    }
  }
  compute_gae(b, gamma, 1.0, false);  // targets = discounted returns
  ValueNet vnet(4, 32, 21);
  const auto losses = vnet.fit(b.obs, b.value_targets, 500, 1e-2, 64, 5);
  REQUIRE_FALSE(losses.empty());
  // geometric sums at the start and the midpoint of an episode
  const double expect0 = (1.0 - std::pow(gamma, steps)) / (1.0 - gamma);
  const double expect25 = (1.0 - std::pow(gamma, steps - 25)) / (1.0 - gamma);
  CHECK(vnet.predict(b.obs[0]) == doctest::Approx(expect0).epsilon(0.05));
  CHECK(vnet.predict(b.obs[25]) == doctest::Approx(expect25).epsilon(0.05));
}

TEST_CASE("value net trained on zero rewards predicts near zero") {
  Rng rng(18);
  RolloutBatch b = random_batch(rng, 3, 2, 25);
  for (double& r : b.rewards) r = 0.0;
  for (double& v : b.values) v = 0.0;
  compute_gae(b, 0.99, 1.0, false);
  ValueNet vnet(3, 16, 23);
  vnet.fit(b.obs, b.value_targets, 100, 1e-2, 32, 7);
  for (const auto& z : b.obs) CHECK(std::abs(vnet.predict(z)) < 0.05);
}

TEST_CASE("value fitting reduces the loss monotonically in most updates") {
  // one value net refit over successive batches whose targets follow a slowly
  // drifting function of the observations, as during policy training
  Rng rng(19);
  ValueNet vnet(4, 32, 31);
  std::vector<double> w{0.8, -0.5, 0.3, 0.6};
  int monotone = 0, total = 0;
  for (int update = 0; update < 20; ++update) {
    RolloutBatch b = random_batch(rng, 4, 2, 30);
    for (std::size_t i = 0; i < b.size(); ++i) {
      double t = 0.0;
      for (int k = 0; k < 4; ++k) t += w[k] * b.obs[i][k];
      b.value_targets.push_back(0.0);
      b.advantages.push_back(0.0);
      b.value_targets[i] = 10.0 * std::tanh(t) + 0.2 * rng.normal();
    }
    const auto losses = vnet.fit(b.obs, b.value_targets, 5, 3e-3, 64, update);
    bool mono = true;
    for (std::size_t e = 1; e < losses.size(); ++e)
      if (losses[e] > losses[e - 1] + 1e-12) mono = false;
    monotone += mono ? 1 : 0;
    ++total;
    w[update % 4] += 0.05;  // drift
  }
  CHECK(monotone * 10 >= total * 9);  // >= 90% of updates
}
