#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "touchfuse/common.hpp"
#include "touchfuse/gaussian.hpp"
#include "touchfuse/nn.hpp"

using namespace touchfuse;

namespace {

struct Moments {
  double mean;
  double var;
};

// Multiplies 1-D Gaussian densities on a fine grid, renormalizes, and fits
// mean/variance by trapezoid quadrature. Independent of poe_fuse's algebra.
Moments grid_product_oracle(const std::vector<double>& mus,
                            const std::vector<double>& vars) {
  double lo = 1e300, hi = -1e300, smax = 0.0;
  for (std::size_t i = 0; i < mus.size(); ++i) {
    lo = std::min(lo, mus[i]);
    hi = std::max(hi, mus[i]);
    smax = std::max(smax, std::sqrt(vars[i]));
  }
  lo -= 10.0 * smax;
  hi += 10.0 * smax;
  const std::size_t n = 200001;
  const double h = (hi - lo) / static_cast<double>(n - 1);
  std::vector<double> logp(n, 0.0);
  for (std::size_t g = 0; g < n; ++g) {
    const double x = lo + h * static_cast<double>(g);
    double acc = 0.0;
    for (std::size_t i = 0; i < mus.size(); ++i)
      acc += -0.5 * (x - mus[i]) * (x - mus[i]) / vars[i] - 0.5 * std::log(vars[i]);
    logp[g] = acc;
  }
  const double m = *std::max_element(logp.begin(), logp.end());
  double z = 0.0, ex = 0.0, ex2 = 0.0;
  for (std::size_t g = 0; g < n; ++g) {
    const double w = (g == 0 || g == n - 1) ? 0.5 : 1.0;
    const double p = w * std::exp(logp[g] - m);
    const double x = lo + h * static_cast<double>(g);
    z += p;
    ex += p * x;
    ex2 += p * x * x;
  }
  const double mean = ex / z;
  return {mean, ex2 / z - mean * mean};
}

}  // namespace

TEST_CASE("two identical unit experts halve the variance") {
  DiagGaussian e{{0.0}, {1.0}};
  DiagGaussian f = poe_fuse({e}, /*include_prior=*/true);
  CHECK(f.mu[0] == doctest::Approx(0.0));
  CHECK(f.var[0] == doctest::Approx(0.5));
}

TEST_CASE("N(2,1) fused with the prior matches the grid oracle") {
  DiagGaussian e{{2.0}, {1.0}};
  DiagGaussian f = poe_fuse({e}, true);
  CHECK(f.mu[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f.var[0] == doctest::Approx(0.5).epsilon(1e-12));
  Moments o = grid_product_oracle({2.0, 0.0}, {1.0, 1.0});
  CHECK(std::abs(f.mu[0] - o.mean) < 1e-6);
  CHECK(std::abs(f.var[0] - o.var) < 1e-6);
}

TEST_CASE("an uninformative expert defers to the prior") {
  DiagGaussian e{{3.0, -2.0}, {1e6, 1e6}};
  DiagGaussian f = poe_fuse({e}, true);
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(std::abs(f.mu[j]) < 1e-3);
    CHECK(std::abs(f.var[j] - 1.0) < 1e-3);
  }
  Moments o = grid_product_oracle({3.0, 0.0}, {1e6, 1.0});
  CHECK(std::abs(f.mu[0] - o.mean) < 1e-3);
  CHECK(std::abs(f.var[0] - o.var) < 1e-3);
}

TEST_CASE("poe_fuse matches the grid oracle over 100 random expert sets") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const int n_experts = 1 + static_cast<int>(rng.uniform_int(4));
    const bool prior = trial % 2 == 0;
    std::vector<DiagGaussian> experts;
    std::vector<double> mus, vars;
    for (int i = 0; i < n_experts; ++i) {
      const double mu = rng.uniform(-2.0, 2.0);
      const double var = rng.uniform(0.1, 4.0);
      experts.push_back({{mu}, {var}});
      mus.push_back(mu);
      vars.push_back(var);
    }
    if (prior) {
      mus.push_back(0.0);
      vars.push_back(1.0);
    }
    DiagGaussian f = poe_fuse(experts, prior);
    Moments o = grid_product_oracle(mus, vars);
    CHECK(std::abs(f.mu[0] - o.mean) < 1e-6);
    CHECK(std::abs(f.var[0] - o.var) < 1e-6);
  }
}

TEST_CASE("poe_fuse is bit-exactly permutation invariant") {
  Rng rng(7);
  std::vector<DiagGaussian> experts;
  for (int i = 0; i < 4; ++i) {
    DiagGaussian e;
    for (int j = 0; j < 8; ++j) {
      e.mu.push_back(rng.uniform(-3.0, 3.0));
      e.var.push_back(rng.uniform(0.05, 5.0));
    }
    experts.push_back(std::move(e));
  }
  DiagGaussian a = poe_fuse(experts, true);
  std::mt19937 shuffler(99);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(experts.begin(), experts.end(), shuffler);
    DiagGaussian b = poe_fuse(experts, true);
    CHECK(a.mu == b.mu);   // exact, not approximate
    CHECK(a.var == b.var);
  }
}

TEST_CASE("fused precision equals the sum of input precisions") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<DiagGaussian> experts;
    const int n = 1 + static_cast<int>(rng.uniform_int(4));
    double psum = 1.0;  // prior
    for (int i = 0; i < n; ++i) {
      const double var = rng.uniform(0.01, 10.0);
      experts.push_back({{rng.normal()}, {var}});
      psum += 1.0 / var;
    }
    DiagGaussian f = poe_fuse(experts, true);
    CHECK(1.0 / f.var[0] == doctest::Approx(psum).epsilon(1e-12));
  }
}

TEST_CASE("poe_fuse rejects invalid experts") {
  CHECK_THROWS_AS(poe_fuse({}, true), std::invalid_argument);
  CHECK_THROWS_AS(poe_fuse({DiagGaussian{{0.0}, {0.0}}}, true), std::invalid_argument);
  CHECK_THROWS_AS(poe_fuse({DiagGaussian{{0.0}, {-1.0}}}, true), std::invalid_argument);
  CHECK_THROWS_AS(
      poe_fuse({DiagGaussian{{0.0}, {1.0}}, DiagGaussian{{0.0, 0.0}, {1.0, 1.0}}}, true),
      std::invalid_argument);
}

TEST_CASE("KL to the standard normal: closed-form spot checks") {
  CHECK(kl_to_standard_normal(DiagGaussian::standard(5)) == doctest::Approx(0.0));
  CHECK(kl_to_standard_normal({{1.0}, {1.0}}) == doctest::Approx(0.5));
  CHECK(kl_to_standard_normal({{0.0}, {std::exp(1.0)}}) ==
        doctest::Approx(0.5 * (std::exp(1.0) - 2.0)).epsilon(1e-9));
  CHECK(kl_to_standard_normal({{0.0}, {std::exp(1.0)}}) ==
        doctest::Approx(0.359141).epsilon(1e-5));
}

TEST_CASE("KL is nonnegative and zero only at the standard normal") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    DiagGaussian q;
    for (int j = 0; j < 4; ++j) {
      q.mu.push_back(rng.uniform(-3.0, 3.0));
      q.var.push_back(rng.uniform(0.01, 8.0));
    }
    const double kl = kl_to_standard_normal(q);
    CHECK(kl >= 0.0);
    bool is_standard = true;
    for (int j = 0; j < 4; ++j)
      if (std::abs(q.mu[j]) > 1e-9 || std::abs(q.var[j] - 1.0) > 1e-9)
        is_standard = false;
    if (!is_standard) CHECK(kl > 1e-12);
  }
  CHECK(kl_to_standard_normal(DiagGaussian::standard(16)) < 1e-12);
}

TEST_CASE("reparameterized samples: zero noise returns the mean") {
  DiagGaussian q{{1.0, -2.0}, {4.0, 0.25}};
  auto s = reparam_sample(q, {0.0, 0.0});
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(s[1] == doctest::Approx(-2.0));
  auto s2 = reparam_sample(DiagGaussian::standard(2), {0.3, -0.7});
  CHECK(s2[0] == doctest::Approx(0.3));
  CHECK(s2[1] == doctest::Approx(-0.7));
}

TEST_CASE("reparameterized sampling reproduces the moments (Monte Carlo)") {
  DiagGaussian q{{0.8}, {2.5}};
  Rng rng(55);
  const int n = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double s = reparam_sample(q, {rng.normal()})[0];
    sum += s;
    sum2 += s * s;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  const double se_mean = std::sqrt(q.var[0] / n);
  const double se_var = q.var[0] * std::sqrt(2.0 / n);
  CHECK(std::abs(mean - q.mu[0]) < 3.0 * se_mean);
  CHECK(std::abs(var - q.var[0]) < 3.0 * se_var);
}

TEST_CASE("loss kernels: closed-form spot checks") {
  CHECK(bce({0.5}, {1.0}) == doctest::Approx(std::log(2.0)));
  CHECK(bce({1.0}, {1.0}) < 1e-6);   // clamp keeps it finite
  CHECK(bce({0.0}, {1.0}) > 10.0);   // clamped, large but finite
  CHECK(std::isfinite(bce({0.0}, {1.0})));
  std::vector<double> flow(2 * 9, 0.0), target(2 * 9, 0.0);
  CHECK(epe(flow, target, 9) == doctest::Approx(0.0));
  for (std::size_t i = 0; i < 9; ++i) flow[i] = 1.0;  // uniform (1,0) error
  CHECK(epe(flow, target, 9) == doctest::Approx(1.0));
  CHECK(mse({1.0, 3.0}, {0.0, 1.0}) == doctest::Approx(2.5));
}

TEST_CASE("gaussian graph operations pass gradient checks at 1e-6") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParameterSet params;
    params.add("mu1", {4}, seed + 1, 1, 1);
    params.add("rv1", {4}, seed + 2, 1, 1);
    params.add("mu2", {4}, seed + 3, 1, 1);
    params.add("rv2", {4}, seed + 4, 1, 1);
    Rng rng(seed + 5);
    Tensor noise = Tensor::zeros({4});
    for (double& v : noise.data) v = rng.normal();
    Tensor target = Tensor::zeros({4});
    for (double& v : target.data) v = rng.normal();
    Tensor flow_target = Tensor::zeros({2, 4, 4});
    Tensor label({1}, {1.0});

    auto build = [&](Tape& tape, ParamBinder& bind) {
      // softplus keeps variances positive, as the encoders do
      VarGaussian g1{bind("mu1"), add_scalar(softplus(bind("rv1")), 1e-6)};
      VarGaussian g2{bind("mu2"), add_scalar(softplus(bind("rv2")), 1e-6)};
      VarGaussian fused = poe_fuse_v({g1, g2}, true);
      Var z = reparam_sample_v(fused, noise);
      Var kl = kl_to_standard_normal_v(fused);
      Var l_mse = mse_loss(z, target);
      Var prob = sigmoid(slice(z, 0, 1));
      Var l_bce = bce_loss(prob, label);
      Var flow = reshape(concat({z, z, z, z, z, z, z, z}), {2, 4, 4});
      Var l_epe = epe_loss(flow, flow_target);
      return add(add(kl, l_mse), add(l_bce, l_epe));
    };
    GradCheckReport report = grad_check(build, params, 1e-5);
    CHECK(report.max_rel_error < 1e-6);
  }
}

TEST_CASE("poe_fuse_v agrees with the plain poe_fuse") {
  Rng rng(31);
  std::vector<DiagGaussian> experts;
  std::vector<VarGaussian> vexperts;
  Tape tape(false);
  for (int i = 0; i < 3; ++i) {
    DiagGaussian e;
    for (int j = 0; j < 6; ++j) {
      e.mu.push_back(rng.normal());
      e.var.push_back(0.1 + rng.uniform());
    }
    vexperts.push_back({tape.input(Tensor::vector(e.mu)),
                        tape.input(Tensor::vector(e.var))});
    experts.push_back(std::move(e));
  }
  DiagGaussian plain = poe_fuse(experts, true);
  VarGaussian graph = poe_fuse_v(vexperts, true);
  for (int j = 0; j < 6; ++j) {
    CHECK(graph.mu.value().data[j] == doctest::Approx(plain.mu[j]).epsilon(1e-12));
    CHECK(graph.var.value().data[j] == doctest::Approx(plain.var[j]).epsilon(1e-12));
  }
}
