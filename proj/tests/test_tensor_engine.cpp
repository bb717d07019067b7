#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "touchfuse/autodiff.hpp"
#include "touchfuse/checkpoint.hpp"
#include "touchfuse/common.hpp"
#include "touchfuse/nn.hpp"

using namespace touchfuse;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(s));
  for (double& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

// Independent direct-summation convolution oracle (same-pad, stride s).
double conv2d_oracle_at(const Tensor& x, const Tensor& k, const Tensor& b,
                        int stride, std::size_t oc, std::size_t oy, std::size_t ox) {
  const std::size_t ic = x.shape[0], h = x.shape[1], w = x.shape[2];
  const std::size_t kh = k.shape[2], kw = k.shape[3];
  const std::size_t s = static_cast<std::size_t>(stride);
  const std::size_t ho = (h + s - 1) / s, wo = (w + s - 1) / s;
  const long pad_top = std::max(0L, static_cast<long>((ho - 1) * s + kh) - static_cast<long>(h)) / 2;
  const long pad_left = std::max(0L, static_cast<long>((wo - 1) * s + kw) - static_cast<long>(w)) / 2;
  double acc = b.data[oc];
  for (std::size_t c = 0; c < ic; ++c)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const long iy = static_cast<long>(oy * s) - pad_top + static_cast<long>(ky);
        const long ix = static_cast<long>(ox * s) - pad_left + static_cast<long>(kx);
        if (iy < 0 || iy >= static_cast<long>(h) || ix < 0 || ix >= static_cast<long>(w)) continue;
        acc += k.data[((oc * ic + c) * kh + ky) * kw + kx] *
               x.data[(c * h + iy) * w + ix];
      }
  return acc;
}

}  // namespace

TEST_CASE("dense identity weight maps input through unchanged") {
  Tape tape;
  Var x = tape.input(Tensor::vector({1.0, 2.0}));
  Var w = tape.input(Tensor({2, 2}, {1, 0, 0, 1}));
  Var b = tape.input(Tensor::vector({0.0, 0.0}));
  Var y = dense(x, w, b);
  CHECK(y.value().data[0] == doctest::Approx(1.0));
  CHECK(y.value().data[1] == doctest::Approx(2.0));
}

TEST_CASE("five stacked stride-2 causal convs reduce a 32-step window to one") {
  Rng rng(7);
  Tape tape;
  Var x = tape.input(random_tensor({3, 32}, rng));
  std::size_t len = 32;
  Var h = x;
  for (int layer = 0; layer < 5; ++layer) {
    Var k = tape.input(random_tensor({4, h.shape()[0], 3}, rng, 0.3));
    Var b = tape.input(Tensor::zeros({4}));
    h = causal_conv1d(h, k, b, 2);
    len /= 2;
    CHECK(h.shape()[1] == len);
  }
  CHECK(h.shape()[0] == 4);
  CHECK(h.shape()[1] == 1);
}

TEST_CASE("causal conv output never depends on future samples") {
  Rng rng(11);
  Tensor x = random_tensor({1, 8}, rng);
  Tensor k = random_tensor({1, 1, 3}, rng);
  Tensor b = Tensor::zeros({1});
  Tape t1;
  Var y1 = causal_conv1d(t1.input(x), t1.input(k), t1.input(b), 2);
  // Perturbing samples newer than the window of output t must not change it.
  Tensor x2 = x;
  x2.data[6] += 10.0;
  x2.data[7] += 10.0;
  Tape t2;
  Var y2 = causal_conv1d(t2.input(x2), t2.input(k), t2.input(b), 2);
  for (std::size_t t = 0; t + 1 < y1.numel(); ++t)
    CHECK(y1.value().data[t] == doctest::Approx(y2.value().data[t]));
}

TEST_CASE("conv2d averaging kernel keeps a constant image constant inside") {
  Tape tape;
  Var x = tape.input(Tensor::full({1, 8, 8}, 3.0));
  Var k = tape.input(Tensor::full({1, 1, 3, 3}, 1.0 / 9.0));
  Var b = tape.input(Tensor::zeros({1}));
  Var y = conv2d(x, k, b, 1);
  REQUIRE(y.shape() == Shape{1, 8, 8});
  for (std::size_t r = 1; r < 7; ++r)
    for (std::size_t c = 1; c < 7; ++c)
      CHECK(y.value().data[r * 8 + c] == doctest::Approx(3.0).epsilon(1e-12));
  // border sees zero padding
  CHECK(y.value().data[0] == doctest::Approx(3.0 * 4.0 / 9.0));
}

TEST_CASE("conv2d matches the direct-summation oracle on random inputs") {
  Rng rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    const int stride = 1 + (trial % 2);
    Tensor x = random_tensor({2, 9, 7}, rng);
    Tensor k = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Tape tape;
    Var y = conv2d(tape.input(x), tape.input(k), tape.input(b), stride);
    const std::size_t ho = y.shape()[1], wo = y.shape()[2];
    for (std::size_t oc = 0; oc < 3; ++oc)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox)
          CHECK(y.value().data[(oc * ho + oy) * wo + ox] ==
                doctest::Approx(conv2d_oracle_at(x, k, b, stride, oc, oy, ox))
                    .epsilon(1e-12));
  }
}

TEST_CASE("shape mismatches are rejected naming the offending operation") {
  Tape tape;
  Var x = tape.input(Tensor::vector({1.0, 2.0, 3.0}));
  Var w = tape.input(Tensor({2, 2}, {1, 0, 0, 1}));
  Var b = tape.input(Tensor::vector({0.0, 0.0}));
  CHECK_THROWS_WITH_AS(dense(x, w, b),
                       doctest::Contains("dense"), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(x, w, b, 1), std::invalid_argument);
}

TEST_CASE("non-finite inputs are rejected") {
  Tape tape;
  CHECK_THROWS_AS(tape.input(Tensor::vector({1.0, std::nan("")})),
                  std::invalid_argument);
}

TEST_CASE("backward of x^2 at x=3 gives 6") {
  Tape tape;
  Var x = tape.input(Tensor::scalar(3.0), /*requires_grad=*/true);
  Var y = square(x);
  tape.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("two-layer network gradients match central finite differences") {
  Rng rng(42);
  ParameterSet params;
  params.add("w1", {8, 5}, 42, 5, 8);
  params.add_zeros("b1", {8});
  params.add("w2", {1, 8}, 43, 8, 1);
  params.add_zeros("b2", {1});
  Tensor input = random_tensor({5}, rng);
  auto build = [&](Tape& tape, ParamBinder& bind) {
    Var x = tape.input(input);
    Var h = tanh_v(dense(x, bind("w1"), bind("b1")));
    Var y = dense(h, bind("w2"), bind("b2"));
    return mean(square(y));
  };
  GradCheckReport report = grad_check(build, params, 1e-5);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("a branch detached from the loss gets exactly zero gradient") {
  Tape tape;
  Var x = tape.input(Tensor::scalar(1.5), true);
  Var detached = tape.input(Tensor::scalar(2.5), true);
  Var y = square(x);
  Var unused = square(detached);
  (void)unused;
  tape.backward(y);
  CHECK(detached.grad()[0] == 0.0);
}

TEST_CASE("backward twice without re-running forward is rejected") {
  Tape tape;
  Var x = tape.input(Tensor::scalar(2.0), true);
  Var y = square(x);
  tape.backward(y);
  CHECK_THROWS_AS(tape.backward(y), std::logic_error);
}

TEST_CASE("forward is pure: repeated evaluation is bit-identical") {
  Rng rng(5);
  Tensor x = random_tensor({3, 16, 16}, rng);
  Tensor k = random_tensor({4, 3, 3, 3}, rng);
  Tensor b = random_tensor({4}, rng);
  auto run = [&]() {
    Tape tape(false);
    Var y = sigmoid(conv2d(tape.input(x), tape.input(k), tape.input(b), 2));
    return y.value().data;
  };
  auto a = run();
  auto bvals = run();
  CHECK(a == bvals);
}

TEST_CASE("adam first step moves a parameter by exactly lr") {
  ParameterSet params;
  params.add_zeros("p", {1});
  params.grad("p").data[0] = 1.0;
  AdamConfig cfg;
  cfg.lr = 1e-4;
  params.adam_step(cfg);
  CHECK(params.get("p").data[0] == doctest::Approx(-1e-4).epsilon(1e-7));
  CHECK(std::abs(params.get("p").data[0] + 1e-4) < 1e-11);
}

TEST_CASE("adam with zero gradient leaves the parameter unchanged") {
  ParameterSet params;
  params.add_zeros("p", {1});
  params.mutable_value("p").data[0] = 0.7;
  AdamConfig cfg;
  params.adam_step(cfg);
  CHECK(params.get("p").data[0] == doctest::Approx(0.7));
}

TEST_CASE("second identical-gradient step is no larger than the first") {
  ParameterSet params;
  params.add_zeros("p", {1});
  AdamConfig cfg;
  cfg.lr = 1e-3;
  params.grad("p").data[0] = 0.5;
  params.adam_step(cfg);
  const double step1 = std::abs(params.get("p").data[0]);
  params.grad("p").data[0] = 0.5;
  params.adam_step(cfg);
  const double step2 = std::abs(params.get("p").data[0] - (-step1));
  CHECK(step2 <= step1 * (1.0 + 1e-6));
}

TEST_CASE("non-finite gradients skip the parameter and count a diagnostic") {
  ParameterSet params;
  params.add_zeros("good", {1});
  params.add_zeros("bad", {1});
  params.grad("good").data[0] = 1.0;
  params.grad("bad").data[0] = std::nan("");
  AdamConfig cfg;
  params.adam_step(cfg);
  CHECK(params.get("bad").data[0] == 0.0);
  CHECK(params.get("good").data[0] != 0.0);
  CHECK(params.skipped_updates() == 1);
  CHECK(params.get("good").all_finite());
}

TEST_CASE("after adam steps every parameter stays finite") {
  Rng rng(9);
  ParameterSet params;
  params.add("w", {4, 4}, 1, 4, 4);
  AdamConfig cfg;
  cfg.lr = 0.1;
  for (int i = 0; i < 50; ++i) {
    for (double& g : params.grad("w").data) g = rng.normal() * 10.0;
    params.adam_step(cfg);
    CHECK(params.get("w").all_finite());
  }
}

TEST_CASE("every primitive passes gradient checks at 1e-6 over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    ParameterSet params;
    params.add("x2", {2, 6, 6}, seed + 100, 6, 6);
    params.add("k", {3, 2, 3, 3}, seed + 200, 18, 27);
    params.add("kb", {3}, seed + 300, 1, 1);
    params.add("x1", {2, 12}, seed + 400, 2, 2);
    params.add("k1", {2, 2, 3}, seed + 500, 6, 6);
    params.add("w", {4, 12}, seed + 600, 12, 4);
    params.add("b", {4}, seed + 700, 1, 1);
    params.add("v", {6}, seed + 800, 1, 1);
    // keep variance-like inputs strictly positive for log/sqrt/reciprocal
    for (double& x : params.mutable_value("v").data) x = 0.3 + std::abs(x);

    auto build = [&](Tape& tape, ParamBinder& bind) {
      Var conv = conv2d(bind("x2"), bind("k"), bind("kb"), 2);  // [3,3,3]
      Var c1 = causal_conv1d(bind("x1"), bind("k1"), tape.input(Tensor::zeros({2})), 2);
      Var flat = reshape(conv, {conv.numel()});
      Var piece = slice(flat, 0, 12);
      Var dn = dense(piece, bind("w"), bind("b"));
      Var vpos = bind("v");
      Var mixed = concat({sigmoid(dn), tanh_v(dn), softplus(dn),
                          log_v(vpos), sqrt_v(vpos), reciprocal(vpos),
                          clamp(dn, -0.5, 0.5), square(dn),
                          reshape(leaky_relu(conv, 0.1), {conv.numel()}),
                          reshape(relu(conv), {conv.numel()}),
                          reshape(upsample2x(conv), {conv.numel() * 4}),
                          reshape(c1, {c1.numel()})});
      Var lin = add(mul(mixed, mixed), add_scalar(mul_scalar(mixed, 0.3), 0.1));
      return add(mean(lin), mul_scalar(sum(sub(lin, mixed)), 1e-3));
    };
    GradCheckReport report = grad_check(build, params, 1e-5);
    CHECK(report.max_rel_error < 1e-6);
  }
}

TEST_CASE("loss kernels pass gradient checks") {
  Rng rng(77);
  ParameterSet params;
  params.add("p", {6}, 1234, 1, 1);
  params.add("f", {2, 4, 4}, 1235, 1, 1);
  Tensor label = Tensor::vector({1, 0, 1, 1, 0, 1});
  Tensor target_flow = random_tensor({2, 4, 4}, rng);
  Tensor target_vec = random_tensor({6}, rng);
  auto build = [&](Tape& tape, ParamBinder& bind) {
    (void)tape;
    Var prob = sigmoid(bind("p"));
    Var l1 = bce_loss(prob, label);
    Var l2 = mse_loss(bind("p"), target_vec);
    Var l3 = epe_loss(bind("f"), target_flow);
    return add(add(l1, l2), l3);
  };
  GradCheckReport report = grad_check(build, params, 1e-5);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("a corrupted backward rule is reported as failing") {
  ParameterSet params;
  params.add("x", {3}, 321, 1, 1);
  auto build = [&](Tape& tape, ParamBinder& bind) {
    Var x = bind("x");
    // square with a deliberately wrong derivative (3x instead of 2x)
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
      out.data[i] = x.value().data[i] * x.value().data[i];
    Node* xn = x.node();
    Var bad = tape.make("buggy_square", std::move(out), {x}, [xn](const Node& self) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        xn->grad[i] += self.grad[i] * 3.0 * xn->value().data[i];
    });
    return sum(bad);
  };
  GradCheckReport report = grad_check(build, params, 1e-5);
  CHECK_FALSE(report.pass(1e-6));
  CHECK(report.failing(1e-6).size() == 1);
}

TEST_CASE("checkpoint round-trip is bit-exact and verifies its hash") {
  Rng rng(1);
  ParameterSet params;
  params.add("enc.w", {7, 3}, 10, 3, 7);
  params.add("enc.b", {7}, 11, 1, 1);
  params.add("head.w", {2, 7}, 12, 7, 2);
  for (double& v : params.mutable_value("enc.b").data) v = rng.normal();

  const std::string path = (std::filesystem::temp_directory_path() /
                            "touchfuse_ckpt_test.bin").string();
  nlohmann::json extra{{"kind", "unit-test"}, {"d", 16}};
  save_checkpoint(path, params, extra);
  Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.extra.at("kind") == "unit-test");
  CHECK(loaded.params.total_params() == params.total_params());
  for (const auto& [name, e] : params.entries()) {
    const Tensor& back = loaded.params.get(name);
    REQUIRE(back.shape == e.value.shape);
    CHECK(back.data == e.value.data);  // bit-exact
  }
  CHECK(loaded.params.value_hash() == params.value_hash());
  std::filesystem::remove(path);
}
