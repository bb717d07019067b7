#include "touchfuse/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace touchfuse {

namespace {

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

void check_same(const char* op, const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b))
    shape_error(op, "shape mismatch " + shape_str(a.shape) + " vs " +
                        shape_str(b.shape));
}

}  // namespace

Var Tape::input(Tensor t, bool requires_grad, bool check_finite) {
  if (check_finite && !t.all_finite())
    throw std::invalid_argument("tape input: non-finite values rejected");
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.owned = std::move(t);
  n.op = "input";
  n.needs_grad = grad_enabled_ && requires_grad;
  return Var(&n, this);
}

Var Tape::param(const Tensor& stored) {
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.external = &stored;
  n.op = "param";
  n.needs_grad = grad_enabled_;
  return Var(&n, this);
}

Var Tape::make(const char* op, Tensor value, std::vector<Var> parents,
               std::function<void(const Node&)> backward) {
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.owned = std::move(value);
  n.op = op;
  if (grad_enabled_) {
    for (const Var& p : parents)
      if (p.node()->needs_grad) {
        n.needs_grad = true;
        break;
      }
    if (n.needs_grad) n.backward = std::move(backward);
  }
  return Var(&n, this);
}

void Tape::backward(const Var& scalar_out) {
  if (!grad_enabled_)
    throw std::logic_error("backward: tape was recorded with gradients off");
  if (ran_backward_)
    throw std::logic_error(
        "backward: called twice without re-running forward; build a new tape");
  ran_backward_ = true;
  if (scalar_out.numel() != 1)
    throw std::invalid_argument("backward: output must be a scalar");
  Node* out = scalar_out.node();
  out->ensure_grad();
  out->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->needs_grad && it->backward && !it->grad.empty()) it->backward(*it);
  }
}

// ---- helpers ---------------------------------------------------------------

namespace {

// Elementwise unary op with derivative expressed from (x, y).
template <typename F, typename DF>
Var unary(const char* op, Var x, F f, DF df) {
  const Tensor& xv = x.value();
  Tensor out = Tensor::zeros(xv.shape);
  for (std::size_t i = 0; i < xv.numel(); ++i) out.data[i] = f(xv.data[i]);
  Node* xn = x.node();
  return x.tape()->make(op, std::move(out), {x}, [xn, df](const Node& self) {
    xn->ensure_grad();
    const std::vector<double>& g = self.grad;
    const std::vector<double>& xd = xn->value().data;
    const std::vector<double>& yd = self.value().data;
    for (std::size_t i = 0; i < g.size(); ++i)
      xn->grad[i] += g[i] * df(xd[i], yd[i]);
  });
}

}  // namespace

// ---- dense ------------------------------------------------------------------

Var dense(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (wv.shape.size() != 2) shape_error("dense", "weight must be 2-D, got " + shape_str(wv.shape));
  const std::size_t m = wv.shape[0], n = wv.shape[1];
  if (xv.numel() != n)
    shape_error("dense", "input " + shape_str(xv.shape) + " incompatible with weight " +
                             shape_str(wv.shape));
  if (bv.numel() != m)
    shape_error("dense", "bias " + shape_str(bv.shape) + " incompatible with weight " +
                             shape_str(wv.shape));
  Tensor out = Tensor::zeros({m});
  const double* W = wv.data.data();
  const double* X = xv.data.data();
  for (std::size_t i = 0; i < m; ++i) {
    double acc = bv.data[i];
    const double* row = W + i * n;
    for (std::size_t j = 0; j < n; ++j) acc += row[j] * X[j];
    out.data[i] = acc;
  }
  Node* xn = x.node();
  Node* wn = w.node();
  Node* bn = b.node();
  return x.tape()->make("dense", std::move(out), {x, w, b}, [xn, wn, bn, m, n](const Node& self) {
    const std::vector<double>& g = self.grad;
    const double* W = wn->value().data.data();
    const double* X = xn->value().data.data();
    if (xn->needs_grad) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double gi = g[i];
        const double* row = W + i * n;
        for (std::size_t j = 0; j < n; ++j) xn->grad[j] += gi * row[j];
      }
    }
    if (wn->needs_grad) {
      wn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double gi = g[i];
        double* row = wn->grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += gi * X[j];
      }
    }
    if (bn->needs_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) bn->grad[i] += g[i];
    }
  });
}

// ---- conv2d ------------------------------------------------------------------

Var conv2d(Var x, Var k, Var b, int stride) {
  const Tensor& xv = x.value();
  const Tensor& kv = k.value();
  const Tensor& bv = b.value();
  if (stride < 1) shape_error("conv2d", "stride must be >= 1");
  if (xv.shape.size() != 3) shape_error("conv2d", "input must be [C,H,W], got " + shape_str(xv.shape));
  if (kv.shape.size() != 4) shape_error("conv2d", "kernel must be [OC,IC,KH,KW], got " + shape_str(kv.shape));
  const std::size_t ic = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
  const std::size_t oc = kv.shape[0], kh = kv.shape[2], kw = kv.shape[3];
  if (kv.shape[1] != ic)
    shape_error("conv2d", "kernel expects " + std::to_string(kv.shape[1]) +
                              " input channels, input has " + std::to_string(ic));
  if (bv.numel() != oc) shape_error("conv2d", "bias size != output channels");
  const std::size_t s = static_cast<std::size_t>(stride);
  const std::size_t ho = (h + s - 1) / s;
  const std::size_t wo = (w + s - 1) / s;
  const std::ptrdiff_t pad_h_total =
      std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>((ho - 1) * s + kh) - static_cast<std::ptrdiff_t>(h));
  const std::ptrdiff_t pad_w_total =
      std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>((wo - 1) * s + kw) - static_cast<std::ptrdiff_t>(w));
  const std::ptrdiff_t pad_top = pad_h_total / 2;
  const std::ptrdiff_t pad_left = pad_w_total / 2;

  Tensor out = Tensor::zeros({oc, ho, wo});
  const double* X = xv.data.data();
  const double* K = kv.data.data();
  for (std::size_t o = 0; o < oc; ++o) {
    double* Y = out.data.data() + o * ho * wo;
    const double bias = bv.data[o];
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = bias;
        const std::ptrdiff_t iy0 = static_cast<std::ptrdiff_t>(oy * s) - pad_top;
        const std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(ox * s) - pad_left;
        for (std::size_t c = 0; c < ic; ++c) {
          const double* Xc = X + c * h * w;
          const double* Kc = K + (o * ic + c) * kh * kw;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t iy = iy0 + static_cast<std::ptrdiff_t>(ky);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            const double* Xrow = Xc + iy * w;
            const double* Krow = Kc + ky * kw;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t ix = ix0 + static_cast<std::ptrdiff_t>(kx);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              acc += Krow[kx] * Xrow[ix];
            }
          }
        }
        Y[oy * wo + ox] = acc;
      }
    }
  }

  Node* xn = x.node();
  Node* kn = k.node();
  Node* bn = b.node();
  auto back = [xn, kn, bn, ic, h, w, oc, kh, kw, s, ho, wo, pad_top, pad_left](const Node& self) {
    const std::vector<double>& g = self.grad;
    const double* X = xn->value().data.data();
    const double* K = kn->value().data.data();
    const bool gx = xn->needs_grad, gk = kn->needs_grad, gb = bn->needs_grad;
    if (gx) xn->ensure_grad();
    if (gk) kn->ensure_grad();
    if (gb) bn->ensure_grad();
    for (std::size_t o = 0; o < oc; ++o) {
      const double* Go = g.data() + o * ho * wo;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const double go = Go[oy * wo + ox];
          if (go == 0.0) continue;
          if (gb) bn->grad[o] += go;
          const std::ptrdiff_t iy0 = static_cast<std::ptrdiff_t>(oy * s) - pad_top;
          const std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(ox * s) - pad_left;
          for (std::size_t c = 0; c < ic; ++c) {
            const double* Xc = X + c * h * w;
            const double* Kc = K + (o * ic + c) * kh * kw;
            double* GXc = gx ? xn->grad.data() + c * h * w : nullptr;
            double* GKc = gk ? kn->grad.data() + (o * ic + c) * kh * kw : nullptr;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::ptrdiff_t iy = iy0 + static_cast<std::ptrdiff_t>(ky);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t ix = ix0 + static_cast<std::ptrdiff_t>(kx);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                if (gx) GXc[iy * w + ix] += go * Kc[ky * kw + kx];
                if (gk) GKc[ky * kw + kx] += go * Xc[iy * w + ix];
              }
            }
          }
        }
      }
    }
  };
  return x.tape()->make("conv2d", std::move(out), {x, k, b}, std::move(back));
}

// ---- causal 1-D conv ---------------------------------------------------------

Var causal_conv1d(Var x, Var k, Var b, int stride) {
  const Tensor& xv = x.value();
  const Tensor& kv = k.value();
  const Tensor& bv = b.value();
  if (stride < 1) shape_error("causal_conv1d", "stride must be >= 1");
  if (xv.shape.size() != 2) shape_error("causal_conv1d", "input must be [C,L], got " + shape_str(xv.shape));
  if (kv.shape.size() != 3) shape_error("causal_conv1d", "kernel must be [OC,IC,K], got " + shape_str(kv.shape));
  const std::size_t ic = xv.shape[0], len = xv.shape[1];
  const std::size_t oc = kv.shape[0], kn_ = kv.shape[2];
  if (kv.shape[1] != ic) shape_error("causal_conv1d", "kernel/input channel mismatch");
  if (bv.numel() != oc) shape_error("causal_conv1d", "bias size != output channels");
  const std::size_t s = static_cast<std::size_t>(stride);
  const std::size_t lo = (len + s - 1) / s;

  Tensor out = Tensor::zeros({oc, lo});
  const double* X = xv.data.data();
  const double* K = kv.data.data();
  for (std::size_t o = 0; o < oc; ++o) {
    for (std::size_t t = 0; t < lo; ++t) {
      double acc = bv.data[o];
      // window ends at the newest sample this output may see
      const std::ptrdiff_t end = static_cast<std::ptrdiff_t>(t * s + s - 1);
      for (std::size_t c = 0; c < ic; ++c) {
        const double* Xc = X + c * len;
        const double* Kc = K + (o * ic + c) * kn_;
        for (std::size_t j = 0; j < kn_; ++j) {
          const std::ptrdiff_t idx = end - static_cast<std::ptrdiff_t>(kn_ - 1 - j);
          if (idx < 0 || idx >= static_cast<std::ptrdiff_t>(len)) continue;
          acc += Kc[j] * Xc[idx];
        }
      }
      out.data[o * lo + t] = acc;
    }
  }

  Node* xn = x.node();
  Node* knn = k.node();
  Node* bn = b.node();
  auto back = [xn, knn, bn, ic, len, oc, kn_, s, lo](const Node& self) {
    const std::vector<double>& g = self.grad;
    const double* X = xn->value().data.data();
    const double* K = knn->value().data.data();
    const bool gx = xn->needs_grad, gk = knn->needs_grad, gb = bn->needs_grad;
    if (gx) xn->ensure_grad();
    if (gk) knn->ensure_grad();
    if (gb) bn->ensure_grad();
    for (std::size_t o = 0; o < oc; ++o) {
      for (std::size_t t = 0; t < lo; ++t) {
        const double go = g[o * lo + t];
        if (go == 0.0) continue;
        if (gb) bn->grad[o] += go;
        const std::ptrdiff_t end = static_cast<std::ptrdiff_t>(t * s + s - 1);
        for (std::size_t c = 0; c < ic; ++c) {
          for (std::size_t j = 0; j < kn_; ++j) {
            const std::ptrdiff_t idx = end - static_cast<std::ptrdiff_t>(kn_ - 1 - j);
            if (idx < 0 || idx >= static_cast<std::ptrdiff_t>(len)) continue;
            if (gx) xn->grad[c * len + idx] += go * K[(o * ic + c) * kn_ + j];
            if (gk) knn->grad[(o * ic + c) * kn_ + j] += go * X[c * len + idx];
          }
        }
      }
    }
  };
  return x.tape()->make("causal_conv1d", std::move(out), {x, k, b}, std::move(back));
}

// ---- activations -------------------------------------------------------------

Var relu(Var x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var x, double slope) {
  return unary("leaky_relu", x,
               [slope](double v) { return v > 0.0 ? v : slope * v; },
               [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var sigmoid(Var x) {
  return unary("sigmoid", x,
               [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
               [](double, double y) { return y * (1.0 - y); });
}

Var tanh_v(Var x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Var softplus(Var x) {
  return unary("softplus", x,
               [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
               [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

Var reciprocal(Var x) {
  return unary("reciprocal", x, [](double v) { return 1.0 / v; },
               [](double, double y) { return -y * y; });
}

Var log_v(Var x) {
  return unary("log", x, [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Var sqrt_v(Var x) {
  return unary("sqrt", x, [](double v) { return std::sqrt(v); },
               [](double, double y) { return 0.5 / y; });
}

Var square(Var x) {
  return unary("square", x, [](double v) { return v * v; },
               [](double v, double) { return 2.0 * v; });
}

Var clamp(Var x, double lo, double hi) {
  return unary("clamp", x,
               [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
               [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// ---- elementwise binary --------------------------------------------------------

namespace {

template <typename F, typename DA, typename DB>
Var binary(const char* op, Var a, Var b, F f, DA da, DB db) {
  check_same(op, a.value(), b.value());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = Tensor::zeros(av.shape);
  for (std::size_t i = 0; i < av.numel(); ++i)
    out.data[i] = f(av.data[i], bv.data[i]);
  Node* an = a.node();
  Node* bn = b.node();
  return a.tape()->make(op, std::move(out), {a, b}, [an, bn, da, db](const Node& self) {
    const std::vector<double>& g = self.grad;
    const std::vector<double>& ad = an->value().data;
    const std::vector<double>& bd = bn->value().data;
    if (an->needs_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        an->grad[i] += g[i] * da(ad[i], bd[i]);
    }
    if (bn->needs_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        bn->grad[i] += g[i] * db(ad[i], bd[i]);
    }
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary("add", a, b, [](double x, double y) { return x + y; },
                [](double, double) { return 1.0; },
                [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; },
                [](double, double) { return 1.0; },
                [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; },
                [](double, double y) { return y; },
                [](double x, double) { return x; });
}

Var add_scalar(Var a, double s) {
  return unary("add_scalar", a, [s](double v) { return v + s; },
               [](double, double) { return 1.0; });
}

Var mul_scalar(Var a, double s) {
  return unary("mul_scalar", a, [s](double v) { return v * s; },
               [s](double, double) { return s; });
}

// ---- structure ops ---------------------------------------------------------------

Var upsample2x(Var x) {
  const Tensor& xv = x.value();
  if (xv.shape.size() != 3) shape_error("upsample2x", "input must be [C,H,W], got " + shape_str(xv.shape));
  const std::size_t c = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
  Tensor out = Tensor::zeros({c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* Xc = xv.data.data() + ch * h * w;
    double* Yc = out.data.data() + ch * 4 * h * w;
    for (std::size_t y = 0; y < 2 * h; ++y) {
      const double* Xrow = Xc + (y / 2) * w;
      double* Yrow = Yc + y * 2 * w;
      for (std::size_t xw = 0; xw < 2 * w; ++xw) Yrow[xw] = Xrow[xw / 2];
    }
  }
  Node* xn = x.node();
  return x.tape()->make("upsample2x", std::move(out), {x}, [xn, c, h, w](const Node& self) {
    xn->ensure_grad();
    const std::vector<double>& g = self.grad;
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* GX = xn->grad.data() + ch * h * w;
      const double* Gc = g.data() + ch * 4 * h * w;
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xw = 0; xw < 2 * w; ++xw)
          GX[(y / 2) * w + (xw / 2)] += Gc[y * 2 * w + xw];
    }
  });
}

Var concat(std::vector<Var> xs) {
  if (xs.empty()) shape_error("concat", "empty input list");
  const Shape& first = xs[0].shape();
  Shape trailing(first.begin() + 1, first.end());
  std::size_t dim0 = 0;
  for (const Var& xv : xs) {
    const Shape& s = xv.shape();
    if (s.empty() || Shape(s.begin() + 1, s.end()) != trailing)
      shape_error("concat", "trailing dimensions differ: " + shape_str(first) +
                                " vs " + shape_str(s));
    dim0 += s[0];
  }
  Shape out_shape = first;
  out_shape[0] = dim0;
  Tensor out = Tensor::zeros(out_shape);
  std::size_t off = 0;
  std::vector<std::size_t> offsets;
  for (const Var& xv : xs) {
    offsets.push_back(off);
    const auto& d = xv.value().data;
    std::copy(d.begin(), d.end(), out.data.begin() + off);
    off += d.size();
  }
  std::vector<Node*> parents;
  for (const Var& xv : xs) parents.push_back(xv.node());
  return xs[0].tape()->make("concat", std::move(out), xs, [parents, offsets](const Node& self) {
    const std::vector<double>& g = self.grad;
    for (std::size_t i = 0; i < parents.size(); ++i) {
      Node* p = parents[i];
      if (!p->needs_grad) continue;
      p->ensure_grad();
      const std::size_t n = p->value().numel();
      for (std::size_t j = 0; j < n; ++j) p->grad[j] += g[offsets[i] + j];
    }
  });
}

Var reshape(Var x, Shape s) {
  if (shape_numel(s) != x.numel())
    shape_error("reshape", "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(s));
  Tensor out(std::move(s), x.value().data);
  Node* xn = x.node();
  return x.tape()->make("reshape", std::move(out), {x}, [xn](const Node& self) {
    xn->ensure_grad();
    const std::vector<double>& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i];
  });
}

Var slice(Var x, std::size_t begin, std::size_t len) {
  if (begin + len > x.numel())
    shape_error("slice", "range [" + std::to_string(begin) + ", " +
                             std::to_string(begin + len) + ") exceeds " +
                             std::to_string(x.numel()) + " elements");
  Tensor out = Tensor::zeros({len});
  std::copy(x.value().data.begin() + begin, x.value().data.begin() + begin + len,
            out.data.begin());
  Node* xn = x.node();
  return x.tape()->make("slice", std::move(out), {x}, [xn, begin, len](const Node& self) {
    xn->ensure_grad();
    const std::vector<double>& g = self.grad;
    for (std::size_t i = 0; i < len; ++i) xn->grad[begin + i] += g[i];
  });
}

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().data) acc += v;
  Node* xn = x.node();
  return x.tape()->make("sum", Tensor::scalar(acc), {x}, [xn](const Node& self) {
    xn->ensure_grad();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
  });
}

Var mean(Var x) {
  const std::size_t n = x.numel();
  double acc = 0.0;
  for (double v : x.value().data) acc += v;
  Node* xn = x.node();
  return x.tape()->make("mean", Tensor::scalar(acc / static_cast<double>(n)), {x},
                        [xn, n](const Node& self) {
                          xn->ensure_grad();
                          const double g = self.grad[0] / static_cast<double>(n);
                          for (std::size_t i = 0; i < xn->grad.size(); ++i)
                            xn->grad[i] += g;
                        });
}

// ---- losses --------------------------------------------------------------------

Var mse_loss(Var pred, const Tensor& target) {
  check_same("mse_loss", pred.value(), target);
  const std::size_t n = pred.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.value().data[i] - target.data[i];
    acc += d * d;
  }
  Node* pn = pred.node();
  Tensor t = target;  // keep a copy alive for backward
  return pred.tape()->make(
      "mse_loss", Tensor::scalar(acc / static_cast<double>(n)), {pred},
      [pn, t = std::move(t), n](const Node& self) {
        pn->ensure_grad();
        const double g = self.grad[0] * 2.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
          pn->grad[i] += g * (pn->value().data[i] - t.data[i]);
      });
}

Var bce_loss(Var prob, const Tensor& label) {
  check_same("bce_loss", prob.value(), label);
  constexpr double kEps = 1e-7;
  const std::size_t n = prob.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::min(std::max(prob.value().data[i], kEps), 1.0 - kEps);
    const double y = label.data[i];
    acc += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  Node* pn = prob.node();
  Tensor t = label;
  return prob.tape()->make(
      "bce_loss", Tensor::scalar(acc / static_cast<double>(n)), {prob},
      [pn, t = std::move(t), n](const Node& self) {
        pn->ensure_grad();
        const double g = self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double raw = pn->value().data[i];
          if (raw <= kEps || raw >= 1.0 - kEps) continue;  // clamped: flat
          pn->grad[i] += g * (raw - t.data[i]) / (raw * (1.0 - raw));
        }
      });
}

Var epe_loss(Var flow, const Tensor& target) {
  check_same("epe_loss", flow.value(), target);
  const Shape& s = flow.shape();
  if (s.size() != 3 || s[0] != 2)
    shape_error("epe_loss", "flow must be [2,H,W], got " + shape_str(s));
  const std::size_t npix = s[1] * s[2];
  constexpr double kEps = 1e-12;  // keeps the sqrt differentiable at zero error
  double acc = 0.0;
  for (std::size_t i = 0; i < npix; ++i) {
    const double du = flow.value().data[i] - target.data[i];
    const double dv = flow.value().data[npix + i] - target.data[npix + i];
    acc += std::sqrt(du * du + dv * dv + kEps);
  }
  Node* fn = flow.node();
  Tensor t = target;
  return flow.tape()->make(
      "epe_loss", Tensor::scalar(acc / static_cast<double>(npix)), {flow},
      [fn, t = std::move(t), npix](const Node& self) {
        fn->ensure_grad();
        const double g = self.grad[0] / static_cast<double>(npix);
        for (std::size_t i = 0; i < npix; ++i) {
          const double du = fn->value().data[i] - t.data[i];
          const double dv = fn->value().data[npix + i] - t.data[npix + i];
          const double r = std::sqrt(du * du + dv * dv + kEps);
          fn->grad[i] += g * du / r;
          fn->grad[npix + i] += g * dv / r;
        }
      });
}

}  // namespace touchfuse
