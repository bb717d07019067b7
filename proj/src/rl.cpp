#include "touchfuse/rl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace touchfuse::rl {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

// ---- Mlp -----------------------------------------------------------------

Mlp::Mlp(std::vector<int> widths, std::uint64_t seed) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw std::invalid_argument("Mlp: need at least two widths");
  int offset = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    w_offsets_.push_back(offset);
    offset += widths_[l + 1] * widths_[l];
    b_offsets_.push_back(offset);
    offset += widths_[l + 1];
  }
  n_params_ = offset;
  params_.assign(n_params_, 0.0);
  Rng rng(derive_seed(seed, "mlp"));
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const double bound = std::sqrt(6.0 / (widths_[l] + widths_[l + 1]));
    double* w = params_.data() + w_offsets_[l];
    for (int i = 0; i < widths_[l + 1] * widths_[l]; ++i)
      w[i] = rng.uniform(-bound, bound);
  }
}

std::vector<double> Mlp::forward(const std::vector<double>& x, Workspace* ws) const {
  if (static_cast<int>(x.size()) != widths_.front())
    throw std::invalid_argument("Mlp::forward: input dimension mismatch");
  if (ws) {
    ws->post.clear();
    ws->post.push_back(x);
  }
  std::vector<double> a = x;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const int in = widths_[l], out = widths_[l + 1];
    const double* w = params_.data() + w_offsets_[l];
    const double* b = params_.data() + b_offsets_[l];
    std::vector<double> next(out);
    for (int i = 0; i < out; ++i) {
      double acc = b[i];
      const double* row = w + i * in;
      for (int j = 0; j < in; ++j) acc += row[j] * a[j];
      next[i] = acc;
    }
    const bool last = l + 2 == widths_.size();
    if (!last)
      for (double& v : next) v = std::tanh(v);
    if (ws) ws->post.push_back(next);
    a = std::move(next);
  }
  return a;
}

void Mlp::backward(const Workspace& ws, const std::vector<double>& dy,
                   std::vector<double>& grad, std::vector<double>* dx) const {
  if (grad.size() != static_cast<std::size_t>(n_params_))
    throw std::invalid_argument("Mlp::backward: grad buffer size mismatch");
  std::vector<double> delta = dy;  // dL/d(post activation of layer l)
  for (std::size_t l = widths_.size() - 1; l-- > 0;) {
    const int in = widths_[l], out = widths_[l + 1];
    const bool last = l + 2 == widths_.size();
    const std::vector<double>& post = ws.post[l + 1];
    const std::vector<double>& prev = ws.post[l];
    // through tanh (hidden layers only)
    std::vector<double> dpre(out);
    for (int i = 0; i < out; ++i)
      dpre[i] = last ? delta[i] : delta[i] * (1.0 - post[i] * post[i]);
    double* gw = grad.data() + w_offsets_[l];
    double* gb = grad.data() + b_offsets_[l];
    for (int i = 0; i < out; ++i) {
      gb[i] += dpre[i];
      double* row = gw + i * in;
      const double d = dpre[i];
      for (int j = 0; j < in; ++j) row[j] += d * prev[j];
    }
    if (l > 0 || dx) {
      const double* w = params_.data() + w_offsets_[l];
      std::vector<double> dprev(in, 0.0);
      for (int i = 0; i < out; ++i) {
        const double d = dpre[i];
        const double* row = w + i * in;
        for (int j = 0; j < in; ++j) dprev[j] += d * row[j];
      }
      if (l == 0 && dx) *dx = dprev;
      delta = std::move(dprev);
    }
  }
}

std::vector<double> Mlp::jvp_params(const Workspace& ws,
                                    const std::vector<double>& v) const {
  if (v.size() != static_cast<std::size_t>(n_params_))
    throw std::invalid_argument("Mlp::jvp_params: direction size mismatch");
  std::vector<double> tangent(widths_.front(), 0.0);  // input is fixed
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const int in = widths_[l], out = widths_[l + 1];
    const double* w = params_.data() + w_offsets_[l];
    const double* dw = v.data() + w_offsets_[l];
    const double* db = v.data() + b_offsets_[l];
    const std::vector<double>& prev = ws.post[l];
    const std::vector<double>& post = ws.post[l + 1];
    std::vector<double> next(out);
    for (int i = 0; i < out; ++i) {
      double acc = db[i];
      const double* wrow = w + i * in;
      const double* dwrow = dw + i * in;
      for (int j = 0; j < in; ++j) acc += dwrow[j] * prev[j] + wrow[j] * tangent[j];
      next[i] = acc;
    }
    const bool last = l + 2 == widths_.size();
    if (!last)
      for (int i = 0; i < out; ++i) next[i] *= (1.0 - post[i] * post[i]);
    tangent = std::move(next);
  }
  return tangent;
}

// ---- policy ----------------------------------------------------------------

GaussianPolicy::GaussianPolicy(const PolicyConfig& cfg, std::uint64_t seed)
    : net_({cfg.latent_dim, cfg.hidden, cfg.hidden, 3}, seed), cfg_(cfg) {
  log_std_ = {cfg.log_std_init, cfg.log_std_init, cfg.log_std_init};
  // a small final layer keeps early actions near zero
  const int last = static_cast<int>(net_.params().size());
  const int final_block = cfg.hidden * 3 + 3;
  for (int i = last - final_block; i < last; ++i) net_.params()[i] *= 0.01;
}

int GaussianPolicy::n_params() const { return net_.n_params() + 3; }

std::vector<double> GaussianPolicy::get_params() const {
  std::vector<double> p = net_.params();
  p.insert(p.end(), log_std_.begin(), log_std_.end());
  return p;
}

void GaussianPolicy::set_params(const std::vector<double>& p) {
  if (p.size() != static_cast<std::size_t>(n_params()))
    throw std::invalid_argument("GaussianPolicy::set_params: size mismatch");
  std::copy(p.begin(), p.end() - 3, net_.params().begin());
  for (int i = 0; i < 3; ++i)
    log_std_[i] = std::clamp(p[p.size() - 3 + i], cfg_.log_std_min, cfg_.log_std_max);
}

std::array<double, 3> GaussianPolicy::mean(const std::vector<double>& latent) const {
  for (double v : latent)
    if (!std::isfinite(v))
      throw std::invalid_argument("GaussianPolicy: non-finite latent rejected");
  const std::vector<double> y = net_.forward(latent, nullptr);
  return {y[0], y[1], y[2]};
}

GaussianPolicy::Sample GaussianPolicy::sample(const std::vector<double>& latent,
                                              Rng& rng) const {
  const std::array<double, 3> mu = mean(latent);
  Sample s;
  s.log_prob = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double sd = std::exp(log_std_[i]);
    const double eps = rng.normal();
    s.action[i] = mu[i] + sd * eps;
    s.log_prob += -log_std_[i] - 0.5 * kLog2Pi - 0.5 * eps * eps;
  }
  return s;
}

double GaussianPolicy::log_prob(const std::vector<double>& latent,
                                const std::array<double, 3>& action) const {
  const std::array<double, 3> mu = mean(latent);
  double lp = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double sd = std::exp(log_std_[i]);
    const double z = (action[i] - mu[i]) / sd;
    lp += -log_std_[i] - 0.5 * kLog2Pi - 0.5 * z * z;
  }
  return lp;
}

// ---- GAE ---------------------------------------------------------------------

void compute_gae(RolloutBatch& batch, double gamma, double lambda,
                 bool normalize_advantages) {
  const std::size_t n = batch.size();
  batch.advantages.assign(n, 0.0);
  batch.value_targets.assign(n, 0.0);
  std::vector<std::size_t> starts = batch.episode_starts;
  starts.push_back(n);
  for (std::size_t e = 0; e + 1 < starts.size(); ++e) {
    const std::size_t begin = starts[e], end = starts[e + 1];
    double adv = 0.0;
    for (std::size_t t = end; t-- > begin;) {
      const double next_v = (t + 1 < end) ? batch.values[t + 1] : 0.0;
      const double delta = batch.rewards[t] + gamma * next_v - batch.values[t];
      adv = delta + gamma * lambda * adv;
      batch.advantages[t] = adv;
      batch.value_targets[t] = adv + batch.values[t];
    }
  }
  if (normalize_advantages && n > 1) {
    double mean = 0.0;
    for (double a : batch.advantages) mean += a;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double a : batch.advantages) var += (a - mean) * (a - mean);
    var /= static_cast<double>(n);
    const double sd = std::sqrt(std::max(var, 1e-12));
    for (double& a : batch.advantages) a = (a - mean) / sd;
  }
}

// ---- CG ------------------------------------------------------------------------

CgResult conjugate_gradient(
    const std::function<std::vector<double>(const std::vector<double>&)>& matvec,
    const std::vector<double>& b, int max_iters, double tol) {
  const std::size_t n = b.size();
  CgResult res;
  res.x.assign(n, 0.0);
  std::vector<double> r = b, p = b;
  double rs = std::inner_product(r.begin(), r.end(), r.begin(), 0.0);
  const double b2 = rs;
  if (b2 == 0.0) {
    res.converged = true;
    return res;
  }
  for (int it = 0; it < max_iters; ++it) {
    const std::vector<double> ap = matvec(p);
    const double pap = std::inner_product(p.begin(), p.end(), ap.begin(), 0.0);
    if (pap <= 0.0) break;  // direction of non-positive curvature; stop
    const double alpha = rs / pap;
    for (std::size_t i = 0; i < n; ++i) {
      res.x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    const double rs_new = std::inner_product(r.begin(), r.end(), r.begin(), 0.0);
    res.iterations = it + 1;
    if (rs_new / b2 < tol * tol) {
      rs = rs_new;
      res.converged = true;
      break;
    }
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + (rs_new / rs) * p[i];
    rs = rs_new;
  }
  res.residual = std::sqrt(rs / b2);
  if (res.residual < tol) res.converged = true;
  return res;
}

// ---- TRPO ------------------------------------------------------------------------

double surrogate_objective(const GaussianPolicy& policy, const RolloutBatch& batch) {
  double acc = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double lp = policy.log_prob(batch.obs[i], batch.actions[i]);
    acc += std::exp(lp - batch.log_probs[i]) * batch.advantages[i];
  }
  return acc / static_cast<double>(batch.size());
}

std::vector<double> surrogate_gradient(const GaussianPolicy& policy,
                                       const RolloutBatch& batch) {
  const double n = static_cast<double>(batch.size());
  std::vector<double> grad(policy.n_params(), 0.0);
  std::vector<double> net_grad(policy.net().n_params(), 0.0);
  const auto& ls = policy.log_std();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Mlp::Workspace ws;
    const std::vector<double> mu = policy.net().forward(batch.obs[i], &ws);
    double lp = 0.0;
    std::vector<double> dmu(3);
    for (int k = 0; k < 3; ++k) {
      const double sd = std::exp(ls[k]);
      const double z = (batch.actions[i][k] - mu[k]) / sd;
      lp += -ls[k] - 0.5 * kLog2Pi - 0.5 * z * z;
    }
    const double ratio = std::exp(lp - batch.log_probs[i]);
    const double w = ratio * batch.advantages[i] / n;
    for (int k = 0; k < 3; ++k) {
      const double sd = std::exp(ls[k]);
      const double diff = batch.actions[i][k] - mu[k];
      dmu[k] = w * diff / (sd * sd);
      grad[policy.net().n_params() + k] += w * (diff * diff / (sd * sd) - 1.0);
    }
    policy.net().backward(ws, dmu, net_grad, nullptr);
  }
  std::copy(net_grad.begin(), net_grad.end(), grad.begin());
  return grad;
}

double mean_kl(const GaussianPolicy& old_policy, const GaussianPolicy& new_policy,
               const RolloutBatch& batch) {
  double acc = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::array<double, 3> mo = old_policy.mean(batch.obs[i]);
    const std::array<double, 3> mn = new_policy.mean(batch.obs[i]);
    for (int k = 0; k < 3; ++k) {
      const double lso = old_policy.log_std()[k], lsn = new_policy.log_std()[k];
      const double vo = std::exp(2.0 * lso), vn = std::exp(2.0 * lsn);
      acc += lsn - lso + (vo + (mo[k] - mn[k]) * (mo[k] - mn[k])) / (2.0 * vn) - 0.5;
    }
  }
  return acc / static_cast<double>(batch.size());
}

std::vector<double> fisher_vector_product(const GaussianPolicy& policy,
                                          const RolloutBatch& batch,
                                          const std::vector<double>& v) {
  const double n = static_cast<double>(batch.size());
  const int np = policy.net().n_params();
  std::vector<double> net_v(v.begin(), v.begin() + np);
  std::vector<double> out(policy.n_params(), 0.0);
  std::vector<double> net_out(np, 0.0);
  const auto& ls = policy.log_std();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Mlp::Workspace ws;
    policy.net().forward(batch.obs[i], &ws);
    std::vector<double> t = policy.net().jvp_params(ws, net_v);  // Jmu v
    for (int k = 0; k < 3; ++k) t[k] /= std::exp(2.0 * ls[k]) * n;  // Sigma^-1 / n
    policy.net().backward(ws, t, net_out, nullptr);  // Jmu^T (...)
  }
  std::copy(net_out.begin(), net_out.end(), out.begin());
  // log-std block of the Gaussian KL Hessian is 2 per dimension
  for (int k = 0; k < 3; ++k) out[np + k] = 2.0 * v[np + k];
  return out;
}

TrpoDiagnostics trpo_update(GaussianPolicy& policy, const RolloutBatch& batch,
                            const TrpoConfig& cfg) {
  TrpoDiagnostics diag;
  if (batch.size() == 0) return diag;
  const std::vector<double> theta_old = policy.get_params();
  GaussianPolicy old_policy = policy;

  diag.surrogate_before = surrogate_objective(policy, batch);
  const std::vector<double> g = surrogate_gradient(policy, batch);
  double gnorm2 = std::inner_product(g.begin(), g.end(), g.begin(), 0.0);
  if (gnorm2 < 1e-24) return diag;  // zero gradient: nothing to do

  auto damped_fvp = [&](const std::vector<double>& v) {
    std::vector<double> fv = fisher_vector_product(policy, batch, v);
    for (std::size_t i = 0; i < fv.size(); ++i) fv[i] += cfg.damping * v[i];
    return fv;
  };
  const CgResult cg = conjugate_gradient(damped_fvp, g, cfg.cg_iters, cfg.cg_tol);
  diag.cg_converged = cg.converged;
  diag.cg_residual = cg.residual;

  const std::vector<double> fx = damped_fvp(cg.x);
  const double xhx = std::inner_product(cg.x.begin(), cg.x.end(), fx.begin(), 0.0);
  if (xhx <= 0.0) return diag;
  const double beta = std::sqrt(2.0 * cfg.max_kl / xhx);

  double factor = 1.0;
  for (int step = 0; step < cfg.line_search_steps; ++step) {
    std::vector<double> theta = theta_old;
    for (std::size_t i = 0; i < theta.size(); ++i)
      theta[i] += factor * beta * cg.x[i];
    policy.set_params(theta);
    const double surrogate = surrogate_objective(policy, batch);
    const double kl = mean_kl(old_policy, policy, batch);
    if (surrogate > diag.surrogate_before &&
        kl <= cfg.kl_acceptance_slack * cfg.max_kl) {
      diag.accepted = true;
      diag.line_search_index = step;
      diag.surrogate_delta = surrogate - diag.surrogate_before;
      diag.kl_after = kl;
      return diag;
    }
    factor *= cfg.line_search_factor;
  }
  policy.set_params(theta_old);  // total failure: unchanged
  diag.kl_after = 0.0;
  return diag;
}

// ---- value baseline ------------------------------------------------------------

ValueNet::ValueNet(int latent_dim, int hidden, std::uint64_t seed)
    : net_({latent_dim, hidden, hidden, 1}, seed) {
  adam_m_.assign(net_.n_params(), 0.0);
  adam_v_.assign(net_.n_params(), 0.0);
}

double ValueNet::predict(const std::vector<double>& latent) const {
  return net_.forward(latent, nullptr)[0] * target_std_ + target_mean_;
}

std::vector<double> ValueNet::fit(const std::vector<std::vector<double>>& obs,
                                  const std::vector<double>& targets, int epochs,
                                  double lr, int minibatch, std::uint64_t seed) {
  const std::size_t n = obs.size();
  if (n == 0) return {};
  double mean = 0.0;
  for (double t : targets) mean += t;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double t : targets) var += (t - mean) * (t - mean);
  target_mean_ = mean;
  target_std_ = std::max(std::sqrt(var / static_cast<double>(n)), 1e-6);

  std::vector<double> norm_targets(n);
  for (std::size_t i = 0; i < n; ++i)
    norm_targets[i] = (targets[i] - target_mean_) / target_std_;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "value.fit"));
  std::vector<double> epoch_losses;
  std::vector<double> grad(net_.n_params());
  for (int epoch = 0; epoch < epochs; ++epoch) {
    // deterministic shuffle
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_int(i)]);
    for (std::size_t start = 0; start < n; start += minibatch) {
      const std::size_t end = std::min(n, start + minibatch);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i = start; i < end; ++i) {
        Mlp::Workspace ws;
        const double pred = net_.forward(obs[order[i]], &ws)[0];
        const double err = pred - norm_targets[order[i]];
        net_.backward(ws, {2.0 * err / static_cast<double>(end - start)}, grad,
                      nullptr);
      }
      ++adam_step_;
      const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(adam_step_));
      const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(adam_step_));
      for (int i = 0; i < net_.n_params(); ++i) {
        adam_m_[i] = 0.9 * adam_m_[i] + 0.1 * grad[i];
        adam_v_[i] = 0.999 * adam_v_[i] + 0.001 * grad[i] * grad[i];
        net_.params()[i] -=
            lr * (adam_m_[i] / bc1) / (std::sqrt(adam_v_[i] / bc2) + 1e-8);
      }
    }
    // post-epoch MSE over the whole batch, in standardized units
    double loss_acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double pred = net_.forward(obs[i], nullptr)[0];
      const double err = pred - norm_targets[i];
      loss_acc += err * err;
    }
    epoch_losses.push_back(loss_acc / static_cast<double>(n));
  }
  return epoch_losses;
}

}  // namespace touchfuse::rl
