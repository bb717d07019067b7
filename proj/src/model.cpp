#include "touchfuse/model.hpp"

#include <algorithm>
#include <cmath>

#include "touchfuse/checkpoint.hpp"

namespace touchfuse::model {

namespace {

constexpr double kPi = 3.14159265358979323846;
const char* kModalityOrder[4] = {"rgb", "depth", "force", "proprio"};

int log2i(int v) {
  int r = 0;
  while ((1 << r) < v) ++r;
  return r;
}

struct ConvSpec {
  std::string name;
  int in_ch, out_ch, k, stride;
};
struct DenseSpec {
  std::string name;
  int in, out;
};

int rgb_ch(int i) {
  static const int table[6] = {8, 16, 24, 48, 64, 64};
  return table[std::min(i, 5)];
}
int depth_ch(int i) {
  static const int table[6] = {6, 12, 24, 48, 64, 64};
  return table[std::min(i, 5)];
}
int flow_dec_ch(int j) {
  static const int table[4] = {24, 16, 12, 8};
  return table[std::min(j, 3)];
}

struct ArchPlan {
  std::vector<ConvSpec> rgb, depth;
  DenseSpec rgb_fc{}, depth_fc{};
  std::vector<ConvSpec> force;
  DenseSpec force_fc{};
  std::vector<DenseSpec> proprio;
  std::vector<DenseSpec> det_fuse;
  std::vector<DenseSpec> action_enc;
  std::vector<DenseSpec> conditioner;
  DenseSpec flow_fc{};
  std::vector<ConvSpec> flow_ups;  // in_ch includes the skip concat
  ConvSpec flow_head{}, mask_head{};
  DenseSpec contact{};
  std::vector<DenseSpec> ee_head;
  std::vector<DenseSpec> pairing;
  DenseSpec recon_img_fc{};
  std::vector<ConvSpec> recon_img;
  std::vector<DenseSpec> recon_prop, recon_force;
  bool has_rgb = false, has_depth = false, has_force = false, has_proprio = false;
  bool predictive = false;  // full/deterministic heads active
  bool recon = false;
  bool use_pairing = false;
  std::string skip_source;  // "rgb", "depth", or ""
  int n_modalities = 0;
  int flow_start_ch = 32;
};

ArchPlan plan_architecture(const ModelConfig& cfg) {
  ArchPlan p;
  const int s = cfg.image_size;
  const int n_down = log2i(s) - 1;
  const int d2 = 2 * cfg.d;
  p.has_rgb = cfg.modalities.count("rgb") > 0;
  p.has_depth = cfg.modalities.count("depth") > 0;
  p.has_force = cfg.modalities.count("force") > 0;
  p.has_proprio = cfg.modalities.count("proprio") > 0;
  p.n_modalities = static_cast<int>(cfg.modalities.size());
  p.predictive = cfg.variant != Variant::kReconstruction;
  p.recon = cfg.variant == Variant::kReconstruction;
  p.use_pairing = p.predictive && cfg.loss_weights.pairing > 0.0;
  p.skip_source = p.has_rgb ? "rgb" : (p.has_depth ? "depth" : "");

  if (p.has_rgb) {
    int in = 3;
    for (int i = 0; i < n_down; ++i) {
      p.rgb.push_back({"rgb.c" + std::to_string(i), in, rgb_ch(i), i == 0 ? 5 : 3, 2});
      in = rgb_ch(i);
    }
    p.rgb_fc = {"rgb.fc", in * 4, d2};
  }
  if (p.has_depth) {
    int in = 1, layer = 0;
    for (int i = 0; i < n_down; ++i) {
      const int extra_s1 = s >= 128 ? 2 : (s >= 32 && i < 2 ? 1 : 0);
      for (int e = 0; e < extra_s1; ++e) {
        p.depth.push_back({"depth.c" + std::to_string(layer++), in, depth_ch(i), 3, 1});
        in = depth_ch(i);
      }
      p.depth.push_back({"depth.c" + std::to_string(layer++), in, depth_ch(i), 3, 2});
      in = depth_ch(i);
    }
    p.depth_fc = {"depth.fc", in * 4, d2};
  }
  if (p.has_force) {
    static const int fch[5] = {16, 24, 32, 32, 32};
    int in = cfg.force_channels;
    for (int i = 0; i < 5; ++i) {
      p.force.push_back({"force.c" + std::to_string(i), in, fch[i], 3, 2});
      in = fch[i];
    }
    p.force_fc = {"force.fc", in, d2};
  }
  if (p.has_proprio) {
    static const int pch[3] = {32, 64, 64};
    int in = cfg.proprio_dim;
    for (int i = 0; i < 3; ++i) {
      p.proprio.push_back({"proprio.l" + std::to_string(i), in, pch[i]});
      in = pch[i];
    }
    p.proprio.push_back({"proprio.l3", in, d2});
  }
  if (cfg.variant == Variant::kDeterministic) {
    p.det_fuse.push_back({"det_fuse.l0", p.n_modalities * d2, cfg.d});
    p.det_fuse.push_back({"det_fuse.l1", cfg.d, cfg.d});
  }

  if (p.predictive) {
    p.action_enc.push_back({"act.l0", cfg.action_dim, 16});
    p.action_enc.push_back({"act.l1", 16, 16});
    p.conditioner.push_back({"cond.l0", cfg.d + 16, cfg.cond_width});
    p.conditioner.push_back({"cond.l1", cfg.cond_width, cfg.cond_width});

    const int n_up = log2i(cfg.flow_out()) - 1;
    p.flow_fc = {"flow.fc", cfg.cond_width, p.flow_start_ch * 4};
    int in = p.flow_start_ch;
    for (int j = 0; j < n_up; ++j) {
      const int res = 4 << j;
      int skip_ch = 0;
      if (p.skip_source == "rgb") {
        const int enc_layer = log2i(s) - j - 3;
        if (enc_layer >= 0 && enc_layer < static_cast<int>(p.rgb.size()))
          skip_ch = p.rgb[enc_layer].out_ch;
      } else if (p.skip_source == "depth") {
        const int enc_layer = log2i(s) - j - 3;
        if (enc_layer >= 0) skip_ch = depth_ch(enc_layer);
      }
      (void)res;
      p.flow_ups.push_back({"flow.u" + std::to_string(j), in + skip_ch, flow_dec_ch(j), 3, 1});
      in = flow_dec_ch(j);
    }
    p.flow_head = {"flow.flow_head", in, 2, 3, 1};
    p.mask_head = {"flow.mask_head", in, 1, 3, 1};
    p.contact = {"contact.l0", cfg.cond_width, 1};
    static const int ech[3] = {64, 64, 32};
    int ein = cfg.cond_width;
    for (int i = 0; i < 3; ++i) {
      p.ee_head.push_back({"ee.l" + std::to_string(i), ein, ech[i]});
      ein = ech[i];
    }
    p.ee_head.push_back({"ee.l3", ein, 3});
    if (p.use_pairing) {
      const int pin = cfg.pairing_conditioned ? cfg.cond_width : cfg.d;
      if (cfg.pairing_hidden > 0) {
        p.pairing.push_back({"pair.l0", pin, cfg.pairing_hidden});
        p.pairing.push_back({"pair.l1", cfg.pairing_hidden, 1});
      } else {
        p.pairing.push_back({"pair.l0", pin, 1});
      }
    }
  }

  if (p.recon) {
    const int n_up = log2i(s) - 1;
    p.recon_img_fc = {"recon_img.fc", cfg.d, p.flow_start_ch * 4};
    int in = p.flow_start_ch;
    for (int j = 0; j < n_up; ++j) {
      const bool last = j + 1 == n_up;
      const int out = last ? 3 : flow_dec_ch(j);
      p.recon_img.push_back({"recon_img.u" + std::to_string(j), in, out, 3, 1});
      in = out;
    }
    static const int rch[3] = {64, 64, 32};
    int pin = cfg.d;
    for (int i = 0; i < 3; ++i) {
      p.recon_prop.push_back({"recon_prop.l" + std::to_string(i), pin, rch[i]});
      pin = rch[i];
    }
    p.recon_prop.push_back({"recon_prop.l3", pin, cfg.proprio_dim});
    pin = cfg.d;
    for (int i = 0; i < 3; ++i) {
      p.recon_force.push_back({"recon_force.l" + std::to_string(i), pin, rch[i]});
      pin = rch[i];
    }
    p.recon_force.push_back({"recon_force.l3", pin, cfg.force_channels});
  }
  return p;
}

// ---- parameter creation / binding helpers ----------------------------------

void add_dense(ParameterSet& ps, const DenseSpec& d, std::uint64_t seed) {
  ps.add(d.name + ".w", {static_cast<std::size_t>(d.out), static_cast<std::size_t>(d.in)},
         seed, d.in, d.out);
  ps.add_zeros(d.name + ".b", {static_cast<std::size_t>(d.out)});
}

void add_conv(ParameterSet& ps, const ConvSpec& c, std::uint64_t seed) {
  ps.add(c.name + ".w",
         {static_cast<std::size_t>(c.out_ch), static_cast<std::size_t>(c.in_ch),
          static_cast<std::size_t>(c.k), static_cast<std::size_t>(c.k)},
         seed, c.in_ch * c.k * c.k, c.out_ch * c.k * c.k);
  ps.add_zeros(c.name + ".b", {static_cast<std::size_t>(c.out_ch)});
}

void add_conv1d(ParameterSet& ps, const ConvSpec& c, std::uint64_t seed) {
  ps.add(c.name + ".w",
         {static_cast<std::size_t>(c.out_ch), static_cast<std::size_t>(c.in_ch),
          static_cast<std::size_t>(c.k)},
         seed, c.in_ch * c.k, c.out_ch * c.k);
  ps.add_zeros(c.name + ".b", {static_cast<std::size_t>(c.out_ch)});
}

Var bound_dense(ParamBinder& bind, const DenseSpec& d, Var x) {
  return dense(x, bind(d.name + ".w"), bind(d.name + ".b"));
}
Var bound_conv(ParamBinder& bind, const ConvSpec& c, Var x) {
  return conv2d(x, bind(c.name + ".w"), bind(c.name + ".b"), c.stride);
}
Var bound_conv1d(ParamBinder& bind, const ConvSpec& c, Var x) {
  return causal_conv1d(x, bind(c.name + ".w"), bind(c.name + ".b"), c.stride);
}

Var mlp(ParamBinder& bind, const std::vector<DenseSpec>& layers, Var x,
        bool final_linear = true) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = bound_dense(bind, layers[i], x);
    if (i + 1 < layers.size() || !final_linear) x = leaky_relu(x, 0.1);
  }
  return x;
}

}  // namespace

Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::kFull;
  if (s == "deterministic") return Variant::kDeterministic;
  if (s == "reconstruction") return Variant::kReconstruction;
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kDeterministic: return "deterministic";
    case Variant::kReconstruction: return "reconstruction";
  }
  return "full";
}

void ModelConfig::validate() const {
  if (d != 16 && d != 64 && d != 128 && d != 256)
    throw std::invalid_argument("ModelConfig: d must be one of {16, 64, 128, 256}");
  if (image_size < 8 || (image_size & (image_size - 1)) != 0)
    throw std::invalid_argument("ModelConfig: image_size must be a power of two >= 8");
  if (modalities.empty())
    throw std::invalid_argument("ModelConfig: modality mask must be non-empty");
  for (const std::string& m : modalities)
    if (m != "rgb" && m != "depth" && m != "force" && m != "proprio")
      throw std::invalid_argument("ModelConfig: unknown modality '" + m + "'");
  if (force_window != 32)
    throw std::invalid_argument("ModelConfig: force window must be 32 samples");
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json j;
  j["d"] = d;
  j["image_size"] = image_size;
  j["force_channels"] = force_channels;
  j["force_window"] = force_window;
  j["variant"] = to_string(variant);
  j["modalities"] = modalities;
  j["loss_weights"] = {{"flow", loss_weights.flow},
                       {"mask", loss_weights.mask},
                       {"contact", loss_weights.contact},
                       {"ee_pose", loss_weights.ee_pose},
                       {"pairing", loss_weights.pairing},
                       {"kl", loss_weights.kl},
                       {"recon_image", loss_weights.recon_image},
                       {"recon_proprio", loss_weights.recon_proprio},
                       {"recon_force", loss_weights.recon_force}};
  j["pairing_hidden"] = pairing_hidden;
  j["pairing_conditioned"] = pairing_conditioned;
  j["include_prior"] = include_prior;
  j["var_floor"] = var_floor;
  j["cond_width"] = cond_width;
  j["action_dim"] = action_dim;
  j["proprio_dim"] = proprio_dim;
  j["action_limits"] = action_limits;
  j["force_scale"] = force_scale;
  j["pose_scale"] = pose_scale;
  j["depth_scale"] = depth_scale;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d = j.value("d", c.d);
  c.image_size = j.value("image_size", c.image_size);
  c.force_channels = j.value("force_channels", c.force_channels);
  c.force_window = j.value("force_window", c.force_window);
  if (j.contains("variant")) c.variant = variant_from_string(j.at("variant"));
  if (j.contains("modalities"))
    c.modalities = j.at("modalities").get<std::set<std::string>>();
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    c.loss_weights.flow = w.value("flow", 1.0);
    c.loss_weights.mask = w.value("mask", 1.0);
    c.loss_weights.contact = w.value("contact", 1.0);
    c.loss_weights.ee_pose = w.value("ee_pose", 1.0);
    c.loss_weights.pairing = w.value("pairing", 1.0);
    c.loss_weights.kl = w.value("kl", 1.0);
    c.loss_weights.recon_image = w.value("recon_image", 1.0);
    c.loss_weights.recon_proprio = w.value("recon_proprio", 1.0);
    c.loss_weights.recon_force = w.value("recon_force", 1.0);
  }
  c.pairing_hidden = j.value("pairing_hidden", c.pairing_hidden);
  c.pairing_conditioned = j.value("pairing_conditioned", c.pairing_conditioned);
  c.include_prior = j.value("include_prior", c.include_prior);
  c.var_floor = j.value("var_floor", c.var_floor);
  c.cond_width = j.value("cond_width", c.cond_width);
  c.action_dim = j.value("action_dim", c.action_dim);
  c.proprio_dim = j.value("proprio_dim", c.proprio_dim);
  if (j.contains("action_limits")) c.action_limits = j.at("action_limits");
  c.force_scale = j.value("force_scale", c.force_scale);
  c.pose_scale = j.value("pose_scale", c.pose_scale);
  c.depth_scale = j.value("depth_scale", c.depth_scale);
  c.validate();
  return c;
}

MultimodalModel::MultimodalModel(ModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  create_params(seed);
}

MultimodalModel::MultimodalModel(ModelConfig cfg, ParameterSet params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
}

void MultimodalModel::create_params(std::uint64_t seed) {
  const ArchPlan p = plan_architecture(cfg_);
  for (const ConvSpec& c : p.rgb) add_conv(params_, c, seed);
  if (p.has_rgb) add_dense(params_, p.rgb_fc, seed);
  for (const ConvSpec& c : p.depth) add_conv(params_, c, seed);
  if (p.has_depth) add_dense(params_, p.depth_fc, seed);
  for (const ConvSpec& c : p.force) add_conv1d(params_, c, seed);
  if (p.has_force) add_dense(params_, p.force_fc, seed);
  for (const DenseSpec& d : p.proprio) add_dense(params_, d, seed);
  for (const DenseSpec& d : p.det_fuse) add_dense(params_, d, seed);
  for (const DenseSpec& d : p.action_enc) add_dense(params_, d, seed);
  for (const DenseSpec& d : p.conditioner) add_dense(params_, d, seed);
  if (p.predictive) {
    add_dense(params_, p.flow_fc, seed);
    for (const ConvSpec& c : p.flow_ups) add_conv(params_, c, seed);
    add_conv(params_, p.flow_head, seed);
    add_conv(params_, p.mask_head, seed);
    add_dense(params_, p.contact, seed);
    for (const DenseSpec& d : p.ee_head) add_dense(params_, d, seed);
    for (const DenseSpec& d : p.pairing) add_dense(params_, d, seed);
  }
  if (p.recon) {
    add_dense(params_, p.recon_img_fc, seed);
    for (const ConvSpec& c : p.recon_img) add_conv(params_, c, seed);
    for (const DenseSpec& d : p.recon_prop) add_dense(params_, d, seed);
    for (const DenseSpec& d : p.recon_force) add_dense(params_, d, seed);
  }
}

MultimodalModel::Encoders MultimodalModel::build_encoders(
    Tape& tape, ParamBinder& bind, const ModelInputs& in) const {
  const ArchPlan p = plan_architecture(cfg_);
  const int s = cfg_.image_size;
  const std::size_t su = static_cast<std::size_t>(s);
  Encoders enc;

  auto split_gaussian = [&](Var feat2d, const char* modality) {
    if (static_cast<int>(feat2d.numel()) != 2 * cfg_.d)
      throw std::invalid_argument(std::string("encode: ") + modality +
                                  " encoder output width mismatch");
    if (cfg_.variant == Variant::kDeterministic) {
      enc.det_features.push_back(feat2d);
    } else {
      VarGaussian g;
      g.mu = slice(feat2d, 0, cfg_.d);
      g.var = add_scalar(softplus(slice(feat2d, cfg_.d, cfg_.d)), cfg_.var_floor);
      enc.experts.push_back(g);
    }
    enc.names.push_back(modality);
  };

  for (const char* m : kModalityOrder) {
    if (!cfg_.modalities.count(m)) continue;
    if (std::string(m) == "rgb") {
      if (in.rgb.size() != static_cast<std::size_t>(3 * s * s))
        throw std::invalid_argument("encode: rgb input size mismatch");
      Var x = tape.input(Tensor({3, su, su}, in.rgb));
      int res = s;
      for (const ConvSpec& c : p.rgb) {
        x = leaky_relu(bound_conv(bind, c, x), 0.1);
        res /= 2;
        if (p.skip_source == "rgb") enc.skip_feats.emplace(res, x);
      }
      split_gaussian(bound_dense(bind, p.rgb_fc, reshape(x, {x.numel()})), "rgb");
    } else if (std::string(m) == "depth") {
      if (in.depth.size() != static_cast<std::size_t>(s * s))
        throw std::invalid_argument("encode: depth input size mismatch");
      std::vector<double> scaled = in.depth;
      for (double& v : scaled) v /= cfg_.depth_scale;
      Var x = tape.input(Tensor({1, su, su}, std::move(scaled)));
      int res = s;
      for (const ConvSpec& c : p.depth) {
        x = leaky_relu(bound_conv(bind, c, x), 0.1);
        if (c.stride == 2) {
          res /= 2;
          if (p.skip_source == "depth") enc.skip_feats.emplace(res, x);
        }
      }
      split_gaussian(bound_dense(bind, p.depth_fc, reshape(x, {x.numel()})), "depth");
    } else if (std::string(m) == "force") {
      if (in.force.size() !=
          static_cast<std::size_t>(cfg_.force_channels * cfg_.force_window))
        throw std::invalid_argument("encode: force input size mismatch");
      std::vector<double> scaled = in.force;
      for (double& v : scaled) v /= cfg_.force_scale;
      Var x = tape.input(Tensor({static_cast<std::size_t>(cfg_.force_channels),
                                 static_cast<std::size_t>(cfg_.force_window)},
                                std::move(scaled)));
      for (const ConvSpec& c : p.force) x = leaky_relu(bound_conv1d(bind, c, x), 0.1);
      split_gaussian(bound_dense(bind, p.force_fc, reshape(x, {x.numel()})), "force");
    } else {  // proprio
      std::vector<double> prop(cfg_.proprio_dim);
      prop[0] = in.proprio[0] / cfg_.pose_scale;
      prop[1] = in.proprio[1] / cfg_.pose_scale;
      prop[2] = in.proprio[2] / (kPi / 2.0);
      prop[3] = in.proprio[3];
      prop[4] = in.proprio[4];
      prop[5] = in.proprio[5];
      Var x = tape.input(Tensor::vector(std::move(prop)));
      for (std::size_t i = 0; i + 1 < p.proprio.size(); ++i)
        x = leaky_relu(bound_dense(bind, p.proprio[i], x), 0.1);
      split_gaussian(bound_dense(bind, p.proprio.back(), x), "proprio");
    }
  }
  if (enc.names.empty()) throw std::invalid_argument("encode: no modality enabled");
  return enc;
}

Var MultimodalModel::build_latent(Tape& tape, ParamBinder& bind,
                                  const Encoders& enc, const Tensor* noise,
                                  VarGaussian* fused_out) const {
  if (cfg_.variant == Variant::kDeterministic) {
    const ArchPlan p = plan_architecture(cfg_);
    Var cat = concat(enc.det_features);
    Var z = leaky_relu(bound_dense(bind, p.det_fuse[0], cat), 0.1);
    return bound_dense(bind, p.det_fuse[1], z);
  }
  VarGaussian fused = poe_fuse_v(enc.experts, cfg_.include_prior);
  if (fused_out) *fused_out = fused;
  if (noise) return reparam_sample_v(fused, *noise);
  (void)tape;
  return fused.mu;  // policy path: the mean, no sampling
}

std::vector<DiagGaussian> MultimodalModel::encode(const ModelInputs& in) const {
  if (cfg_.variant == Variant::kDeterministic)
    throw std::logic_error("encode: the deterministic variant has no posteriors");
  Tape tape(/*grad_enabled=*/false);
  ParamBinder bind(tape, params_);
  const Encoders enc = build_encoders(tape, bind, in);
  std::vector<DiagGaussian> out;
  for (const VarGaussian& g : enc.experts) {
    DiagGaussian dgn;
    dgn.mu = g.mu.value().data;
    dgn.var = g.var.value().data;
    out.push_back(std::move(dgn));
  }
  return out;
}

std::vector<double> MultimodalModel::encode_mean(const ModelInputs& in) const {
  Tape tape(/*grad_enabled=*/false);
  ParamBinder bind(tape, params_);
  const Encoders enc = build_encoders(tape, bind, in);
  Var z = build_latent(tape, bind, enc, nullptr, nullptr);
  return z.value().data;
}

Var MultimodalModel::build_loss(Tape& tape, ParamBinder& bind,
                                const TrainingSample& sample, const Tensor& noise,
                                LossBreakdown* out) const {
  const ArchPlan p = plan_architecture(cfg_);
  const int s = cfg_.image_size;
  const std::size_t su = static_cast<std::size_t>(s);
  const Encoders enc = build_encoders(tape, bind, sample.in);

  VarGaussian fused;
  Var z = build_latent(tape, bind, enc, cfg_.variant == Variant::kDeterministic
                                            ? nullptr
                                            : &noise,
                       &fused);

  std::vector<std::pair<std::string, std::pair<Var, double>>> terms;

  if (p.predictive) {
    // action conditioning
    std::vector<double> act(3);
    for (int i = 0; i < 3; ++i) act[i] = sample.in.action[i] / cfg_.action_limits[i];
    Var a = tape.input(Tensor::vector(std::move(act)));
    a = mlp(bind, p.action_enc, a, /*final_linear=*/false);
    Var cond = mlp(bind, p.conditioner, concat({z, a}), /*final_linear=*/false);

    // flow + mask decoder with skip connections
    Var h = leaky_relu(bound_dense(bind, p.flow_fc, cond), 0.1);
    h = reshape(h, {static_cast<std::size_t>(p.flow_start_ch), 2, 2});
    int res = 2;
    for (const ConvSpec& c : p.flow_ups) {
      h = upsample2x(h);
      res *= 2;
      auto skip = enc.skip_feats.find(res);
      if (skip != enc.skip_feats.end()) h = concat({h, skip->second});
      h = leaky_relu(bound_conv(bind, c, h), 0.1);
    }
    Var flow_small = bound_conv(bind, p.flow_head, h);        // [2, f, f]
    Var mask_small = sigmoid(bound_conv(bind, p.mask_head, h));  // [1, f, f]
    Var masked = mul(flow_small, concat({mask_small, mask_small}));
    Var flow_full = masked;
    Var mask_full = mask_small;
    for (int r = cfg_.flow_out(); r < s; r *= 2) {
      flow_full = upsample2x(flow_full);
      mask_full = upsample2x(mask_full);
    }

    Tensor flow_target({2, su, su}, sample.flow);
    terms.push_back({"flow", {epe_loss(flow_full, flow_target), cfg_.loss_weights.flow}});

    std::vector<double> mask_label(sample.flow_mask.begin(), sample.flow_mask.end());
    terms.push_back({"mask",
                     {bce_loss(reshape(mask_full, {su, su}), Tensor({su, su}, mask_label)),
                      cfg_.loss_weights.mask}});

    Var contact_prob = sigmoid(bound_dense(bind, p.contact, cond));
    terms.push_back({"contact",
                     {bce_loss(contact_prob,
                               Tensor({1}, {sample.contact_next ? 1.0 : 0.0})),
                      cfg_.loss_weights.contact}});
    if (out) out->contact_prob = contact_prob.value().data[0];

    Var ee = mlp(bind, p.ee_head, cond);
    Tensor ee_target =
        Tensor::vector({sample.next_ee_pose[0] / cfg_.pose_scale,
                        sample.next_ee_pose[1] / cfg_.pose_scale,
                        sample.next_ee_pose[2] / (kPi / 2.0)});
    terms.push_back({"ee_pose", {mse_loss(ee, ee_target), cfg_.loss_weights.ee_pose}});

    if (p.use_pairing) {
      Var pin = cfg_.pairing_conditioned ? cond : z;
      Var logit = p.pairing.size() == 2
                      ? bound_dense(bind, p.pairing[1],
                                    leaky_relu(bound_dense(bind, p.pairing[0], pin), 0.1))
                      : bound_dense(bind, p.pairing[0], pin);
      Var prob = sigmoid(logit);
      terms.push_back({"pairing",
                       {bce_loss(prob, Tensor({1}, {sample.paired ? 1.0 : 0.0})),
                        cfg_.loss_weights.pairing}});
      if (out) out->pairing_prob = prob.value().data[0];
    }
  }

  if (p.recon) {
    Var h = leaky_relu(bound_dense(bind, p.recon_img_fc, z), 0.1);
    h = reshape(h, {static_cast<std::size_t>(p.flow_start_ch), 2, 2});
    for (std::size_t j = 0; j < p.recon_img.size(); ++j) {
      h = upsample2x(h);
      h = bound_conv(bind, p.recon_img[j], h);
      h = j + 1 == p.recon_img.size() ? sigmoid(h) : leaky_relu(h, 0.1);
    }
    terms.push_back({"recon_image",
                     {mse_loss(h, Tensor({3, su, su}, sample.in.rgb)),
                      cfg_.loss_weights.recon_image}});

    std::vector<double> prop = {sample.in.proprio[0] / cfg_.pose_scale,
                                sample.in.proprio[1] / cfg_.pose_scale,
                                sample.in.proprio[2] / (kPi / 2.0),
                                sample.in.proprio[3],
                                sample.in.proprio[4],
                                sample.in.proprio[5]};
    terms.push_back({"recon_proprio",
                     {mse_loss(mlp(bind, p.recon_prop, z), Tensor::vector(prop)),
                      cfg_.loss_weights.recon_proprio}});

    // the force decoder estimates only the final-timestep reading
    std::vector<double> last(cfg_.force_channels);
    for (int c = 0; c < cfg_.force_channels; ++c)
      last[c] = sample.in.force[c * cfg_.force_window + cfg_.force_window - 1] /
                cfg_.force_scale;
    terms.push_back({"recon_force",
                     {mse_loss(mlp(bind, p.recon_force, z), Tensor::vector(last)),
                      cfg_.loss_weights.recon_force}});
  }

  if (cfg_.variant != Variant::kDeterministic) {
    terms.push_back(
        {"kl", {kl_to_standard_normal_v(fused), cfg_.loss_weights.kl}});
  }

  Var total;
  for (auto& [name, tw] : terms) {
    Var weighted = mul_scalar(tw.first, tw.second);
    total = total.valid() ? add(total, weighted) : weighted;
    if (out) out->terms[name] = tw.first.value().data[0];
  }
  if (out) out->total = total.value().data[0];
  return total;
}

LossBreakdown MultimodalModel::eval_loss(const TrainingSample& sample,
                                         const Tensor& noise) const {
  Tape tape(/*grad_enabled=*/false);
  ParamBinder bind(tape, params_);
  LossBreakdown out;
  build_loss(tape, bind, sample, noise, &out);
  return out;
}

MultimodalModel::HeadOutputs MultimodalModel::predict_heads(
    const ModelInputs& in) const {
  if (cfg_.variant == Variant::kReconstruction)
    throw std::logic_error("predict_heads: reconstruction variant has no heads");
  const ArchPlan p = plan_architecture(cfg_);
  const int s = cfg_.image_size;
  Tape tape(/*grad_enabled=*/false);
  ParamBinder bind(tape, params_);
  const Encoders enc = build_encoders(tape, bind, in);
  Var z = build_latent(tape, bind, enc, nullptr, nullptr);

  std::vector<double> act(3);
  for (int i = 0; i < 3; ++i) act[i] = in.action[i] / cfg_.action_limits[i];
  Var a = mlp(bind, p.action_enc, tape.input(Tensor::vector(std::move(act))),
              /*final_linear=*/false);
  Var cond = mlp(bind, p.conditioner, concat({z, a}), /*final_linear=*/false);

  Var h = leaky_relu(bound_dense(bind, p.flow_fc, cond), 0.1);
  h = reshape(h, {static_cast<std::size_t>(p.flow_start_ch), 2, 2});
  int res = 2;
  for (const ConvSpec& c : p.flow_ups) {
    h = upsample2x(h);
    res *= 2;
    auto skip = enc.skip_feats.find(res);
    if (skip != enc.skip_feats.end()) h = concat({h, skip->second});
    h = leaky_relu(bound_conv(bind, c, h), 0.1);
  }
  Var flow_small = bound_conv(bind, p.flow_head, h);
  Var mask_small = sigmoid(bound_conv(bind, p.mask_head, h));
  Var flow_full = mul(flow_small, concat({mask_small, mask_small}));
  Var mask_full = mask_small;
  for (int r = cfg_.flow_out(); r < s; r *= 2) {
    flow_full = upsample2x(flow_full);
    mask_full = upsample2x(mask_full);
  }

  HeadOutputs out;
  out.flow = flow_full.value().data;
  out.mask_prob = mask_full.value().data;
  out.contact_prob = sigmoid(bound_dense(bind, p.contact, cond)).value().data[0];
  const Var ee = mlp(bind, p.ee_head, cond);
  out.ee_pose = {ee.value().data[0] * cfg_.pose_scale,
                 ee.value().data[1] * cfg_.pose_scale,
                 ee.value().data[2] * (kPi / 2.0)};
  if (p.use_pairing) {
    Var pin = cfg_.pairing_conditioned ? cond : z;
    Var logit = p.pairing.size() == 2
                    ? bound_dense(bind, p.pairing[1],
                                  leaky_relu(bound_dense(bind, p.pairing[0], pin), 0.1))
                    : bound_dense(bind, p.pairing[0], pin);
    out.pairing_prob = sigmoid(logit).value().data[0];
  }
  return out;
}

void MultimodalModel::save(const std::string& path,
                           const nlohmann::json& extra_fields) const {
  nlohmann::json extra = extra_fields;
  extra["model_config"] = cfg_.to_json();
  save_checkpoint(path, params_, extra);
}

MultimodalModel MultimodalModel::load(const std::string& path,
                                      nlohmann::json* extra_out) {
  Checkpoint ck = load_checkpoint(path);
  if (!ck.extra.contains("model_config"))
    throw std::runtime_error("model checkpoint missing its config manifest: " + path);
  ModelConfig cfg = ModelConfig::from_json(ck.extra.at("model_config"));
  if (extra_out) *extra_out = ck.extra;
  MultimodalModel m(cfg, std::move(ck.params));
  // refuse checkpoints whose parameter table does not match the config
  MultimodalModel fresh(cfg, /*seed=*/0);
  if (fresh.params().total_params() != m.params().total_params())
    throw std::runtime_error("model checkpoint does not match its config: " + path);
  return m;
}

}  // namespace touchfuse::model
