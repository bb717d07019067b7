#include "touchfuse/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "touchfuse/common.hpp"

namespace touchfuse::dataset {

namespace fs = std::filesystem;

namespace {

template <typename T>
void put(std::string& buf, const T* v, std::size_t n) {
  const char* p = reinterpret_cast<const char*>(v);
  buf.append(p, p + n * sizeof(T));
}

template <typename T>
void get(const char*& p, T* v, std::size_t n) {
  std::memcpy(v, p, n * sizeof(T));
  p += n * sizeof(T);
}

std::size_t record_size(const EpisodeHeader& h) {
  const std::size_t s = h.image_size, c = h.force_channels, w = h.force_window;
  std::size_t n = 3 * s * s;            // rgb u8
  n += s * s * 4;                       // depth f32
  n += c * w * 4;                       // force f32
  n += 6 * 8 + 3 * 8 + 8;               // proprio, action, time
  n += 2 * h.dof * 8;                   // q, qd
  n += 2;                               // contact_gt, any_contact
  n += 3 * 8 + 8;                       // reward s, s_psi
  if (h.schema_version >= kSchemaLabeled) {
    n += 2 * s * s * 2;                 // flow i16
    n += (s * s + 7) / 8;               // mask bits
    n += 2 + 3 * 8;                     // contact_label, contact_next, next pose
  }
  return n;
}

void encode_record(std::string& buf, const EpisodeHeader& h, const LoggedFrame& lf) {
  const std::size_t s = h.image_size;
  const sim::SensorFrame& f = lf.frame;
  for (double v : f.rgb) {
    const int q = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    buf.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  for (double v : f.depth) {
    const float x = static_cast<float>(v);
    put(buf, &x, 1);
  }
  for (double v : f.force_window) {
    const float x = static_cast<float>(v);
    put(buf, &x, 1);
  }
  put(buf, f.proprio.data(), 6);
  put(buf, f.action.data(), 3);
  put(buf, &f.sim_time, 1);
  put(buf, f.q.data(), h.dof);
  put(buf, f.qd.data(), h.dof);
  buf.push_back(f.contact_gt ? 1 : 0);
  buf.push_back(f.any_contact ? 1 : 0);
  put(buf, f.reward_state.s.data(), 3);
  put(buf, &f.reward_state.s_psi, 1);
  if (h.schema_version >= kSchemaLabeled) {
    if (lf.flow.size() != 2 * s * s || lf.flow_mask.size() != s * s)
      throw std::invalid_argument(
          "encode_record: labeled schema requires flow [2,S,S] and mask [S,S]");
    for (double v : lf.flow) {
      const double q = std::clamp(v * 256.0, -32760.0, 32760.0);
      const std::int16_t x = static_cast<std::int16_t>(std::lround(q));
      put(buf, &x, 1);
    }
    std::vector<std::uint8_t> bits((s * s + 7) / 8, 0);
    for (std::size_t i = 0; i < s * s; ++i)
      if (lf.flow_mask[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    put(buf, bits.data(), bits.size());
    buf.push_back(lf.contact_label ? 1 : 0);
    buf.push_back(lf.contact_next ? 1 : 0);
    put(buf, lf.next_ee_pose.data(), 3);
  }
}

LoggedFrame decode_record(const char*& p, const EpisodeHeader& h) {
  const std::size_t s = h.image_size;
  LoggedFrame lf;
  sim::SensorFrame& f = lf.frame;
  f.rgb.resize(3 * s * s);
  for (double& v : f.rgb) {
    v = static_cast<double>(static_cast<unsigned char>(*p++)) / 255.0;
  }
  f.depth.resize(s * s);
  for (double& v : f.depth) {
    float x;
    get(p, &x, 1);
    v = x;
  }
  f.force_window.resize(h.force_channels * h.force_window);
  for (double& v : f.force_window) {
    float x;
    get(p, &x, 1);
    v = x;
  }
  get(p, f.proprio.data(), 6);
  get(p, f.action.data(), 3);
  get(p, &f.sim_time, 1);
  f.q.resize(h.dof);
  f.qd.resize(h.dof);
  get(p, f.q.data(), h.dof);
  get(p, f.qd.data(), h.dof);
  f.contact_gt = *p++ != 0;
  f.any_contact = *p++ != 0;
  get(p, f.reward_state.s.data(), 3);
  get(p, &f.reward_state.s_psi, 1);
  if (h.schema_version >= kSchemaLabeled) {
    lf.flow.resize(2 * s * s);
    for (double& v : lf.flow) {
      std::int16_t x;
      get(p, &x, 1);
      v = static_cast<double>(x) / 256.0;
    }
    std::vector<std::uint8_t> bits((s * s + 7) / 8);
    get(p, bits.data(), bits.size());
    lf.flow_mask.resize(s * s);
    for (std::size_t i = 0; i < s * s; ++i)
      lf.flow_mask[i] = (bits[i / 8] >> (i % 8)) & 1u;
    lf.contact_label = *p++ != 0;
    lf.contact_next = *p++ != 0;
    get(p, lf.next_ee_pose.data(), 3);
  }
  return lf;
}

nlohmann::json header_json(const EpisodeHeader& h) {
  return {{"schema_version", h.schema_version}, {"episode_seed", h.episode_seed},
          {"policy", h.policy},               {"n_frames", h.n_frames},
          {"image_size", h.image_size},       {"force_channels", h.force_channels},
          {"force_window", h.force_window},   {"dof", h.dof},
          {"box_x", h.box_x}};
}

EpisodeHeader header_from_json(const nlohmann::json& j) {
  EpisodeHeader h;
  h.schema_version = j.at("schema_version");
  h.episode_seed = j.at("episode_seed");
  h.policy = j.at("policy");
  h.n_frames = j.at("n_frames");
  h.image_size = j.at("image_size");
  h.force_channels = j.at("force_channels");
  h.force_window = j.at("force_window");
  h.dof = j.at("dof");
  h.box_x = j.at("box_x");
  return h;
}

}  // namespace

void write_episode(const std::string& path, const EpisodeHeader& header,
                   const std::vector<LoggedFrame>& frames) {
  EpisodeHeader h = header;
  h.n_frames = static_cast<int>(frames.size());
  std::string buf = header_json(h).dump();
  buf.push_back('\n');
  for (const LoggedFrame& f : frames) encode_record(buf, h, f);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_episode: cannot open " + path);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw std::runtime_error("write_episode: write failed for " + path);
}

std::pair<EpisodeHeader, std::vector<LoggedFrame>> read_episode(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_episode: cannot open " + path);
  std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::size_t nl = all.find('\n');
  if (nl == std::string::npos)
    throw std::runtime_error("read_episode: missing header in " + path);
  const EpisodeHeader h = header_from_json(nlohmann::json::parse(all.substr(0, nl)));
  const std::size_t rec = record_size(h);
  if (all.size() - nl - 1 != rec * static_cast<std::size_t>(h.n_frames))
    throw std::runtime_error("read_episode: truncated records in " + path);
  std::vector<LoggedFrame> frames;
  frames.reserve(h.n_frames);
  const char* p = all.data() + nl + 1;
  for (int i = 0; i < h.n_frames; ++i) frames.push_back(decode_record(p, h));
  return {h, std::move(frames)};
}

std::uint64_t file_checksum(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("file_checksum: cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (is) {
    is.read(buf, sizeof(buf));
    const std::streamsize n = is.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

void Dataset::write_index(const std::string& dir,
                          const std::vector<EpisodeMeta>& episodes,
                          const nlohmann::json& stats) {
  nlohmann::json j;
  j["format"] = "touchfuse-dataset";
  j["version"] = 1;
  j["stats"] = stats;
  nlohmann::json eps = nlohmann::json::array();
  for (const EpisodeMeta& m : episodes) {
    eps.push_back({{"file", m.file},
                   {"seed", m.seed},
                   {"policy", m.policy},
                   {"n_frames", m.n_frames},
                   {"checksum", m.checksum},
                   {"schema_version", m.schema_version},
                   {"contact_classes", m.contact_classes}});
  }
  j["episodes"] = std::move(eps);
  std::ofstream os(fs::path(dir) / "index.json");
  if (!os) throw std::runtime_error("Dataset: cannot write index in " + dir);
  os << j.dump() << "\n";
}

Dataset Dataset::open(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "index.json");
  if (!is) throw std::runtime_error("Dataset: no index.json in " + dir);
  nlohmann::json j;
  is >> j;
  Dataset ds;
  ds.dir_ = dir;
  ds.stats_ = j.value("stats", nlohmann::json::object());
  for (const auto& e : j.at("episodes")) {
    EpisodeMeta m;
    m.file = e.at("file");
    m.seed = e.at("seed");
    m.policy = e.at("policy");
    m.n_frames = e.at("n_frames");
    m.checksum = e.at("checksum");
    m.schema_version = e.at("schema_version");
    m.contact_classes = e.value("contact_classes", std::vector<std::uint8_t>{});
    const std::string path = (fs::path(dir) / m.file).string();
    const std::uint64_t actual = file_checksum(path);
    if (actual != m.checksum)
      throw std::runtime_error("Dataset: checksum mismatch for " + path);
    ds.episodes_.push_back(std::move(m));
  }
  return ds;
}

bool Dataset::labeled() const {
  for (const EpisodeMeta& m : episodes_)
    if (m.schema_version < kSchemaLabeled) return false;
  return !episodes_.empty();
}

std::size_t Dataset::n_samples() const {
  std::size_t n = 0;
  for (const EpisodeMeta& m : episodes_)
    n += static_cast<std::size_t>(std::max(0, m.n_frames - 1));
  return n;
}

std::pair<EpisodeHeader, std::vector<LoggedFrame>> Dataset::load_episode(
    std::size_t i) const {
  return read_episode((fs::path(dir_) / episodes_.at(i).file).string());
}

Dataset::Split Dataset::split(double test_fraction, std::uint64_t seed) const {
  // stratified by collection policy so both splits keep a contact-rich mix
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < episodes_.size(); ++i)
    groups[episodes_[i].policy].push_back(i);
  Rng rng(derive_seed(seed, "dataset.split"));
  Split s;
  for (auto& [policy, ids] : groups) {
    for (std::size_t i = ids.size(); i > 1; --i)
      std::swap(ids[i - 1], ids[rng.uniform_int(i)]);
    const std::size_t n_test =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(
                                     test_fraction * static_cast<double>(ids.size()))));
    s.test.insert(s.test.end(), ids.begin(), ids.begin() + n_test);
    s.train.insert(s.train.end(), ids.begin() + n_test, ids.end());
  }
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

model::ModelInputs inputs_from_frame(const sim::SensorFrame& f) {
  model::ModelInputs in;
  in.rgb = f.rgb;
  in.depth = f.depth;
  in.force = f.force_window;
  in.proprio = f.proprio;
  in.action = f.action;
  return in;
}

SampleStore::SampleStore(const Dataset& ds, const std::vector<std::size_t>& episode_ids) {
  for (std::size_t id : episode_ids) {
    episodes_.push_back(ds.load_episode(id));
    const auto& [header, frames] = episodes_.back();
    if (header.schema_version < kSchemaLabeled)
      throw std::runtime_error("SampleStore: dataset is not labeled yet");
    const std::size_t e = episodes_.size() - 1;
    contact_pos_.emplace_back();
    contact_neg_.emplace_back();
    for (int t = 0; t + 1 < header.n_frames; ++t) {
      flat_.push_back({e, t});
      const bool c = frames[t].contact_label;
      (c ? contact_pos_ : contact_neg_).back().push_back(t);
      (c ? global_pos_ : global_neg_).emplace_back(e, t);
    }
  }
}

double SampleStore::contact_positive_fraction() const {
  const std::size_t total = global_pos_.size() + global_neg_.size();
  return total == 0 ? 0.0
                    : static_cast<double>(global_pos_.size()) / static_cast<double>(total);
}

model::TrainingSample SampleStore::assemble(const Ref& r) const {
  const LoggedFrame& lf = frame(r.episode, r.t);
  model::TrainingSample ts;
  ts.in = inputs_from_frame(lf.frame);
  // the action that produced the next frame conditions the predictions
  ts.in.action = frame(r.episode, r.t + 1).frame.action;
  ts.flow = lf.flow;
  ts.flow_mask = lf.flow_mask;
  ts.contact_next = lf.contact_next;
  ts.next_ee_pose = lf.next_ee_pose;
  ts.paired = true;
  return ts;
}

model::TrainingSample SampleStore::plain_sample(std::size_t i) const {
  return assemble(flat_.at(i));
}

model::TrainingSample SampleStore::sample(std::size_t i, Rng& rng,
                                          bool allow_swap) const {
  const Ref r = flat_.at(i);
  model::TrainingSample ts = assemble(r);
  if (!allow_swap || rng.uniform() < 0.5) return ts;  // time-aligned

  if (global_pos_.empty() || global_neg_.empty())
    throw std::runtime_error(
        "sample_pairing: dataset holds only one contact class; cannot build "
        "misaligned pairs");
  const bool want_positive = !frame(r.episode, r.t).contact_label;
  const std::vector<int>& same_episode =
      want_positive ? contact_pos_[r.episode] : contact_neg_[r.episode];
  std::size_t src_e = r.episode;
  int src_t;
  if (!same_episode.empty()) {
    src_t = same_episode[rng.uniform_int(same_episode.size())];
  } else {
    const auto& pool = want_positive ? global_pos_ : global_neg_;
    const auto& [e, t] = pool[rng.uniform_int(pool.size())];
    src_e = e;
    src_t = t;
  }
  ts.in.force = frame(src_e, src_t).frame.force_window;
  ts.paired = false;
  return ts;
}

void label_dataset(const std::string& dir, const pipeline::RunConfig& cfg, int workers) {
  Dataset ds = Dataset::open(dir);
  std::vector<EpisodeMeta> metas = ds.episodes();
  const int w = resolve_workers(workers);

  parallel_for(metas.size(), w, [&](std::size_t begin, std::size_t end, int) {
    sim::Env scratch(cfg.world);
    for (std::size_t i = begin; i < end; ++i) {
      auto [header, frames] = ds.load_episode(i);
      if (header.schema_version >= kSchemaLabeled) continue;
      std::vector<std::uint8_t> classes;
      for (std::size_t t = 0; t < frames.size(); ++t) {
        LoggedFrame& lf = frames[t];
        lf.contact_label =
            labels::gen_contact_label(lf.frame.force_window, header.force_window,
                                      cfg.labels);
        classes.push_back(lf.contact_label ? 1 : 0);
        if (t + 1 < frames.size()) {
          const LoggedFrame& next = frames[t + 1];
          labels::FlowLabel fl = labels::gen_flow_label(scratch, lf.frame.q,
                                                        next.frame.q, header.box_x);
          lf.flow = std::move(fl.flow);
          lf.flow_mask = std::move(fl.mask);
          lf.contact_next = labels::gen_contact_label(
              next.frame.force_window, header.force_window, cfg.labels);
          lf.next_ee_pose = {next.frame.proprio[0], next.frame.proprio[1],
                             next.frame.proprio[2]};
        } else {
          lf.flow.assign(2 * header.image_size * header.image_size, 0.0);
          lf.flow_mask.assign(header.image_size * header.image_size, 0);
        }
      }
      header.schema_version = kSchemaLabeled;
      const std::string path = (fs::path(dir) / metas[i].file).string();
      write_episode(path, header, frames);
      metas[i].schema_version = kSchemaLabeled;
      metas[i].contact_classes = std::move(classes);
      metas[i].checksum = file_checksum(path);
    }
  });

  // dataset statistics for the index
  std::size_t pos = 0, total = 0;
  for (const EpisodeMeta& m : metas) {
    for (std::size_t t = 0; t + 1 < m.contact_classes.size(); ++t) {
      pos += m.contact_classes[t];
      ++total;
    }
  }
  nlohmann::json stats = ds.stats();
  stats["labeled"] = true;
  stats["contact_positive_fraction"] =
      total ? static_cast<double>(pos) / static_cast<double>(total) : 0.0;
  Dataset::write_index(dir, metas, stats);
}

}  // namespace touchfuse::dataset
