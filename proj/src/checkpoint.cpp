#include "touchfuse/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace touchfuse {

namespace {

constexpr char kMagic[8] = {'T', 'F', 'C', 'K', 'P', 'T', '1', '\n'};

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void write_doubles(std::ostream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::istream& is, std::vector<double>& v) {
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterSet& params,
                     const nlohmann::json& extra, bool with_adam_state) {
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["with_adam_state"] = with_adam_state;
  manifest["adam_step"] = params.step_count();
  manifest["param_hash"] = params.value_hash();
  manifest["extra"] = extra;
  nlohmann::json plist = nlohmann::json::array();
  std::uint64_t offset = 0;  // bytes into the value blob
  for (const auto& [name, e] : params.entries()) {
    nlohmann::json p;
    p["name"] = name;
    p["shape"] = e.value.shape;
    p["byte_offset"] = offset;
    offset += e.value.numel() * sizeof(double);
    plist.push_back(std::move(p));
  }
  manifest["params"] = std::move(plist);
  manifest["total_bytes"] = offset;

  const std::string mstr = manifest.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write(kMagic, 8);
  write_u64(os, mstr.size());
  os.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  for (const auto& [name, e] : params.entries()) write_doubles(os, e.value.data);
  if (with_adam_state) {
    for (const auto& [name, e] : params.entries()) write_doubles(os, e.m.data);
    for (const auto& [name, e] : params.entries()) write_doubles(os, e.v.data);
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  const std::uint64_t mlen = read_u64(is);
  std::string mstr(mlen, '\0');
  is.read(mstr.data(), static_cast<std::streamsize>(mlen));
  if (!is) throw std::runtime_error("load_checkpoint: truncated manifest in " + path);
  nlohmann::json manifest = nlohmann::json::parse(mstr);

  Checkpoint ck;
  ck.extra = manifest.value("extra", nlohmann::json::object());
  ck.param_hash = manifest.value("param_hash", 0ull);
  for (const auto& p : manifest.at("params")) {
    Shape shape = p.at("shape").get<Shape>();
    Tensor t = Tensor::zeros(shape);
    ck.params.add_value(p.at("name").get<std::string>(), std::move(t));
  }
  for (auto& [name, e] : ck.params.entries()) read_doubles(is, e.value.data);
  if (manifest.value("with_adam_state", false)) {
    for (auto& [name, e] : ck.params.entries()) read_doubles(is, e.m.data);
    for (auto& [name, e] : ck.params.entries()) read_doubles(is, e.v.data);
  }
  if (!is) throw std::runtime_error("load_checkpoint: truncated blob in " + path);
  ck.params.set_step_count(manifest.value("adam_step", 0ll));
  if (ck.params.value_hash() != ck.param_hash)
    throw std::runtime_error("load_checkpoint: parameter hash mismatch in " + path);
  return ck;
}

}  // namespace touchfuse
