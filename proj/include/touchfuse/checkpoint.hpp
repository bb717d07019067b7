#pragma once

#include <string>

#include "json.hpp"
#include "touchfuse/nn.hpp"

namespace touchfuse {

// Checkpoint file: 8-byte magic, u64 little-endian manifest length, JSON
// manifest (parameter names, shapes, byte offsets), then a flat little-endian
// 64-bit-float blob. Round-trips are bit-exact.
void save_checkpoint(const std::string& path, const ParameterSet& params,
                     const nlohmann::json& extra = nlohmann::json::object(),
                     bool with_adam_state = false);

struct Checkpoint {
  ParameterSet params;
  nlohmann::json extra;
  std::uint64_t param_hash = 0;  // as recorded in the manifest
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace touchfuse
