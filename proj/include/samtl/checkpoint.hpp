#pragma once

#include <json.hpp>

#include <string>

#include "samtl/model.hpp"

namespace samtl {

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

// SHA-256 of the canonical JSON form; stored in checkpoints so
// mismatched architectures are rejected at load time.
std::string config_hash(const ModelConfig& cfg);

// Layout: u64 little-endian header length, UTF-8 JSON header (config,
// config hash, parameter names/shapes), then the parameters as
// little-endian 32-bit floats in header order.
void save_checkpoint(const std::string& path, const ModelParams<float>& params,
                     const ModelConfig& cfg,
                     const nlohmann::json& extra = nlohmann::json::object());

struct LoadedCheckpoint {
  ModelParams<float> params;
  ModelConfig config;
  nlohmann::json header;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace samtl
