#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedrank/model.hpp"
#include "fedrank/params.hpp"

namespace fedrank {

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& prefix);

// Flat message encoding for parameters crossing the client/server boundary:
// count, then per tensor name, shape, and little-endian doubles. Refuses to
// encode any entry flagged private.
std::vector<std::uint8_t> wire_encode(const ParameterSet& params,
                                      const std::vector<std::string>& names);

struct WireView {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;
};
WireView wire_decode(std::span<const std::uint8_t> bytes);

// Checkpoint file: "FRCK" magic, format version, a JSON manifest (model
// config plus ordered parameter names/shapes/privacy flags), then raw
// little-endian double payloads in manifest order. Write-read-write is
// byte-identical.
void write_checkpoint(const std::string& path, const ModelConfig& config,
                      const ParameterSet& params);

struct Checkpoint {
  ModelConfig config;
  ParameterSet params;
};
Checkpoint read_checkpoint(const std::string& path);

}  // namespace fedrank
