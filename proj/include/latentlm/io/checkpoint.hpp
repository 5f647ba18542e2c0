#pragma once

// Binary checkpoint:
//   8 bytes   magic "LATENTLM"
//   u32       format version
//   u64       manifest length, then the manifest as UTF-8 JSON
//   per tensor, in manifest order:
//     u32 name length, name bytes, u32 rank, u64 per dimension,
//     then the values as little-endian IEEE-754 doubles
// All integers are little-endian. The manifest holds the model
// configuration, the vocabulary (tokens, tokenizer kind and hash), the
// training step, the seed and every tensor's name and shape.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"
#include "latentlm/model/model.hpp"

namespace latentlm {

inline constexpr std::string_view kCheckpointMagic = "LATENTLM";
inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::ordered_json model_config_to_json(const ModelConfig& config);
/// Missing keys keep their defaults; unknown keys raise ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

std::string serialize_checkpoint(const Model& model);
/// Throws IoError on a malformed or inconsistent checkpoint.
Model deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace latentlm
