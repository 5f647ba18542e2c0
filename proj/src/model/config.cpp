#include "latentlm/model/config.hpp"

#include <string>

#include "latentlm/errors.hpp"

namespace latentlm {

std::string_view to_string(InjectionMode mode) {
  switch (mode) {
    case InjectionMode::kMemory: return "memory";
    case InjectionMode::kEmbedding: return "embedding";
    case InjectionMode::kBoth: return "both";
  }
  return "both";
}

InjectionMode injection_mode_from_string(std::string_view s) {
  if (s == "memory") return InjectionMode::kMemory;
  if (s == "embedding") return InjectionMode::kEmbedding;
  if (s == "both") return InjectionMode::kBoth;
  throw ConfigError("unknown injection mode '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  if (layers == 0) throw ConfigError("layers must be positive");
  if (hidden == 0 || heads == 0 || hidden % heads != 0)
    throw ConfigError("hidden size must be a positive multiple of the head count");
  if (latent == 0) throw ConfigError("latent dimension must be positive");
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  if (enc_vocab < 6 || dec_vocab < 6) throw ConfigError("vocabularies must hold the specials plus one token");
  if (ffn_mult == 0) throw ConfigError("ffn_mult must be positive");
  if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
}

}  // namespace latentlm
