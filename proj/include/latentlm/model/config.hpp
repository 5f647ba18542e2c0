#pragma once

#include <cstddef>
#include <string_view>

namespace latentlm {

/// How the latent vector reaches the decoder.
///   Memory:    W_M z is split into one extra attended slot per layer.
///   Embedding: W_D z is added to every decoder input embedding.
enum class InjectionMode { kMemory, kEmbedding, kBoth };

std::string_view to_string(InjectionMode mode);
InjectionMode injection_mode_from_string(std::string_view s);
inline bool uses_memory(InjectionMode m) { return m != InjectionMode::kEmbedding; }
inline bool uses_embedding(InjectionMode m) { return m != InjectionMode::kMemory; }

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t latent = 16;
  std::size_t enc_vocab = 0;
  std::size_t dec_vocab = 0;
  std::size_t max_len = 64;
  std::size_t ffn_mult = 4;
  InjectionMode injection = InjectionMode::kBoth;
  double ln_eps = 1e-5;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace latentlm
