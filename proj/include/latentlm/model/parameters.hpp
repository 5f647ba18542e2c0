#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "latentlm/autodiff/rng.hpp"
#include "latentlm/autodiff/tensor.hpp"
#include "latentlm/model/config.hpp"

namespace latentlm {

/// Pre-LN transformer block weights. Linear weights are stored [out, in].
struct BlockParams {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1, w2, b2;
};

/// All learned weights of the encoder, decoder and latent bridges.
struct Parameters {
  ModelConfig config;

  Tensor enc_tok, enc_pos;
  std::vector<BlockParams> enc_blocks;
  Tensor enc_ln_gain, enc_ln_bias;
  Tensor w_e;  // [2P, H]: rows 0..P give mu, rows P..2P give log variance

  Tensor dec_tok, dec_pos;
  std::vector<BlockParams> dec_blocks;
  Tensor dec_ln_gain, dec_ln_bias;
  Tensor w_m;    // [L*H, P]
  Tensor w_d;    // [H, P]
  Tensor w_out;  // [V_dec, H]

  /// Classifier head [K, H]; empty until a head is attached.
  Tensor w_c;

  /// Normal(0, 0.02) projections and embeddings, zero biases, unit gains.
  static Parameters init(const ModelConfig& config, Rng rng);

  /// Every tensor with a stable name, in serialization order. w_c is listed
  /// only when present.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  std::vector<Tensor*> encoder_tensors();
  std::vector<Tensor*> all_tensors();

  void set_requires_grad(bool on);
  void zero_grad();
  std::size_t count() const;
  /// FNV-1a over all parameter bytes.
  std::uint64_t checksum() const;
  /// Same hash without the classifier head.
  std::uint64_t backbone_checksum() const;

 private:
  std::uint64_t checksum_impl(bool with_head) const;
};

}  // namespace latentlm
