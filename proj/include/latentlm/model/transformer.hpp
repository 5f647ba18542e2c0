#pragma once

// Encoder -> Gaussian latent -> causal decoder.
//
// Tape-level functions work on packed batches (many sentences concatenated
// row-wise) and are what training and evaluation use. The value-level
// functions below them wrap a single sentence on an inference tape.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "latentlm/autodiff/ops.hpp"
#include "latentlm/autodiff/rng.hpp"
#include "latentlm/autodiff/tape.hpp"
#include "latentlm/model/parameters.hpp"
#include "latentlm/text/corpus.hpp"

namespace latentlm {

/// Log-variance is clamped to this range before use.
inline constexpr double kLogvarMin = -8.0;
inline constexpr double kLogvarMax = 8.0;

struct PackedSequences {
  std::vector<int> ids;
  std::vector<int> positions;
  ops::Segments segments;

  std::size_t count() const { return segments.count(); }
  /// Index of the first row of every sequence.
  std::vector<std::size_t> first_rows() const;
};

/// Packs sequences row-wise. Throws RangeError if one exceeds max_len and
/// ShapeError if one is empty.
PackedSequences pack_sequences(std::span<const std::span<const int>> sequences, std::size_t max_len);

struct PosteriorVars {
  Var h_cls;   // [B, H]
  Var mu;      // [B, P]
  Var logvar;  // [B, P], clamped
};

struct InjectionVars {
  InjectionMode mode = InjectionMode::kBoth;
  std::vector<Var> memory_slices;                // per layer, [B, H]
  std::vector<std::vector<char>> memory_present;  // per layer, per sequence
  std::optional<Var> embedding_offset;          // [B, H]
};

/// Runs the bidirectional encoder; every sequence must start with [CLS].
PosteriorVars encode(Tape& tape, const Parameters& params, const PackedSequences& enc);

/// Maps z [B, P] to the decoder's injection terms for the configured mode.
InjectionVars build_injection(Tape& tape, const Parameters& params, Var z);

/// Causal decoder; returns logits [total, V_dec] where row t of a sequence
/// predicts its token t+1.
Var decoder_forward(Tape& tape, const Parameters& params, const PackedSequences& dec,
                    const InjectionVars& injection);

// ---------------------------------------------------------------------------
// Single-sentence value API.

struct PosteriorParams {
  std::vector<double> h_cls;
  std::vector<double> mu;
  std::vector<double> logvar;
};

/// Validated per-layer memory slices and embedding offset for one latent.
/// An all-zero memory slice is treated as absent.
struct LatentInjection {
  InjectionMode mode = InjectionMode::kBoth;
  std::vector<std::vector<double>> memory_slices;
  std::vector<double> embedding_offset;
};

/// Throws RangeError for sequences longer than max_len, TokenError for ids
/// outside the vocabulary or a missing leading [CLS].
PosteriorParams encode(const Parameters& params, std::span<const int> encoder_view);
LatentInjection build_injection(const Parameters& params, std::span<const double> z);

/// Posteriors of many sentences, one row per sentence.
struct PosteriorBatch {
  std::vector<std::vector<double>> h_cls, mu, logvar;
};
/// Encodes in packed chunks on an inference tape.
PosteriorBatch encode_batch(const Parameters& params, std::span<const EncodedSentence> corpus);
/// tokens must start with [BOS].
Tensor decoder_forward(const Parameters& params, std::span<const int> tokens, const LatentInjection& injection);

/// Greedy decoding from [BOS] until [EOS] or max_len total positions; ties go
/// to the lowest id. Returns the generated ids without [BOS]/[EOS].
std::vector<int> decode_greedy(const Parameters& params, const LatentInjection& injection, std::size_t max_len);
/// Samples from softmax(logits / temperature) with the same stopping rule.
std::vector<int> decode_sample(const Parameters& params, const LatentInjection& injection, double temperature,
                               Rng& rng, std::size_t max_len);

}  // namespace latentlm
