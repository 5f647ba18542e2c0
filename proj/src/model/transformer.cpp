#include "latentlm/model/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "latentlm/errors.hpp"
#include "latentlm/text/vocabulary.hpp"

namespace latentlm {

std::vector<std::size_t> PackedSequences::first_rows() const {
  return {segments.offsets.begin(), segments.offsets.end() - (segments.offsets.empty() ? 0 : 1)};
}

PackedSequences pack_sequences(std::span<const std::span<const int>> sequences, std::size_t max_len) {
  PackedSequences p;
  std::vector<std::size_t> lengths;
  lengths.reserve(sequences.size());
  for (auto seq : sequences) {
    if (seq.empty()) throw ShapeError("cannot pack an empty sequence");
    if (seq.size() > max_len)
      throw RangeError("sequence of length " + std::to_string(seq.size()) + " exceeds max_len " +
                       std::to_string(max_len));
    lengths.push_back(seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) {
      p.ids.push_back(seq[i]);
      p.positions.push_back(static_cast<int>(i));
    }
  }
  p.segments = ops::Segments::from_lengths(lengths);
  return p;
}

namespace {

void check_ids(const PackedSequences& seqs, std::size_t vocab, int first_id, const char* what) {
  for (int id : seqs.ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw TokenError(std::string(what) + ": token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab));
  for (std::size_t row : seqs.first_rows())
    if (seqs.ids[row] != first_id)
      throw TokenError(std::string(what) + ": sequence must start with " +
                       std::string(Vocabulary::kSpecialTokens[static_cast<std::size_t>(first_id)]));
}

Var embed(Tape& t, const Tensor& tok, const Tensor& pos, const PackedSequences& seqs) {
  return ops::add(ops::embedding(t.parameter(tok), seqs.ids), ops::embedding(t.parameter(pos), seqs.positions));
}

Var block_forward(Tape& t, const BlockParams& b, Var x, const ops::Segments& segments, std::size_t heads,
                  bool causal, double eps, const Var* memory_slice, const std::vector<char>* present) {
  const Var a = ops::layer_norm(x, t.parameter(b.ln1_gain), t.parameter(b.ln1_bias), eps);
  const Var wk = t.parameter(b.wk), bk = t.parameter(b.bk);
  const Var wv = t.parameter(b.wv), bv = t.parameter(b.bv);
  const Var q = ops::linear(a, t.parameter(b.wq), t.parameter(b.bq));
  const Var k = ops::linear(a, wk, bk);
  const Var v = ops::linear(a, wv, bv);
  Var att;
  const bool any_memory =
      memory_slice != nullptr && std::any_of(present->begin(), present->end(), [](char c) { return c != 0; });
  if (any_memory) {
    // The slice enters as one extra token state through this layer's K/V projections.
    ops::MemorySlot mem{ops::linear(*memory_slice, wk, bk), ops::linear(*memory_slice, wv, bv), *present};
    att = ops::attention(q, k, v, segments, heads, causal, &mem);
  } else {
    att = ops::attention(q, k, v, segments, heads, causal);
  }
  x = ops::add(x, ops::linear(att, t.parameter(b.wo), t.parameter(b.bo)));
  const Var m = ops::layer_norm(x, t.parameter(b.ln2_gain), t.parameter(b.ln2_bias), eps);
  const Var f = ops::gelu(ops::linear(m, t.parameter(b.w1), t.parameter(b.b1)));
  return ops::add(x, ops::linear(f, t.parameter(b.w2), t.parameter(b.b2)));
}

std::vector<char> nonzero_rows(std::span<const double> values, std::size_t cols) {
  std::vector<char> out(values.size() / cols, 0);
  for (std::size_t r = 0; r < out.size(); ++r)
    for (std::size_t j = 0; j < cols; ++j)
      if (values[r * cols + j] != 0.0) {
        out[r] = 1;
        break;
      }
  return out;
}

}  // namespace

PosteriorVars encode(Tape& t, const Parameters& params, const PackedSequences& enc) {
  const ModelConfig& c = params.config;
  check_ids(enc, c.enc_vocab, Vocabulary::kCls, "encode");
  Var x = embed(t, params.enc_tok, params.enc_pos, enc);
  for (const auto& b : params.enc_blocks)
    x = block_forward(t, b, x, enc.segments, c.heads, false, c.ln_eps, nullptr, nullptr);
  x = ops::layer_norm(x, t.parameter(params.enc_ln_gain), t.parameter(params.enc_ln_bias), c.ln_eps);
  const auto firsts = enc.first_rows();
  const Var h_cls = ops::gather_rows(x, firsts);
  const Var stats = ops::matmul_nt(h_cls, t.parameter(params.w_e));
  const Var mu = ops::slice_cols(stats, 0, c.latent);
  const Var logvar = ops::clamp(ops::slice_cols(stats, c.latent, 2 * c.latent), kLogvarMin, kLogvarMax);
  return {h_cls, mu, logvar};
}

InjectionVars build_injection(Tape& t, const Parameters& params, Var z) {
  const ModelConfig& c = params.config;
  if (t.cols(z) != c.latent)
    throw ShapeError("build_injection: latent has " + std::to_string(t.cols(z)) + " columns, expected " +
                     std::to_string(c.latent));
  InjectionVars inj;
  inj.mode = c.injection;
  if (uses_memory(c.injection)) {
    const Var full = ops::matmul_nt(z, t.parameter(params.w_m));
    for (std::size_t l = 0; l < c.layers; ++l) {
      const Var slice = ops::slice_cols(full, l * c.hidden, (l + 1) * c.hidden);
      inj.memory_present.push_back(nonzero_rows(t.value(slice), c.hidden));
      inj.memory_slices.push_back(slice);
    }
  }
  if (uses_embedding(c.injection)) inj.embedding_offset = ops::matmul_nt(z, t.parameter(params.w_d));
  return inj;
}

Var decoder_forward(Tape& t, const Parameters& params, const PackedSequences& dec, const InjectionVars& inj) {
  const ModelConfig& c = params.config;
  check_ids(dec, c.dec_vocab, Vocabulary::kBos, "decoder_forward");
  Var x = embed(t, params.dec_tok, params.dec_pos, dec);
  if (inj.embedding_offset) {
    if (t.rows(*inj.embedding_offset) != dec.count())
      throw ShapeError("decoder_forward: injection batch differs from sequence count");
    x = ops::add_segment_rows(x, *inj.embedding_offset, dec.segments);
  }
  const bool memory = !inj.memory_slices.empty();
  if (memory && inj.memory_slices.size() != c.layers)
    throw ShapeError("decoder_forward: need one memory slice per layer");
  for (std::size_t l = 0; l < c.layers; ++l) {
    const Var* slice = memory ? &inj.memory_slices[l] : nullptr;
    const std::vector<char>* present = memory ? &inj.memory_present[l] : nullptr;
    if (memory && t.rows(*slice) != dec.count())
      throw ShapeError("decoder_forward: injection batch differs from sequence count");
    x = block_forward(t, params.dec_blocks[l], x, dec.segments, c.heads, true, c.ln_eps, slice, present);
  }
  x = ops::layer_norm(x, t.parameter(params.dec_ln_gain), t.parameter(params.dec_ln_bias), c.ln_eps);
  return ops::matmul_nt(x, t.parameter(params.w_out));
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> values_of(const Tape& t, Var v) {
  const auto s = t.value(v);
  return {s.begin(), s.end()};
}

InjectionVars bind_injection(Tape& t, const Parameters& params, const LatentInjection& inj) {
  const ModelConfig& c = params.config;
  InjectionVars out;
  out.mode = inj.mode;
  if (uses_memory(inj.mode)) {
    if (inj.memory_slices.size() != c.layers) throw ShapeError("injection needs one memory slice per layer");
    for (const auto& s : inj.memory_slices) {
      if (s.size() != c.hidden) throw ShapeError("memory slice length differs from hidden size");
      const Var v = t.constant(Tensor({1, c.hidden}, s));
      out.memory_present.push_back(nonzero_rows(s, c.hidden));
      out.memory_slices.push_back(v);
    }
  }
  if (uses_embedding(inj.mode)) {
    if (inj.embedding_offset.size() != c.hidden) throw ShapeError("embedding offset length differs from hidden size");
    out.embedding_offset = t.constant(Tensor({1, c.hidden}, inj.embedding_offset));
  }
  return out;
}

std::vector<double> last_logits(const Parameters& params, std::span<const int> tokens, const LatentInjection& inj) {
  const Tensor logits = decoder_forward(params, tokens, inj);
  const std::size_t v = logits.cols();
  const auto vals = logits.values();
  return {vals.end() - static_cast<std::ptrdiff_t>(v), vals.end()};
}

template <typename Pick>
std::vector<int> decode_loop(const Parameters& params, const LatentInjection& inj, std::size_t max_len, Pick pick) {
  const std::size_t limit = std::min(max_len, params.config.max_len);
  std::vector<int> tokens{Vocabulary::kBos};
  while (tokens.size() < limit) {
    const int next = pick(last_logits(params, tokens, inj));
    if (next == Vocabulary::kEos) break;
    tokens.push_back(next);
  }
  return {tokens.begin() + 1, tokens.end()};
}

}  // namespace

PosteriorParams encode(const Parameters& params, std::span<const int> encoder_view) {
  Tape t(Tape::Mode::kInference);
  const std::span<const int> seqs[] = {encoder_view};
  const auto packed = pack_sequences(seqs, params.config.max_len);
  const auto post = encode(t, params, packed);
  return {values_of(t, post.h_cls), values_of(t, post.mu), values_of(t, post.logvar)};
}

LatentInjection build_injection(const Parameters& params, std::span<const double> z) {
  const ModelConfig& c = params.config;
  if (z.size() != c.latent)
    throw ShapeError("latent has " + std::to_string(z.size()) + " values, expected " + std::to_string(c.latent));
  Tape t(Tape::Mode::kInference);
  const Var zv = t.constant(Tensor({1, c.latent}, std::vector<double>(z.begin(), z.end())));
  const auto vars = build_injection(t, params, zv);
  LatentInjection out;
  out.mode = vars.mode;
  for (Var s : vars.memory_slices) out.memory_slices.push_back(values_of(t, s));
  if (vars.embedding_offset) out.embedding_offset = values_of(t, *vars.embedding_offset);
  return out;
}

Tensor decoder_forward(const Parameters& params, std::span<const int> tokens, const LatentInjection& injection) {
  Tape t(Tape::Mode::kInference);
  const std::span<const int> seqs[] = {tokens};
  const auto packed = pack_sequences(seqs, params.config.max_len);
  const auto inj = bind_injection(t, params, injection);
  return t.to_tensor(decoder_forward(t, params, packed, inj));
}

PosteriorBatch encode_batch(const Parameters& params, std::span<const EncodedSentence> corpus) {
  constexpr std::size_t kChunk = 256;
  PosteriorBatch out;
  const std::size_t h = params.config.hidden, p = params.config.latent;
  auto rows = [](std::span<const double> v, std::size_t width, std::size_t n, std::vector<std::vector<double>>& dst) {
    for (std::size_t r = 0; r < n; ++r) dst.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(r * width),
                                                         v.begin() + static_cast<std::ptrdiff_t>((r + 1) * width));
  };
  for (std::size_t start = 0; start < corpus.size(); start += kChunk) {
    const std::size_t end = std::min(corpus.size(), start + kChunk);
    std::vector<std::span<const int>> views;
    for (std::size_t i = start; i < end; ++i) views.emplace_back(corpus[i].encoder_view);
    Tape t(Tape::Mode::kInference);
    const auto post = encode(t, params, pack_sequences(views, params.config.max_len));
    rows(t.value(post.h_cls), h, end - start, out.h_cls);
    rows(t.value(post.mu), p, end - start, out.mu);
    rows(t.value(post.logvar), p, end - start, out.logvar);
  }
  return out;
}

std::vector<int> decode_greedy(const Parameters& params, const LatentInjection& injection, std::size_t max_len) {
  return decode_loop(params, injection, max_len, [](const std::vector<double>& logits) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.size(); ++j)
      if (logits[j] > logits[best]) best = j;
    return static_cast<int>(best);
  });
}

std::vector<int> decode_sample(const Parameters& params, const LatentInjection& injection, double temperature,
                               Rng& rng, std::size_t max_len) {
  if (!(temperature > 0.0)) throw RangeError("sampling temperature must be positive");
  return decode_loop(params, injection, max_len, [&](const std::vector<double>& logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) z += (p[j] = std::exp((logits[j] - mx) / temperature));
    double u = rng.uniform() * z;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (u < p[j]) return static_cast<int>(j);
      u -= p[j];
    }
    // rounding left u >= total mass: fall back to the most probable token
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  });
}

}  // namespace latentlm
