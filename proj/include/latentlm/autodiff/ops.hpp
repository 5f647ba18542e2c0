#pragma once

// Differentiable operations over Tape values. Every op records its output on
// the tape of its first argument and checks the result for NaN/Inf.
//
// Matrices are rank-2 row-major; "rows"/"cols" of a higher-rank value refer to
// the flattened leading axes and the last axis.

#include <cstddef>
#include <span>
#include <vector>

#include "latentlm/autodiff/tape.hpp"

namespace latentlm::ops {

/// C = A * B.
Var matmul(Var a, Var b);
/// C = A * B^T.
Var matmul_nt(Var a, Var b);
/// y = x * W^T + b, with W stored as [out, in].
Var linear(Var x, Var weight, Var bias);

Var add(Var a, Var b);
/// Adds a length-cols vector to every row.
Var add_bias(Var x, Var bias);
Var scale(Var x, double factor);
Var mul(Var a, Var b);

Var gelu(Var x);
Var tanh(Var x);
/// log(1 + e^x), computed stably.
Var softplus(Var x);
/// Clamps to [lo, hi]; gradient flows only strictly inside the interval.
Var clamp(Var x, double lo, double hi);

/// Standardizes the last axis (population variance, eps inside the root),
/// then applies gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double eps);
Var softmax_rows(Var x);

/// Mean over non-ignored rows of -log softmax(logits[t])[targets[t]].
/// Returns 0 when every position is ignored.
Var cross_entropy(Var logits, std::span<const int> targets, int ignore_id);

/// Row lookup: out[t] = table[ids[t]].
Var embedding(Var table, std::span<const int> ids);
Var gather_rows(Var x, std::span<const std::size_t> rows);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var concat_cols(Var a, Var b);
Var reshape(Var x, Shape shape);

Var sum(Var x);
Var mean(Var x);
/// Column means of a [rows, cols] value, shape [cols].
Var mean_rows(Var x);

/// Packed variable-length sequences: sequence s occupies rows
/// [offsets[s], offsets[s+1]).
struct Segments {
  std::vector<std::size_t> offsets;

  std::size_t count() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t total() const { return offsets.empty() ? 0 : offsets.back(); }
  std::size_t length(std::size_t s) const { return offsets[s + 1] - offsets[s]; }
  static Segments from_lengths(std::span<const std::size_t> lengths);
};

/// out[t] = x[t] + rows[segment of t].
Var add_segment_rows(Var x, Var rows, const Segments& segments);

/// Extra key/value slot per sequence. The slot is visible to every query of
/// its sequence and never issues queries. Sequences with present[s] == 0 get
/// no slot at all.
struct MemorySlot {
  Var key;    // [segments, H]
  Var value;  // [segments, H]
  std::vector<char> present;
};

/// Multi-head scaled dot-product attention over packed sequences.
/// q, k, v: [total, H]; H must be divisible by `heads`.
Var attention(Var q, Var k, Var v, const Segments& segments, std::size_t heads,
              bool causal, const MemorySlot* memory = nullptr);

/// z = mu + exp(logvar / 2) * eps, with eps held constant.
Var reparameterize(Var mu, Var logvar, const Tensor& eps);
/// Elementwise KL(N(mu, exp(logvar)) || N(0, 1)).
Var gaussian_kl(Var mu, Var logvar);
/// sum_i max(lambda, x_i); entries at or below lambda get zero gradient.
Var hinge_sum(Var x, double lambda);

}  // namespace latentlm::ops
