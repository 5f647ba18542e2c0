#pragma once

// Naive scalar re-implementation of the encoder/decoder forward pass, written
// directly from the model definition with plain loops. Used as an oracle for
// the tape-based implementation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "latentlm/model/parameters.hpp"

namespace latentlm::testing::reference {

using Mat = std::vector<std::vector<double>>;

inline std::vector<double> row(const Tensor& t, std::size_t r) {
  std::vector<double> out(t.cols());
  for (std::size_t j = 0; j < t.cols(); ++j) out[j] = t.at(r, j);
  return out;
}

inline std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// y = W x + b with W stored [out, in].
inline std::vector<double> affine(const Tensor& w, const std::vector<double>& x, const Tensor* b) {
  std::vector<double> y(w.rows(), 0.0);
  for (std::size_t o = 0; o < w.rows(); ++o) {
    double acc = 0.0;
    for (std::size_t i = 0; i < w.cols(); ++i) acc += w.at(o, i) * x[i];
    y[o] = acc + (b ? (*b)[o] : 0.0);
  }
  return y;
}

inline std::vector<double> layer_norm(const std::vector<double>& x, const Tensor& g, const Tensor& b, double eps) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) / std::sqrt(var + eps) * g[i] + b[i];
  return y;
}

inline double gelu(double x) {
  const double pi = 3.14159265358979323846;
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / pi) * (x + 0.044715 * x * x * x)));
}

// One pre-LN block over a single sequence. `memory` (length H) is an extra
// pre-projection state every query may attend to.
inline Mat block(const BlockParams& p, const Mat& x, std::size_t heads, bool causal, double eps,
                 const std::vector<double>* memory) {
  const std::size_t n = x.size(), h = x[0].size(), d = h / heads;
  Mat q(n), k(n), v(n);
  for (std::size_t t = 0; t < n; ++t) {
    const auto a = layer_norm(x[t], p.ln1_gain, p.ln1_bias, eps);
    q[t] = affine(p.wq, a, &p.bq);
    k[t] = affine(p.wk, a, &p.bk);
    v[t] = affine(p.wv, a, &p.bv);
  }
  std::vector<double> mk, mv;
  if (memory) {
    mk = affine(p.wk, *memory, &p.bk);
    mv = affine(p.wv, *memory, &p.bv);
  }
  Mat out = x;
  for (std::size_t t = 0; t < n; ++t) {
    std::vector<double> ctx(h, 0.0);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      std::vector<double> scores;
      std::vector<const std::vector<double>*> values;
      auto score = [&](const std::vector<double>& key) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += q[t][hd * d + j] * key[hd * d + j];
        return s / std::sqrt(static_cast<double>(d));
      };
      if (memory) {
        scores.push_back(score(mk));
        values.push_back(&mv);
      }
      const std::size_t last = causal ? t + 1 : n;
      for (std::size_t u = 0; u < last; ++u) {
        scores.push_back(score(k[u]));
        values.push_back(&v[u]);
      }
      const double mx = *std::max_element(scores.begin(), scores.end());
      double z = 0.0;
      for (double& s : scores) z += (s = std::exp(s - mx));
      for (std::size_t i = 0; i < scores.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) ctx[hd * d + j] += scores[i] / z * (*values[i])[hd * d + j];
    }
    const auto o = affine(p.wo, ctx, &p.bo);
    for (std::size_t j = 0; j < h; ++j) out[t][j] += o[j];
  }
  for (std::size_t t = 0; t < n; ++t) {
    const auto m = layer_norm(out[t], p.ln2_gain, p.ln2_bias, eps);
    auto f = affine(p.w1, m, &p.b1);
    for (double& e : f) e = gelu(e);
    const auto y = affine(p.w2, f, &p.b2);
    for (std::size_t j = 0; j < h; ++j) out[t][j] += y[j];
  }
  return out;
}

struct Posterior {
  std::vector<double> h_cls, mu, logvar;
};

inline Posterior encode(const Parameters& p, std::span<const int> ids) {
  const auto& c = p.config;
  Mat x(ids.size());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    x[t] = row(p.enc_tok, static_cast<std::size_t>(ids[t]));
    const auto pos = row(p.enc_pos, t);
    for (std::size_t j = 0; j < c.hidden; ++j) x[t][j] += pos[j];
  }
  for (const auto& b : p.enc_blocks) x = block(b, x, c.heads, false, c.ln_eps, nullptr);
  Posterior out;
  out.h_cls = layer_norm(x[0], p.enc_ln_gain, p.enc_ln_bias, c.ln_eps);
  const auto stats = affine(p.w_e, out.h_cls, nullptr);
  out.mu.assign(stats.begin(), stats.begin() + static_cast<std::ptrdiff_t>(c.latent));
  for (std::size_t i = 0; i < c.latent; ++i) out.logvar.push_back(std::clamp(stats[c.latent + i], -8.0, 8.0));
  return out;
}

/// Logits [T][V] for a decoder-view prefix conditioned on z.
inline Mat decode(const Parameters& p, std::span<const int> ids, const std::vector<double>& z) {
  const auto& c = p.config;
  const bool mem = c.injection != InjectionMode::kEmbedding;
  const bool emb = c.injection != InjectionMode::kMemory;
  const auto offset = affine(p.w_d, z, nullptr);
  const auto full = affine(p.w_m, z, nullptr);
  Mat x(ids.size());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    x[t] = row(p.dec_tok, static_cast<std::size_t>(ids[t]));
    const auto pos = row(p.dec_pos, t);
    for (std::size_t j = 0; j < c.hidden; ++j) x[t][j] += pos[j] + (emb ? offset[j] : 0.0);
  }
  for (std::size_t l = 0; l < c.layers; ++l) {
    std::vector<double> slice(full.begin() + static_cast<std::ptrdiff_t>(l * c.hidden),
                              full.begin() + static_cast<std::ptrdiff_t>((l + 1) * c.hidden));
    const bool nonzero = std::any_of(slice.begin(), slice.end(), [](double v) { return v != 0.0; });
    x = block(p.dec_blocks[l], x, c.heads, true, c.ln_eps, mem && nonzero ? &slice : nullptr);
  }
  Mat logits(ids.size());
  for (std::size_t t = 0; t < ids.size(); ++t)
    logits[t] = affine(p.w_out, layer_norm(x[t], p.dec_ln_gain, p.dec_ln_bias, c.ln_eps), nullptr);
  return logits;
}

}  // namespace latentlm::testing::reference
