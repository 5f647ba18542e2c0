#include "latentlm/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "latentlm/errors.hpp"
#include "latentlm/model/transformer.hpp"
#include "latentlm/objective/vae.hpp"

namespace latentlm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)
using Posteriors = PosteriorBatch;

Posteriors encode_all(const Parameters& params, std::span<const EncodedSentence> corpus) {
  return encode_batch(params, corpus);
}

std::vector<double> sample_posterior(std::span<const double> mu, std::span<const double> logvar, Rng& rng) {
  return reparameterize(mu, logvar, rng);
}

double analytic_kl(std::span<const double> mu, std::span<const double> logvar) {
  double s = 0.0;
  for (double v : gaussian_kl(mu, logvar)) s += v;
  return s;
}

}  // namespace

double log_normal_density(std::span<const double> z, std::span<const double> mu, std::span<const double> logvar) {
  if (z.size() != mu.size() || z.size() != logvar.size()) throw ShapeError("log_normal_density: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = z[i] - mu[i];
    s += -0.5 * (kLog2Pi + logvar[i] + d * d * std::exp(-logvar[i]));
  }
  return s;
}

double log_prior_density(std::span<const double> z) {
  double s = 0.0;
  for (double v : z) s += -0.5 * (kLog2Pi + v * v);
  return s;
}

double log_mean_exp(std::span<const double> x) {
  if (x.empty()) throw ShapeError("log_mean_exp: empty input");
  const double m = *std::max_element(x.begin(), x.end());
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s / static_cast<double>(x.size()));
}

std::size_t word_count(const EncodedSentence& sentence) {
  return sentence.decoder_view.empty() ? 0 : sentence.decoder_view.size() - 1;
}

std::vector<double> decoder_log_likelihoods(const Parameters& params, const EncodedSentence& sentence,
                                            std::span<const std::vector<double>> zs) {
  const std::size_t p = params.config.latent, k = zs.size();
  if (k == 0) return {};
  if (sentence.decoder_view.size() < 2) throw ShapeError("decoder view needs [BOS] and [EOS]");
  const std::span<const int> input(sentence.decoder_view.data(), sentence.decoder_view.size() - 1);
  std::vector<std::span<const int>> views(k, input);
  Tensor z({k, p});
  for (std::size_t i = 0; i < k; ++i) {
    if (zs[i].size() != p) throw ShapeError("decoder_log_likelihoods: latent length differs from P");
    std::copy(zs[i].begin(), zs[i].end(), z.values().begin() + static_cast<std::ptrdiff_t>(i * p));
  }
  Tape t(Tape::Mode::kInference);
  const auto inj = build_injection(t, params, t.constant(std::move(z)));
  const Var logits = decoder_forward(t, params, pack_sequences(views, params.config.max_len), inj);
  const auto values = t.value(logits);
  const std::size_t v = t.cols(logits), n = input.size();
  std::vector<double> out(k, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t r = 0; r < n; ++r) {
      const double* row = values.data() + (i * n + r) * v;
      const double m = *std::max_element(row, row + v);
      double s = 0.0;
      for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - m);
      out[i] += row[sentence.decoder_view[r + 1]] - m - std::log(s);
    }
  return out;
}

IwSample iw_log_likelihood(const Parameters& params, const EncodedSentence& sentence, std::size_t k, Rng& rng) {
  if (k == 0) throw RangeError("iw_log_likelihood: k must be at least 1");
  const auto post = encode(params, sentence.encoder_view);
  std::vector<std::vector<double>> zs;
  for (std::size_t i = 0; i < k; ++i) zs.push_back(sample_posterior(post.mu, post.logvar, rng));
  const auto ll = decoder_log_likelihoods(params, sentence, zs);
  IwSample out;
  for (std::size_t i = 0; i < k; ++i)
    out.log_weights.push_back(ll[i] + (log_prior_density(zs[i]) - log_normal_density(zs[i], post.mu, post.logvar)));
  out.log_px = log_mean_exp(out.log_weights);
  return out;
}

PerplexityReport perplexity(const Parameters& params, std::span<const EncodedSentence> corpus, std::size_t k,
                            Rng& rng) {
  if (corpus.empty()) throw RangeError("perplexity: empty corpus");
  PerplexityReport r;
  for (const auto& s : corpus) {
    r.nll_sum -= iw_log_likelihood(params, s, k, rng).log_px;
    r.words += word_count(s);
  }
  r.sentences = corpus.size();
  r.ppl = std::exp(r.nll_sum / static_cast<double>(r.words));
  return r;
}

MiReport mutual_information(std::span<const std::vector<double>> mu, std::span<const std::vector<double>> logvar,
                            Rng& rng) {
  const std::size_t m = std::min(mu.size(), kMaxMiSamples);
  if (m < 2) throw RangeError("mutual_information: need at least two sentences");
  if (logvar.size() < m) throw ShapeError("mutual_information: mu and logvar counts differ");
  MiReport r;
  r.samples = m;
  std::vector<double> cross(m);
  for (std::size_t n = 0; n < m; ++n) {
    const auto z = sample_posterior(mu[n], logvar[n], rng);
    for (std::size_t j = 0; j < m; ++j) cross[j] = log_normal_density(z, mu[j], logvar[j]);
    const double own = cross[n];
    r.mi += own - log_mean_exp(cross);
    r.expected_kl += own - log_prior_density(z);
    r.expected_kl_analytic += analytic_kl(mu[n], logvar[n]);
  }
  const double dm = static_cast<double>(m);
  r.mi /= dm;
  r.expected_kl /= dm;
  r.expected_kl_analytic /= dm;
  r.marginal_kl = r.expected_kl - r.mi;
  return r;
}

MiReport mutual_information(const Parameters& params, std::span<const EncodedSentence> sample, Rng& rng) {
  if (sample.size() < 2) throw RangeError("mutual_information: need at least two sentences");
  const auto post = encode_all(params, sample.first(std::min(sample.size(), kMaxMiSamples)));
  return mutual_information(post.mu, post.logvar, rng);
}

ActiveUnits active_units_from_means(std::span<const std::vector<double>> means, double threshold) {
  if (means.size() < 2) throw RangeError("active_units: need at least two sentences");
  const std::size_t p = means[0].size(), n = means.size();
  ActiveUnits out;
  out.variances.assign(p, 0.0);
  std::vector<double> col(n);
  for (std::size_t d = 0; d < p; ++d) {
    for (std::size_t i = 0; i < n; ++i) {
      if (means[i].size() != p) throw ShapeError("active_units: ragged posterior means");
      col[i] = means[i][d];
    }
    std::sort(col.begin(), col.end());
    double mean = 0.0;
    for (double v : col) mean += v;
    mean /= static_cast<double>(n);
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) sq[i] = (col[i] - mean) * (col[i] - mean);
    std::sort(sq.begin(), sq.end());
    double var = 0.0;
    for (double v : sq) var += v;
    out.variances[d] = var / static_cast<double>(n - 1);
    if (out.variances[d] > threshold) ++out.count;
  }
  return out;
}

ActiveUnits active_units(const Parameters& params, std::span<const EncodedSentence> corpus, double threshold) {
  if (corpus.size() < 2) throw RangeError("active_units: need at least two sentences");
  return active_units_from_means(encode_all(params, corpus).mu, threshold);
}

ElboReport elbo_report(const Parameters& params, std::span<const EncodedSentence> corpus, Rng& rng) {
  if (corpus.empty()) throw RangeError("elbo_report: empty corpus");
  const auto post = encode_all(params, corpus);
  ElboReport r;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::vector<std::vector<double>> z{sample_posterior(post.mu[i], post.logvar[i], rng)};
    r.rec -= decoder_log_likelihoods(params, corpus[i], z)[0];
    r.kl += analytic_kl(post.mu[i], post.logvar[i]);
  }
  const double n = static_cast<double>(corpus.size());
  r.rec /= n;
  r.kl /= n;
  r.neg_elbo = r.rec + r.kl;
  return r;
}

DecompositionReport kl_decomposition_check(const Parameters& params, std::span<const EncodedSentence> sample,
                                           Rng& rng, std::optional<double> data_entropy) {
  if (sample.size() < 2) throw RangeError("kl_decomposition_check: need at least two sentences");
  const auto used = sample.first(std::min(sample.size(), kMaxMiSamples));
  const auto post = encode_all(params, used);
  const MiReport mi = mutual_information(post.mu, post.logvar, rng);
  DecompositionReport r;
  r.expected_kl = mi.expected_kl;
  r.mi = mi.mi;
  r.marginal_kl = mi.marginal_kl;
  r.residual = r.expected_kl - (r.mi + r.marginal_kl);

  const std::size_t m = used.size();
  std::vector<double> cross(m);
  for (std::size_t n = 0; n < m; ++n) {
    const auto z = sample_posterior(post.mu[n], post.logvar[n], rng);
    for (std::size_t j = 0; j < m; ++j) cross[j] = log_normal_density(z, post.mu[j], post.logvar[j]);
    r.marginal_kl_independent += log_mean_exp(cross) - log_prior_density(z);
  }
  r.marginal_kl_independent /= static_cast<double>(m);
  r.rec = elbo_report(params, used, rng).rec;
  if (data_entropy) r.mi_lower_bound = *data_entropy - r.rec;
  return r;
}

MetricsReport evaluate(const Parameters& params, std::span<const EncodedSentence> corpus, const EvalOptions& options,
                       Rng& rng) {
  if (corpus.size() < 2) throw RangeError("evaluate: need at least two sentences");
  MetricsReport r;
  const auto ppl = perplexity(params, corpus, options.k, rng);
  r.iw_nll = ppl.nll_sum / static_cast<double>(corpus.size());
  r.ppl = ppl.ppl;
  r.words = ppl.words;
  r.mi = mutual_information(params, corpus, rng).mi;
  r.au = active_units(params, corpus, options.au_threshold).count;
  const auto elbo = elbo_report(params, corpus, rng);
  r.neg_elbo = elbo.neg_elbo;
  r.kl = elbo.kl;
  r.rec = elbo.rec;
  r.k_used = options.k;
  r.n_sentences = corpus.size();
  return r;
}

std::string to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["iw_nll"] = r.iw_nll;
  j["ppl"] = r.ppl;
  j["mi"] = r.mi;
  j["au"] = r.au;
  j["neg_elbo"] = r.neg_elbo;
  j["kl"] = r.kl;
  j["rec"] = r.rec;
  j["k_used"] = r.k_used;
  j["n_sentences"] = r.n_sentences;
  j["words"] = r.words;
  return j.dump();
}

std::string format_table(const MetricsReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%10s %8s %4s %10s %8s %10s\n%10.3f %8.3f %4zu %10.3f %8.3f %10.3f\n", "PPL", "MI",
                "AU", "-ELBO", "KL", "Rec", r.ppl, r.mi, r.au, r.neg_elbo, r.kl, r.rec);
  return buf;
}

}  // namespace latentlm
