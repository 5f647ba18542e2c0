#pragma once

// Likelihood and latent-usage metrics: importance-weighted log-likelihood and
// perplexity, mutual information, active units and the ELBO terms.
//
// All estimators work in log space and draw every random number from the
// caller's Rng in a fixed order, so reports are reproducible.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latentlm/autodiff/rng.hpp"
#include "latentlm/model/parameters.hpp"
#include "latentlm/text/corpus.hpp"

namespace latentlm {

/// log N(z; mu, diag(exp(logvar))).
double log_normal_density(std::span<const double> z, std::span<const double> mu, std::span<const double> logvar);
/// log N(z; 0, I).
double log_prior_density(std::span<const double> z);
/// log((1/n) sum_i exp(x_i)), exact when all x_i are equal.
double log_mean_exp(std::span<const double> x);

/// log p(x | z_i) for each row of zs ([k][P]) under teacher forcing, summed
/// over the decoder-view targets (every token after [BOS], [EOS] included).
std::vector<double> decoder_log_likelihoods(const Parameters& params, const EncodedSentence& sentence,
                                            std::span<const std::vector<double>> zs);

/// Number of predicted tokens per sentence: decoder view without [BOS].
std::size_t word_count(const EncodedSentence& sentence);

struct IwSample {
  double log_px = 0.0;  // log (1/k) sum_i w_i
  std::vector<double> log_weights;
};

/// Draws z_1..z_k ~ q(z|x) and returns the importance-weighted estimate of
/// log p(x). Throws RangeError for k == 0.
IwSample iw_log_likelihood(const Parameters& params, const EncodedSentence& sentence, std::size_t k, Rng& rng);

struct PerplexityReport {
  double ppl = 0.0;
  double nll_sum = 0.0;  // -sum of IW log-likelihoods
  std::size_t words = 0;
  std::size_t sentences = 0;
};

PerplexityReport perplexity(const Parameters& params, std::span<const EncodedSentence> corpus, std::size_t k,
                            Rng& rng);

inline constexpr std::size_t kMaxMiSamples = 1000;

struct MiReport {
  double mi = 0.0;
  /// Monte Carlo E[log q(z|x) - log p(z)] on the same draws as mi.
  double expected_kl = 0.0;
  /// Closed-form E[KL(q(z|x) || p(z))].
  double expected_kl_analytic = 0.0;
  /// expected_kl - mi: KL(q(z) || p(z)) on the same draws.
  double marginal_kl = 0.0;
  std::size_t samples = 0;
};

/// Aggregate-posterior estimator with one z per sentence:
///   mi = mean_n [log q(z_n|x_n) - (logsumexp_m log q(z_n|x_m) - log M)].
/// Uses at most kMaxMiSamples sentences (the first ones). Throws RangeError
/// for fewer than two.
MiReport mutual_information(const Parameters& params, std::span<const EncodedSentence> sample, Rng& rng);
/// Same estimator over precomputed posteriors ([M][P] each).
MiReport mutual_information(std::span<const std::vector<double>> mu, std::span<const std::vector<double>> logvar,
                            Rng& rng);

struct ActiveUnits {
  std::size_t count = 0;
  std::vector<double> variances;
};

/// Per-dimension variance (divisor n - 1) of posterior means; a dimension is
/// active when its variance is strictly above the threshold. Summation runs
/// over sorted values, so the result does not depend on sentence order.
ActiveUnits active_units_from_means(std::span<const std::vector<double>> means, double threshold = 0.01);
ActiveUnits active_units(const Parameters& params, std::span<const EncodedSentence> corpus, double threshold = 0.01);

struct ElboReport {
  double neg_elbo = 0.0;
  double kl = 0.0;
  double rec = 0.0;
};

/// Per-sentence averages with one z sample per sentence and the raw,
/// unhinged KL.
ElboReport elbo_report(const Parameters& params, std::span<const EncodedSentence> corpus, Rng& rng);

struct DecompositionReport {
  double expected_kl = 0.0;
  double mi = 0.0;
  double marginal_kl = 0.0;
  /// expected_kl - (mi + marginal_kl); zero up to rounding by construction.
  double residual = 0.0;
  /// Marginal KL on a fresh set of draws.
  double marginal_kl_independent = 0.0;
  double rec = 0.0;
  /// Present when a data entropy was supplied: entropy - rec, a lower bound
  /// on the true mutual information.
  std::optional<double> mi_lower_bound;
};

DecompositionReport kl_decomposition_check(const Parameters& params, std::span<const EncodedSentence> sample,
                                           Rng& rng, std::optional<double> data_entropy = std::nullopt);

struct MetricsReport {
  double iw_nll = 0.0;  // mean per sentence
  double ppl = 0.0;
  double mi = 0.0;
  std::size_t au = 0;
  double neg_elbo = 0.0;
  double kl = 0.0;
  double rec = 0.0;
  std::size_t k_used = 0;
  std::size_t n_sentences = 0;
  std::size_t words = 0;
};

struct EvalOptions {
  std::size_t k = 50;
  double au_threshold = 0.01;
};

MetricsReport evaluate(const Parameters& params, std::span<const EncodedSentence> corpus, const EvalOptions& options,
                       Rng& rng);

std::string to_json(const MetricsReport& report);
/// Header and one row with the columns PPL, MI, AU, -ELBO, KL, Rec.
std::string format_table(const MetricsReport& report);

}  // namespace latentlm
