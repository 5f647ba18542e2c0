#pragma once

// Beta-VAE objective with the free-bits hinge, the cyclical beta schedule and
// the AE/VAE training loop.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "latentlm/autodiff/adam.hpp"
#include "latentlm/autodiff/rng.hpp"
#include "latentlm/autodiff/tape.hpp"
#include "latentlm/model/parameters.hpp"
#include "latentlm/text/corpus.hpp"

namespace latentlm {

/// Per-dimension KL(N(mu, exp(logvar)) || N(0, I)). Throws NumericError on
/// non-finite input.
std::vector<double> gaussian_kl(std::span<const double> mu, std::span<const double> logvar);
/// z = mu + exp(logvar / 2) * eps with eps ~ N(0, I) drawn from rng.
std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> logvar, Rng& rng);
/// sum_i max(lambda, kl_i). Throws RangeError for negative lambda.
double hinged_kl(std::span<const double> kl_per_dim, double lambda);

enum class ScheduleKind { kCyclical, kConstant };

std::string_view to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(std::string_view s);

struct BetaSchedule {
  ScheduleKind kind = ScheduleKind::kCyclical;
  std::size_t n_cycles = 10;
  double ae_fraction = 0.5;
  double ramp_fraction = 0.25;
  double hold_fraction = 0.25;
  std::size_t total_steps = 0;
  double beta_max = 1.0;

  /// Throws ConfigError when the fractions do not sum to 1 or are negative,
  /// or n_cycles is zero, or beta_max is negative.
  void validate() const;
};

/// Cyclical: with C = floor(total_steps / n_cycles) and offset o in the cycle,
/// beta is 0 for o < ae*C, ramps linearly to beta_max over ramp*C steps and
/// holds beta_max afterwards; steps past n_cycles*C hold beta_max. Constant:
/// beta_max everywhere. Throws RangeError for step >= total_steps.
double beta_at(std::size_t step, const BetaSchedule& schedule);

struct LossBreakdown {
  double recon = 0.0;            // token NLL summed per sentence, averaged over the batch
  double recon_per_token = 0.0;  // token NLL averaged over predicted tokens
  std::vector<double> kl_per_dim;
  double kl_raw = 0.0;
  double kl_hinged = 0.0;
  double beta = 0.0;
  double total = 0.0;
  std::size_t tokens = 0;
};

struct LossVars {
  Var total;
  Var mu;
  Var logvar;
  LossBreakdown values;
};

/// Builds the loss for a batch on `tape`: one eps sample per sentence from
/// rng, teacher-forced reconstruction, KL averaged per sentence and hinged
/// only when beta > 0 (total is recon itself when beta == 0). Numeric
/// failures are rethrown as NumericError naming the component.
LossVars compute_loss(Tape& tape, const Parameters& params, std::span<const EncodedSentence* const> batch,
                      double beta, double lambda, Rng& rng);
/// Value-only variant on an inference tape.
LossBreakdown compute_loss(const Parameters& params, std::span<const EncodedSentence* const> batch, double beta,
                           double lambda, Rng& rng);

enum class Objective { kAE, kVAE };

std::string_view to_string(Objective o);
Objective objective_from_string(std::string_view s);

struct TrainConfig {
  Objective objective = Objective::kVAE;
  double lambda = 0.5;
  BetaSchedule schedule;
  AdamHyper adam;
  double grad_clip = 1.0;  // 0 disables clipping
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  /// When nonzero, overrides epochs * batches_per_epoch.
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  /// Runs on the scalar reference kernels so results do not depend on the
  /// host's instruction set.
  bool strict = false;
  std::size_t log_every = 1;
  std::size_t eval_every = 0;

  /// Throws ConfigError.
  void validate() const;
  std::size_t total_steps(std::size_t corpus_size) const;
};

struct StepRecord {
  std::size_t step = 0;
  LossBreakdown loss;
};

struct TrainHooks {
  /// Receives every logged step.
  std::function<void(const StepRecord&)> on_step;
  /// Called every eval_every steps and after the last step.
  std::function<void(std::size_t step, const Parameters&)> on_eval;
};

struct TrainResult {
  std::size_t steps = 0;
  std::vector<StepRecord> log;
};

/// Tensors the objective updates: everything except the classifier head and
/// injection weights the configured mode does not use.
std::vector<Tensor*> trainable_tensors(Parameters& params);

/// Trains in place. AE forces beta = 0. Deterministic under config.seed.
/// Throws DivergenceError on a non-finite loss or gradient.
TrainResult train(const TrainConfig& config, std::span<const EncodedSentence> corpus, Parameters& params,
                  const TrainHooks& hooks = {});

/// One newline-terminated JSON record {step, beta, recon, kl_raw, kl_hinged, total}.
void write_metrics_line(std::ostream& out, const StepRecord& record);

}  // namespace latentlm
