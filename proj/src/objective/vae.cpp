#include "latentlm/objective/vae.hpp"

#include <cmath>
#include <numeric>
#include <ostream>
#include <string>

#include "json.hpp"

#include "latentlm/autodiff/ops.hpp"
#include "latentlm/errors.hpp"
#include "latentlm/model/transformer.hpp"
#include "latentlm/simd/kernels.hpp"

namespace latentlm {

std::vector<double> gaussian_kl(std::span<const double> mu, std::span<const double> logvar) {
  if (mu.size() != logvar.size()) throw ShapeError("gaussian_kl: mu and logvar lengths differ");
  check_finite(mu, "gaussian_kl mu");
  check_finite(logvar, "gaussian_kl logvar");
  std::vector<double> kl(mu.size());
  for (std::size_t i = 0; i < kl.size(); ++i)
    kl[i] = 0.5 * (mu[i] * mu[i] + std::max(0.0, std::expm1(logvar[i]) - logvar[i]));
  return kl;
}

std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> logvar, Rng& rng) {
  if (mu.size() != logvar.size()) throw ShapeError("reparameterize: mu and logvar lengths differ");
  std::vector<double> z(mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = mu[i] + std::exp(0.5 * logvar[i]) * rng.normal();
  return z;
}

double hinged_kl(std::span<const double> kl_per_dim, double lambda) {
  if (lambda < 0.0) throw RangeError("hinged_kl: lambda must be nonnegative");
  double s = 0.0;
  for (double v : kl_per_dim) s += std::max(lambda, v);
  return s;
}

std::string_view to_string(ScheduleKind kind) { return kind == ScheduleKind::kCyclical ? "cyclical" : "constant"; }

ScheduleKind schedule_kind_from_string(std::string_view s) {
  if (s == "cyclical") return ScheduleKind::kCyclical;
  if (s == "constant") return ScheduleKind::kConstant;
  throw ConfigError("unknown beta schedule '" + std::string(s) + "'");
}

void BetaSchedule::validate() const {
  if (n_cycles == 0) throw ConfigError("schedule: n_cycles must be positive");
  if (ae_fraction < 0 || ramp_fraction < 0 || hold_fraction < 0)
    throw ConfigError("schedule: stage fractions must be nonnegative");
  if (std::abs(ae_fraction + ramp_fraction + hold_fraction - 1.0) > 1e-12)
    throw ConfigError("schedule: stage fractions must sum to 1");
  if (!(beta_max >= 0.0) || !std::isfinite(beta_max)) throw ConfigError("schedule: beta_max must be finite and >= 0");
}

double beta_at(std::size_t step, const BetaSchedule& s) {
  if (step >= s.total_steps)
    throw RangeError("beta_at: step " + std::to_string(step) + " outside [0, " + std::to_string(s.total_steps) + ")");
  if (s.kind == ScheduleKind::kConstant) return s.beta_max;
  const std::size_t cycle = s.total_steps / s.n_cycles;
  if (cycle == 0 || step >= cycle * s.n_cycles) return s.beta_max;
  const double c = static_cast<double>(cycle);
  const double o = static_cast<double>(step % cycle);
  const double ramp_start = s.ae_fraction * c;
  const double ramp_len = s.ramp_fraction * c;
  if (o < ramp_start) return 0.0;
  if (o < ramp_start + ramp_len) return (o - ramp_start) / ramp_len * s.beta_max;
  return s.beta_max;
}

namespace {

template <typename F>
auto named_component(const char* name, F&& f) {
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError(std::string(name) + ": " + e.what());
  }
}

}  // namespace

LossVars compute_loss(Tape& t, const Parameters& params, std::span<const EncodedSentence* const> batch, double beta,
                      double lambda, Rng& rng) {
  if (batch.empty()) throw ShapeError("compute_loss: empty batch");
  if (lambda < 0.0) throw RangeError("compute_loss: lambda must be nonnegative");
  const ModelConfig& c = params.config;
  const std::size_t b = batch.size();

  std::vector<std::span<const int>> enc, dec;
  std::vector<int> targets;
  for (const EncodedSentence* s : batch) {
    if (s->decoder_view.size() < 2) throw ShapeError("compute_loss: decoder view needs [BOS] and [EOS]");
    enc.emplace_back(s->encoder_view);
    dec.emplace_back(s->decoder_view.data(), s->decoder_view.size() - 1);
    targets.insert(targets.end(), s->decoder_view.begin() + 1, s->decoder_view.end());
  }
  Tensor eps({b, c.latent});
  rng.fill_normal(eps.values());

  const auto post = named_component("encoder", [&] { return encode(t, params, pack_sequences(enc, c.max_len)); });
  const Var z = named_component("reparameterize", [&] { return ops::reparameterize(post.mu, post.logvar, eps); });
  const Var ce = named_component("reconstruction", [&] {
    const auto inj = build_injection(t, params, z);
    return ops::cross_entropy(decoder_forward(t, params, pack_sequences(dec, c.max_len), inj), targets, -1);
  });
  const double tokens = static_cast<double>(targets.size());
  const Var recon = ops::scale(ce, tokens / static_cast<double>(b));

  LossVars out;
  out.mu = post.mu;
  out.logvar = post.logvar;
  named_component("kl", [&] {
    const Var kl = ops::mean_rows(ops::gaussian_kl(post.mu, post.logvar));
    const Var hinged = ops::hinge_sum(kl, lambda);
    out.total = beta > 0.0 ? ops::add(recon, ops::scale(hinged, beta)) : recon;
    const auto kv = t.value(kl);
    out.values.kl_per_dim.assign(kv.begin(), kv.end());
    out.values.kl_raw = t.scalar(ops::sum(kl));
    out.values.kl_hinged = t.scalar(hinged);
    return 0;
  });
  out.values.recon = t.scalar(recon);
  out.values.recon_per_token = t.scalar(ce);
  out.values.beta = beta;
  out.values.total = t.scalar(out.total);
  out.values.tokens = targets.size();
  return out;
}

LossBreakdown compute_loss(const Parameters& params, std::span<const EncodedSentence* const> batch, double beta,
                           double lambda, Rng& rng) {
  Tape t(Tape::Mode::kInference);
  return compute_loss(t, params, batch, beta, lambda, rng).values;
}

std::string_view to_string(Objective o) { return o == Objective::kAE ? "ae" : "vae"; }

Objective objective_from_string(std::string_view s) {
  if (s == "ae") return Objective::kAE;
  if (s == "vae") return Objective::kVAE;
  throw ConfigError("unknown objective '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0");
  schedule.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("adam eps must be positive");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  if (log_every == 0) throw ConfigError("log_every must be positive");
}

std::size_t TrainConfig::total_steps(std::size_t corpus_size) const {
  if (steps > 0) return steps;
  return epochs * ((corpus_size + batch_size - 1) / batch_size);
}

std::vector<Tensor*> trainable_tensors(Parameters& params) {
  std::vector<Tensor*> out;
  const InjectionMode mode = params.config.injection;
  for (auto& [name, t] : params.named()) {
    if (name == "head.w_c") continue;
    if (name == "latent.w_m" && !uses_memory(mode)) continue;
    if (name == "latent.w_d" && !uses_embedding(mode)) continue;
    out.push_back(t);
  }
  return out;
}

namespace {

class KernelScope {
 public:
  explicit KernelScope(bool scalar) : previous_(simd::active().isa), changed_(scalar) {
    if (changed_) simd::select(simd::Isa::kScalar);
  }
  ~KernelScope() {
    if (changed_) simd::select(previous_);
  }
  KernelScope(const KernelScope&) = delete;
  KernelScope& operator=(const KernelScope&) = delete;

 private:
  simd::Isa previous_;
  bool changed_;
};

}  // namespace

TrainResult train(const TrainConfig& config, std::span<const EncodedSentence> corpus, Parameters& params,
                  const TrainHooks& hooks) {
  config.validate();
  if (corpus.empty()) throw ConfigError("training corpus is empty");
  const KernelScope kernels(config.strict);

  const std::size_t total = config.total_steps(corpus.size());
  BetaSchedule schedule = config.schedule;
  schedule.total_steps = total;

  const Rng root(config.seed);
  const Rng data_root = root.fork(1);
  Rng noise = root.fork(2);

  std::vector<Tensor*> trainable = trainable_tensors(params);
  for (Tensor* t : trainable) t->set_requires_grad(true);
  AdamState adam(config.adam);

  std::vector<std::size_t> order(corpus.size());
  std::size_t epoch = 0, cursor = order.size();
  auto next_batch = [&]() {
    if (cursor >= order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng shuffle = data_root.fork(epoch++);
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
      cursor = 0;
    }
    const std::size_t end = std::min(order.size(), cursor + config.batch_size);
    std::vector<const EncodedSentence*> batch;
    for (std::size_t i = cursor; i < end; ++i) batch.push_back(&corpus[order[i]]);
    cursor = end;
    return batch;
  };

  TrainResult result;
  for (std::size_t step = 0; step < total; ++step) {
    const double beta = config.objective == Objective::kAE ? 0.0 : beta_at(step, schedule);
    const auto batch = next_batch();
    for (Tensor* t : trainable) t->zero_grad();
    LossBreakdown values;
    try {
      Tape tape;
      const LossVars loss = compute_loss(tape, params, batch, beta, config.lambda, noise);
      values = loss.values;
      tape.backward(loss.total);
      for (Tensor* t : trainable) check_finite(t->grad(), "gradient");
    } catch (const NumericError& e) {
      for (Tensor* t : trainable) t->set_requires_grad(false);
      throw DivergenceError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    if (config.grad_clip > 0.0) clip_grad_norm(trainable, config.grad_clip);
    adam_step(trainable, adam);
    result.steps = step + 1;

    if (step % config.log_every == 0 || step + 1 == total) {
      StepRecord rec{step, std::move(values)};
      if (hooks.on_step) hooks.on_step(rec);
      result.log.push_back(std::move(rec));
    }
    if (hooks.on_eval && ((config.eval_every > 0 && (step + 1) % config.eval_every == 0) || step + 1 == total))
      hooks.on_eval(step + 1, params);
  }
  for (Tensor* t : trainable) t->set_requires_grad(false);
  return result;
}

void write_metrics_line(std::ostream& out, const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["beta"] = r.loss.beta;
  j["recon"] = r.loss.recon;
  j["kl_raw"] = r.loss.kl_raw;
  j["kl_hinged"] = r.loss.kl_hinged;
  j["total"] = r.loss.total;
  out << j.dump() << '\n';
}

}  // namespace latentlm
