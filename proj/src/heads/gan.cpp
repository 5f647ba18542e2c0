#include "latentlm/heads/gan.hpp"

#include <cmath>
#include <string>

#include "latentlm/autodiff/ops.hpp"
#include "latentlm/errors.hpp"
#include "latentlm/latent/ops.hpp"

namespace latentlm {
namespace {

void set_trainable(Mlp& m, bool on) {
  for (Tensor* t : m.tensors()) t->set_requires_grad(on);
}

Tensor rows_tensor(std::span<const std::vector<double>> rows, std::size_t width) {
  std::vector<double> flat;
  flat.reserve(rows.size() * width);
  for (const auto& r : rows) {
    if (r.size() != width) throw ShapeError("latent width does not match the GAN");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), width}, std::move(flat));
}

std::vector<std::vector<double>> split_rows(std::span<const double> v, std::size_t width) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i + width <= v.size(); i += width) out.emplace_back(v.begin() + i, v.begin() + i + width);
  return out;
}

void check_label(int y, std::size_t classes) {
  if (y < 0 || static_cast<std::size_t>(y) >= classes)
    throw RangeError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor t({labels.size(), classes});
  for (std::size_t r = 0; r < labels.size(); ++r) {
    check_label(labels[r], classes);
    t.at(r, static_cast<std::size_t>(labels[r])) = 1.0;
  }
  return t;
}

Var discriminate(Tape& tape, const LatentGan& gan, Var z, std::span<const int> labels) {
  if (!gan.conditional_discriminator) return gan.discriminator.forward(tape, z);
  if (labels.size() != tape.rows(z)) throw ShapeError("a conditional discriminator needs one label per latent");
  return gan.discriminator.forward(tape, ops::concat_cols(z, tape.constant(one_hot(labels, gan.classes))));
}

Var generator_loss(Tape& tape, const LatentGan& gan, Var fake, std::span<const int> labels) {
  return ops::mean(ops::softplus(ops::scale(discriminate(tape, gan, fake, labels), -1.0)));
}

}  // namespace

Mlp Mlp::init(std::span<const std::size_t> widths, Rng& rng) {
  if (widths.size() < 2) throw ConfigError("an MLP needs an input and an output width");
  Mlp m;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    Tensor w({widths[i + 1], widths[i]});
    const double sd = 1.0 / std::sqrt(static_cast<double>(widths[i]));
    for (double& v : w.values()) v = sd * rng.normal();
    m.weights.push_back(std::move(w));
    m.biases.emplace_back(Shape{widths[i + 1]});
  }
  return m;
}

std::size_t Mlp::in_dim() const { return weights.front().cols(); }
std::size_t Mlp::out_dim() const { return weights.back().rows(); }

std::vector<Tensor*> Mlp::tensors() {
  std::vector<Tensor*> out;
  for (std::size_t i = 0; i < weights.size(); ++i) out.push_back(&weights[i]), out.push_back(&biases[i]);
  return out;
}

Var Mlp::forward(Tape& tape, Var x) const {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    x = ops::linear(x, tape.parameter(weights[i]), tape.parameter(biases[i]));
    if (i + 1 < weights.size()) x = ops::tanh(x);
  }
  return x;
}

LatentGan LatentGan::init(std::size_t latent, std::size_t classes, Rng& rng, std::size_t noise,
                          bool conditional_discriminator) {
  if (latent == 0) throw ConfigError("GAN latent size must be positive");
  if (classes < 1) throw ConfigError("GAN needs at least one class");
  LatentGan g;
  g.latent = latent;
  g.noise = noise == 0 ? latent : noise;
  g.classes = classes;
  g.conditional_discriminator = conditional_discriminator;
  const std::size_t hidden = 4 * latent;
  const std::size_t gw[] = {g.noise + classes, hidden, hidden, latent};
  const std::size_t dw[] = {latent + (conditional_discriminator ? classes : 0), hidden, hidden, 1};
  g.generator = Mlp::init(gw, rng);
  g.discriminator = Mlp::init(dw, rng);
  return g;
}

Tensor LatentGan::generator_input(std::span<const double> eps, std::span<const int> labels) const {
  if (eps.size() != labels.size() * noise) throw ShapeError("noise size does not match the label count");
  Tensor x({labels.size(), noise + classes});
  for (std::size_t r = 0; r < labels.size(); ++r) {
    check_label(labels[r], classes);
    for (std::size_t j = 0; j < noise; ++j) x.at(r, j) = eps[r * noise + j];
    x.at(r, noise + static_cast<std::size_t>(labels[r])) = 1.0;
  }
  return x;
}

std::vector<std::vector<double>> LatentGan::generate(std::span<const double> eps, std::span<const int> labels) const {
  if (labels.empty()) return {};
  Tape tape(Tape::Mode::kInference);
  const Var out = generator.forward(tape, tape.constant(generator_input(eps, labels)));
  return split_rows(tape.value(out), latent);
}

std::vector<double> LatentGan::logits(std::span<const std::vector<double>> z, std::span<const int> labels) const {
  if (z.empty()) return {};
  Tape tape(Tape::Mode::kInference);
  const Var out = discriminate(tape, *this, tape.constant(rows_tensor(z, latent)), labels);
  const auto v = tape.value(out);
  return {v.begin(), v.end()};
}

void GanConfig::validate() const {
  if (batch_size == 0) throw ConfigError("GAN batch_size must be positive");
  if (!(adam.lr > 0.0)) throw ConfigError("GAN learning rate must be positive");
}

Var discriminator_loss(Tape& tape, const LatentGan& gan, const Tensor& real, std::span<const int> real_labels,
                       const Tensor& fake, std::span<const int> fake_labels) {
  const Var real_logits = discriminate(tape, gan, tape.constant(real), real_labels);
  const Var fake_logits = discriminate(tape, gan, tape.constant(fake), fake_labels);
  // -log sigmoid(a) = softplus(-a); -log(1 - sigmoid(a)) = softplus(a).
  return ops::add(ops::mean(ops::softplus(ops::scale(real_logits, -1.0))), ops::mean(ops::softplus(fake_logits)));
}

double discriminator_step(LatentGan& gan, AdamState& state, const Tensor& real, const Tensor& fake,
                          std::span<const int> real_labels, std::span<const int> fake_labels) {
  auto params = gan.discriminator.tensors();
  set_trainable(gan.discriminator, true);
  for (Tensor* t : params) t->zero_grad();
  double value = 0.0;
  {
    Tape tape;
    const Var loss = discriminator_loss(tape, gan, real, real_labels, fake, fake_labels);
    tape.backward(loss);
    value = tape.scalar(loss);
  }
  adam_step(params, state);
  set_trainable(gan.discriminator, false);
  return value;
}

GanResult cgan_train(std::span<const std::vector<double>> latents, std::span<const int> labels, std::size_t classes,
                     const GanConfig& config, Rng& rng) {
  config.validate();
  if (latents.empty()) throw DataError("GAN training set is empty");
  if (labels.size() != latents.size()) throw ShapeError("one label per latent is required");
  for (int y : labels) check_label(y, classes);

  Rng init_rng = rng.fork(0);
  Rng data_rng = rng.fork(1);
  Rng noise_rng = rng.fork(2);
  GanResult result{LatentGan::init(latents[0].size(), classes, init_rng, config.noise,
                                            config.conditional_discriminator), {}};
  LatentGan& gan = result.gan;
  AdamState d_state(config.adam), g_state(config.adam);
  auto g_params = gan.generator.tensors();
  const std::size_t b = config.batch_size;

  try {
    for (std::size_t step = 0; step < config.steps; ++step) {
      std::vector<std::vector<double>> real_rows;
      std::vector<int> y;
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t idx = data_rng.below(latents.size());
        real_rows.push_back(latents[idx]);
        y.push_back(labels[idx]);
      }
      const Tensor real = rows_tensor(real_rows, gan.latent);
      std::vector<double> eps(b * gan.noise);
      noise_rng.fill_normal(eps);
      const Tensor fake = rows_tensor(gan.generate(eps, y), gan.latent);

      GanStep rec{step, discriminator_step(gan, d_state, real, fake, y, y), 0.0};

      noise_rng.fill_normal(eps);
      set_trainable(gan.generator, true);
      for (Tensor* t : g_params) t->zero_grad();
      {
        Tape tape;
        const Var fake_g = gan.generator.forward(tape, tape.constant(gan.generator_input(eps, y)));
        const Var loss = generator_loss(tape, gan, fake_g, y);
        tape.backward(loss);
        rec.g_loss = tape.scalar(loss);
      }
      adam_step(g_params, g_state);
      set_trainable(gan.generator, false);
      if (!std::isfinite(rec.d_loss) || !std::isfinite(rec.g_loss))
        throw NumericError("non-finite GAN loss");
      result.log.push_back(rec);
    }
  } catch (const NumericError& e) {
    set_trainable(gan.generator, false);
    set_trainable(gan.discriminator, false);
    throw DivergenceError("GAN training diverged at step " + std::to_string(result.log.size()) + ": " + e.what());
  }
  return result;
}

std::vector<GeneratedSentence> cgan_generate(const Model& model, const LatentGan& gan, int y, std::size_t n,
                                             Rng& rng) {
  check_label(y, gan.classes);
  if (gan.latent != model.params.config.latent) throw ShapeError("GAN latent size does not match the model");
  std::vector<double> eps(n * gan.noise);
  rng.fill_normal(eps);
  const std::vector<int> labels(n, y);
  std::vector<GeneratedSentence> out;
  for (auto& z : gan.generate(eps, labels)) {
    auto text = decode_latent(model, z);
    out.push_back({std::move(z), std::move(text)});
  }
  return out;
}

}  // namespace latentlm
