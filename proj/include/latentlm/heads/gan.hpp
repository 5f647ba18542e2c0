#pragma once

// Conditional GAN on a frozen latent space.
//   G: [eps (P_noise), one-hot y (K)] -> 4P -> 4P -> P, tanh hidden units
//   D: z (P) -> 4P -> 4P -> logit
// D maximizes E[log D(z_real)] + E[log(1 - D(G(eps, y)))]; G minimizes the
// non-saturating -E[log D(G(eps, y))].
//
// By default D sees only z. A label-blind D constrains nothing but the
// marginal of G's output, so which class G produces for a given y is left
// to chance. With `conditional_discriminator` D reads [z, one-hot(y)]
// instead, the usual conditional GAN form.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "latentlm/autodiff/adam.hpp"
#include "latentlm/autodiff/rng.hpp"
#include "latentlm/autodiff/tape.hpp"
#include "latentlm/model/model.hpp"

namespace latentlm {

struct Mlp {
  std::vector<Tensor> weights;  // [out, in]
  std::vector<Tensor> biases;

  /// Normal(0, 1/in) weights and zero biases.
  static Mlp init(std::span<const std::size_t> widths, Rng& rng);
  std::size_t in_dim() const;
  std::size_t out_dim() const;
  std::vector<Tensor*> tensors();
  /// tanh after every layer but the last.
  Var forward(Tape& tape, Var x) const;
};

struct LatentGan {
  std::size_t latent = 0;
  std::size_t noise = 0;
  std::size_t classes = 0;
  bool conditional_discriminator = false;
  Mlp generator;
  Mlp discriminator;

  static LatentGan init(std::size_t latent, std::size_t classes, Rng& rng, std::size_t noise = 0,
                        bool conditional_discriminator = false);

  /// [n, noise + classes] rows of eps followed by one-hot(y).
  Tensor generator_input(std::span<const double> eps, std::span<const int> labels) const;
  /// G(eps, y) for each row; eps holds n * noise values.
  std::vector<std::vector<double>> generate(std::span<const double> eps, std::span<const int> labels) const;
  /// D logits for each latent; labels are read only by a conditional D.
  std::vector<double> logits(std::span<const std::vector<double>> z, std::span<const int> labels = {}) const;
};

struct GanConfig {
  std::size_t steps = 3000;
  std::size_t batch_size = 64;
  AdamHyper adam{1e-3, 0.5, 0.999, 1e-8};
  std::size_t noise = 0;  // 0 means P
  bool conditional_discriminator = false;

  void validate() const;
};

struct GanStep {
  std::size_t step = 0;
  /// -(E[log D(real)] + E[log(1 - D(fake))]); 2 ln 2 at equilibrium.
  double d_loss = 0.0;
  /// -E[log D(fake)].
  double g_loss = 0.0;
};

struct GanResult {
  LatentGan gan;
  std::vector<GanStep> log;
};

/// D objective on a batch of real and generated latents (tape form, for
/// tests and custom loops).
/// Labels are read only by a conditional D.
Var discriminator_loss(Tape& tape, const LatentGan& gan, const Tensor& real, std::span<const int> real_labels,
                       const Tensor& fake, std::span<const int> fake_labels);

/// One Adam step of D on the given real and fake batches; returns the loss.
double discriminator_step(LatentGan& gan, AdamState& state, const Tensor& real, const Tensor& fake,
                          std::span<const int> real_labels = {}, std::span<const int> fake_labels = {});

/// Alternating D/G updates. Throws DivergenceError on a non-finite loss and
/// RangeError on a label outside [0, classes).
GanResult cgan_train(std::span<const std::vector<double>> latents, std::span<const int> labels, std::size_t classes,
                     const GanConfig& config, Rng& rng);

struct GeneratedSentence {
  std::vector<double> z;
  std::string text;
};

/// n latents from G for label y, each decoded greedily.
std::vector<GeneratedSentence> cgan_generate(const Model& model, const LatentGan& gan, int y, std::size_t n,
                                             Rng& rng);

}  // namespace latentlm
