#pragma once

// Posterior-mean embedding, interpolation and vector arithmetic in the
// latent space. Every operation reads the model and never modifies it.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latentlm/autodiff/rng.hpp"
#include "latentlm/model/model.hpp"

namespace latentlm {

/// Decoding of a latent: greedy when temperature is zero, otherwise sampled
/// (which needs an Rng).
struct DecodeOptions {
  double temperature = 0.0;
  /// Use a posterior sample instead of the mean for encoded inputs.
  bool sample_posterior = false;
};

std::vector<double> embed_mean(const Model& model, std::string_view text);
std::vector<double> embed_mean(const Model& model, const EncodedSentence& sentence);

/// Throws ShapeError when z does not have P entries.
std::string decode_latent(const Model& model, std::span<const double> z);
std::string decode_latent(const Model& model, std::span<const double> z, const DecodeOptions& options,
                          Rng* rng);

/// z1 * (1 - tau) + z2 * tau.
std::vector<double> lerp_latent(std::span<const double> z1, std::span<const double> z2, double tau);
/// z_b - z_a + z_c, exact whenever two of the terms cancel.
std::vector<double> arithmetic_latent(std::span<const double> z_a, std::span<const double> z_b,
                                      std::span<const double> z_c);

struct InterpolationResult {
  std::vector<double> taus;
  std::vector<std::vector<double>> latents;
  std::vector<std::string> sentences;
};

/// tau_j = j / (n_steps - 1). Throws RangeError for n_steps < 2.
InterpolationResult interpolate(const Model& model, std::string_view x1, std::string_view x2,
                                std::size_t n_steps = 11);
InterpolationResult interpolate(const Model& model, std::string_view x1, std::string_view x2,
                                std::size_t n_steps, const DecodeOptions& options, Rng* rng);

struct ArithmeticResult {
  std::vector<double> z_d;
  std::string sentence;
};

ArithmeticResult arithmetic(const Model& model, std::string_view x_a, std::string_view x_b,
                            std::string_view x_c);
ArithmeticResult arithmetic(const Model& model, std::string_view x_a, std::string_view x_b,
                            std::string_view x_c, const DecodeOptions& options, Rng* rng);

}  // namespace latentlm
