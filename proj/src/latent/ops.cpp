#include "latentlm/latent/ops.hpp"

#include <string>

#include "latentlm/errors.hpp"
#include "latentlm/model/transformer.hpp"
#include "latentlm/objective/vae.hpp"

namespace latentlm {
namespace {

std::vector<double> embed(const Model& model, std::string_view text, const DecodeOptions& options, Rng* rng) {
  const auto post = encode(model.params, encode_text(model, text).encoder_view);
  if (!options.sample_posterior) return post.mu;
  if (rng == nullptr) throw ConfigError("posterior sampling needs a random generator");
  return reparameterize(post.mu, post.logvar, *rng);
}

void check_latent(const Model& model, std::span<const double> z) {
  if (z.size() != model.params.config.latent)
    throw ShapeError("latent has " + std::to_string(z.size()) + " entries; the model expects " +
                     std::to_string(model.params.config.latent));
}

}  // namespace

std::vector<double> embed_mean(const Model& model, std::string_view text) {
  return embed_mean(model, encode_text(model, text));
}

std::vector<double> embed_mean(const Model& model, const EncodedSentence& sentence) {
  return encode(model.params, sentence.encoder_view).mu;
}

std::string decode_latent(const Model& model, std::span<const double> z) {
  return decode_latent(model, z, DecodeOptions{}, nullptr);
}

std::string decode_latent(const Model& model, std::span<const double> z, const DecodeOptions& options, Rng* rng) {
  check_latent(model, z);
  const auto injection = build_injection(model.params, z);
  const std::size_t max_len = model.params.config.max_len;
  if (options.temperature == 0.0) return model.vocab.decode(decode_greedy(model.params, injection, max_len));
  if (rng == nullptr) throw ConfigError("temperature sampling needs a random generator");
  return model.vocab.decode(decode_sample(model.params, injection, options.temperature, *rng, max_len));
}

std::vector<double> lerp_latent(std::span<const double> z1, std::span<const double> z2, double tau) {
  if (z1.size() != z2.size()) throw ShapeError("interpolation endpoints differ in size");
  std::vector<double> out(z1.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = z1[i] * (1.0 - tau) + z2[i] * tau;
  return out;
}

std::vector<double> arithmetic_latent(std::span<const double> z_a, std::span<const double> z_b,
                                      std::span<const double> z_c) {
  if (z_a.size() != z_b.size() || z_a.size() != z_c.size()) throw ShapeError("arithmetic operands differ in size");
  std::vector<double> out(z_a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (z_a[i] == z_c[i])
      out[i] = z_b[i];
    else if (z_a[i] == z_b[i])
      out[i] = z_c[i];
    else
      out[i] = z_b[i] - z_a[i] + z_c[i];
  }
  return out;
}

InterpolationResult interpolate(const Model& model, std::string_view x1, std::string_view x2, std::size_t n_steps) {
  return interpolate(model, x1, x2, n_steps, DecodeOptions{}, nullptr);
}

InterpolationResult interpolate(const Model& model, std::string_view x1, std::string_view x2, std::size_t n_steps,
                                const DecodeOptions& options, Rng* rng) {
  if (n_steps < 2) throw RangeError("interpolation needs at least two steps");
  const auto z1 = embed(model, x1, options, rng);
  const auto z2 = embed(model, x2, options, rng);
  InterpolationResult r;
  for (std::size_t j = 0; j < n_steps; ++j) {
    const double tau = static_cast<double>(j) / static_cast<double>(n_steps - 1);
    r.taus.push_back(tau);
    r.latents.push_back(lerp_latent(z1, z2, tau));
    r.sentences.push_back(decode_latent(model, r.latents.back(), options, rng));
  }
  return r;
}

ArithmeticResult arithmetic(const Model& model, std::string_view x_a, std::string_view x_b, std::string_view x_c) {
  return arithmetic(model, x_a, x_b, x_c, DecodeOptions{}, nullptr);
}

ArithmeticResult arithmetic(const Model& model, std::string_view x_a, std::string_view x_b, std::string_view x_c,
                            const DecodeOptions& options, Rng* rng) {
  const auto z_a = embed(model, x_a, options, rng);
  const auto z_b = embed(model, x_b, options, rng);
  const auto z_c = embed(model, x_c, options, rng);
  ArithmeticResult r;
  r.z_d = arithmetic_latent(z_a, z_b, z_c);
  r.sentence = decode_latent(model, r.z_d, options, rng);
  return r;
}

}  // namespace latentlm
