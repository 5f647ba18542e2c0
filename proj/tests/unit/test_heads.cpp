#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "latentlm/errors.hpp"
#include "latentlm/heads/classifier.hpp"
#include "latentlm/heads/features.hpp"
#include "latentlm/heads/gan.hpp"
#include "latentlm/text/synth.hpp"
#include "reference_model.hpp"

using namespace latentlm;
namespace ref = latentlm::testing::reference;

namespace {

struct Fixture {
  Model model;
  std::vector<EncodedSentence> sentences;

  Fixture(std::uint64_t seed, std::size_t n, std::size_t hidden = 8, std::size_t latent = 4) {
    const auto labeled = synth_labeled(seed, n, "sentiment");
    std::vector<std::string> lines;
    for (const auto& s : labeled) lines.push_back(s.text);
    model.vocab = build_vocab(lines, 64, TokenizerKind::kWhitespace);
    ModelConfig c;
    c.layers = 1;
    c.hidden = hidden;
    c.heads = 2;
    c.latent = latent;
    c.max_len = 10;
    c.ffn_mult = 2;
    c.enc_vocab = c.dec_vocab = model.vocab.size();
    model.params = Parameters::init(c, Rng(seed));
    Rng r(seed, 11);
    for (auto& [name, t] : model.params.named())
      for (double& v : t->values()) v += 0.3 * r.normal();
    for (const auto& s : labeled) {
      sentences.push_back(encode_text(model, s.text));
      sentences.back().label = s.label;
    }
  }
};

std::filesystem::path temp_path(const char* name) {
  return std::filesystem::temp_directory_path() / (std::string("latentlm_heads_") + name);
}

}  // namespace

TEST_CASE("classifier loss is cross entropy of h_cls W_C^T") {
  Fixture f(1, 6);
  attach_classifier(f.model.params, 3);
  Rng r(2);
  for (double& v : f.model.params.w_c.values()) v = r.normal();
  std::vector<std::span<const int>> views;
  std::vector<int> labels{0, 2, 1, 1, 0, 2};
  for (const auto& s : f.sentences) views.emplace_back(s.encoder_view);
  Tape tape;
  const double got = tape.scalar(classifier_loss(tape, f.model.params, pack_sequences(views, 10), labels));
  double want = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto h = ref::encode(f.model.params, f.sentences[i].encoder_view).h_cls;
    std::vector<double> logit(3, 0.0);
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t j = 0; j < h.size(); ++j) logit[k] += f.model.params.w_c.at(k, j) * h[j];
    double z = 0.0;
    for (double v : logit) z += std::exp(v);
    want += -(logit[static_cast<std::size_t>(labels[i])] - std::log(z));
  }
  CHECK(got == doctest::Approx(want / 6).epsilon(1e-12));
}

TEST_CASE("classifier gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Fixture f(10 + seed, 5);
    attach_classifier(f.model.params, 2);
    Rng r(seed);
    for (double& v : f.model.params.w_c.values()) v = r.normal();
    std::vector<std::span<const int>> views;
    for (const auto& s : f.sentences) views.emplace_back(s.encoder_view);
    const auto packed = pack_sequences(views, 10);
    const std::vector<int> labels{0, 1, 1, 0, 1};
    auto& p = f.model.params;
    const auto res = testing::grad_check({&p.w_c, &p.enc_tok, &p.enc_blocks[0].w1, &p.enc_ln_gain},
                                         [&](Tape& t) { return classifier_loss(t, p, packed, labels); });
    CHECK(res.ok());
    p.set_requires_grad(false);
  }
}

TEST_CASE("classifier training: single class, separable features, errors") {
  ClassifierConfig cfg;
  Rng rng(1);
  std::vector<std::vector<double>> feats;
  std::vector<int> labels;
  Rng data(5);
  // The head has no bias, so one class can win everywhere only when the
  // features share a half-space, as the encoder's [CLS] states do.
  for (int i = 0; i < 40; ++i) {
    std::vector<double> x(6);
    for (double& v : x) v = data.normal();
    x[0] += 4.0;
    feats.push_back(x);
    labels.push_back(0);
  }
  Tensor w;
  train_linear_head(w, feats, labels, cfg, rng);
  CHECK(accuracy(predict_features(w, feats), labels) == 1.0);

  // Separable through a random hyperplane with margin.
  Rng plane_rng(6);
  std::vector<double> normal(6);
  for (double& v : normal) v = plane_rng.normal();
  feats.clear(), labels.clear();
  while (feats.size() < 200) {
    std::vector<double> x(6);
    for (double& v : x) v = data.normal();
    const double s = std::inner_product(x.begin(), x.end(), normal.begin(), 0.0);
    if (std::abs(s) < 0.2) continue;
    feats.push_back(x);
    labels.push_back(s > 0);
  }
  Tensor w2;
  const auto log = train_linear_head(w2, feats, labels, cfg, rng);
  CHECK(log.epoch_loss.size() == 100);
  CHECK(accuracy(predict_features(w2, feats), labels) == 1.0);

  labels[3] = 2;
  CHECK_THROWS_AS(train_linear_head(w2, feats, labels, cfg, rng), RangeError);
  CHECK_THROWS_AS(train_linear_head(w2, std::span<const std::vector<double>>{}, std::span<const int>{}, cfg, rng),
                  DataError);
}

TEST_CASE("feature-based training never writes the backbone; fine-tuning does") {
  Fixture f(3, 24);
  const auto before = f.model.params.backbone_checksum();
  ClassifierConfig cfg;
  cfg.epochs = 5;
  Rng rng(1);
  Parameters frozen = f.model.params;
  train_classifier(frozen, f.sentences, cfg, rng);
  CHECK(frozen.backbone_checksum() == before);
  CHECK(frozen.w_c.rows() == 2);
  CHECK(frozen.w_c.cols() == 8);
  CHECK(frozen.checksum() != f.model.params.checksum());

  cfg.mode = HeadMode::kFineTune;
  Parameters tuned = f.model.params;
  train_classifier(tuned, f.sentences, cfg, rng);
  CHECK(tuned.backbone_checksum() != before);
  // Only the encoder moves.
  CHECK(tuned.w_out.values()[0] == f.model.params.w_out.values()[0]);
  CHECK(std::equal(tuned.dec_tok.values().begin(), tuned.dec_tok.values().end(),
                   f.model.params.dec_tok.values().begin()));

  auto bad = f.sentences;
  bad[0].label = 5;
  CHECK_THROWS_AS(train_classifier(frozen, bad, cfg, rng), RangeError);
  CHECK_THROWS_AS(train_classifier(frozen, std::span<const EncodedSentence>{}, cfg, rng), DataError);
}

TEST_CASE("few-shot protocol: defaults, chance level on label-free features, determinism") {
  FewShotConfig defaults;
  CHECK(defaults.sizes == std::vector<std::size_t>{1, 10, 100, 1000});
  CHECK(defaults.trials == 10);
  CHECK(defaults.classifier.epochs == 100);

  Fixture f(4, 4000);
  // Labels independent of the text: the best possible accuracy is chance.
  Rng label_rng(9);
  std::vector<EncodedSentence> pool, test;
  for (std::size_t i = 0; i < f.sentences.size(); ++i) {
    auto s = f.sentences[i];
    s.label = static_cast<int>(label_rng.below(2));
    (i < 2400 ? pool : test).push_back(std::move(s));
  }
  std::size_t per_class[2] = {0, 0};
  for (const auto& s : pool) ++per_class[s.label];
  REQUIRE(std::min(per_class[0], per_class[1]) >= 1000);

  Rng rng(3);
  const auto rows = few_shot_protocol(f.model.params, pool, test, defaults, rng);
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) {
    CHECK(r.accuracies.size() == 10);
    CHECK(std::abs(r.mean - 0.5) <= 0.05);
  }
  FewShotConfig small;
  small.sizes = {1, 10};
  small.trials = 3;
  Rng a(7), b(7);
  const auto r1 = few_shot_protocol(f.model.params, pool, test, small, a);
  const auto r2 = few_shot_protocol(f.model.params, pool, test, small, b);
  CHECK(r1[1].accuracies == r2[1].accuracies);

  std::vector<EncodedSentence> tiny(pool.begin(), pool.begin() + 12);
  Rng c(1);
  CHECK_THROWS_AS(few_shot_protocol(f.model.params, tiny, test, small, c), DataError);
}

TEST_CASE("GAN shapes and label checks") {
  Rng rng(1);
  const auto gan = LatentGan::init(5, 3, rng);
  CHECK(gan.noise == 5);
  CHECK(gan.generator.in_dim() == 8);
  CHECK(gan.generator.out_dim() == 5);
  CHECK(gan.discriminator.in_dim() == 5);
  CHECK(!gan.conditional_discriminator);
  CHECK(LatentGan::init(5, 3, rng, 0, true).discriminator.in_dim() == 8);
  CHECK(gan.discriminator.out_dim() == 1);
  CHECK(gan.generator.weights[0].rows() == 20);
  CHECK(gan.generator.weights.size() == 3);
  std::vector<double> eps(10, 0.1);
  const std::vector<int> y{0, 2};
  const auto z = gan.generate(eps, y);
  REQUIRE(z.size() == 2);
  CHECK(z[0].size() == 5);
  const std::vector<int> bad{0, 3};
  CHECK_THROWS_AS(gan.generate(eps, bad), RangeError);
  // A label-blind discriminator never reads the labels.
  const std::vector<int> y2{1, 1};
  CHECK(gan.logits(z, y) == gan.logits(z, y2));
  CHECK(gan.logits(z) == gan.logits(z, y));
}

TEST_CASE("discriminator facing the true sampler converges to the equilibrium loss 2 ln 2") {
  Rng rng(2);
  auto gan = LatentGan::init(4, 2, rng);
  AdamState state(AdamHyper{1e-3, 0.5, 0.999, 1e-8});
  Rng data(3);
  auto draw = [&] {
    Tensor t({128, 4});
    data.fill_normal(t.values());
    return t;
  };
  double tail = 0.0;
  for (int step = 0; step < 600; ++step) {
    const double loss = discriminator_step(gan, state, draw(), draw());
    if (step >= 500) tail += loss / 100;
  }
  CHECK(std::abs(tail - 2 * std::log(2.0)) < 0.03);
  std::vector<std::vector<double>> probe;
  for (int i = 0; i < 500; ++i) {
    std::vector<double> z(4);
    data.fill_normal(z);
    probe.push_back(z);
  }
  double mean_abs = 0.0;
  for (double l : gan.logits(probe)) mean_abs += std::abs(l) / 500;
  CHECK(mean_abs < 0.2);
}

TEST_CASE("conditional GAN separates two Gaussian classes") {
  Rng data(4);
  const std::vector<double> c0{3, 0, 0, 0}, c1{-3, 0, 0, 0};
  std::vector<std::vector<double>> latents;
  std::vector<int> labels;
  for (int i = 0; i < 2000; ++i) {
    const int y = i % 2;
    std::vector<double> z(4);
    for (std::size_t d = 0; d < 4; ++d) z[d] = (y ? c1 : c0)[d] + 0.5 * data.normal();
    latents.push_back(z);
    labels.push_back(y);
  }
  GanConfig cfg;
  cfg.steps = 1500;
  cfg.conditional_discriminator = true;
  Rng rng(5);
  const auto result = cgan_train(latents, labels, 2, cfg, rng);
  CHECK(result.log.size() == 1500);
  std::size_t near = 0, total = 0;
  Rng eps_rng(6);
  for (int y = 0; y < 2; ++y) {
    std::vector<double> eps(200 * 4);
    eps_rng.fill_normal(eps);
    const auto z = result.gan.generate(eps, std::vector<int>(200, y));
    for (const auto& v : z) {
      double d0 = 0.0, d1 = 0.0;
      for (std::size_t d = 0; d < 4; ++d) d0 += (v[d] - c0[d]) * (v[d] - c0[d]), d1 += (v[d] - c1[d]) * (v[d] - c1[d]);
      near += (y == 0) == (d0 < d1);
      ++total;
    }
  }
  CHECK(static_cast<double>(near) / static_cast<double>(total) >= 0.95);

  GanConfig shortcfg;
  shortcfg.steps = 20;
  Rng a(8), b(8);
  const auto ra = cgan_train(latents, labels, 2, shortcfg, a);
  const auto rb = cgan_train(latents, labels, 2, shortcfg, b);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(ra.log[i].d_loss == rb.log[i].d_loss);
    CHECK(ra.log[i].g_loss == rb.log[i].g_loss);
  }
  labels[0] = 2;
  CHECK_THROWS_AS(cgan_train(latents, labels, 2, shortcfg, a), RangeError);
}

TEST_CASE("GAN divergence is reported") {
  std::vector<std::vector<double>> latents{{1, 0}, {-1, 0}};
  std::vector<int> labels{0, 1};
  GanConfig cfg;
  cfg.steps = 5;
  cfg.adam.lr = 1e308;
  Rng rng(1);
  CHECK_THROWS_AS(cgan_train(latents, labels, 2, cfg, rng), DivergenceError);
}

TEST_CASE("cgan_generate") {
  Fixture f(5, 10);
  Rng rng(1);
  const auto gan = LatentGan::init(4, 2, rng);
  Rng a(2), b(2);
  CHECK(cgan_generate(f.model, gan, 1, 0, a).empty());
  const auto g1 = cgan_generate(f.model, gan, 1, 4, a);
  const auto g2 = cgan_generate(f.model, gan, 1, 4, b);
  REQUIRE(g1.size() == 4);
  CHECK(g1[3].text == g2[3].text);
  CHECK(g1[3].z == g2[3].z);
  CHECK(g1[3].z.size() == 4);
  CHECK_THROWS_AS(cgan_generate(f.model, gan, 2, 1, a), RangeError);
}

TEST_CASE("feature export") {
  Fixture f(6, 25);
  const auto path = temp_path("features.tsv");
  export_features(f.model.params, std::span<const EncodedSentence>{}, FeatureKind::kMu, path);
  {
    std::ifstream in(path);
    std::string header, extra;
    std::getline(in, header);
    CHECK(header == "label\tf0\tf1\tf2\tf3");
    CHECK(!std::getline(in, extra));
  }
  for (FeatureKind kind : {FeatureKind::kMu, FeatureKind::kHCls}) {
    export_features(f.model.params, f.sentences, kind, path);
    const auto back = read_feature_table(path);
    const auto want = compute_features(f.model.params, f.sentences, kind);
    CHECK(back.rows.size() == 25);
    CHECK(back.rows == want.rows);
    CHECK(back.labels == want.labels);
  }
  std::filesystem::remove(path);
  CHECK_THROWS_AS(export_features(f.model.params, f.sentences, FeatureKind::kMu, "/nonexistent/dir/x.tsv"), IoError);
}
