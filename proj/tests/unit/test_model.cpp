#include <cmath>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "latentlm/errors.hpp"
#include "latentlm/model/transformer.hpp"
#include "latentlm/text/vocabulary.hpp"
#include "reference_model.hpp"

using namespace latentlm;
namespace ref = latentlm::testing::reference;

namespace {

ModelConfig micro(InjectionMode mode = InjectionMode::kBoth, std::size_t layers = 1, std::size_t hidden = 8,
                  std::size_t heads = 2, std::size_t latent = 4, std::size_t vocab = 11) {
  ModelConfig c;
  c.layers = layers;
  c.hidden = hidden;
  c.heads = heads;
  c.latent = latent;
  c.enc_vocab = vocab;
  c.dec_vocab = vocab;
  c.max_len = 12;
  c.ffn_mult = 2;
  c.injection = mode;
  return c;
}

// Randomizes every tensor (including gains and biases) so no term is trivially zero.
Parameters random_params(const ModelConfig& c, std::uint64_t seed, double scale = 0.5) {
  Parameters p = Parameters::init(c, Rng(seed));
  Rng rng(seed, 7);
  for (auto& [name, t] : p.named())
    for (double& v : t->values()) v = scale * rng.normal() + (name.find("gain") != std::string::npos ? 1.0 : 0.0);
  return p;
}

void zero(Tensor& t) {
  for (double& v : t.values()) v = 0.0;
}

std::vector<double> logits_row(const Tensor& logits, std::size_t r) {
  std::vector<double> out(logits.cols());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = logits.at(r, j);
  return out;
}

std::vector<double> flat(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

double max_rel_diff(const ref::Mat& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t j = 0; j < a[r].size(); ++j)
      worst = std::max(worst, std::abs(a[r][j] - b.at(r, j)) / std::max(1.0, std::abs(a[r][j])));
  return worst;
}

const std::vector<int> kEnc{Vocabulary::kCls, 5, 7, 9, 6};
const std::vector<int> kDec{Vocabulary::kBos, 5, 7, 9, 6};

}  // namespace

TEST_CASE("zero encoder weights give a unit Gaussian posterior") {
  Parameters p = Parameters::init(micro(), Rng(1));
  for (Tensor* t : p.encoder_tensors()) zero(*t);
  const auto post = encode(p, kEnc);
  for (double m : post.mu) CHECK(m == 0.0);
  for (double lv : post.logvar) CHECK(lv == 0.0);
}

TEST_CASE("encode is deterministic") {
  const Parameters p = random_params(micro(), 2);
  const auto a = encode(p, kEnc), b = encode(p, kEnc);
  CHECK(a.mu == b.mu);
  CHECK(a.logvar == b.logvar);
  CHECK(a.h_cls == b.h_cls);
}

TEST_CASE("single-layer H=2, P=1 encoder matches a hand-computed forward pass") {
  ModelConfig c = micro(InjectionMode::kBoth, 1, 2, 1, 1, 7);
  Parameters p = random_params(c, 3);
  // Hand-set a few weights so the CLS state is asymmetric.
  p.w_e = Tensor::matrix({{0.7, -1.3}, {0.2, 0.4}});
  p.enc_tok.at(0, 0) = 1.5;
  p.enc_tok.at(0, 1) = -0.25;
  const std::vector<int> ids{Vocabulary::kCls, 5, 6};
  const auto got = encode(p, ids);
  const auto want = ref::encode(p, ids);
  REQUIRE(got.mu.size() == 1);
  CHECK(std::abs(got.mu[0] - want.mu[0]) <= 1e-12);
  CHECK(std::abs(got.logvar[0] - want.logvar[0]) <= 1e-12);
  // With H = 2 the normalized CLS state is (+s, -s) up to the gain and bias.
  CHECK(std::abs(got.mu[0] - (0.7 * got.h_cls[0] - 1.3 * got.h_cls[1])) <= 1e-12);
}

TEST_CASE("encoder and decoder agree with the scalar reference on random weights") {
  for (auto mode : {InjectionMode::kMemory, InjectionMode::kEmbedding, InjectionMode::kBoth})
    for (std::uint64_t seed = 10; seed < 13; ++seed) {
      const ModelConfig c = micro(mode, 2, 8, 2, 3, 11);
      const Parameters p = random_params(c, seed);
      const auto post = encode(p, kEnc);
      const auto want = ref::encode(p, kEnc);
      for (std::size_t i = 0; i < c.latent; ++i) {
        CHECK(post.mu[i] == doctest::Approx(want.mu[i]).epsilon(1e-12));
        CHECK(post.logvar[i] == doctest::Approx(want.logvar[i]).epsilon(1e-12));
      }
      const std::vector<double> z{0.3, -1.1, 0.8};
      const Tensor logits = decoder_forward(p, kDec, build_injection(p, z));
      CHECK(max_rel_diff(ref::decode(p, kDec, z), logits) <= 1e-12);
    }
}

TEST_CASE("encode validates its input") {
  const Parameters p = random_params(micro(), 4);
  CHECK_THROWS_AS(encode(p, std::vector<int>{5, 6}), TokenError);
  CHECK_THROWS_AS(encode(p, std::vector<int>{Vocabulary::kCls, 11}), TokenError);
  CHECK_THROWS_AS(encode(p, std::vector<int>(13, Vocabulary::kCls)), RangeError);
  const LatentInjection inj = build_injection(p, std::vector<double>(4, 0.1));
  CHECK_THROWS_AS(decoder_forward(p, std::vector<int>(13, Vocabulary::kBos), inj), RangeError);
  CHECK_THROWS_AS(decoder_forward(p, std::vector<int>{5, 6}, inj), TokenError);
  CHECK_THROWS_AS(build_injection(p, std::vector<double>(3, 0.0)), ShapeError);
}

TEST_CASE("build_injection: zero latent and explicit matvec") {
  ModelConfig c = micro(InjectionMode::kBoth, 2, 3, 1, 2, 7);
  Parameters p = random_params(c, 5);
  const auto zero_inj = build_injection(p, std::vector<double>{0.0, 0.0});
  REQUIRE(zero_inj.memory_slices.size() == 2);
  for (const auto& s : zero_inj.memory_slices)
    for (double v : s) CHECK(v == 0.0);
  for (double v : zero_inj.embedding_offset) CHECK(v == 0.0);

  p.w_m = Tensor::matrix({{1, 0}, {0, 1}, {1, 1}, {2, 0}, {0, 3}, {1, -1}});
  const std::vector<double> z{0.5, -2.0};
  const auto inj = build_injection(p, z);
  const std::vector<std::vector<double>> want{{0.5, -2.0, -1.5}, {1.0, -6.0, 2.5}};
  CHECK(inj.memory_slices == want);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(inj.embedding_offset[i] == doctest::Approx(p.w_d.at(i, 0) * 0.5 - 2.0 * p.w_d.at(i, 1)).epsilon(1e-15));

  c.injection = InjectionMode::kMemory;
  p.config = c;
  CHECK(build_injection(p, z).embedding_offset.empty());
  c.injection = InjectionMode::kEmbedding;
  p.config = c;
  CHECK(build_injection(p, z).memory_slices.empty());
}

TEST_CASE("memory width is L*H at full scale (12 layers, 768 hidden)") {
  CHECK(12u * 768u == 9216u);
  ModelConfig c = micro(InjectionMode::kMemory, 3, 8, 2, 4, 11);
  const Parameters p = Parameters::init(c, Rng(1));
  CHECK(p.w_m.rows() == c.layers * c.hidden);
  CHECK(p.w_m.cols() == c.latent);
}

TEST_CASE("decoder causality: later tokens never change earlier logits") {
  for (auto mode : {InjectionMode::kMemory, InjectionMode::kEmbedding, InjectionMode::kBoth}) {
    const Parameters p = random_params(micro(mode, 2), 6);
    const auto inj = build_injection(p, std::vector<double>{0.1, 0.2, -0.3, 0.4});
    const Tensor base = decoder_forward(p, kDec, inj);
    for (std::size_t t = 1; t < kDec.size(); ++t) {
      auto changed = kDec;
      for (std::size_t u = t; u < changed.size(); ++u) changed[u] = 10;
      const Tensor other = decoder_forward(p, changed, inj);
      for (std::size_t r = 0; r < t; ++r) CHECK(logits_row(base, r) == logits_row(other, r));
      CHECK(logits_row(base, t) != logits_row(other, t));
    }
  }
}

TEST_CASE("zero decoder weights give a uniform distribution") {
  Parameters p = random_params(micro(), 7);
  for (auto& [name, t] : p.named())
    if (name.rfind("decoder.", 0) == 0) zero(*t);
  const Tensor logits = decoder_forward(p, kDec, build_injection(p, std::vector<double>{1, 2, 3, 4}));
  for (double v : logits.values()) CHECK(v == 0.0);
}

TEST_CASE("latent sensitivity") {
  Parameters p = random_params(micro(InjectionMode::kMemory), 8);
  const std::vector<double> z1{0.1, 0.2, 0.3, 0.4}, z2{0.1, 0.2, 0.3, 0.5};
  CHECK(logits_row(decoder_forward(p, kDec, build_injection(p, z1)), 0) !=
        logits_row(decoder_forward(p, kDec, build_injection(p, z2)), 0));
  p.config.injection = InjectionMode::kBoth;
  zero(p.w_m);
  zero(p.w_d);
  CHECK(flat(decoder_forward(p, kDec, build_injection(p, z1))) ==
        flat(decoder_forward(p, kDec, build_injection(p, z2))));
}

TEST_CASE("injection equivalence") {
  for (std::uint64_t seed = 20; seed < 24; ++seed) {
    const std::vector<double> z{0.7, -0.2, 0.9, -1.4};
    Parameters both = random_params(micro(InjectionMode::kBoth, 2), seed);
    zero(both.w_m);
    Parameters emb = both;
    emb.config.injection = InjectionMode::kEmbedding;
    CHECK(flat(decoder_forward(both, kDec, build_injection(both, z))) ==
          flat(decoder_forward(emb, kDec, build_injection(emb, z))));

    Parameters both2 = random_params(micro(InjectionMode::kBoth, 2), seed);
    zero(both2.w_d);
    Parameters mem = both2;
    mem.config.injection = InjectionMode::kMemory;
    CHECK(flat(decoder_forward(both2, kDec, build_injection(both2, z))) ==
          flat(decoder_forward(mem, kDec, build_injection(mem, z))));
  }
}

TEST_CASE("layer l attends only its own memory slice") {
  Parameters p = random_params(micro(InjectionMode::kMemory, 2), 30);
  // Silence layer 1's attention output: its slice can then reach nothing.
  zero(p.dec_blocks[1].wo);
  const auto base = build_injection(p, std::vector<double>{0.5, 0.5, 0.5, 0.5});
  auto moved1 = base;
  for (double& v : moved1.memory_slices[1]) v += 1.0;
  auto moved0 = base;
  for (double& v : moved0.memory_slices[0]) v += 1.0;
  const auto ref_logits = flat(decoder_forward(p, kDec, base));
  CHECK(flat(decoder_forward(p, kDec, moved1)) == ref_logits);
  CHECK(flat(decoder_forward(p, kDec, moved0)) != ref_logits);
}

TEST_CASE("full model reconstruction gradients match finite differences") {
  for (auto mode : {InjectionMode::kBoth, InjectionMode::kMemory, InjectionMode::kEmbedding}) {
    Parameters p = random_params(micro(mode, 1, 8, 2, 4, 11), 40, 0.3);
    Rng rng(41);
    Tensor eps({1, 4});
    rng.fill_normal(eps.values());
    const std::vector<int> enc{Vocabulary::kCls, 5, 8, 10, 6};
    const std::vector<int> dec{Vocabulary::kBos, 5, 8, 10, 6};
    const std::vector<int> targets{5, 8, 10, 6, Vocabulary::kEos};
    auto loss = [&](Tape& t) {
      const std::span<const int> es[] = {enc};
      const std::span<const int> ds[] = {dec};
      const auto post = encode(t, p, pack_sequences(es, 12));
      const Var z = ops::reparameterize(post.mu, post.logvar, eps);
      const auto inj = build_injection(t, p, z);
      const Var logits = decoder_forward(t, p, pack_sequences(ds, 12), inj);
      return ops::cross_entropy(logits, targets, -1);
    };
    std::vector<Tensor*> checked{&p.w_e, &p.enc_tok, &p.enc_pos, &p.dec_tok, &p.dec_pos,
                                 &p.enc_blocks[0].wq, &p.dec_blocks[0].wk, &p.dec_blocks[0].w1, &p.w_out};
    if (uses_memory(mode)) checked.push_back(&p.w_m);
    if (uses_embedding(mode)) checked.push_back(&p.w_d);
    const auto res = latentlm::testing::grad_check(checked, loss, 1e-5, 1e-3, 1e-8, 40);
    INFO(res.first_failure);
    CHECK(res.ok());
  }
}

TEST_CASE("packed batches equal single-sentence passes") {
  const Parameters p = random_params(micro(InjectionMode::kBoth, 2), 50);
  const std::vector<int> a{Vocabulary::kCls, 5, 6}, b{Vocabulary::kCls, 9, 8, 7, 10};
  Tape t(Tape::Mode::kInference);
  const std::span<const int> seqs[] = {a, b};
  const auto post = encode(t, p, pack_sequences(seqs, 12));
  const auto mu = t.to_tensor(post.mu);
  const auto sa = encode(p, a), sb = encode(p, b);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(mu.at(0, i) == doctest::Approx(sa.mu[i]).epsilon(1e-13));
    CHECK(mu.at(1, i) == doctest::Approx(sb.mu[i]).epsilon(1e-13));
  }
}

TEST_CASE("greedy decoding") {
  Parameters p = random_params(micro(), 60);
  const auto inj = build_injection(p, std::vector<double>{0.3, 0.1, -0.2, 0.5});
  CHECK(decode_greedy(p, inj, 12) == decode_greedy(p, inj, 12));
  CHECK(decode_greedy(p, inj, 12).size() <= 11);

  Parameters eos = p;
  zero(eos.w_out);
  eos.dec_ln_bias.values()[0] = 1.0;
  eos.dec_ln_gain.values()[0] = 0.0;
  eos.w_out.at(Vocabulary::kEos, 0) = 5.0;
  CHECK(decode_greedy(eos, inj, 12).empty());

  // All-zero logits: ties resolve to id 0.
  Parameters tie = p;
  zero(tie.w_out);
  const auto out = decode_greedy(tie, inj, 4);
  CHECK(out == std::vector<int>{0, 0, 0});
}

TEST_CASE("sampling: determinism, low-temperature limit, errors") {
  const Parameters p = random_params(micro(), 61, 1.0);
  const auto inj = build_injection(p, std::vector<double>{0.3, 0.1, -0.2, 0.5});
  Rng r1(5), r2(5);
  CHECK(decode_sample(p, inj, 1.0, r1, 12) == decode_sample(p, inj, 1.0, r2, 12));
  Rng r3(6);
  CHECK(decode_sample(p, inj, 1e-6, r3, 12) == decode_greedy(p, inj, 12));
  CHECK_THROWS_AS(decode_sample(p, inj, 0.0, r3, 12), RangeError);
  CHECK_THROWS_AS(decode_sample(p, inj, -1.0, r3, 12), RangeError);
}

TEST_CASE("one-step sample frequencies match softmax within 3 binomial errors") {
  const Parameters p = random_params(micro(InjectionMode::kBoth, 1, 8, 2, 4, 7), 62, 0.8);
  const auto inj = build_injection(p, std::vector<double>{0.3, 0.1, -0.2, 0.5});
  const Tensor logits = decoder_forward(p, std::vector<int>{Vocabulary::kBos}, inj);
  const double temp = 1.5;
  std::vector<double> prob(7);
  double mx = -1e300, z = 0.0;
  for (std::size_t j = 0; j < 7; ++j) mx = std::max(mx, logits.at(0, j));
  for (std::size_t j = 0; j < 7; ++j) z += (prob[j] = std::exp((logits.at(0, j) - mx) / temp));
  for (double& q : prob) q /= z;

  const int draws = 10000;
  std::vector<int> counts(7, 0);
  Rng rng(63);
  for (int i = 0; i < draws; ++i) {
    const auto s = decode_sample(p, inj, temp, rng, 2);
    ++counts[s.empty() ? Vocabulary::kEos : s[0]];
  }
  for (std::size_t j = 0; j < 7; ++j) {
    const double se = std::sqrt(prob[j] * (1 - prob[j]) / draws);
    CHECK(std::abs(counts[j] / static_cast<double>(draws) - prob[j]) <= 3 * se + 1e-12);
  }
}

TEST_CASE("encode_batch equals per-sentence encoding") {
  const Parameters p = random_params(micro(), 41);
  Rng rng(4);
  std::vector<EncodedSentence> corpus(300);
  for (auto& s : corpus) {
    s.encoder_view.push_back(Vocabulary::kCls);
    const std::size_t n = 1 + rng.below(10);
    for (std::size_t i = 0; i < n; ++i) s.encoder_view.push_back(5 + static_cast<int>(rng.below(6)));
  }
  const auto batch = encode_batch(p, corpus);
  REQUIRE(batch.mu.size() == 300);
  for (std::size_t i = 0; i < corpus.size(); i += 37) {
    const auto one = encode(p, corpus[i].encoder_view);
    CHECK(batch.mu[i] == one.mu);
    CHECK(batch.logvar[i] == one.logvar);
    CHECK(batch.h_cls[i] == one.h_cls);
  }
  CHECK(encode_batch(p, std::span<const EncodedSentence>{}).mu.empty());
}
