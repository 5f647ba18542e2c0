#include "latentlm/model/parameters.hpp"

#include <bit>
#include <cstring>

namespace latentlm {
namespace {

constexpr double kInitStd = 0.02;

Tensor normal(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = kInitStd * rng.normal();
  return t;
}

Tensor ones(std::size_t n) { return Tensor({n}, std::vector<double>(n, 1.0)); }
Tensor zeros(std::size_t n) { return Tensor({n}); }

BlockParams init_block(const ModelConfig& c, Rng& rng) {
  const std::size_t h = c.hidden, f = c.hidden * c.ffn_mult;
  BlockParams b;
  b.ln1_gain = ones(h);
  b.ln1_bias = zeros(h);
  b.wq = normal({h, h}, rng);
  b.bq = zeros(h);
  b.wk = normal({h, h}, rng);
  b.bk = zeros(h);
  b.wv = normal({h, h}, rng);
  b.bv = zeros(h);
  b.wo = normal({h, h}, rng);
  b.bo = zeros(h);
  b.ln2_gain = ones(h);
  b.ln2_bias = zeros(h);
  b.w1 = normal({f, h}, rng);
  b.b1 = zeros(f);
  b.w2 = normal({h, f}, rng);
  b.b2 = zeros(h);
  return b;
}

template <typename BlockT, typename Out>
void name_block(const std::string& prefix, BlockT& b, Out& out) {
  out.emplace_back(prefix + ".ln1.gain", &b.ln1_gain);
  out.emplace_back(prefix + ".ln1.bias", &b.ln1_bias);
  out.emplace_back(prefix + ".attn.wq", &b.wq);
  out.emplace_back(prefix + ".attn.bq", &b.bq);
  out.emplace_back(prefix + ".attn.wk", &b.wk);
  out.emplace_back(prefix + ".attn.bk", &b.bk);
  out.emplace_back(prefix + ".attn.wv", &b.wv);
  out.emplace_back(prefix + ".attn.bv", &b.bv);
  out.emplace_back(prefix + ".attn.wo", &b.wo);
  out.emplace_back(prefix + ".attn.bo", &b.bo);
  out.emplace_back(prefix + ".ln2.gain", &b.ln2_gain);
  out.emplace_back(prefix + ".ln2.bias", &b.ln2_bias);
  out.emplace_back(prefix + ".mlp.w1", &b.w1);
  out.emplace_back(prefix + ".mlp.b1", &b.b1);
  out.emplace_back(prefix + ".mlp.w2", &b.w2);
  out.emplace_back(prefix + ".mlp.b2", &b.b2);
}

template <typename P, typename Out>
void name_all(P& p, Out& out) {
  out.emplace_back("encoder.tok", &p.enc_tok);
  out.emplace_back("encoder.pos", &p.enc_pos);
  for (std::size_t i = 0; i < p.enc_blocks.size(); ++i)
    name_block("encoder.block" + std::to_string(i), p.enc_blocks[i], out);
  out.emplace_back("encoder.ln.gain", &p.enc_ln_gain);
  out.emplace_back("encoder.ln.bias", &p.enc_ln_bias);
  out.emplace_back("latent.w_e", &p.w_e);
  out.emplace_back("decoder.tok", &p.dec_tok);
  out.emplace_back("decoder.pos", &p.dec_pos);
  for (std::size_t i = 0; i < p.dec_blocks.size(); ++i)
    name_block("decoder.block" + std::to_string(i), p.dec_blocks[i], out);
  out.emplace_back("decoder.ln.gain", &p.dec_ln_gain);
  out.emplace_back("decoder.ln.bias", &p.dec_ln_bias);
  out.emplace_back("latent.w_m", &p.w_m);
  out.emplace_back("latent.w_d", &p.w_d);
  out.emplace_back("decoder.w_out", &p.w_out);
  if (p.w_c.size() > 0) out.emplace_back("head.w_c", &p.w_c);
}

}  // namespace

Parameters Parameters::init(const ModelConfig& config, Rng rng) {
  config.validate();
  const std::size_t h = config.hidden, p = config.latent;
  Parameters out;
  out.config = config;
  out.enc_tok = normal({config.enc_vocab, h}, rng);
  out.enc_pos = normal({config.max_len, h}, rng);
  for (std::size_t i = 0; i < config.layers; ++i) out.enc_blocks.push_back(init_block(config, rng));
  out.enc_ln_gain = ones(h);
  out.enc_ln_bias = zeros(h);
  out.w_e = normal({2 * p, h}, rng);
  out.dec_tok = normal({config.dec_vocab, h}, rng);
  out.dec_pos = normal({config.max_len, h}, rng);
  for (std::size_t i = 0; i < config.layers; ++i) out.dec_blocks.push_back(init_block(config, rng));
  out.dec_ln_gain = ones(h);
  out.dec_ln_bias = zeros(h);
  out.w_m = normal({config.layers * h, p}, rng);
  out.w_d = normal({h, p}, rng);
  out.w_out = normal({config.dec_vocab, h}, rng);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Parameters::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  name_all(*this, out);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Parameters::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  name_all(*this, out);
  return out;
}

std::vector<Tensor*> Parameters::encoder_tensors() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named())
    if (name.rfind("encoder.", 0) == 0 || name == "latent.w_e") out.push_back(t);
  return out;
}

std::vector<Tensor*> Parameters::all_tensors() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

void Parameters::set_requires_grad(bool on) {
  for (Tensor* t : all_tensors()) t->set_requires_grad(on);
}

void Parameters::zero_grad() {
  for (Tensor* t : all_tensors()) t->zero_grad();
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t->size();
  return n;
}

std::uint64_t Parameters::checksum() const { return checksum_impl(true); }

std::uint64_t Parameters::backbone_checksum() const { return checksum_impl(false); }

std::uint64_t Parameters::checksum_impl(bool with_head) const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, t] : named()) {
    if (!with_head && name == "head.w_c") continue;
    for (double v : t->values()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xFF;
        h *= 0x100000001b3ull;
      }
    }
  }
  return h;
}

}  // namespace latentlm
