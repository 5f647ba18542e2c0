#include "latentlm/io/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "latentlm/errors.hpp"

namespace latentlm {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw IoError("checkpoint is truncated");
    const auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint64_t uint(int width) {
    const auto b = take(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

template <typename T>
T get_field(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

ordered_json model_config_to_json(const ModelConfig& c) {
  ordered_json j;
  j["layers"] = c.layers;
  j["hidden"] = c.hidden;
  j["heads"] = c.heads;
  j["latent"] = c.latent;
  j["enc_vocab"] = c.enc_vocab;
  j["dec_vocab"] = c.dec_vocab;
  j["max_len"] = c.max_len;
  j["ffn_mult"] = c.ffn_mult;
  j["injection"] = std::string(to_string(c.injection));
  j["ln_eps"] = c.ln_eps;
  return j;
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  if (!j.is_object()) throw ConfigError("model configuration must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "layers") c.layers = get_field<std::size_t>(j, "layers");
    else if (key == "hidden") c.hidden = get_field<std::size_t>(j, "hidden");
    else if (key == "heads") c.heads = get_field<std::size_t>(j, "heads");
    else if (key == "latent") c.latent = get_field<std::size_t>(j, "latent");
    else if (key == "enc_vocab") c.enc_vocab = get_field<std::size_t>(j, "enc_vocab");
    else if (key == "dec_vocab") c.dec_vocab = get_field<std::size_t>(j, "dec_vocab");
    else if (key == "max_len") c.max_len = get_field<std::size_t>(j, "max_len");
    else if (key == "ffn_mult") c.ffn_mult = get_field<std::size_t>(j, "ffn_mult");
    else if (key == "injection") c.injection = injection_mode_from_string(get_field<std::string>(j, "injection"));
    else if (key == "ln_eps") c.ln_eps = get_field<double>(j, "ln_eps");
    else throw ConfigError("unknown model configuration key '" + key + "'");
  }
  return c;
}

std::string serialize_checkpoint(const Model& model) {
  const auto named = model.params.named();
  ordered_json manifest;
  manifest["config"] = model_config_to_json(model.params.config);
  ordered_json vocab;
  vocab["tokenizer"] = std::string(to_string(model.vocab.kind()));
  vocab["hash"] = hex(model.vocab.hash());
  const auto& all = model.vocab.tokens();
  vocab["tokens"] = std::vector<std::string>(all.begin() + Vocabulary::kSpecialCount, all.end());
  manifest["vocabulary"] = std::move(vocab);
  manifest["step"] = model.step;
  manifest["seed"] = model.seed;
  ordered_json tensors = ordered_json::array();
  for (const auto& [name, t] : named) tensors.push_back(ordered_json{{"name", name}, {"shape", t->shape()}});
  manifest["tensors"] = std::move(tensors);
  const std::string text = manifest.dump();

  std::string out(kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out += text;
  for (const auto& [name, t] : named) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) put_u64(out, d);
    for (double v : t->values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Model deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kCheckpointMagic.size()) != kCheckpointMagic) throw IoError("not a checkpoint (bad magic)");
  const auto version = r.uint(4);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto manifest_len = r.uint(8);
  json manifest;
  try {
    manifest = json::parse(r.take(manifest_len));
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }

  Model m;
  try {
    const auto& v = manifest.at("vocabulary");
    // Special tokens are implied.
    m.vocab = Vocabulary(v.at("tokens").get<std::vector<std::string>>(),
                         tokenizer_kind_from_string(v.at("tokenizer").get<std::string>()));
    if (hex(m.vocab.hash()) != v.at("hash").get<std::string>()) throw IoError("vocabulary hash mismatch");
    m.step = manifest.at("step").get<std::uint64_t>();
    m.seed = manifest.at("seed").get<std::uint64_t>();
    const ModelConfig config = model_config_from_json(manifest.at("config"));
    m.params = Parameters::init(config, Rng(0));
    const auto& tensors = manifest.at("tensors");
    const bool has_head = tensors.size() == m.params.named().size() + 1;
    if (has_head) {
      const auto shape = tensors.back().at("shape").get<Shape>();
      if (shape.size() != 2 || shape[1] != config.hidden) throw IoError("classifier head has the wrong shape");
      m.params.w_c = Tensor(shape);
    }
    auto named = m.params.named();
    if (tensors.size() != named.size()) throw IoError("checkpoint tensor list does not match the configuration");
    for (std::size_t i = 0; i < named.size(); ++i) {
      auto& [name, t] = named[i];
      if (tensors[i].at("name").get<std::string>() != name || tensors[i].at("shape").get<Shape>() != t->shape())
        throw IoError("manifest entry " + std::to_string(i) + " does not match tensor " + name);
      const auto len = r.uint(4);
      if (r.take(len) != name) throw IoError("blob name does not match manifest entry " + name);
      const auto rank = r.uint(4);
      if (rank != t->rank()) throw IoError("blob rank mismatch for " + name);
      for (std::size_t d = 0; d < rank; ++d)
        if (r.uint(8) != t->shape()[d]) throw IoError("blob shape mismatch for " + name);
      for (double& x : t->values()) x = std::bit_cast<double>(r.uint(8));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint manifest is incomplete: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint configuration is invalid: ") + e.what());
  } catch (const TokenError& e) {
    throw IoError(std::string("checkpoint vocabulary is invalid: ") + e.what());
  }
  if (!r.done()) throw IoError("checkpoint has trailing bytes");
  if (m.vocab.size() != m.params.config.enc_vocab || m.vocab.size() != m.params.config.dec_vocab)
    throw IoError("vocabulary size does not match the model configuration");
  return m;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace latentlm
