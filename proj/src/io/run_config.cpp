#include "latentlm/io/run_config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "latentlm/errors.hpp"
#include "latentlm/io/checkpoint.hpp"
#include "latentlm/text/synth.hpp"

namespace latentlm {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Dispatches each key of a JSON object to its handler.
void read_section(const json& j, const std::string& where,
                  const std::map<std::string, std::function<void(const json&)>>& handlers) {
  if (!j.is_object()) throw ConfigError("'" + where + "' must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto it = handlers.find(key);
    if (it == handlers.end()) throw ConfigError("unknown configuration key '" + where + "." + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + where + "." + key + "': " + e.what());
    }
  }
}

template <typename T>
std::function<void(const json&)> into(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

struct Split {
  std::vector<std::string> texts;
  std::vector<int> labels;
};

Split read_split(const std::filesystem::path& path, bool labeled) {
  Split s;
  for (auto& line : read_lines(path)) {
    tokenize(line, TokenizerKind::kCharacter);  // UTF-8 validation
    if (!labeled) {
      s.texts.push_back(std::move(line));
      s.labels.push_back(-1);
      continue;
    }
    const auto tab = line.find('\t');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (tab == std::string::npos) throw IoError("labeled line without a tab in " + path.string());
    try {
      s.labels.push_back(std::stoi(line.substr(0, tab)));
    } catch (const std::exception&) {
      throw IoError("bad label '" + line.substr(0, tab) + "' in " + path.string());
    }
    s.texts.push_back(line.substr(tab + 1));
  }
  return s;
}

Split synthetic_split(const DataConfig& d, bool validation) {
  Split s;
  const auto seed = d.synthetic_seed + (validation ? 1 : 0);
  for (auto& t : synth_labeled(seed, validation ? d.synthetic_valid : d.synthetic_sentences, d.grammar)) {
    s.texts.push_back(std::move(t.text));
    s.labels.push_back(t.label);
  }
  return s;
}

Split split_for(const DataConfig& d, bool validation) {
  const std::string& path = validation ? d.valid_path : d.train_path;
  if (!d.train_path.empty()) {
    if (path.empty()) return {};
    return read_split(path, d.labeled);
  }
  return synthetic_split(d, validation);
}

Corpus encode_split(const Split& s, const Vocabulary& vocab, std::size_t max_len) {
  Corpus c;
  for (std::size_t i = 0; i < s.texts.size(); ++i) {
    auto one = encode_corpus(std::span(&s.texts[i], 1), vocab, max_len);
    c.stats.tokens += one.stats.tokens;
    c.stats.unknown += one.stats.unknown;
    c.stats.dropped += one.stats.dropped;
    for (auto& sent : one.sentences) {
      sent.label = s.labels[i];
      c.sentences.push_back(std::move(sent));
    }
  }
  c.stats.sentences = c.sentences.size();
  c.stats.coverage = c.stats.tokens == 0 ? 1.0
                                         : 1.0 - static_cast<double>(c.stats.unknown) /
                                                     static_cast<double>(c.stats.tokens);
  return c;
}

}  // namespace

void RunConfig::validate() const {
  ModelConfig m = model;
  m.enc_vocab = m.dec_vocab = Vocabulary::kSpecialCount + 1;
  m.validate();
  train.validate();
  if (data.train_path.empty() && !is_known_grammar(data.grammar))
    throw ConfigError("unknown grammar '" + data.grammar + "'");
  if (data.vocab_size < Vocabulary::kSpecialCount + 1) throw ConfigError("data.vocab_size must be at least 6");
  if (eval.k == 0) throw ConfigError("eval.k must be positive");
  if (!(eval.au_threshold >= 0.0)) throw ConfigError("eval.au_threshold must be non-negative");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  auto& t = c.train;
  auto& d = c.data;
  read_section(j, "config", {
    {"model", [&](const json& v) { c.model = model_config_from_json(v, c.model); }},
    {"train", [&](const json& v) {
       read_section(v, "train", {
         {"objective", [&](const json& x) { t.objective = objective_from_string(x.get<std::string>()); }},
         {"lambda", into(t.lambda)},
         {"grad_clip", into(t.grad_clip)},
         {"batch_size", into(t.batch_size)},
         {"epochs", into(t.epochs)},
         {"steps", into(t.steps)},
         {"seed", into(t.seed)},
         {"strict", into(t.strict)},
         {"log_every", into(t.log_every)},
         {"eval_every", into(t.eval_every)},
         {"schedule", [&](const json& x) {
            read_section(x, "train.schedule", {
              {"kind", [&](const json& y) { t.schedule.kind = schedule_kind_from_string(y.get<std::string>()); }},
              {"n_cycles", into(t.schedule.n_cycles)},
              {"ae_fraction", into(t.schedule.ae_fraction)},
              {"ramp_fraction", into(t.schedule.ramp_fraction)},
              {"hold_fraction", into(t.schedule.hold_fraction)},
              {"beta_max", into(t.schedule.beta_max)},
            });
          }},
         {"adam", [&](const json& x) {
            read_section(x, "train.adam", {
              {"lr", into(t.adam.lr)},
              {"beta1", into(t.adam.beta1)},
              {"beta2", into(t.adam.beta2)},
              {"eps", into(t.adam.eps)},
            });
          }},
       });
     }},
    {"data", [&](const json& v) {
       read_section(v, "data", {
         {"train", into(d.train_path)},
         {"valid", into(d.valid_path)},
         {"labeled", into(d.labeled)},
         {"grammar", into(d.grammar)},
         {"synthetic_sentences", into(d.synthetic_sentences)},
         {"synthetic_valid", into(d.synthetic_valid)},
         {"synthetic_seed", into(d.synthetic_seed)},
         {"vocab_size", into(d.vocab_size)},
         {"tokenizer", [&](const json& x) { d.tokenizer = tokenizer_kind_from_string(x.get<std::string>()); }},
       });
     }},
    {"eval", [&](const json& v) {
       read_section(v, "eval", {
         {"k", into(c.eval.k)},
         {"au_threshold", into(c.eval.au_threshold)},
         {"max_sentences", into(c.eval.max_sentences)},
       });
     }},
    {"output_dir", into(c.output_dir)},
  });
  c.validate();
  return c;
}

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["model"] = model_config_to_json(c.model);
  const auto& t = c.train;
  j["train"] = {
      {"objective", std::string(to_string(t.objective))},
      {"lambda", t.lambda},
      {"grad_clip", t.grad_clip},
      {"batch_size", t.batch_size},
      {"epochs", t.epochs},
      {"steps", t.steps},
      {"seed", t.seed},
      {"strict", t.strict},
      {"log_every", t.log_every},
      {"eval_every", t.eval_every},
      {"schedule",
       {{"kind", std::string(to_string(t.schedule.kind))},
        {"n_cycles", t.schedule.n_cycles},
        {"ae_fraction", t.schedule.ae_fraction},
        {"ramp_fraction", t.schedule.ramp_fraction},
        {"hold_fraction", t.schedule.hold_fraction},
        {"beta_max", t.schedule.beta_max}}},
      {"adam", {{"lr", t.adam.lr}, {"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}},
  };
  const auto& d = c.data;
  j["data"] = {
      {"train", d.train_path},
      {"valid", d.valid_path},
      {"labeled", d.labeled},
      {"grammar", d.grammar},
      {"synthetic_sentences", d.synthetic_sentences},
      {"synthetic_valid", d.synthetic_valid},
      {"synthetic_seed", d.synthetic_seed},
      {"vocab_size", d.vocab_size},
      {"tokenizer", std::string(to_string(d.tokenizer))},
  };
  j["eval"] = {{"k", c.eval.k}, {"au_threshold", c.eval.au_threshold}, {"max_sentences", c.eval.max_sentences}};
  j["output_dir"] = c.output_dir;
  return j;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read configuration file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("configuration file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

PreparedData prepare_data(const DataConfig& data, std::size_t max_len) {
  const Split train = split_for(data, false);
  PreparedData out;
  out.vocab = build_vocab(train.texts, data.vocab_size, data.tokenizer);
  out.train = encode_split(train, out.vocab, max_len);
  out.valid = encode_split(split_for(data, true), out.vocab, max_len);
  return out;
}

Corpus load_split(const DataConfig& data, const Vocabulary& vocab, std::size_t max_len, bool validation) {
  return encode_split(split_for(data, validation), vocab, max_len);
}

}  // namespace latentlm
