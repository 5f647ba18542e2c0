#include "latentlm/text/synth.hpp"

#include <array>

#include "latentlm/autodiff/rng.hpp"
#include "latentlm/errors.hpp"
#include "latentlm/text/vocabulary.hpp"

namespace latentlm {
namespace {

constexpr std::array<std::string_view, 4> kNegative{"sad", "bad", "cruel", "dark"};
constexpr std::array<std::string_view, 4> kPositive{"happy", "good", "kind", "bright"};
constexpr std::array<std::string_view, 6> kNouns{"cat", "dog", "bird", "fish", "horse", "wolf"};
constexpr std::array<std::string_view, 4> kVerbs{"see", "like", "chase", "find"};

template <std::size_t N>
int index_of(const std::array<std::string_view, N>& arr, std::string_view w) {
  for (std::size_t i = 0; i < N; ++i)
    if (arr[i] == w) return static_cast<int>(i);
  return -1;
}

}  // namespace

bool is_known_grammar(std::string_view grammar_id) { return grammar_id == "sentiment" || grammar_id == "svo"; }

GrammarInfo grammar_info(std::string_view grammar_id) {
  if (!is_known_grammar(grammar_id)) throw ConfigError("unknown grammar id '" + std::string(grammar_id) + "'");
  return {kPositive.size(), kNouns.size(), kVerbs.size(), 2};
}

std::string render(const TemplateSlots& s) {
  const auto& adjs = s.polarity ? kPositive : kNegative;
  std::string out = "the ";
  out += adjs.at(static_cast<std::size_t>(s.adjective));
  out += ' ';
  out += kNouns.at(static_cast<std::size_t>(s.noun));
  if (s.plural) out += 's';
  out += ' ';
  out += kVerbs.at(static_cast<std::size_t>(s.verb));
  if (!s.plural) out += 's';
  out += " the ";
  out += kNouns.at(static_cast<std::size_t>(s.object));
  return out;
}

std::optional<TemplateSlots> parse_template(std::string_view text) {
  const auto w = tokenize(text, TokenizerKind::kWhitespace);
  if (w.size() != 6 || w[0] != "the" || w[4] != "the") return std::nullopt;
  TemplateSlots s;
  if (int a = index_of(kPositive, w[1]); a >= 0) {
    s.polarity = 1;
    s.adjective = a;
  } else if (int b = index_of(kNegative, w[1]); b >= 0) {
    s.polarity = 0;
    s.adjective = b;
  } else {
    return std::nullopt;
  }
  std::string_view noun = w[2];
  if (int n = index_of(kNouns, noun); n >= 0) {
    s.noun = n;
    s.plural = 0;
  } else if (noun.size() > 1 && noun.back() == 's' && index_of(kNouns, noun.substr(0, noun.size() - 1)) >= 0) {
    s.noun = index_of(kNouns, noun.substr(0, noun.size() - 1));
    s.plural = 1;
  } else {
    return std::nullopt;
  }
  std::string_view verb = w[3];
  if (s.plural) {
    s.verb = index_of(kVerbs, verb);
  } else {
    if (verb.size() < 2 || verb.back() != 's') return std::nullopt;
    s.verb = index_of(kVerbs, verb.substr(0, verb.size() - 1));
  }
  if (s.verb < 0) return std::nullopt;
  s.object = index_of(kNouns, w[5]);
  if (s.object < 0) return std::nullopt;
  return s;
}

int template_label(const TemplateSlots& slots, std::string_view grammar_id) {
  if (grammar_id == "sentiment") return slots.polarity;
  if (grammar_id == "svo") return slots.plural;
  throw ConfigError("unknown grammar id '" + std::string(grammar_id) + "'");
}

std::vector<TemplateSentence> synth_labeled(std::uint64_t seed, std::size_t n_sentences,
                                            std::string_view grammar_id) {
  const GrammarInfo info = grammar_info(grammar_id);
  Rng rng = Rng(seed).fork(0x5E17);
  std::vector<TemplateSentence> out;
  out.reserve(n_sentences);
  for (std::size_t i = 0; i < n_sentences; ++i) {
    TemplateSlots s;
    s.polarity = static_cast<int>(rng.below(2));
    s.adjective = static_cast<int>(rng.below(info.adjectives_per_polarity));
    s.noun = static_cast<int>(rng.below(info.nouns));
    s.plural = static_cast<int>(rng.below(2));
    s.verb = static_cast<int>(rng.below(info.verbs));
    s.object = static_cast<int>(rng.below(info.nouns));
    out.push_back({render(s), s, template_label(s, grammar_id)});
  }
  return out;
}

std::vector<std::string> synth_corpus(std::uint64_t seed, std::size_t n_sentences, std::string_view grammar_id) {
  std::vector<std::string> lines;
  for (auto& s : synth_labeled(seed, n_sentences, grammar_id)) lines.push_back(std::move(s.text));
  return lines;
}

}  // namespace latentlm
