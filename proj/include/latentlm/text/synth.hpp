#pragma once

// Built-in template grammars used as desk-scale training data.
//
// Every sentence has the form
//     the <adjective> <noun>[s] <verb agreeing with number> the <object>
// and is fully described by its TemplateSlots, so generated text can be
// scored by parsing it back (the "oracle template classifier").
//
// Grammars:
//   "sentiment"  label = adjective polarity (0 negative, 1 positive)
//   "svo"        label = grammatical number (0 singular, 1 plural)

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace latentlm {

struct TemplateSlots {
  int polarity = 0;   // 0 negative, 1 positive
  int adjective = 0;  // index within the polarity's adjective list
  int noun = 0;
  int plural = 0;     // 0 singular, 1 plural
  int verb = 0;
  int object = 0;

  friend bool operator==(const TemplateSlots&, const TemplateSlots&) = default;
};

struct TemplateSentence {
  std::string text;
  TemplateSlots slots;
  int label = 0;
};

struct GrammarInfo {
  std::size_t adjectives_per_polarity;
  std::size_t nouns;
  std::size_t verbs;
  std::size_t classes;
};

GrammarInfo grammar_info(std::string_view grammar_id);
bool is_known_grammar(std::string_view grammar_id);

std::string render(const TemplateSlots& slots);
/// Inverse of render; std::nullopt for text outside the template language.
std::optional<TemplateSlots> parse_template(std::string_view text);
/// Label the given grammar assigns to `slots`.
int template_label(const TemplateSlots& slots, std::string_view grammar_id);

/// Deterministic under seed. Throws ConfigError for an unknown grammar.
std::vector<TemplateSentence> synth_labeled(std::uint64_t seed, std::size_t n_sentences,
                                            std::string_view grammar_id);
std::vector<std::string> synth_corpus(std::uint64_t seed, std::size_t n_sentences,
                                      std::string_view grammar_id);

}  // namespace latentlm
