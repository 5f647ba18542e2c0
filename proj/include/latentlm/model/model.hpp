#pragma once

#include <cstdint>
#include <string_view>

#include "latentlm/model/parameters.hpp"
#include "latentlm/text/corpus.hpp"
#include "latentlm/text/vocabulary.hpp"

namespace latentlm {

/// A trained backbone together with the vocabulary it was trained on.
struct Model {
  Parameters params;
  Vocabulary vocab;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
};

/// Tokenizes `text` for this model. Throws RangeError when the sentence does
/// not fit in config.max_len and TokenError when it holds no tokens.
EncodedSentence encode_text(const Model& model, std::string_view text);

}  // namespace latentlm
