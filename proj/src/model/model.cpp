#include "latentlm/model/model.hpp"

#include <string>

#include "latentlm/errors.hpp"

namespace latentlm {

EncodedSentence encode_text(const Model& model, std::string_view text) {
  const std::size_t n = model.vocab.split(text).size();
  if (n == 0) throw TokenError("sentence has no tokens");
  auto enc = encode_sentence(text, model.vocab, model.params.config.max_len);
  if (!enc)
    throw RangeError("sentence has " + std::to_string(n) + " tokens; the model accepts at most " +
                     std::to_string(model.params.config.max_len - 2));
  return std::move(*enc);
}

}  // namespace latentlm
