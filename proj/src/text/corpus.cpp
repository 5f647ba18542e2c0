#include "latentlm/text/corpus.hpp"

#include <fstream>

#include "latentlm/errors.hpp"

namespace latentlm {

std::optional<EncodedSentence> encode_sentence(std::string_view text, const Vocabulary& vocab,
                                               std::size_t max_len) {
  const auto toks = vocab.split(text);
  if (max_len < 2 || toks.size() > max_len - 2) return std::nullopt;
  EncodedSentence s;
  s.raw = std::string(text);
  s.encoder_view.reserve(toks.size() + 1);
  s.decoder_view.reserve(toks.size() + 2);
  s.encoder_view.push_back(Vocabulary::kCls);
  s.decoder_view.push_back(Vocabulary::kBos);
  for (const auto& t : toks) {
    const int id = vocab.id(t);
    s.encoder_view.push_back(id);
    s.decoder_view.push_back(id);
  }
  s.decoder_view.push_back(Vocabulary::kEos);
  return s;
}

Corpus encode_corpus(std::span<const std::string> lines, const Vocabulary& vocab, std::size_t max_len) {
  Corpus c;
  for (const auto& line : lines) {
    std::string_view text = line;
    if (!text.empty() && text.back() == '\r') text.remove_suffix(1);
    if (vocab.split(text).empty()) continue;
    auto enc = encode_sentence(text, vocab, max_len);
    if (!enc) {
      ++c.stats.dropped;
      continue;
    }
    for (std::size_t i = 1; i + 1 < enc->decoder_view.size(); ++i) {
      ++c.stats.tokens;
      if (enc->decoder_view[i] == Vocabulary::kUnk) ++c.stats.unknown;
    }
    c.sentences.push_back(std::move(*enc));
  }
  c.stats.sentences = c.sentences.size();
  c.stats.coverage =
      c.stats.tokens == 0 ? 1.0 : 1.0 - static_cast<double>(c.stats.unknown) / static_cast<double>(c.stats.tokens);
  return c;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus file " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
  if (in.bad()) throw IoError("failed reading corpus file " + path.string());
  return lines;
}

Corpus load_corpus(const std::filesystem::path& path, const Vocabulary& vocab, std::size_t max_len) {
  const auto lines = read_lines(path);
  for (const auto& line : lines) tokenize(line, TokenizerKind::kCharacter);  // UTF-8 validation
  return encode_corpus(lines, vocab, max_len);
}

double vocabulary_coverage(std::span<const std::string> lines, const Vocabulary& vocab) {
  std::size_t total = 0, known = 0;
  for (const auto& line : lines)
    for (const auto& t : vocab.split(line)) {
      ++total;
      if (vocab.contains(t)) ++known;
    }
  return total == 0 ? 1.0 : static_cast<double>(known) / static_cast<double>(total);
}

}  // namespace latentlm
