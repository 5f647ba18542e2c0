#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latentlm/text/vocabulary.hpp"

namespace latentlm {

/// One sentence in both tokenizations: the encoder view starts with [CLS],
/// the decoder view is framed by [BOS] ... [EOS].
struct EncodedSentence {
  std::vector<int> encoder_view;
  std::vector<int> decoder_view;
  std::string raw;
  int label = -1;
};

struct CorpusStats {
  std::size_t sentences = 0;
  /// Ordinary tokens across kept sentences (specials excluded).
  std::size_t tokens = 0;
  std::size_t dropped = 0;
  std::size_t unknown = 0;
  /// 1 - unknown / tokens; 1 for an empty corpus.
  double coverage = 1.0;
};

struct Corpus {
  std::vector<EncodedSentence> sentences;
  CorpusStats stats;
};

/// Returns std::nullopt when the sentence does not fit: more than
/// max_len - 2 tokens are dropped rather than truncated.
std::optional<EncodedSentence> encode_sentence(std::string_view text, const Vocabulary& vocab,
                                               std::size_t max_len);

/// Encodes lines in order, skipping blank lines and counting drops.
Corpus encode_corpus(std::span<const std::string> lines, const Vocabulary& vocab, std::size_t max_len);

/// Reads a UTF-8 file with one sentence per line.
Corpus load_corpus(const std::filesystem::path& path, const Vocabulary& vocab, std::size_t max_len);

std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Fraction of tokens in `lines` that the vocabulary knows.
double vocabulary_coverage(std::span<const std::string> lines, const Vocabulary& vocab);

}  // namespace latentlm
