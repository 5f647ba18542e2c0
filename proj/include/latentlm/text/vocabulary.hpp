#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace latentlm {

enum class TokenizerKind { kWhitespace, kCharacter };

std::string_view to_string(TokenizerKind kind);
TokenizerKind tokenizer_kind_from_string(std::string_view s);

/// Token <-> id bijection. Ids 0-4 are reserved for the special tokens.
class Vocabulary {
 public:
  static constexpr int kCls = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kPad = 3;
  static constexpr int kUnk = 4;
  static constexpr std::size_t kSpecialCount = 5;
  static constexpr std::string_view kSpecialTokens[kSpecialCount] = {"[CLS]", "[BOS]", "[EOS]",
                                                                     "[PAD]", "[UNK]"};

  Vocabulary() : Vocabulary(std::vector<std::string>{}, TokenizerKind::kWhitespace) {}
  /// `tokens` are the ordinary tokens in id order (specials are prepended).
  Vocabulary(std::vector<std::string> tokens, TokenizerKind kind);

  std::size_t size() const { return tokens_.size(); }
  TokenizerKind kind() const { return kind_; }
  const std::string& token(int id) const;
  /// Returns kUnk for unknown tokens.
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Splits text according to the tokenizer kind.
  std::vector<std::string> split(std::string_view text) const;
  /// Joins the tokens for `ids`, skipping [CLS]/[BOS]/[EOS]/[PAD].
  std::string decode(std::span<const int> ids) const;

  /// FNV-1a over the kind and the token list; identifies a vocabulary in
  /// checkpoints.
  std::uint64_t hash() const;

  /// Newline-delimited tokens in id order, specials first.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path, TokenizerKind kind);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.kind_ == b.kind_ && a.tokens_ == b.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  TokenizerKind kind_;
};

/// Splits on ASCII whitespace or into UTF-8 code points.
std::vector<std::string> tokenize(std::string_view text, TokenizerKind kind);

/// Keeps the max_size - 5 most frequent tokens, ties broken
/// lexicographically. Throws RangeError if max_size < 6 and TokenError if the
/// lines hold no tokens.
Vocabulary build_vocab(std::span<const std::string> lines, std::size_t max_size,
                       TokenizerKind kind);

}  // namespace latentlm
