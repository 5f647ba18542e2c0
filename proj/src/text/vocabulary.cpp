#include "latentlm/text/vocabulary.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "latentlm/errors.hpp"

namespace latentlm {

std::string_view to_string(TokenizerKind kind) {
  return kind == TokenizerKind::kWhitespace ? "whitespace" : "character";
}

TokenizerKind tokenizer_kind_from_string(std::string_view s) {
  if (s == "whitespace") return TokenizerKind::kWhitespace;
  if (s == "character") return TokenizerKind::kCharacter;
  throw ConfigError("unknown tokenizer kind '" + std::string(s) + "'");
}

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 0;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text, TokenizerKind kind) {
  std::vector<std::string> out;
  if (kind == TokenizerKind::kWhitespace) {
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && is_space(text[i])) ++i;
      std::size_t j = i;
      while (j < text.size() && !is_space(text[j])) ++j;
      if (j > i) out.emplace_back(text.substr(i, j - i));
      i = j;
    }
    return out;
  }
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t n = utf8_length(static_cast<unsigned char>(text[i]));
    if (n == 0 || i + n > text.size()) throw TokenError("invalid UTF-8 in input text");
    for (std::size_t k = 1; k < n; ++k)
      if ((static_cast<unsigned char>(text[i + k]) >> 6) != 0x2) throw TokenError("invalid UTF-8 in input text");
    out.emplace_back(text.substr(i, n));
    i += n;
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens, TokenizerKind kind) : kind_(kind) {
  tokens_.reserve(tokens.size() + kSpecialCount);
  for (auto s : kSpecialTokens) tokens_.emplace_back(s);
  for (auto& t : tokens) tokens_.push_back(std::move(t));
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw TokenError("duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw TokenError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(tokens_.size()));
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

std::vector<std::string> Vocabulary::split(std::string_view text) const { return tokenize(text, kind_); }

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  bool first = true;
  for (int id : ids) {
    if (id == kCls || id == kBos || id == kEos || id == kPad) continue;
    if (!first && kind_ == TokenizerKind::kWhitespace) out += ' ';
    out += token(id);
    first = false;
  }
  return out;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    h ^= 0xFF;
    h *= 0x100000001b3ull;
  };
  mix(to_string(kind_));
  for (const auto& t : tokens_) mix(t);
  return h;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw IoError("failed writing vocabulary file " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path, TokenizerKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read vocabulary file " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  if (lines.size() < kSpecialCount) throw TokenError("vocabulary file lacks the special tokens");
  for (std::size_t i = 0; i < kSpecialCount; ++i)
    if (lines[i] != kSpecialTokens[i]) throw TokenError("vocabulary file special token mismatch at line " + std::to_string(i + 1));
  return Vocabulary(std::vector<std::string>(lines.begin() + kSpecialCount, lines.end()), kind);
}

Vocabulary build_vocab(std::span<const std::string> lines, std::size_t max_size, TokenizerKind kind) {
  if (max_size < Vocabulary::kSpecialCount + 1)
    throw RangeError("vocabulary max_size must be at least 6");
  std::map<std::string, std::size_t> freq;
  for (const auto& line : lines)
    for (auto& tok : tokenize(line, kind)) ++freq[tok];
  for (auto s : Vocabulary::kSpecialTokens) freq.erase(std::string(s));
  if (freq.empty()) throw TokenError("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
  // std::map iteration is lexicographic, so a stable sort by count keeps ties ordered
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(items.size(), max_size - Vocabulary::kSpecialCount);
  std::vector<std::string> tokens;
  tokens.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(items[i].first);
  return Vocabulary(std::move(tokens), kind);
}

}  // namespace latentlm
