#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "latentlm/errors.hpp"
#include "latentlm/text/corpus.hpp"
#include "latentlm/text/synth.hpp"
#include "latentlm/text/vocabulary.hpp"

using namespace latentlm;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& contents) {
  const auto path = std::filesystem::temp_directory_path() / ("latentlm_text_" + name);
  std::ofstream(path, std::ios::binary) << contents;
  return path;
}

}  // namespace

TEST_CASE("specials occupy ids 0-4") {
  Vocabulary v({"x"}, TokenizerKind::kWhitespace);
  CHECK(v.token(0) == "[CLS]");
  CHECK(v.token(1) == "[BOS]");
  CHECK(v.token(2) == "[EOS]");
  CHECK(v.token(3) == "[PAD]");
  CHECK(v.token(4) == "[UNK]");
  CHECK(v.id("x") == 5);
  CHECK(v.id("missing") == Vocabulary::kUnk);
}

TEST_CASE("build_vocab on a tiny corpus") {
  const std::vector<std::string> lines{"a a b"};
  const auto v = build_vocab(lines, 7, TokenizerKind::kWhitespace);
  REQUIRE(v.size() == 7);
  CHECK(v.token(5) == "a");
  CHECK(v.token(6) == "b");
  CHECK_THROWS_AS(build_vocab(lines, 5, TokenizerKind::kWhitespace), RangeError);
  const std::vector<std::string> empty{"", "   "};
  CHECK_THROWS_AS(build_vocab(empty, 10, TokenizerKind::kWhitespace), TokenError);
}

TEST_CASE("frequency ties are ordered lexicographically and truncation keeps the most frequent") {
  const std::vector<std::string> lines{"zeta beta alpha", "beta zeta alpha gamma", "zeta"};
  const auto v = build_vocab(lines, 8, TokenizerKind::kWhitespace);
  REQUIRE(v.size() == 8);
  CHECK(v.token(5) == "zeta");   // 3
  CHECK(v.token(6) == "alpha");  // 2, ties with beta
  CHECK(v.token(7) == "beta");
  CHECK_FALSE(v.contains("gamma"));
  CHECK(build_vocab(lines, 8, TokenizerKind::kWhitespace) == v);
}

TEST_CASE("coverage equals one minus the unknown fraction by direct count") {
  const auto train = synth_corpus(1, 200, "sentiment");
  std::vector<std::string> shortlist(train.begin(), train.begin() + 3);
  const auto v = build_vocab(shortlist, 12, TokenizerKind::kWhitespace);
  const auto held = synth_corpus(2, 100, "sentiment");
  std::size_t total = 0, unk = 0;
  for (const auto& line : held)
    for (const auto& tok : tokenize(line, TokenizerKind::kWhitespace)) {
      ++total;
      if (!v.contains(tok)) ++unk;
    }
  REQUIRE(unk > 0);
  CHECK(vocabulary_coverage(held, v) == doctest::Approx(1.0 - static_cast<double>(unk) / total).epsilon(1e-15));
  const auto corpus = encode_corpus(held, v, 64);
  CHECK(corpus.stats.coverage == doctest::Approx(1.0 - static_cast<double>(unk) / total).epsilon(1e-15));
}

TEST_CASE("encode_sentence framing and unknown words") {
  const Vocabulary v({"a", "b"}, TokenizerKind::kWhitespace);
  const auto s = encode_sentence("a b", v, 64);
  REQUIRE(s);
  CHECK(s->encoder_view == std::vector<int>{Vocabulary::kCls, 5, 6});
  CHECK(s->decoder_view == std::vector<int>{Vocabulary::kBos, 5, 6, Vocabulary::kEos});
  CHECK(s->raw == "a b");

  const auto u = encode_sentence("a zebra", v, 64);
  REQUIRE(u);
  CHECK(u->encoder_view[2] == Vocabulary::kUnk);
  CHECK(u->decoder_view[2] == Vocabulary::kUnk);
}

TEST_CASE("over-length sentences are dropped, not truncated") {
  const Vocabulary v({"a"}, TokenizerKind::kWhitespace);
  CHECK(encode_sentence("a a a", v, 5));
  CHECK_FALSE(encode_sentence("a a a a", v, 5));
}

TEST_CASE("decode of the decoder view round-trips in-vocabulary text") {
  const auto lines = synth_corpus(3, 500, "svo");
  const auto v = build_vocab(lines, 1000, TokenizerKind::kWhitespace);
  for (const auto& line : lines) {
    const auto s = encode_sentence(line, v, 64);
    REQUIRE(s);
    CHECK(v.decode(s->decoder_view) == line);
    CHECK(v.decode(s->encoder_view) == line);
    CHECK(std::count(s->decoder_view.begin(), s->decoder_view.end(), Vocabulary::kEos) == 1);
    CHECK(s->decoder_view.back() == Vocabulary::kEos);
    for (int id : s->decoder_view) CHECK(static_cast<std::size_t>(id) < v.size());
  }
}

TEST_CASE("character tokenization splits code points") {
  const auto toks = tokenize("h\xC3\xA9!", TokenizerKind::kCharacter);
  CHECK(toks == std::vector<std::string>{"h", "\xC3\xA9", "!"});
  const std::vector<std::string> lines{"ab", "ba"};
  const auto v = build_vocab(lines, 10, TokenizerKind::kCharacter);
  const auto s = encode_sentence("ab", v, 8);
  REQUIRE(s);
  CHECK(v.decode(s->decoder_view) == "ab");
}

TEST_CASE("load_corpus: empty file, length filter and recount") {
  const Vocabulary v({"w"}, TokenizerKind::kWhitespace);
  const auto empty = load_corpus(temp_file("empty.txt", ""), v, 64);
  CHECK(empty.sentences.empty());
  CHECK(empty.stats.sentences == 0);
  CHECK(empty.stats.tokens == 0);
  CHECK(empty.stats.dropped == 0);

  std::string long_line;
  for (int i = 0; i < 100; ++i) long_line += (i ? " w" : "w");
  const auto filtered = load_corpus(temp_file("long.txt", long_line + "\n"), v, 64);
  CHECK(filtered.sentences.empty());
  CHECK(filtered.stats.dropped == 1);

  const auto lines = synth_corpus(4, 300, "sentiment");
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  const auto vocab = build_vocab(lines, 1000, TokenizerKind::kWhitespace);
  const auto c = load_corpus(temp_file("synth.txt", text), vocab, 64);
  REQUIRE(c.sentences.size() == lines.size());
  std::size_t recount = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    CHECK(c.sentences[i].raw == lines[i]);
    recount += c.sentences[i].decoder_view.size() - 2;
  }
  CHECK(c.stats.tokens == recount);
  CHECK(c.stats.coverage == 1.0);

  CHECK_THROWS_AS(load_corpus("/nonexistent/dir/corpus.txt", v, 64), IoError);
  CHECK_THROWS_AS(load_corpus(temp_file("bad.txt", "ok\n\xFF\xFE\n"), v, 64), TokenError);
}

TEST_CASE("vocabulary save/load round trip") {
  const auto v = build_vocab(synth_corpus(5, 50, "svo"), 100, TokenizerKind::kWhitespace);
  const auto path = std::filesystem::temp_directory_path() / "latentlm_text_vocab.txt";
  v.save(path);
  const auto back = Vocabulary::load(path, TokenizerKind::kWhitespace);
  CHECK(back == v);
  CHECK(back.hash() == v.hash());
}

TEST_CASE("synth corpus determinism and limits") {
  CHECK(synth_corpus(9, 100, "sentiment") == synth_corpus(9, 100, "sentiment"));
  CHECK(synth_corpus(9, 100, "sentiment") != synth_corpus(10, 100, "sentiment"));
  CHECK(synth_corpus(9, 0, "svo").empty());
  CHECK_THROWS_AS(synth_corpus(9, 10, "no-such-grammar"), ConfigError);
  for (const auto& line : synth_corpus(11, 1000, "svo"))
    CHECK(tokenize(line, TokenizerKind::kWhitespace).size() + 2 <= 64);
}

TEST_CASE("template parse inverts render") {
  for (const auto& s : synth_labeled(12, 500, "sentiment")) {
    const auto parsed = parse_template(s.text);
    REQUIRE(parsed);
    CHECK(*parsed == s.slots);
    CHECK(render(*parsed) == s.text);
    CHECK(template_label(*parsed, "sentiment") == s.label);
  }
  CHECK_FALSE(parse_template("the happy cats sees the dog"));
  CHECK_FALSE(parse_template("random words here"));
}

TEST_CASE("label balance within 2% over 10k draws") {
  for (const char* g : {"sentiment", "svo"}) {
    std::map<int, std::size_t> counts;
    for (const auto& s : synth_labeled(13, 10000, g)) ++counts[s.label];
    REQUIRE(counts.size() == 2);
    for (const auto& [label, n] : counts) CHECK(std::abs(static_cast<double>(n) / 10000.0 - 0.5) <= 0.02);
  }
}
