#include "doctest.h"
#include "krutrim/tokenizer.hpp"
#include "support.hpp"
#include "synthetic.hpp"

using namespace krutrim;

namespace {

Corpus small_corpus() {
  return {{"1", "the cat sat on the mat", "en", ""},
          {"2", "the dog sat on the log", "en", ""},
          {"3", "मेरा नाम राम है और मेरा घर", "hi", ""},
          {"4", "நான் வீட்டில் இருக்கிறேன்", "ta", ""}};
}

}  // namespace

TEST_CASE("pretokenize keeps whitespace with the following piece") {
  const auto p = pretokenize("ab  cd\nef");
  CHECK(p == std::vector<std::string>{"ab", " ", " cd", "\nef"});
  std::string joined;
  for (const auto& s : p) joined += s;
  CHECK(joined == "ab  cd\nef");
}

TEST_CASE("special tokens take the lowest ids") {
  TokenizerConfig cfg;
  cfg.vocab_size = 300;
  const auto tok = Tokenizer::train(small_corpus(), cfg);
  CHECK(tok.token(0) == "<pad>");
  CHECK(tok.token(2) == "<eos>");
  CHECK(*tok.eos_id() == 2);
  CHECK(tok.base_size() == 4 + 256);
  CHECK(tok.vocab_size() <= 300);
}

TEST_CASE("merges match the naive oracle") {
  const std::vector<std::string> docs{"the cat sat on the mat", "the dog sat on the log", "banana bandana"};
  const auto tok = synthetic::train_tokenizer(docs, 300);
  CHECK(tok.merges() == synthetic::naive_bpe_merges(docs, 300));
}

TEST_CASE("round trip on arbitrary unicode") {
  TokenizerConfig cfg;
  cfg.vocab_size = 400;
  const auto tok = Tokenizer::train(small_corpus(), cfg);
  Pcg32 rng(3, 3);
  for (int i = 0; i < 300; ++i) {
    const auto s = testsupport::random_utf8(rng, 30);
    const auto ids = tok.encode(s);
    CHECK(tok.decode(ids) == s);
  }
}

TEST_CASE("code point base without byte fallback maps unseen characters to unk") {
  TokenizerConfig cfg;
  cfg.vocab_size = 100;
  cfg.byte_fallback = false;
  const auto tok = Tokenizer::train(small_corpus(), cfg);
  const auto ids = tok.encode("cat ☃");
  CHECK(std::find(ids.begin(), ids.end(), *tok.unk_id()) != ids.end());
}

TEST_CASE("save and load preserve encoding") {
  testsupport::TempDir dir;
  TokenizerConfig cfg;
  cfg.vocab_size = 320;
  const auto tok = Tokenizer::train(small_corpus(), cfg);
  tok.save(dir.file("tok.json"));
  const auto back = Tokenizer::load(dir.file("tok.json"));
  CHECK(back.merges() == tok.merges());
  CHECK(back.encode("the cat मेरा") == tok.encode("the cat मेरा"));
  CHECK(back.to_json() == tok.to_json());
}

TEST_CASE("training is deterministic") {
  TokenizerConfig cfg;
  cfg.vocab_size = 350;
  CHECK(Tokenizer::train(small_corpus(), cfg).to_json() == Tokenizer::train(small_corpus(), cfg).to_json());
}

TEST_CASE("fertility report") {
  TokenizerConfig cfg;
  cfg.vocab_size = 300;
  const auto corpus = small_corpus();
  const auto tok = Tokenizer::train(corpus, cfg);
  const auto rep = fertility_report(tok, corpus);
  CHECK(rep.per_language.at("en").word_count == 12);
  CHECK(rep.per_language.at("en").ratio >= 1.0);
  CHECK_THROWS(fertility_report(tok, Corpus{}));
}

TEST_CASE("invalid vocab size throws") {
  TokenizerConfig cfg;
  cfg.vocab_size = 10;
  CHECK_THROWS(Tokenizer::train(small_corpus(), cfg));
}
