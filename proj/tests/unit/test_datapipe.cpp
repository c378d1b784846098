#include "doctest.h"
#include "krutrim/datapipe.hpp"
#include "krutrim/jsonl.hpp"
#include "krutrim/tokenizer.hpp"
#include "support.hpp"

using namespace krutrim;

TEST_CASE("exact dedup keeps the first occurrence in order") {
  const Corpus c{{"a", "hello world", "en", ""}, {"b", "  hello world\n", "en", ""}, {"c", "other", "en", ""}};
  const auto out = exact_dedup(c);
  REQUIRE(out.size() == 2);
  CHECK(out[0].id == "a");
  CHECK(out[1].id == "c");
}

TEST_CASE("shingles and jaccard") {
  CHECK(word_shingles("a b c d") == std::vector<std::string>{"a b c", "b c d"});
  CHECK(word_shingles("a b").size() == 1);
  CHECK(jaccard({"x", "y"}, {"y", "z"}) == doctest::Approx(1.0 / 3.0));
  CHECK(jaccard({}, {}) == doctest::Approx(1.0));
}

TEST_CASE("near dedup drops close copies") {
  const Corpus c{{"a", "the quick brown fox jumps over the lazy dog today", "en", ""},
                 {"b", "the quick brown fox jumps over the lazy dog today!", "en", ""},
                 {"c", "a completely different sentence about rivers and hills", "en", ""}};
  const auto out = near_dedup(c, 0.7);
  REQUIRE(out.size() == 2);
  CHECK(out[0].id == "a");
  CHECK(out[1].id == "c");
}

TEST_CASE("quality filter") {
  CleaningConfig cfg;
  cfg.min_words = 2;
  cfg.max_symbol_fraction = 0.3;
  const Corpus c{{"a", "one", "en", ""}, {"b", "two words", "en", ""}, {"c", "#### $$$ ok", "en", ""}};
  const auto out = quality_filter(c, cfg);
  REQUIRE(out.size() == 1);
  CHECK(out[0].id == "b");
  CHECK(symbol_fraction("ab!!") == doctest::Approx(0.5));
}

TEST_CASE("mixture weights normalize and reject bad input") {
  MixtureSpec s;
  s.weights = {{"a", 1.0}, {"b", 3.0}};
  CHECK(s.normalized().at("b") == doctest::Approx(0.75));
  s.weights = {{"a", -1.0}};
  CHECK_THROWS(s.normalized());
  s.weights = {{"a", 0.0}};
  CHECK_THROWS(s.normalized());
}

TEST_CASE("mixture sampling is seeded and proportional") {
  std::map<std::string, Corpus> corpora{{"x", {{"x1", "x", "en", ""}}}, {"y", {{"y1", "y", "en", ""}, {"y2", "yy", "en", ""}}}};
  MixtureSpec s;
  s.weights = {{"x", 0.2}, {"y", 0.8}};
  s.seed = 4;
  const auto a = sample_mixture(corpora, s, 5000);
  const auto b = sample_mixture(corpora, s, 5000);
  CHECK(a == b);
  std::map<std::string, std::size_t> counts;
  for (const auto& d : a) ++counts[d.id.substr(0, 1)];
  CHECK(counts["x"] / 5000.0 == doctest::Approx(0.2).epsilon(0.15));
  CHECK(mixture_chi_square(counts, s).p_value > 0.001);
}

TEST_CASE("chi-square against a hand value") {
  MixtureSpec s;
  s.weights = {{"a", 0.5}, {"b", 0.5}};
  const auto r = mixture_chi_square({{"a", 60}, {"b", 40}}, s);
  CHECK(r.statistic == doctest::Approx(4.0));
  CHECK(r.degrees_of_freedom == 1);
  CHECK(r.p_value == doctest::Approx(0.0455).epsilon(0.01));
}

TEST_CASE("corpus jsonl round trip and errors") {
  testsupport::TempDir dir;
  const Corpus c{{"a", "x\ny", "en", "web"}, {"b", "मेरा", "hi", ""}};
  write_corpus(dir.file("c.jsonl"), c);
  CHECK(read_corpus(dir.file("c.jsonl")) == c);
  testsupport::spit(dir.file("bad.jsonl"), "{\"text\": \"ok\"}\n{not json\n");
  CHECK_THROWS(read_jsonl(dir.file("bad.jsonl")));
}

TEST_CASE("balance report fractions sum to one") {
  const Corpus c{{"a", "hello there", "en", ""}, {"b", "मेरा नाम", "hi", ""}};
  TokenizerConfig cfg;
  cfg.vocab_size = 280;
  const auto tok = Tokenizer::train(c, cfg);
  const auto rep = balance_report(c, tok);
  double total = 0;
  for (const auto& [k, e] : rep.per_key) total += e.fraction;
  CHECK(total == doctest::Approx(1.0));
}
