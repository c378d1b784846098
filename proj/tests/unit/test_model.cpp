#include <cmath>
#include <fstream>

#include "doctest.h"
#include "krutrim/model.hpp"
#include "support.hpp"

using namespace krutrim;
using testsupport::tiny_config;

TEST_CASE("config validation") {
  auto c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.n_kv_heads = 3;
  CHECK_THROWS(c.validate());
  c = tiny_config();
  c.hidden_dim = 30;
  CHECK_THROWS(c.validate());
  const auto big = ModelConfig::reference_7b(32000);
  CHECK(big.n_layers == 32);
  CHECK(big.group_size() == 6);
}

TEST_CASE("parameter count matches the layout") {
  const auto c = tiny_config();
  std::size_t n = 0;
  for (const auto& t : parameter_layout(c)) n += t.numel();
  CHECK(n == c.parameter_count());
  CHECK(Weights<float>::initialize(c, 1).numel() == n);
}

TEST_CASE("alibi slopes and bias") {
  CHECK(alibi_slope(0, 8) == doctest::Approx(0.5));
  CHECK(alibi_slope(7, 8) == doctest::Approx(1.0 / 256));
  const auto b = alibi_bias(4, 3, 5);
  CHECK(b.at(0, 0, 2) == doctest::Approx(0.0));
  CHECK(b.at(0, 2, 0) == doctest::Approx(-4 * alibi_slope(0, 4)));
  CHECK(std::isinf(b.at(1, 0, 3)));
}

TEST_CASE("clip bounds activations") {
  std::vector<float> x{-5, -1, 0, 2, 9};
  clip_qkv<float>(x, 3.0);
  CHECK(x == std::vector<float>{-3, -1, 0, 2, 3});
}

TEST_CASE("gqa attention matches the reference") {
  Pcg32 rng(7, 7);
  for (auto [heads, kv] : {std::pair{4, 4}, {4, 2}, {4, 1}, {6, 3}}) {
    ModelConfig c = tiny_config();
    c.n_heads = heads;
    c.n_kv_heads = kv;
    c.hidden_dim = heads * 8;
    const int hd = 8, q_len = 5, k_len = 7;
    const auto q = testsupport::random_vector(rng, q_len * heads * hd);
    const auto k = testsupport::random_vector(rng, k_len * kv * hd);
    const auto v = testsupport::random_vector(rng, k_len * kv * hd);
    const auto got = gqa_attention<double>(q, k, v, q_len, k_len, c, alibi_bias(heads, q_len, k_len));
    const auto want = testsupport::reference_attention(q, k, v, q_len, k_len, heads, kv, hd);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("decode steps reproduce the full forward pass") {
  const auto model = Model<float>::initialize(tiny_config(), 3);
  Pcg32 rng(1, 1);
  const auto toks = testsupport::random_tokens(rng, 12, 40);
  const auto full = model.forward(toks);
  KVCache<float> cache(model.config());
  for (std::size_t t = 0; t < toks.size(); ++t) {
    const auto step = model.decode_step(cache, toks[t]);
    for (int o = 0; o < 40; ++o) CHECK(step[o] == doctest::Approx(full.logits[t * 40 + o]).epsilon(1e-5));
  }
  CHECK(cache.positions == 12);
  CHECK(cache.element_count() == 2u * 2 * 12 * model.config().kv_dim());
}

TEST_CASE("forward trace shapes") {
  const auto model = Model<float>::initialize(tiny_config(), 3);
  const std::vector<int> toks{1, 2, 3};
  const auto tr = model.forward(toks);
  CHECK(tr.hidden_states.size() == 3);
  CHECK(tr.hidden_states[0].size() == 3u * 32);
  CHECK(tr.logits.size() == 3u * 40);
  CHECK_THROWS(model.forward(std::vector<int>{40}));
  CHECK_THROWS(model.forward(std::vector<int>(33, 1)));
}

TEST_CASE("generation") {
  const auto model = Model<float>::initialize(tiny_config(), 3);
  const std::vector<int> prompt{5, 6, 7};
  const auto a = model.generate(prompt, 6, SamplingStrategy::greedy());
  CHECK(a.size() == 6);
  CHECK(a == model.generate(prompt, 6, SamplingStrategy::greedy()));
  const auto s1 = model.generate(prompt, 6, SamplingStrategy::topk(5, 1.0, 9));
  CHECK(s1 == model.generate(prompt, 6, SamplingStrategy::topk(5, 1.0, 9)));
  const auto with_eos = model.generate(prompt, 6, SamplingStrategy::greedy(), a[0]);
  CHECK(with_eos == std::vector<int>{a[0]});
  CHECK_THROWS(model.generate(prompt, 30, SamplingStrategy::greedy()));
}

TEST_CASE("checkpoint round trip and corruption detection") {
  testsupport::TempDir dir;
  const auto model = Model<float>::initialize(tiny_config(), 11);
  save_checkpoint(dir.file("m.krtm"), model, {{"note", "x"}});
  nlohmann::json extra;
  const auto back = load_checkpoint(dir.file("m.krtm"), &extra);
  CHECK(back.config() == model.config());
  CHECK(back.weights() == model.weights());
  CHECK(extra["note"] == "x");

  auto bytes = testsupport::slurp(dir.file("m.krtm"));
  bytes[bytes.size() - 3] ^= 0x5A;
  testsupport::spit(dir.file("bad.krtm"), bytes);
  CHECK_THROWS(load_checkpoint(dir.file("bad.krtm")));
  testsupport::spit(dir.file("trunc.krtm"), bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS(load_checkpoint(dir.file("trunc.krtm")));
  testsupport::spit(dir.file("magic.krtm"), "NOPE" + bytes.substr(4));
  CHECK_THROWS(load_checkpoint(dir.file("magic.krtm")));
}

TEST_CASE("float and double forward agree") {
  const auto mf = Model<float>::initialize(tiny_config(), 4);
  const Model<double> md(mf.config(), mf.weights().cast<double>());
  const std::vector<int> toks{3, 1, 4, 1, 5, 9, 2, 6};
  const auto a = mf.forward(toks).logits;
  const auto b = md.forward(toks).logits;
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-4));
}
