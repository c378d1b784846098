#include <cmath>

#include "doctest.h"
#include "krutrim/probing.hpp"
#include "support.hpp"
#include "synthetic.hpp"

using namespace krutrim;

TEST_CASE("mcq items validate") {
  MCQItem it;
  it.question = "q";
  it.choices = {"a", "b"};
  it.answer_index = 1;
  it.task = "LAMA";
  CHECK_NOTHROW(it.validate());
  CHECK(it.choice_text(1) == "q b");
  CHECK(MCQItem::from_json(it.to_json()).to_json() == it.to_json());
  it.answer_index = 2;
  CHECK_THROWS(it.validate());
  it.answer_index = 0;
  it.choices = {"a"};
  CHECK_THROWS(it.validate());
}

TEST_CASE("probe on separable features") {
  Pcg32 rng(2, 2);
  ChoiceFeatures feats;
  std::vector<int> answers;
  for (int i = 0; i < 60; ++i) {
    const int ans = static_cast<int>(rng.bounded(3));
    std::vector<std::vector<double>> choices;
    for (int c = 0; c < 3; ++c) {
      auto v = testsupport::random_vector(rng, 4, 0.1);
      v[0] += c == ans ? 1.0 : 0.0;
      choices.push_back(v);
    }
    feats.push_back(choices);
    answers.push_back(ans);
  }
  ProbeConfig pc;
  CHECK(probe_features(feats, answers, pc, 1) == doctest::Approx(1.0));
  CHECK(probe_features(feats, answers, pc, 1) == probe_features(feats, answers, pc, 1));
  feats.resize(10);
  answers.resize(10);
  CHECK_THROWS(probe_features(feats, answers, pc, 1));
}

TEST_CASE("layer reps and overlong input") {
  const auto tok = synthetic::train_tokenizer({"a b c d e"}, 270);
  const auto model = Model<float>::initialize(testsupport::tiny_config(tok.vocab_size()), 1);
  ProbeConfig pc;
  pc.layer_index = 2;
  CHECK(extract_layer_reps(model, tok, "a b", pc).size() == 32);
  CHECK_THROWS_AS(extract_layer_reps(model, tok, std::string(200, 'a'), pc), std::length_error);
  pc.layer_index = 3;
  CHECK_THROWS(pc.validate(model.config()));
}

TEST_CASE("silhouette by hand") {
  const std::vector<std::vector<double>> v{{0, 0}, {0, 1}, {10, 0}, {10, 1}};
  const std::vector<std::string> c{"a", "a", "b", "b"};
  const double a = 1.0;
  const double b = (10.0 + std::sqrt(101.0)) / 2;
  CHECK(silhouette_score(v, c) == doctest::Approx((b - a) / b));
}

TEST_CASE("pca projection is deterministic and oriented") {
  Pcg32 rng(3, 3);
  std::vector<std::vector<double>> v;
  std::vector<std::string> c;
  for (int i = 0; i < 20; ++i) {
    auto x = testsupport::random_vector(rng, 5, 0.1);
    x[2] += i < 10 ? -3.0 : 3.0;
    v.push_back(x);
    c.push_back(i < 10 ? "lo" : "hi");
  }
  const auto r = project_embeddings(v, c);
  REQUIRE(r.points.size() == 20);
  CHECK(r.points[0].x < 0);
  CHECK(r.points[19].x > 0);
  CHECK(r.silhouette > 0.8);
  CHECK(r.to_tsv() == project_embeddings(v, c).to_tsv());
  CHECK_THROWS(project_embeddings({{1, 2}, {1, 2}, {1, 2}}, {"a", "a", "b"}));
}

TEST_CASE("layer sweep csv") {
  LayerTaskMatrix m;
  m.layers = {0};
  m.tasks = {"LAMA"};
  m.accuracy[{0, "LAMA"}] = 0.5;
  CHECK(m.to_csv() == "layer,task,accuracy\n0,LAMA,0.500000\n");
}
