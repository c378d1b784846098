#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "krutrim/training.hpp"
#include "support.hpp"
#include "synthetic.hpp"

using namespace krutrim;
using testsupport::tiny_config;

TEST_CASE("cross entropy by hand") {
  const std::vector<double> logits{0.0, std::log(3.0)};
  const std::vector<int> targets{1};
  CHECK(lm_loss<double>(logits, 2, targets) == doctest::Approx(-std::log(0.75)));
  std::vector<double> d(2, 0.0);
  cross_entropy<double>(logits, 2, targets, {}, d, 1.0);
  CHECK(d[0] == doctest::Approx(0.25));
  CHECK(d[1] == doctest::Approx(-0.25));
}

TEST_CASE("masked positions do not count") {
  const std::vector<double> logits{0, 0, 5, 0};
  const std::vector<int> targets{0, 0};
  const std::vector<std::uint8_t> mask{1, 0};
  CHECK(lm_loss<double>(logits, 2, targets, mask) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("dpo loss and gradient") {
  CHECK(dpo_loss(-1, -2, -1, -2, 0.1) == doctest::Approx(std::log(2.0)));
  const double m = implicit_reward_margin(-1, -3, -2, -2, 0.5);
  CHECK(m == doctest::Approx(1.0));
  CHECK(dpo_loss(-1, -3, -2, -2, 0.5) == doctest::Approx(std::log1p(std::exp(-1.0))));
  const auto g = dpo_loss_grad(-1, -3, -2, -2, 0.5);
  const double h = 1e-6;
  const double num = (dpo_loss(-1 + h, -3, -2, -2, 0.5) - dpo_loss(-1 - h, -3, -2, -2, 0.5)) / (2 * h);
  CHECK(g.d_policy_chosen == doctest::Approx(num));
  CHECK(g.d_policy_rejected == doctest::Approx(-num));
}

TEST_CASE("adam first step moves each weight by about lr") {
  const auto cfg = tiny_config();
  auto w = Weights<double>::zeros(cfg);
  auto g = Weights<double>::zeros(cfg);
  g.token_embedding[0] = 2.0;
  g.token_embedding[1] = -0.01;
  Adam<double> opt(cfg);
  opt.step(w, g, 0.1);
  CHECK(w.token_embedding[0] == doctest::Approx(-0.1));
  CHECK(w.token_embedding[1] == doctest::Approx(0.1).epsilon(1e-5));
  CHECK(w.token_embedding[2] == 0.0);
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("non-finite gradient names the tensor") {
  const auto cfg = tiny_config();
  auto w = Weights<float>::zeros(cfg);
  auto g = Weights<float>::zeros(cfg);
  g.layers[1].w2[3] = std::numeric_limits<float>::quiet_NaN();
  Adam<float> opt(cfg);
  try {
    opt.step(w, g, 0.1);
    FAIL("expected a throw");
  } catch (const NonFiniteGradient& e) {
    CHECK(e.tensor() == "layers.1.w2");
  }
}

TEST_CASE("gradient check on the language-model loss") {
  const auto m = Model<double>::initialize(tiny_config(24, 1), 2);
  const std::vector<int> seq{1, 5, 7, 2, 9, 11};
  const auto rep = grad_check(
      m, [&](const Model<double>& mm, Weights<double>* g) { return lm_loss_and_grad(mm, std::span<const int>(seq), g); },
      40, 1e-4, 3);
  CHECK(rep.passed);
  CHECK(rep.samples.size() == 40);
}

TEST_CASE("stage config validation and json") {
  auto dpo = StageConfig::defaults(Stage::kDPO);
  CHECK(dpo.learning_rate == doctest::Approx(5e-7));
  CHECK(*dpo.beta == doctest::Approx(0.1));
  dpo.beta.reset();
  CHECK_THROWS(dpo.validate());
  const auto cpt = StageConfig::defaults(Stage::kCPT);
  CHECK(cpt.mixture.weights.at("original") == doctest::Approx(0.25));
  const auto back = StageConfig::from_json(cpt.to_json());
  CHECK(back.to_json() == cpt.to_json());
  CHECK(parse_stage("sft") == Stage::kSFT);
  CHECK_THROWS(parse_stage("rlhf"));
}

TEST_CASE("sft examples mask the prompt") {
  const auto tok = synthetic::train_tokenizer({"hello there", "general kenobi"}, 280);
  const auto ex = tokenize_example(tok, "hello there", " general kenobi");
  const auto mask = ex.response_mask();
  REQUIRE(mask.size() == ex.tokens.size() - 1);
  for (std::size_t i = 0; i < mask.size(); ++i) CHECK(mask[i] == (i + 1 >= ex.response_start ? 1 : 0));
  CHECK(ex.tokens.back() == *tok.eos_id());
  CHECK_THROWS(SFTExample::from_json({{"prompt", "p"}, {"response", ""}}));
}

TEST_CASE("pretraining lowers loss and writes a log") {
  auto model = Model<float>::initialize(tiny_config(), 5);
  TrainData data;
  for (int i = 0; i < 8; ++i) data.sequences["pt"].push_back({1, 2, 3, 4, 5, 6, 7, 8, (i % 5) + 9});
  auto sc = StageConfig::defaults(Stage::kPT);
  sc.steps = 60;
  sc.batch_size = 4;
  sc.learning_rate = 1e-2;
  sc.seed = 1;
  const double before = mean_lm_loss(model, data.sequences["pt"]);
  const auto res = train_stage(model, sc, data);
  CHECK(mean_lm_loss(model, data.sequences["pt"]) < before);
  CHECK(res.log.records.size() == 60);
  CHECK(res.log.to_csv().rfind("step,stage,loss,lr,tokens_seen\n", 0) == 0);
}

TEST_CASE("resume from a checkpoint is bit-identical") {
  testsupport::TempDir dir;
  TrainData data;
  Pcg32 rng(6, 6);
  for (int i = 0; i < 10; ++i) data.sequences["pt"].push_back(testsupport::random_tokens(rng, 10, 40));
  auto sc = StageConfig::defaults(Stage::kPT);
  sc.steps = 20;
  sc.batch_size = 3;
  sc.learning_rate = 3e-3;
  sc.seed = 2;
  sc.checkpoint_interval = 10;

  auto straight = Model<float>::initialize(tiny_config(), 8);
  TrainOptions o1;
  o1.checkpoint_dir = dir.path() / "a";
  const auto r1 = train_stage(straight, sc, data, o1);
  REQUIRE(r1.checkpoints.size() == 2);

  auto [resumed, state] = load_train_state(r1.checkpoints[0]);
  CHECK(state.step == 10);
  TrainOptions o2;
  o2.resume = &state;
  train_stage(resumed, sc, data, o2);
  CHECK(resumed.weights() == straight.weights());
}

TEST_CASE("dpo training moves the margin up") {
  auto setup = synthetic::preference_setup(6);
  auto policy = setup.reference;
  auto sc = StageConfig::defaults(Stage::kDPO);
  sc.steps = 10;
  sc.batch_size = 2;
  sc.learning_rate = 1e-4;
  TrainData data;
  data.preferences = setup.pairs;
  TrainOptions o;
  o.reference = &setup.reference;
  const auto res = train_stage(policy, sc, data, o);
  CHECK(res.dpo_margins.size() == 10);
  CHECK(mean_implicit_margin(policy, setup.reference, setup.pairs, 0.1) > 0.0);
}
