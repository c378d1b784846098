#include <cmath>

#include "doctest.h"
#include "krutrim/evalsuite.hpp"

using namespace krutrim;

TEST_CASE("bleu precisions and brevity") {
  const auto r = bleu("the cat sat on the mat", {"the cat is on the mat"});
  CHECK(r.components.at("precision_1") == doctest::Approx(5.0 / 6));
  CHECK(r.components.at("precision_2") == doctest::Approx(3.0 / 5));
  CHECK(r.components.at("brevity_penalty") == doctest::Approx(1.0));
  CHECK(r.value == 0.0);
  const auto s = bleu("the cat", {"the cat sat on the mat"}, {2, false});
  CHECK(s.components.at("brevity_penalty") == doctest::Approx(std::exp(1 - 6.0 / 2)));
  CHECK(s.value == doctest::Approx(std::exp(1 - 3.0)));
}

TEST_CASE("bleu clips counts and smooths") {
  const auto r = bleu("the the the", {"the cat"}, {1, false});
  CHECK(r.components.at("precision_1") == doctest::Approx(1.0 / 3));
  const auto s = bleu("a b c", {"a x c"}, {2, true});
  CHECK(s.components.at("precision_2") == doctest::Approx(1.0 / 3));
  CHECK(s.value > 0.0);
}

TEST_CASE("rouge scores") {
  const auto r = rouge_suite("the cat sat", "the cat was sat");
  CHECK(r.components.at("rouge1") == doctest::Approx(2 * 1.0 * 0.75 / 1.75));
  CHECK(r.components.at("rougeL") == doctest::Approx(2 * 1.0 * 0.75 / 1.75));
  CHECK(r.components.at("rouge2") == doctest::Approx(2 * 0.5 * (1.0 / 3) / (0.5 + 1.0 / 3)));
  CHECK_THROWS(rouge_suite("", "x"));
}

TEST_CASE("correlations") {
  CHECK(pearson({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {1, 4, 9, 100}) == doctest::Approx(1.0));
  CHECK(average_ranks({10, 20, 20, 30}) == std::vector<double>{1, 2.5, 2.5, 4});
  CHECK_THROWS(pearson({1, 1, 1}, {1, 2, 3}));
}

TEST_CASE("accuracy canonicalizes") {
  CHECK(canonical_answer("  Yes \n") == "yes");
  CHECK(accuracy({"Yes", "no"}, {"yes", "yes"}) == doctest::Approx(0.5));
}

TEST_CASE("greedy match") {
  MapEmbedder emb({{"cat", {1, 0}}, {"dog", {0.8, 0.6}}, {"car", {0, 1}}});
  CHECK(greedy_match_score("cat", "cat", emb) == doctest::Approx(1.0));
  const auto r = greedy_match("cat car", "dog", emb);
  CHECK(r.components.at("recall") == doctest::Approx(0.8));
  CHECK(r.components.at("precision") == doctest::Approx((0.8 + 0.6) / 2));
}

TEST_CASE("metric mapping per task type") {
  CHECK(allowed_metrics(TaskType::kClassification).front() == MetricKind::kAccuracy);
  CHECK(allowed_metrics(TaskType::kTranslation).front() == MetricKind::kGreedyMatch);
  BenchmarkSpec spec;
  spec.task_type = TaskType::kTranslation;
  spec.metric = MetricKind::kAccuracy;
  CHECK_THROWS(spec.validate());
}

TEST_CASE("few-shot prompt") {
  BenchmarkSpec spec;
  spec.shots = 1;
  const auto p = build_fewshot_prompt(spec, {{"2+2", "4"}}, "3+3");
  CHECK(p == "Input: 2+2\nOutput: 4\n\nInput: 3+3\nOutput: ");
  CHECK(clean_output(TaskType::kClassification, " pos\nmore") == "pos");
}

namespace {

class EchoGenerator : public TextGenerator {
 public:
  std::string generate(const std::string& prompt, int) const override {
    return prompt.find("good") != std::string::npos ? " positive\nextra" : " negative";
  }
};

}  // namespace

TEST_CASE("benchmark run with a stub generator") {
  BenchmarkSpec spec;
  spec.shots = 1;
  const std::vector<nlohmann::json> rows{{{"text", "ex"}, {"label", "positive"}},
                                         {{"text", "good film"}, {"label", "positive"}},
                                         {{"text", "bad film"}, {"label", "positive"}}};
  const auto r = run_benchmark(EchoGenerator{}, spec, rows);
  CHECK(r.outputs.size() == 2);
  CHECK(r.report.value == doctest::Approx(0.5));
}
