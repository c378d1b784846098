#pragma once
// Reference-based text metrics and a few-shot benchmark harness.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "krutrim/model.hpp"
#include "krutrim/tokenizer.hpp"

namespace krutrim {

struct MetricReport {
  std::string metric_name;
  double value = 0.0;
  std::map<std::string, double> components;
  std::size_t n_items = 1;

  nlohmann::json to_json() const;
};

// Lowercased whitespace tokens, as used by BLEU and ROUGE.
std::vector<std::string> metric_tokens(std::string_view text);

struct BleuOptions {
  int max_n = 4;
  bool add_one_smoothing = false;
};

// components: precision_1..precision_n, brevity_penalty, candidate_length,
// reference_length. value is the BLEU score.
MetricReport bleu(std::string_view candidate, const std::vector<std::string>& references,
                  const BleuOptions& options = {});

// components: rouge1, rouge2, rougeL, rougeLsum (F1). value is rougeL.
MetricReport rouge_suite(std::string_view candidate, std::string_view reference);

double pearson(const std::vector<double>& xs, const std::vector<double>& ys);
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);
std::vector<double> average_ranks(const std::vector<double>& xs);

std::string canonical_answer(std::string_view text);  // trim + casefold
double accuracy(const std::vector<std::string>& predictions, const std::vector<std::string>& golds);

// Maps a token to a fixed-dimension vector.
class TokenEmbedder {
 public:
  virtual ~TokenEmbedder() = default;
  virtual std::vector<double> embed(const std::string& token) const = 0;
};

class MapEmbedder : public TokenEmbedder {
 public:
  explicit MapEmbedder(std::map<std::string, std::vector<double>> table) : table_(std::move(table)) {}
  std::vector<double> embed(const std::string& token) const override;

 private:
  std::map<std::string, std::vector<double>> table_;
};

// Mean of the model's token-embedding rows over the token's subword ids.
class ModelEmbedder : public TokenEmbedder {
 public:
  ModelEmbedder(const Model<float>& model, const Tokenizer& tokenizer)
      : model_(model), tokenizer_(tokenizer) {}
  std::vector<double> embed(const std::string& token) const override;

 private:
  const Model<float>& model_;
  const Tokenizer& tokenizer_;
};

// Greedy cosine matching; components precision, recall, f1; value is f1.
MetricReport greedy_match(std::string_view candidate, std::string_view reference,
                          const TokenEmbedder& embedder);
inline double greedy_match_score(std::string_view candidate, std::string_view reference,
                                 const TokenEmbedder& embedder) {
  return greedy_match(candidate, reference, embedder).value;
}

enum class TaskType { kTranslation, kSummarisation, kParaphrasing, kReadingComprehension, kClassification };
enum class MetricKind { kBleu, kRouge, kGreedyMatch, kAccuracy };

std::string_view task_type_name(TaskType t);
TaskType parse_task_type(std::string_view s);
std::string_view metric_kind_name(MetricKind m);
MetricKind parse_metric_kind(std::string_view s);
// Metrics allowed for a task type; the first is the default.
std::vector<MetricKind> allowed_metrics(TaskType t);

struct BenchmarkSpec {
  TaskType task_type = TaskType::kClassification;
  MetricKind metric = MetricKind::kAccuracy;
  int shots = 0;
  // {input} and {output} slots; exemplars fill both, the query leaves {output} empty.
  std::string prompt_template = "Input: {input}\nOutput: {output}";
  std::string exemplar_separator = "\n\n";
  int max_new_tokens = 32;

  void validate() const;
  static BenchmarkSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct BenchmarkRow {
  std::string input;
  std::string gold;
};

// Converts a dataset row to input/gold according to the task type schema.
BenchmarkRow benchmark_row(TaskType t, const nlohmann::json& row);

std::string fill_template(const std::string& templ, std::string_view input, std::string_view output);
std::string build_fewshot_prompt(const BenchmarkSpec& spec, const std::vector<BenchmarkRow>& exemplars,
                                 std::string_view query);

// Output cleaning applied identically to every row.
std::string clean_output(TaskType t, std::string_view raw);

class TextGenerator {
 public:
  virtual ~TextGenerator() = default;
  virtual std::string generate(const std::string& prompt, int max_new_tokens) const = 0;
};

// Greedy continuation from a model, decoded up to eos.
class ModelGenerator : public TextGenerator {
 public:
  ModelGenerator(const Model<float>& model, const Tokenizer& tokenizer)
      : model_(model), tokenizer_(tokenizer) {}
  std::string generate(const std::string& prompt, int max_new_tokens) const override;

 private:
  const Model<float>& model_;
  const Tokenizer& tokenizer_;
};

struct BenchmarkResult {
  MetricReport report;
  std::vector<std::string> outputs;
};

// The first spec.shots rows serve as exemplars; the rest are scored.
BenchmarkResult run_benchmark(const TextGenerator& generator, const BenchmarkSpec& spec,
                              const std::vector<nlohmann::json>& dataset,
                              const TokenEmbedder* embedder = nullptr);

}  // namespace krutrim
