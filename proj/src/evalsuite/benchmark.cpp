#include <algorithm>
#include <stdexcept>

#include "krutrim/evalsuite.hpp"
#include "krutrim/text.hpp"

namespace krutrim {

namespace {

struct TaskName {
  TaskType type;
  std::string_view name;
};
constexpr TaskName kTaskNames[] = {{TaskType::kTranslation, "translation"},
                                   {TaskType::kSummarisation, "summarisation"},
                                   {TaskType::kParaphrasing, "paraphrasing"},
                                   {TaskType::kReadingComprehension, "reading-comprehension"},
                                   {TaskType::kClassification, "classification"}};

struct MetricName {
  MetricKind kind;
  std::string_view name;
};
constexpr MetricName kMetricNames[] = {{MetricKind::kBleu, "bleu"},
                                       {MetricKind::kRouge, "rouge"},
                                       {MetricKind::kGreedyMatch, "greedy_match"},
                                       {MetricKind::kAccuracy, "accuracy"}};

std::string field(const nlohmann::json& row, const char* key) {
  if (!row.is_object() || !row.contains(key)) {
    throw std::invalid_argument(std::string("dataset row schema mismatch: missing '") + key + "'");
  }
  const auto& v = row[key];
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  return v.dump();
}

}  // namespace

std::string_view task_type_name(TaskType t) {
  for (const auto& e : kTaskNames) {
    if (e.type == t) return e.name;
  }
  return "?";
}

TaskType parse_task_type(std::string_view s) {
  for (const auto& e : kTaskNames) {
    if (e.name == s) return e.type;
  }
  if (s == "summarization") return TaskType::kSummarisation;
  throw std::invalid_argument("unknown task_type '" + std::string(s) + "'");
}

std::string_view metric_kind_name(MetricKind m) {
  for (const auto& e : kMetricNames) {
    if (e.kind == m) return e.name;
  }
  return "?";
}

MetricKind parse_metric_kind(std::string_view s) {
  for (const auto& e : kMetricNames) {
    if (e.name == s) return e.kind;
  }
  if (s == "bertscore" || s == "match") return MetricKind::kGreedyMatch;
  throw std::invalid_argument("unknown metric '" + std::string(s) + "'");
}

std::vector<MetricKind> allowed_metrics(TaskType t) {
  switch (t) {
    case TaskType::kTranslation:
    case TaskType::kSummarisation:
      return {MetricKind::kGreedyMatch};
    case TaskType::kParaphrasing:
    case TaskType::kReadingComprehension:
      return {MetricKind::kGreedyMatch, MetricKind::kAccuracy};
    case TaskType::kClassification:
      return {MetricKind::kAccuracy};
  }
  return {};
}

void BenchmarkSpec::validate() const {
  const auto allowed = allowed_metrics(task_type);
  if (std::find(allowed.begin(), allowed.end(), metric) == allowed.end()) {
    throw std::invalid_argument("metric " + std::string(metric_kind_name(metric)) +
                                " is not valid for task " + std::string(task_type_name(task_type)));
  }
  if (shots < 0) throw std::invalid_argument("shots must be >= 0");
  if (max_new_tokens < 1) throw std::invalid_argument("max_new_tokens must be >= 1");
  if (prompt_template.find("{input}") == std::string::npos) {
    throw std::invalid_argument("prompt_template lacks an {input} slot");
  }
}

BenchmarkSpec BenchmarkSpec::from_json(const nlohmann::json& j) {
  BenchmarkSpec s;
  s.task_type = parse_task_type(j.at("task_type").get<std::string>());
  s.metric = j.contains("metric") ? parse_metric_kind(j["metric"].get<std::string>())
                                  : allowed_metrics(s.task_type).front();
  s.shots = j.value("shots", s.shots);
  s.prompt_template = j.value("prompt_template", s.prompt_template);
  s.exemplar_separator = j.value("exemplar_separator", s.exemplar_separator);
  s.max_new_tokens = j.value("max_new_tokens", s.max_new_tokens);
  s.validate();
  return s;
}

nlohmann::json BenchmarkSpec::to_json() const {
  return {{"task_type", task_type_name(task_type)}, {"metric", metric_kind_name(metric)},
          {"shots", shots},          {"prompt_template", prompt_template},
          {"exemplar_separator", exemplar_separator}, {"max_new_tokens", max_new_tokens}};
}

BenchmarkRow benchmark_row(TaskType t, const nlohmann::json& row) {
  switch (t) {
    case TaskType::kTranslation:
    case TaskType::kSummarisation:
    case TaskType::kParaphrasing:
      return {field(row, "source"), field(row, "target")};
    case TaskType::kReadingComprehension:
      return {field(row, "context") + "\nQuestion: " + field(row, "question"), field(row, "answer")};
    case TaskType::kClassification:
      if (row.is_object() && row.contains("premise")) {
        return {field(row, "premise") + "\nOption 1: " + field(row, "choice1") +
                    "\nOption 2: " + field(row, "choice2"),
                field(row, "answer")};
      }
      return {field(row, "text"), field(row, "label")};
  }
  throw std::invalid_argument("unknown task type");
}

std::string fill_template(const std::string& templ, std::string_view input, std::string_view output) {
  std::string out;
  for (std::size_t i = 0; i < templ.size();) {
    if (templ.compare(i, 7, "{input}") == 0) {
      out += input;
      i += 7;
    } else if (templ.compare(i, 8, "{output}") == 0) {
      out += output;
      i += 8;
    } else {
      out += templ[i++];
    }
  }
  return out;
}

std::string build_fewshot_prompt(const BenchmarkSpec& spec, const std::vector<BenchmarkRow>& exemplars,
                                 std::string_view query) {
  if (static_cast<int>(exemplars.size()) != spec.shots) {
    throw std::invalid_argument("expected " + std::to_string(spec.shots) + " exemplars, got " +
                                std::to_string(exemplars.size()));
  }
  std::string prompt;
  for (const auto& ex : exemplars) {
    prompt += fill_template(spec.prompt_template, ex.input, ex.gold);
    prompt += spec.exemplar_separator;
  }
  prompt += fill_template(spec.prompt_template, query, "");
  return prompt;
}

std::string clean_output(TaskType t, std::string_view raw) {
  std::string s = text::trim(raw);
  if (t == TaskType::kClassification) {
    const auto nl = s.find('\n');
    if (nl != std::string::npos) s = text::trim(std::string_view(s).substr(0, nl));
  }
  return s;
}

std::string ModelGenerator::generate(const std::string& prompt, int max_new_tokens) const {
  auto ids = tokenizer_.encode(prompt);
  const int limit = model_.config().max_seq_len;
  max_new_tokens = std::min(max_new_tokens, limit - 1);
  const std::size_t keep = static_cast<std::size_t>(limit - max_new_tokens);
  if (ids.size() > keep) ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(keep));
  if (ids.empty()) {
    if (!tokenizer_.bos_id()) throw std::invalid_argument("generate: empty prompt");
    ids.push_back(*tokenizer_.bos_id());
  }
  const auto eos = tokenizer_.eos_id();
  auto out = model_.generate(ids, max_new_tokens, SamplingStrategy::greedy(), eos);
  if (eos && !out.empty() && out.back() == *eos) out.pop_back();
  return tokenizer_.decode(out);
}

BenchmarkResult run_benchmark(const TextGenerator& generator, const BenchmarkSpec& spec,
                              const std::vector<nlohmann::json>& dataset,
                              const TokenEmbedder* embedder) {
  spec.validate();
  std::vector<BenchmarkRow> rows;
  for (const auto& r : dataset) rows.push_back(benchmark_row(spec.task_type, r));
  if (rows.size() <= static_cast<std::size_t>(spec.shots)) {
    throw std::invalid_argument("dataset has no rows left after taking exemplars");
  }
  const std::vector<BenchmarkRow> exemplars(rows.begin(), rows.begin() + spec.shots);
  if (spec.metric == MetricKind::kGreedyMatch && !embedder) {
    throw std::invalid_argument("greedy_match metric needs a token embedder");
  }

  BenchmarkResult result;
  std::vector<std::string> golds;
  double sum = 0.0;
  for (std::size_t i = spec.shots; i < rows.size(); ++i) {
    const auto prompt = build_fewshot_prompt(spec, exemplars, rows[i].input);
    auto out = clean_output(spec.task_type, generator.generate(prompt, spec.max_new_tokens));
    const auto gold = clean_output(spec.task_type, rows[i].gold);
    switch (spec.metric) {
      case MetricKind::kAccuracy:
        break;
      case MetricKind::kGreedyMatch:
        sum += metric_tokens(out).empty() ? 0.0 : greedy_match_score(out, gold, *embedder);
        break;
      case MetricKind::kBleu:
        sum += metric_tokens(out).empty() ? 0.0 : bleu(out, {gold}).value;
        break;
      case MetricKind::kRouge:
        sum += metric_tokens(out).empty() ? 0.0 : rouge_suite(out, gold).value;
        break;
    }
    result.outputs.push_back(std::move(out));
    golds.push_back(gold);
  }
  auto& rep = result.report;
  rep.metric_name = std::string(metric_kind_name(spec.metric));
  rep.n_items = golds.size();
  rep.value = spec.metric == MetricKind::kAccuracy
                  ? accuracy(result.outputs, golds)
                  : sum / static_cast<double>(golds.size());
  rep.components["shots"] = spec.shots;
  return result;
}

}  // namespace krutrim
