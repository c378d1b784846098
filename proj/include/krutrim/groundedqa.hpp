#pragma once
// Local BM25 retrieval, answers gated on grounding, and judged-set scoring.

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "krutrim/document.hpp"
#include "krutrim/evalsuite.hpp"

namespace krutrim {

// Lowercased runs of letters and digits.
std::vector<std::string> retrieval_tokens(std::string_view text);
const std::set<std::string>& english_stopwords();
// Tokens with English stopwords removed.
std::vector<std::string> content_tokens(std::string_view text);

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

struct RetrievedPassage {
  std::string doc_id;
  double score = 0.0;
  std::string text;
};

class DocIndex {
 public:
  // Throws on an empty corpus or duplicate document ids.
  static DocIndex build(const Corpus& corpus, Bm25Params params = {});

  void add(const Document& doc);
  void remove(const std::string& doc_id);

  std::size_t size() const { return docs_.size(); }
  const std::vector<Document>& documents() const { return docs_; }
  std::size_t doc_freq(const std::string& term) const;
  std::size_t term_freq(const std::string& doc_id, const std::string& term) const;
  std::size_t doc_length(const std::string& doc_id) const;
  double average_length() const;

  // idf = ln((N - df + 0.5) / (df + 0.5) + 1)
  double idf(const std::string& term) const;
  double score(const std::string& doc_id, std::string_view query) const;

  // Top-k documents with a positive score, by descending score then doc_id.
  // Throws when the query has no tokens.
  std::vector<RetrievedPassage> retrieve(std::string_view query, std::size_t k) const;

  nlohmann::json to_json() const;
  static DocIndex from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static DocIndex load(const std::string& path);

  // Statistics equality (documents, frequencies, lengths).
  bool operator==(const DocIndex& other) const;

 private:
  std::size_t position(const std::string& doc_id) const;

  Bm25Params params_;
  std::vector<Document> docs_;
  std::vector<std::map<std::string, std::size_t>> tf_;
  std::vector<std::size_t> lengths_;
  std::map<std::string, std::size_t> df_;
  std::size_t total_length_ = 0;
};

// Fraction of the answer's content-token occurrences present in any passage.
double grounding_overlap(std::string_view answer, const std::vector<RetrievedPassage>& passages);

enum class AnswerStatus { kAnswered, kRefrained, kFlaggedIncorrectPremise };
std::string_view answer_status_name(AnswerStatus s);

struct GroundedAnswer {
  AnswerStatus status = AnswerStatus::kRefrained;
  std::string text;
  std::vector<std::string> citations;
  double grounding_overlap = 0.0;

  nlohmann::json to_json() const;
};

struct GroundingPolicy {
  std::size_t k = 5;
  double min_retrieval_score = 0.0;
  double min_overlap = 0.5;
  bool premise_check = false;
};

class AnswerGenerator {
 public:
  virtual ~AnswerGenerator() = default;
  virtual std::string answer(std::string_view query,
                             const std::vector<RetrievedPassage>& passages) const = 0;
  // True when the query's premise conflicts with the passages.
  virtual bool flags_premise(std::string_view query,
                             const std::vector<RetrievedPassage>& passages) const {
    (void)query;
    (void)passages;
    return false;
  }
};

std::string grounded_prompt(std::string_view query, const std::vector<RetrievedPassage>& passages);
std::string premise_prompt(std::string_view query, const std::vector<RetrievedPassage>& passages);

// Prompts a text generator with the passages and the query.
class PromptedAnswerer : public AnswerGenerator {
 public:
  PromptedAnswerer(const TextGenerator& generator, int max_new_tokens = 48)
      : generator_(generator), max_new_tokens_(max_new_tokens) {}
  std::string answer(std::string_view query,
                     const std::vector<RetrievedPassage>& passages) const override;
  bool flags_premise(std::string_view query,
                     const std::vector<RetrievedPassage>& passages) const override;

 private:
  const TextGenerator& generator_;
  int max_new_tokens_;
};

// Returns the passage sentence sharing the most content tokens with the query.
class ExtractiveAnswerer : public AnswerGenerator {
 public:
  std::string answer(std::string_view query,
                     const std::vector<RetrievedPassage>& passages) const override;
};

GroundedAnswer grounded_answer(const AnswerGenerator& generator, const DocIndex& index,
                               std::string_view query, const GroundingPolicy& policy = {});

enum class QueryCategory { kFactual, kAmbiguousOrIncorrect, kGeneration };
enum class JudgeLabel { kGood, kBad, kRefrained };
std::string_view query_category_name(QueryCategory c);
QueryCategory parse_query_category(std::string_view s);
std::string_view judge_label_name(JudgeLabel l);
std::optional<JudgeLabel> parse_judge_label(std::string_view s);

struct JudgedItem {
  std::string query;
  QueryCategory category = QueryCategory::kFactual;
  // Either a fixed label or a gold answer to compare against.
  std::optional<JudgeLabel> expected_label;
  std::string gold_answer;

  static JudgedItem from_json(const nlohmann::json& j);
};

std::vector<JudgedItem> read_judged_jsonl(const std::string& path);

// Label for one system response.
JudgeLabel judge(const JudgedItem& item, const GroundedAnswer& answer);

struct LabelCounts {
  std::size_t good = 0;
  std::size_t bad = 0;
  std::size_t refrained = 0;
  std::size_t total() const { return good + bad + refrained; }
  double accuracy_pct() const;
  double error_pct() const;
  double refrain_pct() const;
};

struct GroundedReport {
  LabelCounts overall;
  std::map<std::string, LabelCounts> per_category;
  std::vector<JudgeLabel> labels;

  double accuracy_pct() const { return overall.accuracy_pct(); }
  double error_pct() const { return overall.error_pct(); }
  double refrain_pct() const { return overall.refrain_pct(); }
  nlohmann::json to_json() const;
};

GroundedReport summarize_labels(const std::vector<QueryCategory>& categories,
                                const std::vector<JudgeLabel>& labels);

using GroundedSystem = std::function<GroundedAnswer(std::string_view query)>;
GroundedReport evaluate_grounded(const GroundedSystem& system, const std::vector<JudgedItem>& items);

}  // namespace krutrim
