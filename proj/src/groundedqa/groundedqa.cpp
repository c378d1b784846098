#include "krutrim/groundedqa.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "krutrim/jsonl.hpp"
#include "krutrim/text.hpp"

namespace krutrim {

std::vector<std::string> retrieval_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char32_t cp : text::decode_utf8(s)) {
    if (text::is_letter(cp) || text::is_digit(cp)) {
      if (cp >= 'A' && cp <= 'Z') cp = cp - 'A' + 'a';
      text::append_utf8(cur, cp);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

const std::set<std::string>& english_stopwords() {
  static const std::set<std::string> words{
      "a",     "about", "above", "after", "again", "against", "all",   "am",    "an",
      "and",   "any",   "are",   "as",    "at",    "be",      "been",  "before", "being",
      "below", "between", "both", "but",  "by",    "can",     "could", "did",   "do",
      "does",  "doing", "down",  "during", "each", "few",     "for",   "from",  "further",
      "had",   "has",   "have",  "having", "he",   "her",     "here",  "hers",  "herself",
      "him",   "himself", "his", "how",   "i",     "if",      "in",    "into",  "is",
      "it",    "its",   "itself", "just", "me",    "more",    "most",  "my",    "myself",
      "no",    "nor",   "not",   "now",   "of",    "off",     "on",    "once",  "only",
      "or",    "other", "our",   "ours",  "ourselves", "out", "over",  "own",   "same",
      "she",   "should", "so",   "some",  "such",  "than",    "that",  "the",   "their",
      "theirs", "them", "themselves", "then", "there", "these", "they", "this",  "those",
      "through", "to",  "too",   "under", "until", "up",      "very",  "was",   "we",
      "were",  "what",  "when",  "where", "which", "while",   "who",   "whom",  "why",
      "will",  "with",  "would", "you",   "your",  "yours",   "yourself", "yourselves"};
  return words;
}

std::vector<std::string> content_tokens(std::string_view s) {
  std::vector<std::string> out;
  const auto& stop = english_stopwords();
  for (auto& t : retrieval_tokens(s)) {
    if (!stop.contains(t)) out.push_back(std::move(t));
  }
  return out;
}

DocIndex DocIndex::build(const Corpus& corpus, Bm25Params params) {
  if (corpus.empty()) throw std::invalid_argument("cannot index an empty corpus");
  DocIndex index;
  index.params_ = params;
  for (const auto& d : corpus) index.add(d);
  return index;
}

std::size_t DocIndex::position(const std::string& doc_id) const {
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    if (docs_[i].id == doc_id) return i;
  }
  return docs_.size();
}

void DocIndex::add(const Document& doc) {
  if (position(doc.id) != docs_.size()) {
    throw std::invalid_argument("duplicate document id '" + doc.id + "'");
  }
  std::map<std::string, std::size_t> tf;
  const auto toks = retrieval_tokens(doc.text);
  for (const auto& t : toks) ++tf[t];
  for (const auto& [t, n] : tf) ++df_[t];
  docs_.push_back(doc);
  tf_.push_back(std::move(tf));
  lengths_.push_back(toks.size());
  total_length_ += toks.size();
}

void DocIndex::remove(const std::string& doc_id) {
  const std::size_t i = position(doc_id);
  if (i == docs_.size()) throw std::out_of_range("no document '" + doc_id + "'");
  for (const auto& [t, n] : tf_[i]) {
    if (--df_[t] == 0) df_.erase(t);
  }
  total_length_ -= lengths_[i];
  docs_.erase(docs_.begin() + static_cast<std::ptrdiff_t>(i));
  tf_.erase(tf_.begin() + static_cast<std::ptrdiff_t>(i));
  lengths_.erase(lengths_.begin() + static_cast<std::ptrdiff_t>(i));
}

std::size_t DocIndex::doc_freq(const std::string& term) const {
  auto it = df_.find(term);
  return it == df_.end() ? 0 : it->second;
}

std::size_t DocIndex::term_freq(const std::string& doc_id, const std::string& term) const {
  const std::size_t i = position(doc_id);
  if (i == docs_.size()) throw std::out_of_range("no document '" + doc_id + "'");
  auto it = tf_[i].find(term);
  return it == tf_[i].end() ? 0 : it->second;
}

std::size_t DocIndex::doc_length(const std::string& doc_id) const {
  const std::size_t i = position(doc_id);
  if (i == docs_.size()) throw std::out_of_range("no document '" + doc_id + "'");
  return lengths_[i];
}

double DocIndex::average_length() const {
  return docs_.empty() ? 0.0 : static_cast<double>(total_length_) / static_cast<double>(docs_.size());
}

double DocIndex::idf(const std::string& term) const {
  const double n = static_cast<double>(docs_.size());
  const double df = static_cast<double>(doc_freq(term));
  return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

double DocIndex::score(const std::string& doc_id, std::string_view query) const {
  const std::size_t i = position(doc_id);
  if (i == docs_.size()) throw std::out_of_range("no document '" + doc_id + "'");
  const double avg = average_length();
  const double norm = params_.k1 * (1.0 - params_.b + params_.b * static_cast<double>(lengths_[i]) /
                                                           (avg > 0.0 ? avg : 1.0));
  double s = 0.0;
  for (const auto& t : retrieval_tokens(query)) {
    auto it = tf_[i].find(t);
    if (it == tf_[i].end()) continue;
    const double f = static_cast<double>(it->second);
    s += idf(t) * f * (params_.k1 + 1.0) / (f + norm);
  }
  return s;
}

std::vector<RetrievedPassage> DocIndex::retrieve(std::string_view query, std::size_t k) const {
  if (k < 1) throw std::invalid_argument("retrieve: k must be >= 1");
  if (retrieval_tokens(query).empty()) throw std::invalid_argument("retrieve: empty query");
  std::vector<RetrievedPassage> hits;
  for (const auto& d : docs_) {
    const double s = score(d.id, query);
    if (s > 0.0) hits.push_back({d.id, s, d.text});
  }
  std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
    return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
  });
  if (hits.size() > k) hits.resize(k);
  return hits;
}

nlohmann::json DocIndex::to_json() const {
  nlohmann::json docs = nlohmann::json::array();
  for (const auto& d : docs_) {
    docs.push_back({{"id", d.id}, {"text", d.text}, {"language", d.language}, {"source", d.source}});
  }
  return {{"format", "krutrim-index-v1"}, {"k1", params_.k1}, {"b", params_.b}, {"documents", docs}};
}

DocIndex DocIndex::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "krutrim-index-v1") throw std::runtime_error("not a krutrim index file");
  Corpus corpus;
  for (const auto& d : j.at("documents")) {
    corpus.push_back({d.at("id").get<std::string>(), d.at("text").get<std::string>(),
                      d.value("language", "und"), d.value("source", "")});
  }
  return build(corpus, {j.value("k1", 1.2), j.value("b", 0.75)});
}

void DocIndex::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_json().dump() << '\n';
}

DocIndex DocIndex::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed index " + path + ": " + e.what());
  }
  return from_json(j);
}

bool DocIndex::operator==(const DocIndex& o) const {
  return docs_ == o.docs_ && tf_ == o.tf_ && lengths_ == o.lengths_ && df_ == o.df_ &&
         total_length_ == o.total_length_;
}

double grounding_overlap(std::string_view answer, const std::vector<RetrievedPassage>& passages) {
  const auto toks = content_tokens(answer);
  if (toks.empty()) return 0.0;
  std::set<std::string> pool;
  for (const auto& p : passages) {
    for (auto& t : retrieval_tokens(p.text)) pool.insert(std::move(t));
  }
  std::size_t hit = 0;
  for (const auto& t : toks) hit += pool.contains(t) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(toks.size());
}

std::string_view answer_status_name(AnswerStatus s) {
  switch (s) {
    case AnswerStatus::kAnswered:
      return "Answered";
    case AnswerStatus::kRefrained:
      return "Refrained";
    case AnswerStatus::kFlaggedIncorrectPremise:
      return "FlaggedIncorrectPremise";
  }
  return "?";
}

nlohmann::json GroundedAnswer::to_json() const {
  return {{"status", answer_status_name(status)},
          {"text", text},
          {"citations", citations},
          {"grounding_overlap", grounding_overlap}};
}

namespace {

std::string sources_block(const std::vector<RetrievedPassage>& passages) {
  std::string s = "Sources:\n";
  for (const auto& p : passages) s += "[" + p.doc_id + "] " + p.text + "\n";
  return s;
}

std::vector<std::string> split_sentences(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  const auto cps = text::decode_utf8(s);
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t c = cps[i];
    if (c == U'\n') {
      if (!text::trim(cur).empty()) out.push_back(text::trim(cur));
      cur.clear();
      continue;
    }
    text::append_utf8(cur, c);
    const bool end = c == U'.' || c == U'!' || c == U'?' || c == 0x0964;
    if (end && (i + 1 == cps.size() || text::is_space(cps[i + 1]))) {
      out.push_back(text::trim(cur));
      cur.clear();
    }
  }
  if (!text::trim(cur).empty()) out.push_back(text::trim(cur));
  return out;
}

GroundedAnswer refrain(std::string reason, double overlap = 0.0) {
  GroundedAnswer a;
  a.status = AnswerStatus::kRefrained;
  a.text = "I cannot answer this from the available sources: " + reason + ".";
  a.grounding_overlap = overlap;
  return a;
}

}  // namespace

std::string grounded_prompt(std::string_view query, const std::vector<RetrievedPassage>& passages) {
  return sources_block(passages) + "Answer strictly from the sources.\nQuestion: " +
         std::string(query) + "\nAnswer:";
}

std::string premise_prompt(std::string_view query, const std::vector<RetrievedPassage>& passages) {
  return sources_block(passages) + "Question: " + std::string(query) +
         "\nDoes the question assume something the sources contradict? Answer yes or no:";
}

std::string PromptedAnswerer::answer(std::string_view query,
                                     const std::vector<RetrievedPassage>& passages) const {
  return text::trim(generator_.generate(grounded_prompt(query, passages), max_new_tokens_));
}

bool PromptedAnswerer::flags_premise(std::string_view query,
                                     const std::vector<RetrievedPassage>& passages) const {
  const auto reply = text::to_lower_ascii(text::trim(generator_.generate(premise_prompt(query, passages), 4)));
  return reply.starts_with("yes");
}

std::string ExtractiveAnswerer::answer(std::string_view query,
                                       const std::vector<RetrievedPassage>& passages) const {
  const auto q = content_tokens(query);
  const std::set<std::string> wanted(q.begin(), q.end());
  std::string best;
  std::size_t best_hits = 0;
  for (const auto& p : passages) {
    for (const auto& sentence : split_sentences(p.text)) {
      std::set<std::string> seen;
      for (auto& t : content_tokens(sentence)) {
        if (wanted.contains(t)) seen.insert(std::move(t));
      }
      if (seen.size() > best_hits) {
        best_hits = seen.size();
        best = sentence;
      }
    }
  }
  return best;
}

GroundedAnswer grounded_answer(const AnswerGenerator& generator, const DocIndex& index,
                               std::string_view query, const GroundingPolicy& policy) {
  std::vector<RetrievedPassage> passages;
  try {
    passages = index.retrieve(query, std::max<std::size_t>(policy.k, 1));
  } catch (const std::invalid_argument&) {
    return refrain("the question has no searchable terms");
  }
  if (passages.empty()) return refrain("no relevant sources were found");
  if (passages.front().score < policy.min_retrieval_score) {
    return refrain("the best source scored below the retrieval threshold");
  }
  if (policy.premise_check && generator.flags_premise(query, passages)) {
    GroundedAnswer a;
    a.status = AnswerStatus::kFlaggedIncorrectPremise;
    a.text = "The question appears to rest on a premise that the sources contradict.";
    for (const auto& p : passages) a.citations.push_back(p.doc_id);
    return a;
  }
  const std::string text = generator.answer(query, passages);
  const double overlap = grounding_overlap(text, passages);
  if (overlap < policy.min_overlap) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "the drafted answer is not supported by them (overlap %.3f)", overlap);
    return refrain(buf, overlap);
  }
  GroundedAnswer a;
  a.status = AnswerStatus::kAnswered;
  a.text = text;
  a.grounding_overlap = overlap;
  const auto toks = content_tokens(text);
  for (const auto& p : passages) {
    const auto ptoks = retrieval_tokens(p.text);
    const std::set<std::string> pset(ptoks.begin(), ptoks.end());
    if (std::any_of(toks.begin(), toks.end(), [&](const auto& t) { return pset.contains(t); })) {
      a.citations.push_back(p.doc_id);
    }
  }
  if (a.citations.empty()) return refrain("no source supports the drafted answer", overlap);
  return a;
}

std::string_view query_category_name(QueryCategory c) {
  switch (c) {
    case QueryCategory::kFactual:
      return "Factual";
    case QueryCategory::kAmbiguousOrIncorrect:
      return "AmbiguousOrIncorrect";
    case QueryCategory::kGeneration:
      return "Generation";
  }
  return "?";
}

QueryCategory parse_query_category(std::string_view s) {
  for (auto c : {QueryCategory::kFactual, QueryCategory::kAmbiguousOrIncorrect,
                 QueryCategory::kGeneration}) {
    if (query_category_name(c) == s) return c;
  }
  throw std::invalid_argument("unknown query category '" + std::string(s) + "'");
}

std::string_view judge_label_name(JudgeLabel l) {
  switch (l) {
    case JudgeLabel::kGood:
      return "Good";
    case JudgeLabel::kBad:
      return "Bad";
    case JudgeLabel::kRefrained:
      return "Refrained";
  }
  return "?";
}

std::optional<JudgeLabel> parse_judge_label(std::string_view s) {
  for (auto l : {JudgeLabel::kGood, JudgeLabel::kBad, JudgeLabel::kRefrained}) {
    if (judge_label_name(l) == s) return l;
  }
  return std::nullopt;
}

JudgedItem JudgedItem::from_json(const nlohmann::json& j) {
  JudgedItem item;
  item.query = j.at("query").get<std::string>();
  item.category = parse_query_category(j.at("category").get<std::string>());
  const auto expected = j.at("expected").get<std::string>();
  item.expected_label = parse_judge_label(expected);
  if (!item.expected_label) {
    if (text::trim(expected).empty()) throw std::invalid_argument("judged item with empty expected answer");
    item.gold_answer = expected;
  }
  return item;
}

std::vector<JudgedItem> read_judged_jsonl(const std::string& path) {
  std::vector<JudgedItem> items;
  for (const auto& row : read_jsonl(path)) items.push_back(JudgedItem::from_json(row));
  return items;
}

JudgeLabel judge(const JudgedItem& item, const GroundedAnswer& answer) {
  if (item.expected_label) return *item.expected_label;
  switch (answer.status) {
    case AnswerStatus::kRefrained:
      return JudgeLabel::kRefrained;
    case AnswerStatus::kFlaggedIncorrectPremise:
      return item.category == QueryCategory::kAmbiguousOrIncorrect ? JudgeLabel::kGood
                                                                    : JudgeLabel::kRefrained;
    case AnswerStatus::kAnswered: {
      const auto got = text::to_lower_ascii(answer.text);
      const auto want = text::to_lower_ascii(text::trim(item.gold_answer));
      return got.find(want) != std::string::npos ? JudgeLabel::kGood : JudgeLabel::kBad;
    }
  }
  return JudgeLabel::kBad;
}

double LabelCounts::accuracy_pct() const {
  return total() ? 100.0 * static_cast<double>(good) / static_cast<double>(total()) : 0.0;
}
double LabelCounts::error_pct() const {
  return total() ? 100.0 * static_cast<double>(bad) / static_cast<double>(total()) : 0.0;
}
double LabelCounts::refrain_pct() const {
  return total() ? 100.0 * static_cast<double>(refrained) / static_cast<double>(total()) : 0.0;
}

nlohmann::json GroundedReport::to_json() const {
  auto panel = [](const LabelCounts& c) {
    return nlohmann::json{{"n", c.total()},
                          {"good", c.good},
                          {"bad", c.bad},
                          {"refrained", c.refrained},
                          {"accuracy_pct", c.accuracy_pct()},
                          {"error_pct", c.error_pct()},
                          {"refrain_pct", c.refrain_pct()}};
  };
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [cat, c] : per_category) per[cat] = panel(c);
  return {{"accuracy_pct", accuracy_pct()},
          {"error_pct", error_pct()},
          {"refrain_pct", refrain_pct()},
          {"n_items", overall.total()},
          {"per_category", per}};
}

GroundedReport summarize_labels(const std::vector<QueryCategory>& categories,
                                const std::vector<JudgeLabel>& labels) {
  if (labels.empty()) throw std::invalid_argument("judged set is empty");
  if (categories.size() != labels.size()) throw std::invalid_argument("category/label size mismatch");
  GroundedReport r;
  r.labels = labels;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (LabelCounts* c : {&r.overall, &r.per_category[std::string(query_category_name(categories[i]))]}) {
      switch (labels[i]) {
        case JudgeLabel::kGood:
          ++c->good;
          break;
        case JudgeLabel::kBad:
          ++c->bad;
          break;
        case JudgeLabel::kRefrained:
          ++c->refrained;
          break;
      }
    }
  }
  return r;
}

GroundedReport evaluate_grounded(const GroundedSystem& system, const std::vector<JudgedItem>& items) {
  if (items.empty()) throw std::invalid_argument("judged set is empty");
  std::vector<QueryCategory> cats;
  std::vector<JudgeLabel> labels;
  for (const auto& item : items) {
    cats.push_back(item.category);
    labels.push_back(judge(item, system(item.query)));
  }
  return summarize_labels(cats, labels);
}

}  // namespace krutrim
