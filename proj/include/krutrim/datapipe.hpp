#pragma once
// Corpus cleaning, deduplication, mixture sampling and language balance.
// Every filter is order-stable: survivors keep their input order.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "krutrim/document.hpp"

namespace krutrim {

class Tokenizer;

struct CleaningConfig {
  std::size_t min_chars = 1;
  std::size_t min_words = 1;
  double max_symbol_fraction = 0.5;
  double near_dup_threshold = 0.8;

  void validate() const;
};

struct MixtureSpec {
  std::map<std::string, double> weights;
  std::uint64_t seed = 0;

  // Weights scaled to sum to one; throws if none is positive or any is negative.
  std::map<std::string, double> normalized() const;
  static MixtureSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct BalanceEntry {
  std::size_t document_count = 0;
  std::size_t token_count = 0;
  double fraction = 0.0;  // of all tokens
  std::size_t min_chars = 0;
  std::size_t max_chars = 0;
};

struct BalanceReport {
  std::map<std::string, BalanceEntry> per_key;

  nlohmann::json to_json() const;
};

// Text normalization used for exact dedup: Unicode-whitespace trim of the edges.
std::string normalize_for_dedup(std::string_view text);

Corpus exact_dedup(std::span<const Document> corpus);

// Word 3-gram shingles; documents shorter than three words contribute the
// whole word sequence as a single shingle.
std::vector<std::string> word_shingles(std::string_view text, std::size_t n = 3);
double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b);
Corpus near_dedup(std::span<const Document> corpus, double threshold);

// Non-letter, non-space code points over all code points.
double symbol_fraction(std::string_view text);
Corpus quality_filter(std::span<const Document> corpus, const CleaningConfig& config);

// Draws n documents: key by normalized weight, then a uniform document with
// replacement. Keys are visited in sorted order.
std::vector<Document> sample_mixture(const std::map<std::string, Corpus>& corpora,
                                     const MixtureSpec& spec, std::size_t n);

struct ChiSquareResult {
  double statistic = 0.0;
  int degrees_of_freedom = 0;
  double p_value = 1.0;
};

// Goodness of fit of observed key counts against the normalized weights.
ChiSquareResult mixture_chi_square(const std::map<std::string, std::size_t>& observed,
                                   const MixtureSpec& spec);

BalanceReport balance_report(std::span<const Document> corpus, const Tokenizer& tokenizer);

}  // namespace krutrim
