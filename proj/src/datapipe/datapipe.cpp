#include "krutrim/datapipe.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "krutrim/rng.hpp"
#include "krutrim/text.hpp"
#include "krutrim/tokenizer.hpp"

namespace krutrim {

void CleaningConfig::validate() const {
  if (!(max_symbol_fraction >= 0.0 && max_symbol_fraction <= 1.0)) {
    throw std::invalid_argument("max_symbol_fraction must lie in [0, 1]");
  }
  if (!(near_dup_threshold >= 0.0 && near_dup_threshold <= 1.0)) {
    throw std::invalid_argument("near_dup_threshold must lie in [0, 1]");
  }
}

std::map<std::string, double> MixtureSpec::normalized() const {
  double total = 0.0;
  for (const auto& [key, w] : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("mixture weight for '" + key + "' is negative");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("mixture needs at least one positive weight");
  std::map<std::string, double> out;
  for (const auto& [key, w] : weights) out[key] = w / total;
  return out;
}

MixtureSpec MixtureSpec::from_json(const nlohmann::json& j) {
  MixtureSpec spec;
  spec.weights = j.at("weights").get<std::map<std::string, double>>();
  spec.seed = j.value("seed", std::uint64_t{0});
  spec.normalized();
  return spec;
}

nlohmann::json MixtureSpec::to_json() const { return {{"weights", weights}, {"seed", seed}}; }

nlohmann::json BalanceReport::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, e] : per_key) {
    j[key] = {{"document_count", e.document_count},
              {"token_count", e.token_count},
              {"fraction", e.fraction},
              {"min_chars", e.min_chars},
              {"max_chars", e.max_chars}};
  }
  return j;
}

std::string normalize_for_dedup(std::string_view t) { return text::trim(t); }

Corpus exact_dedup(std::span<const Document> corpus) {
  std::unordered_set<std::string> seen;
  Corpus out;
  for (const auto& doc : corpus) {
    if (seen.insert(normalize_for_dedup(doc.text)).second) out.push_back(doc);
  }
  return out;
}

std::vector<std::string> word_shingles(std::string_view t, std::size_t n) {
  const auto words = text::split_whitespace(t);
  std::vector<std::string> shingles;
  if (words.empty()) return shingles;
  auto join = [&](std::size_t b, std::size_t e) {
    std::string s = words[b];
    for (std::size_t i = b + 1; i < e; ++i) s += ' ' + words[i];
    return s;
  };
  if (words.size() < n) {
    shingles.push_back(join(0, words.size()));
  } else {
    for (std::size_t i = 0; i + n <= words.size(); ++i) shingles.push_back(join(i, i + n));
  }
  std::sort(shingles.begin(), shingles.end());
  shingles.erase(std::unique(shingles.begin(), shingles.end()), shingles.end());
  return shingles;
}

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  const std::set<std::string> sa(a.begin(), a.end());
  const std::set<std::string> sb(b.begin(), b.end());
  std::size_t inter = 0;
  for (const auto& s : sa) inter += sb.count(s);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Corpus near_dedup(std::span<const Document> corpus, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw std::invalid_argument("near_dedup: threshold must lie in (0, 1]");
  }
  Corpus out;
  std::vector<std::vector<std::string>> kept;
  for (const auto& doc : corpus) {
    auto sh = word_shingles(doc.text);
    bool dup = false;
    for (const auto& k : kept) {
      if (jaccard(sh, k) >= threshold) {
        dup = true;
        break;
      }
    }
    if (!dup) {
      kept.push_back(std::move(sh));
      out.push_back(doc);
    }
  }
  return out;
}

double symbol_fraction(std::string_view t) {
  const auto cps = text::decode_utf8(t);
  if (cps.empty()) return 0.0;
  std::size_t symbols = 0;
  for (char32_t cp : cps) symbols += !text::is_letter(cp) && !text::is_space(cp);
  return static_cast<double>(symbols) / static_cast<double>(cps.size());
}

Corpus quality_filter(std::span<const Document> corpus, const CleaningConfig& config) {
  config.validate();
  Corpus out;
  for (const auto& doc : corpus) {
    if (text::decode_utf8(doc.text).size() < config.min_chars) continue;
    if (text::split_whitespace(doc.text).size() < config.min_words) continue;
    if (symbol_fraction(doc.text) > config.max_symbol_fraction) continue;
    out.push_back(doc);
  }
  return out;
}

std::vector<Document> sample_mixture(const std::map<std::string, Corpus>& corpora,
                                     const MixtureSpec& spec, std::size_t n) {
  const auto weights = spec.normalized();
  std::vector<const Corpus*> sources;
  std::vector<double> cumulative;
  double acc = 0.0;
  for (const auto& [key, w] : weights) {
    if (w <= 0.0) continue;
    auto it = corpora.find(key);
    if (it == corpora.end() || it->second.empty()) {
      throw std::invalid_argument("sample_mixture: key '" + key +
                                  "' has positive weight but no documents");
    }
    acc += w;
    sources.push_back(&it->second);
    cumulative.push_back(acc);
  }
  cumulative.back() = 1.0;

  Pcg32 rng(spec.seed);
  std::vector<Document> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    std::size_t k = 0;
    while (u >= cumulative[k]) ++k;
    const Corpus& c = *sources[k];
    out.push_back(c[rng.bounded(static_cast<std::uint32_t>(c.size()))]);
  }
  return out;
}

ChiSquareResult mixture_chi_square(const std::map<std::string, std::size_t>& observed,
                                   const MixtureSpec& spec) {
  const auto weights = spec.normalized();
  std::size_t total = 0;
  for (const auto& [key, count] : observed) {
    if (!weights.contains(key)) {
      throw std::invalid_argument("mixture_chi_square: unexpected key '" + key + "'");
    }
    total += count;
  }
  if (total == 0) throw std::invalid_argument("mixture_chi_square: no observations");
  ChiSquareResult r;
  int cells = 0;
  for (const auto& [key, w] : weights) {
    if (w <= 0.0) continue;
    auto it = observed.find(key);
    const double obs = it == observed.end() ? 0.0 : static_cast<double>(it->second);
    const double expected = w * static_cast<double>(total);
    r.statistic += (obs - expected) * (obs - expected) / expected;
    ++cells;
  }
  r.degrees_of_freedom = cells - 1;
  if (r.degrees_of_freedom < 1) {
    r.p_value = 1.0;
    return r;
  }
  boost::math::chi_squared dist(r.degrees_of_freedom);
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.statistic));
  return r;
}

BalanceReport balance_report(std::span<const Document> corpus, const Tokenizer& tokenizer) {
  if (corpus.empty()) throw std::invalid_argument("balance_report: empty corpus");
  BalanceReport report;
  std::size_t total = 0;
  for (const auto& doc : corpus) {
    const std::size_t tokens = tokenizer.encode(doc.text).size();
    const std::size_t chars = text::decode_utf8(doc.text).size();
    auto [it, fresh] = report.per_key.try_emplace(doc.language);
    auto& e = it->second;
    if (fresh) {
      e.min_chars = chars;
      e.max_chars = chars;
    }
    ++e.document_count;
    e.token_count += tokens;
    e.min_chars = std::min(e.min_chars, chars);
    e.max_chars = std::max(e.max_chars, chars);
    total += tokens;
  }
  if (total == 0) throw std::invalid_argument("balance_report: corpus has no tokens");
  for (auto& [key, e] : report.per_key) {
    e.fraction = static_cast<double>(e.token_count) / static_cast<double>(total);
  }
  return report;
}

}  // namespace krutrim
