#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "krutrim/evalsuite.hpp"
#include "krutrim/text.hpp"

namespace krutrim {

nlohmann::json MetricReport::to_json() const {
  return {{"metric_name", metric_name},
          {"value", value},
          {"components", components},
          {"n_items", n_items}};
}

std::vector<std::string> metric_tokens(std::string_view s) { return text::lower_tokens(s); }

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, int> ngram_counts(const std::vector<std::string>& toks, int n) {
  std::map<Ngram, int> counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    ++counts[Ngram(toks.begin() + i, toks.begin() + i + n)];
  }
  return counts;
}

double f1(double overlap, double cand_total, double ref_total) {
  if (overlap == 0.0 || cand_total == 0.0 || ref_total == 0.0) return 0.0;
  const double p = overlap / cand_total;
  const double r = overlap / ref_total;
  return 2.0 * p * r / (p + r);
}

double ngram_f1(const std::vector<std::string>& c, const std::vector<std::string>& r, int n) {
  const auto cc = ngram_counts(c, n);
  const auto rc = ngram_counts(r, n);
  double overlap = 0.0, ct = 0.0, rt = 0.0;
  for (const auto& [g, k] : cc) {
    ct += k;
    if (auto it = rc.find(g); it != rc.end()) overlap += std::min(k, it->second);
  }
  for (const auto& [g, k] : rc) rt += k;
  return f1(overlap, ct, rt);
}

// LCS table; returns the matched index set in `a` when requested.
std::size_t lcs(const std::vector<std::string>& a, const std::vector<std::string>& b,
                std::set<std::size_t>* a_indices = nullptr) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::vector<std::size_t>> t(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
    }
  }
  if (a_indices) {
    std::size_t i = n, j = m;
    while (i > 0 && j > 0) {
      if (a[i - 1] == b[j - 1]) {
        a_indices->insert(i - 1);
        --i;
        --j;
      } else if (t[i - 1][j] >= t[i][j - 1]) {
        --i;
      } else {
        --j;
      }
    }
  }
  return t[n][m];
}

std::vector<std::vector<std::string>> sentences(std::string_view s) {
  std::vector<std::vector<std::string>> out;
  std::string current;
  auto flush = [&] {
    auto toks = metric_tokens(current);
    if (!toks.empty()) out.push_back(std::move(toks));
    current.clear();
  };
  const std::u32string cps = text::decode_utf8(s);
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t c = cps[i];
    if (c == U'\n') {
      flush();
      continue;
    }
    text::append_utf8(current, c);
    const bool terminal = c == U'.' || c == U'!' || c == U'?' || c == 0x0964;
    if (terminal && (i + 1 == cps.size() || text::is_space(cps[i + 1]))) flush();
  }
  flush();
  return out;
}

double rouge_lsum(std::string_view candidate, std::string_view reference) {
  const auto cand = sentences(candidate);
  const auto ref = sentences(reference);
  std::map<std::string, int> cand_counts, ref_counts;
  double cand_total = 0.0, ref_total = 0.0;
  for (const auto& s : cand) {
    for (const auto& t : s) ++cand_counts[t], ++cand_total;
  }
  for (const auto& s : ref) {
    for (const auto& t : s) ++ref_counts[t], ++ref_total;
  }
  double hits = 0.0;
  for (const auto& r : ref) {
    std::set<std::size_t> uni;
    for (const auto& c : cand) lcs(r, c, &uni);
    for (auto idx : uni) {
      const auto& tok = r[idx];
      if (ref_counts[tok] > 0 && cand_counts[tok] > 0) {
        ++hits;
        --ref_counts[tok];
        --cand_counts[tok];
      }
    }
  }
  return f1(hits, cand_total, ref_total);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("embedder returned vectors of different sizes");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

}  // namespace

MetricReport bleu(std::string_view candidate, const std::vector<std::string>& references,
                  const BleuOptions& options) {
  if (options.max_n < 1) throw std::invalid_argument("bleu: max_n must be >= 1");
  const auto cand = metric_tokens(candidate);
  if (cand.empty()) throw std::invalid_argument("bleu: empty candidate");
  if (references.empty()) throw std::invalid_argument("bleu: no references");
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : references) {
    refs.push_back(metric_tokens(r));
    if (refs.back().empty()) throw std::invalid_argument("bleu: empty reference");
  }

  MetricReport rep;
  rep.metric_name = "bleu";
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 1; n <= options.max_n; ++n) {
    const auto cc = ngram_counts(cand, n);
    std::map<Ngram, int> max_ref;
    for (const auto& r : refs) {
      for (const auto& [g, k] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], k);
    }
    double matched = 0.0, total = 0.0;
    for (const auto& [g, k] : cc) {
      total += k;
      if (auto it = max_ref.find(g); it != max_ref.end()) matched += std::min(k, it->second);
    }
    if (options.add_one_smoothing && n > 1) {
      matched += 1.0;
      total += 1.0;
    }
    const double p = total > 0.0 ? matched / total : 0.0;
    rep.components["precision_" + std::to_string(n)] = p;
    if (p == 0.0) {
      zero = true;
    } else {
      log_sum += std::log(p);
    }
  }

  // Closest reference length, shorter on ties.
  const double c = static_cast<double>(cand.size());
  double r = static_cast<double>(refs[0].size());
  for (const auto& ref : refs) {
    const double len = static_cast<double>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) {
      r = len;
    }
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  rep.components["brevity_penalty"] = bp;
  rep.components["candidate_length"] = c;
  rep.components["reference_length"] = r;
  rep.value = zero ? 0.0 : bp * std::exp(log_sum / options.max_n);
  return rep;
}

MetricReport rouge_suite(std::string_view candidate, std::string_view reference) {
  const auto c = metric_tokens(candidate);
  const auto r = metric_tokens(reference);
  if (c.empty() || r.empty()) throw std::invalid_argument("rouge: empty input");
  MetricReport rep;
  rep.metric_name = "rouge";
  rep.components["rouge1"] = ngram_f1(c, r, 1);
  rep.components["rouge2"] = ngram_f1(c, r, 2);
  rep.components["rougeL"] = f1(static_cast<double>(lcs(c, r)), c.size(), r.size());
  rep.components["rougeLsum"] = rouge_lsum(candidate, reference);
  rep.value = rep.components["rougeL"];
  return rep;
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("pearson: length mismatch");
  if (xs.size() < 2) throw std::invalid_argument("pearson: need at least two points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument("pearson: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("spearman: length mismatch");
  return pearson(average_ranks(xs), average_ranks(ys));
}

std::string canonical_answer(std::string_view s) { return text::to_lower_ascii(text::trim(s)); }

double accuracy(const std::vector<std::string>& predictions, const std::vector<std::string>& golds) {
  if (predictions.size() != golds.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (golds.empty()) throw std::invalid_argument("accuracy: no items");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (canonical_answer(predictions[i]) == canonical_answer(golds[i])) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(golds.size());
}

std::vector<double> MapEmbedder::embed(const std::string& token) const {
  auto it = table_.find(token);
  if (it == table_.end()) throw std::out_of_range("no embedding for token '" + token + "'");
  return it->second;
}

std::vector<double> ModelEmbedder::embed(const std::string& token) const {
  const int hidden = model_.config().hidden_dim;
  std::vector<double> out(hidden, 0.0);
  const auto ids = tokenizer_.encode(token);
  if (ids.empty()) return out;
  const auto& table = model_.weights().token_embedding;
  for (int id : ids) {
    for (int d = 0; d < hidden; ++d) out[d] += table[static_cast<std::size_t>(id) * hidden + d];
  }
  for (auto& v : out) v /= static_cast<double>(ids.size());
  return out;
}

MetricReport greedy_match(std::string_view candidate, std::string_view reference,
                          const TokenEmbedder& embedder) {
  const auto c = metric_tokens(candidate);
  const auto r = metric_tokens(reference);
  if (c.empty() || r.empty()) throw std::invalid_argument("greedy match: empty input");
  std::vector<std::vector<double>> ce, re;
  for (const auto& t : c) ce.push_back(embedder.embed(t));
  for (const auto& t : r) re.push_back(embedder.embed(t));
  std::vector<std::vector<double>> sim(c.size(), std::vector<double>(r.size()));
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = 0; j < r.size(); ++j) sim[i][j] = cosine(ce[i], re[j]);
  }
  double precision = 0.0, recall = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    precision += *std::max_element(sim[i].begin(), sim[i].end());
  }
  for (std::size_t j = 0; j < r.size(); ++j) {
    double best = -1.0;
    for (std::size_t i = 0; i < c.size(); ++i) best = std::max(best, sim[i][j]);
    recall += best;
  }
  precision /= static_cast<double>(c.size());
  recall /= static_cast<double>(r.size());
  MetricReport rep;
  rep.metric_name = "greedy_match";
  rep.components["precision"] = precision;
  rep.components["recall"] = recall;
  const double f = precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
  rep.components["f1"] = f;
  rep.value = f;
  return rep;
}

}  // namespace krutrim
