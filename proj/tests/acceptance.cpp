// Acceptance suite: one PASS/FAIL line per criterion.
// Usage: krutrim_acceptance [criterion numbers...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "krutrim/datapipe.hpp"
#include "krutrim/evalsuite.hpp"
#include "krutrim/groundedqa.hpp"
#include "krutrim/model.hpp"
#include "krutrim/probing.hpp"
#include "krutrim/rng.hpp"
#include "krutrim/tokenizer.hpp"
#include "krutrim/training.hpp"
#include "support.hpp"
#include "synthetic.hpp"

using namespace krutrim;
using testsupport::TempDir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// 1 -------------------------------------------------------------------------
Outcome exact_metric_values() {
  const auto b = bleu("Here are the shoes", {"Here is the footwear"}, {3, false});
  const auto r = rouge_suite("Here are the shoes", "Here is the footwear");
  const bool ok = b.components.at("precision_1") == 0.5 && b.components.at("precision_2") == 0.0 &&
                  b.components.at("precision_3") == 0.0 && r.components.at("rouge1") == 0.5 &&
                  r.components.at("rouge2") == 0.0 && r.components.at("rougeL") == 0.5 &&
                  r.components.at("rougeLsum") == 0.5;
  return {ok, fmt("precisions [%g, %g, %g]", b.components.at("precision_1"),
                  b.components.at("precision_2"), b.components.at("precision_3")) +
                  fmt(" rouge1 %g rouge2 %g rougeL %g", r.components.at("rouge1"),
                      r.components.at("rouge2"), r.components.at("rougeL")) +
                  fmt(" rougeLsum %g", r.components.at("rougeLsum"))};
}

// 2 -------------------------------------------------------------------------
Outcome gradient_checks() {
  const ModelConfig cfg = testsupport::tiny_config(40, 2);
  const auto model = Model<double>::initialize(cfg, 11);
  Pcg32 rng(5, 1);
  const auto seq = testsupport::random_tokens(rng, 12, cfg.vocab_size);
  TokenizedExample ex{testsupport::random_tokens(rng, 12, cfg.vocab_size), 5};
  TokenizedPair pair{{testsupport::random_tokens(rng, 10, cfg.vocab_size), 4},
                     {testsupport::random_tokens(rng, 11, cfg.vocab_size), 4}};
  // A reference that differs from the policy keeps the DPO margin away from zero.
  const auto ref = Model<double>::initialize(cfg, 12);
  const double rc = sequence_logprob(ref, pair.chosen);
  const double rr = sequence_logprob(ref, pair.rejected);

  const std::size_t n = 120;
  const double tol = 1e-4;
  const auto lm = grad_check(
      model, [&](const Model<double>& m, Weights<double>* g) { return lm_loss_and_grad(m, std::span<const int>(seq), g); },
      n, tol, 1);
  const auto sft = grad_check(
      model, [&](const Model<double>& m, Weights<double>* g) { return sft_loss_and_grad(m, ex, g); },
      n, tol, 2);
  const auto dpo = grad_check(
      model,
      [&](const Model<double>& m, Weights<double>* g) { return dpo_loss_and_grad(m, pair, rc, rr, 0.1, g); },
      n, tol, 3);
  return {lm.passed && sft.passed && dpo.passed && lm.samples.size() >= 100 &&
              sft.samples.size() >= 100 && dpo.samples.size() >= 100,
          fmt("max rel error lm %.2e sft %.2e", lm.max_rel_error, sft.max_rel_error) +
              fmt(" dpo %.2e over %g params each", dpo.max_rel_error, static_cast<double>(n))};
}

// 3 -------------------------------------------------------------------------
Outcome gqa_equivalence() {
  double worst = 0.0;
  Pcg32 rng(3, 3);
  for (int inst = 0; inst < 50; ++inst) {
    ModelConfig cfg;
    cfg.n_heads = 1 << rng.bounded(4);  // 1..8
    cfg.n_kv_heads = cfg.n_heads;
    cfg.hidden_dim = cfg.n_heads * (4 + static_cast<int>(rng.bounded(5)));
    const int hd = cfg.head_dim();
    const int k_len = 1 + static_cast<int>(rng.bounded(12));
    const int q_len = 1 + static_cast<int>(rng.bounded(static_cast<std::uint32_t>(k_len)));
    const auto q = testsupport::random_vector(rng, static_cast<std::size_t>(q_len) * cfg.n_heads * hd);
    const auto k = testsupport::random_vector(rng, static_cast<std::size_t>(k_len) * cfg.n_heads * hd);
    const auto v = testsupport::random_vector(rng, static_cast<std::size_t>(k_len) * cfg.n_heads * hd);
    const auto got = gqa_attention<double>(q, k, v, q_len, k_len, cfg, alibi_bias(cfg.n_heads, q_len, k_len));
    const auto want = testsupport::reference_attention(q, k, v, q_len, k_len, cfg.n_heads,
                                                       cfg.n_heads, hd);
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  // KV cache at the 48 query / 8 KV head ratio, with a narrow head so it runs quickly.
  auto cache_elements = [](int kv_heads) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 48;
    cfg.n_kv_heads = kv_heads;
    cfg.hidden_dim = 96;
    cfg.max_seq_len = 16;
    cfg.vocab_size = 20;
    const auto m = Model<float>::initialize(cfg, 1);
    KVCache<float> cache(cfg);
    for (int t = 0; t < 10; ++t) m.decode_step(cache, t);
    return cache.element_count();
  };
  const auto gqa = cache_elements(8);
  const auto mha = cache_elements(48);
  const bool exact = gqa * 48 == mha * 8 && mha == 6 * gqa;
  return {worst <= 1e-6 && exact,
          fmt("max abs error %.2e over 50 instances; KV elements %g vs %g", worst,
              static_cast<double>(mha), static_cast<double>(gqa)) +
              fmt(" (ratio %g)", static_cast<double>(mha) / static_cast<double>(gqa))};
}

// 4 -------------------------------------------------------------------------
Outcome alibi_properties() {
  bool relative = true;
  for (int n_heads : {1, 4, 8}) {
    for (int k_len = 1; k_len <= 64; ++k_len) {
      for (int q_len : {1, k_len}) {
        const auto bias = alibi_bias(n_heads, q_len, k_len);
        for (int h = 0; h < n_heads; ++h) {
          const double slope = std::pow(2.0, -8.0 * (h + 1) / n_heads);
          for (int i = 0; i < q_len; ++i) {
            const int pos = k_len - q_len + i;
            for (int j = 0; j < k_len; ++j) {
              const double b = bias.at(h, i, j);
              if (j > pos) {
                relative &= std::isinf(b) && b < 0;
              } else {
                relative &= b == -slope * (pos - j);
              }
            }
          }
        }
      }
    }
  }
  const double slope = alibi_slope(0, 8);

  // Train with 64-token contexts, then score 128-token sequences.
  ModelConfig cfg = testsupport::tiny_config(24, 2);
  cfg.max_seq_len = 128;
  auto model = Model<float>::initialize(cfg, 4);
  Pcg32 rng(4, 4);
  TrainData data;
  for (int s = 0; s < 16; ++s) data.sequences["pt"].push_back(testsupport::random_tokens(rng, 65, cfg.vocab_size));
  StageConfig sc = StageConfig::defaults(Stage::kPT);
  sc.steps = 20;
  sc.batch_size = 4;
  train_stage(model, sc, data);
  std::vector<std::vector<int>> long_seqs;
  for (int s = 0; s < 4; ++s) long_seqs.push_back(testsupport::random_tokens(rng, 129, cfg.vocab_size));
  const double loss = mean_lm_loss(model, long_seqs);
  return {relative && slope == 0.5 && std::isfinite(loss),
          std::string(relative ? "bias relative-only to len 64" : "bias NOT relative-only") +
              fmt("; head-1 slope %g; loss at 128 after training at 64: %.4f", slope, loss)};
}

// 5 -------------------------------------------------------------------------
Outcome incremental_decode() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ModelConfig cfg = testsupport::tiny_config(50, 3);
    const auto model = Model<float>::initialize(cfg, seed);
    Pcg32 rng(seed, 9);
    const auto toks = testsupport::random_tokens(rng, 16, cfg.vocab_size);
    const auto full = model.forward(toks);
    KVCache<float> cache(cfg);
    for (int t = 0; t < 16; ++t) {
      const auto step = model.decode_step(cache, toks[t]);
      for (int o = 0; o < cfg.vocab_size; ++o) {
        worst = std::max(worst, static_cast<double>(std::abs(
                                    step[o] - full.logits[static_cast<std::size_t>(t) * cfg.vocab_size + o])));
      }
    }
  }
  return {worst <= 1e-5, fmt("max abs logit difference %.2e over 20 seeds x 16 steps", worst)};
}

// 6 -------------------------------------------------------------------------
Outcome tokenizer_round_trip() {
  Corpus corpus;
  Pcg32 rng(6, 6);
  for (int i = 0; i < 200; ++i) corpus.push_back({std::to_string(i), testsupport::random_utf8(rng, 60), "mix", ""});
  TokenizerConfig tc;
  tc.vocab_size = 800;
  const auto tok = Tokenizer::train(corpus, tc);
  int failures = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto s = testsupport::random_utf8(rng, 40);
    if (tok.decode(tok.encode(s)) != s) ++failures;
  }
  // Hand-run oracle on the "abab" corpus.
  const auto expected = synthetic::naive_bpe_merges({"abab abab"}, 4 + 256 + 8);
  TokenizerConfig ac;
  ac.vocab_size = 4 + 256 + 8;
  const auto abab = Tokenizer::train(Corpus{{"0", "abab abab", "en", ""}}, ac);
  const bool merges_ok = abab.merges() == expected && !expected.empty() &&
                         expected.front() == std::pair<std::string, std::string>{"a", "b"};
  return {failures == 0 && merges_ok,
          fmt("%g/10000 round-trip failures; abab merges match oracle: ", failures) +
              (merges_ok ? "yes" : "no") + fmt(" (%g merges)", static_cast<double>(expected.size()))};
}

// 7 -------------------------------------------------------------------------
Outcome cpt_mixture() {
  std::map<std::string, Corpus> corpora;
  for (int i = 0; i < 30; ++i) corpora["original"].push_back({"o" + std::to_string(i), "old text", "en", "original"});
  for (int i = 0; i < 50; ++i) corpora["new"].push_back({"n" + std::to_string(i), "new text", "hi", "new"});
  MixtureSpec spec{{{"original", 0.25}, {"new", 0.75}}, 7};
  const auto sample = sample_mixture(corpora, spec, 100000);
  std::map<std::string, std::size_t> counts{{"original", 0}, {"new", 0}};
  for (const auto& d : sample) ++counts[d.source];
  const double frac = static_cast<double>(counts["original"]) / 100000.0;
  const auto chi = mixture_chi_square(counts, spec);
  return {std::abs(frac - 0.25) <= 0.01 && chi.p_value > 0.001,
          fmt("original fraction %.4f, chi-square %.3f, p = %.4f", frac, chi.statistic, chi.p_value)};
}

// 8 -------------------------------------------------------------------------
Outcome overfit() {
  const auto sentences = synthetic::overfit_sentences(50);
  const auto tok = synthetic::train_tokenizer(synthetic::overfit_tokenizer_texts(sentences), 512);
  auto model = Model<float>::initialize(ModelConfig::desk(tok.vocab_size()), 8);
  TrainData data;
  for (const auto& s : sentences) data.sequences["pt"].push_back(synthetic::encode_with_eos(tok, s));
  StageConfig sc = StageConfig::defaults(Stage::kPT);
  sc.steps = 200;
  sc.batch_size = synthetic::kOverfitBatch;
  sc.learning_rate = synthetic::kOverfitLr;
  sc.seed = 8;
  const double before = mean_lm_loss(model, data.sequences["pt"]);
  train_stage(model, sc, data);
  const double after = mean_lm_loss(model, data.sequences["pt"]);
  return {after < 0.1, fmt("lm_loss %.4f -> %.4f after 200 steps", before, after)};
}

// 9 -------------------------------------------------------------------------
Outcome dpo_direction() {
  const bool ln2 = dpo_loss(-3.5, -4.25, -3.5, -4.25, 0.1) == std::log(2.0) &&
                   dpo_loss(0, 0, 0, 0, 0.1) == std::log(2.0);
  const auto setup = synthetic::preference_setup(20);
  auto policy = setup.reference;
  StageConfig sc = StageConfig::defaults(Stage::kDPO);
  sc.steps = 100;
  sc.batch_size = 4;
  sc.seed = 9;
  sc.learning_rate = synthetic::kDpoLr;
  TrainData data;
  data.preferences = setup.pairs;
  TrainOptions opts;
  opts.reference = &setup.reference;
  const double before = mean_implicit_margin(policy, setup.reference, setup.pairs, 0.1);
  train_stage(policy, sc, data, opts);
  const double after = mean_implicit_margin(policy, setup.reference, setup.pairs, 0.1);
  return {ln2 && after > before,
          fmt("mean implicit margin %.5f -> %.5f (beta 0.1, lr %.1e)", before, after, sc.learning_rate) +
              (ln2 ? "; loss at zero margin == ln 2" : "; loss at zero margin != ln 2")};
}

// 10 ------------------------------------------------------------------------
Outcome probing_harness() {
  const auto setup = synthetic::order_task();
  const auto& model = setup.model;
  ProbeConfig templ;
  templ.seed = 10;
  const int top = model.config().n_layers;
  const auto grid = layer_sweep(model, setup.tokenizer, {{"MPS-Reason", setup.items}}, {0, top}, templ);
  const double a0 = grid.at(0, "MPS-Reason");
  const double atop = grid.at(top, "MPS-Reason");

  auto shuffled = setup.items;
  Pcg32 rng(10, 10);
  for (auto& it : shuffled) it.answer_index = static_cast<int>(rng.bounded(2));
  ProbeConfig pc = templ;
  pc.layer_index = top;
  const double ashuf = probe_eval(model, setup.tokenizer, shuffled, pc, templ.seed);
  const std::size_t n_test = shuffled.size() - static_cast<std::size_t>(pc.train_fraction * shuffled.size());
  const double sigma = std::sqrt(0.25 / static_cast<double>(n_test));
  return {atop >= 0.95 && a0 < atop && std::abs(ashuf - 0.5) <= 3 * sigma,
          fmt("layer 0 %.3f, top layer %.3f, shuffled %.3f", a0, atop, ashuf) +
              fmt(" (chance 0.5 +/- %.3f)", 3 * sigma)};
}

// 11 ------------------------------------------------------------------------
Outcome separability_direction() {
  const auto r = synthetic::separability_runs();
  return {r.sft_silhouette > r.pt_silhouette,
          fmt("silhouette PT %.4f, SFT %.4f", r.pt_silhouette, r.sft_silhouette)};
}

// 12 ------------------------------------------------------------------------
Outcome grounded_qa() {
  const Corpus corpus{{"d1", "the red fox jumps over the lazy dog", "en", ""},
                      {"d2", "the quick brown fox", "en", ""},
                      {"d3", "dogs sleep all day in the sun", "en", ""}};
  const auto index = DocIndex::build(corpus);
  // Hand arithmetic: lengths 8, 4, 7 (avg 19/3); "fox" df 2, "dog" df 1.
  const double avg = 19.0 / 3.0;
  const double idf_fox = std::log((3 - 2 + 0.5) / (2 + 0.5) + 1);
  const double idf_dog = std::log((3 - 1 + 0.5) / (1 + 0.5) + 1);
  auto term = [&](double idf, double tf, double len) {
    return idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * len / avg));
  };
  const double want_d1 = term(idf_fox, 1, 8) + term(idf_dog, 1, 8);
  const double want_d2 = term(idf_fox, 1, 4);
  const auto hits = index.retrieve("fox dog", 3);
  double err = 1.0;
  if (hits.size() == 2 && hits[0].doc_id == "d1" && hits[1].doc_id == "d2") {
    err = std::max(std::abs(hits[0].score - want_d1), std::abs(hits[1].score - want_d2));
  }

  // Monotone refusal across an overlap-threshold sweep.
  const auto qa_index = DocIndex::build(synthetic::qa_corpus());
  ExtractiveAnswerer answerer;
  bool monotone = true;
  for (const auto& q : synthetic::qa_queries()) {
    bool refrained = false;
    for (int t = 0; t <= 20; ++t) {
      GroundingPolicy p;
      p.min_overlap = t / 20.0;
      const auto a = grounded_answer(answerer, qa_index, q, p);
      const bool r = a.status == AnswerStatus::kRefrained;
      if (refrained && !r) monotone = false;
      refrained = refrained || r;
    }
  }

  std::vector<QueryCategory> cats(10, QueryCategory::kFactual);
  std::vector<JudgeLabel> labels(8, JudgeLabel::kGood);
  labels.push_back(JudgeLabel::kBad);
  labels.push_back(JudgeLabel::kRefrained);
  const auto rep = summarize_labels(cats, labels);
  const bool arith = rep.accuracy_pct() == 80.0 && rep.error_pct() == 10.0 && rep.refrain_pct() == 10.0;
  return {err <= 1e-6 && monotone && arith,
          fmt("BM25 max error %.2e; monotone refusal ", err) + (monotone ? "holds" : "VIOLATED") +
              fmt("; 8/1/1 -> %g/%g/%g", rep.accuracy_pct(), rep.error_pct(), rep.refrain_pct())};
}

// 13 ------------------------------------------------------------------------
Outcome determinism() {
  std::vector<std::string> failed;
  {
    Corpus corpus;
    Pcg32 rng(13, 1);
    for (int i = 0; i < 50; ++i) corpus.push_back({std::to_string(i), testsupport::random_utf8(rng, 50), "mix", ""});
    TokenizerConfig tc;
    tc.vocab_size = 600;
    if (Tokenizer::train(corpus, tc).to_json().dump() != Tokenizer::train(corpus, tc).to_json().dump()) {
      failed.push_back("tokenizer");
    }
  }
  {
    std::map<std::string, Corpus> corpora{{"a", {{"1", "x", "en", "a"}, {"2", "y", "en", "a"}}},
                                          {"b", {{"3", "z", "en", "b"}}}};
    MixtureSpec spec{{{"a", 0.3}, {"b", 0.7}}, 13};
    if (sample_mixture(corpora, spec, 5000) != sample_mixture(corpora, spec, 5000)) failed.push_back("mixture");
  }
  {
    TempDir dir;
    auto run = [&](const std::string& name) {
      ModelConfig cfg = testsupport::tiny_config(30, 2);
      auto model = Model<float>::initialize(cfg, 13);
      Pcg32 rng(13, 2);
      TrainData data;
      for (int s = 0; s < 8; ++s) data.sequences["pt"].push_back(testsupport::random_tokens(rng, 20, 30));
      StageConfig sc = StageConfig::defaults(Stage::kPT);
      sc.steps = 15;
      sc.batch_size = 3;
      sc.seed = 13;
      const auto res = train_stage(model, sc, data);
      save_checkpoint(dir.file(name), model);
      return res.log.to_csv() + testsupport::slurp(dir.file(name));
    };
    if (run("a.krtm") != run("b.krtm")) failed.push_back("training");
  }
  {
    const auto setup = synthetic::order_task();
    ProbeConfig templ;
    templ.seed = 21;
    const std::map<std::string, std::vector<MCQItem>> sets{{"MPS-Reason", setup.items}};
    const auto a = layer_sweep(setup.model, setup.tokenizer, sets, {0, 1, 2}, templ).to_csv();
    const auto b = layer_sweep(setup.model, setup.tokenizer, sets, {0, 1, 2}, templ).to_csv();
    if (a != b) failed.push_back("probing");
  }
  std::string detail = "tokenizer, mixture, training, probing byte-identical across two runs";
  if (!failed.empty()) {
    detail = "differences in:";
    for (const auto& f : failed) detail += " " + f;
  }
  return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metric exactness (BLEU/ROUGE)", exact_metric_values},
      {"gradient correctness", gradient_checks},
      {"GQA/MHA equivalence and KV cache scaling", gqa_equivalence},
      {"ALiBi properties", alibi_properties},
      {"incremental decode equivalence", incremental_decode},
      {"tokenizer round trip and merge order", tokenizer_round_trip},
      {"CPT mixture proportions", cpt_mixture},
      {"overfit sanity", overfit},
      {"DPO direction", dpo_direction},
      {"probing harness", probing_harness},
      {"separability direction", separability_direction},
      {"grounded QA", grounded_qa},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.contains(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::printf("criterion %2d %s: %s -- %s [%.1fs]\n", id, o.pass ? "PASS" : "FAIL",
                criteria[i].first.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
