#include "krutrim/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "json.hpp"
#include "krutrim/datapipe.hpp"
#include "krutrim/document.hpp"
#include "krutrim/evalsuite.hpp"
#include "krutrim/groundedqa.hpp"
#include "krutrim/jsonl.hpp"
#include "krutrim/model.hpp"
#include "krutrim/probing.hpp"
#include "krutrim/simd.hpp"
#include "krutrim/text.hpp"
#include "krutrim/tokenizer.hpp"
#include "krutrim/training.hpp"

namespace krutrim::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path out_dir(const Common& c) {
  std::string dir = c.out_dir;
  if (dir.empty()) {
    const char* env = std::getenv("KRUTRIM_OUT_DIR");
    dir = env && *env ? env : ".";
  }
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& s) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << s;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed JSON in " + path + ": " + e.what());
  }
}

// Timestamps live only in this sidecar so the other artifacts stay byte-identical.
void write_run_meta(const fs::path& dir, const std::string& command, const Common& c,
                    const std::string& started) {
  write_json(dir / "run_meta.json", {{"command", command},
                                     {"seed", c.seed},
                                     {"simd", std::string(simd::isa_name(simd::active_isa()))},
                                     {"started_at", started},
                                     {"finished_at", utc_now()}});
}

std::pair<std::string, std::string> split_kv(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("expected key=value, got '" + s + "'");
  }
  return {s.substr(0, eq), s.substr(eq + 1)};
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::vector<std::vector<int>> chunk_sequences(const Corpus& corpus, const Tokenizer& tok,
                                              int max_seq_len) {
  std::vector<std::vector<int>> out;
  const std::size_t window = static_cast<std::size_t>(max_seq_len) + 1;
  for (const auto& d : corpus) {
    auto ids = tok.encode(d.text);
    if (auto eos = tok.eos_id()) ids.push_back(*eos);
    for (std::size_t start = 0; start + 1 < ids.size(); start += window - 1) {
      const std::size_t end = std::min(ids.size(), start + window);
      out.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(start),
                       ids.begin() + static_cast<std::ptrdiff_t>(end));
      if (end == ids.size()) break;
    }
  }
  return out;
}

struct ModelFlags {
  std::string ckpt;
  std::string tokenizer;
};

void add_model_flags(CLI::App* sub, ModelFlags& m, bool required) {
  auto* c = sub->add_option("--ckpt", m.ckpt, "Model checkpoint (.krtm)");
  auto* t = sub->add_option("--tokenizer", m.tokenizer, "Tokenizer JSON");
  if (required) {
    c->required();
    t->required();
  }
}

void check_vocab(const Model<float>& model, const Tokenizer& tok) {
  if (tok.vocab_size() > model.config().vocab_size) {
    throw std::invalid_argument("tokenizer vocabulary (" + std::to_string(tok.vocab_size()) +
                                ") exceeds model vocab_size (" +
                                std::to_string(model.config().vocab_size) + ")");
  }
}

std::vector<int> parse_layers(const std::string& spec, int n_layers) {
  std::vector<int> layers;
  if (spec == "all") {
    for (int l = 0; l <= n_layers; ++l) layers.push_back(l);
    return layers;
  }
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    try {
      layers.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw std::invalid_argument("bad layer list '" + spec + "'");
    }
  }
  if (layers.empty()) throw std::invalid_argument("bad layer list '" + spec + "'");
  return layers;
}

Pooling parse_pooling(const std::string& s) {
  if (s == "mean") return Pooling::kMean;
  if (s == "last" || s == "last-token") return Pooling::kLastToken;
  throw std::invalid_argument("pooling must be mean or last-token");
}

// ---------------------------------------------------------------------------

struct TrainTokenizerOpts {
  std::string corpus;
  int vocab_size = 512;
  bool no_byte_fallback = false;
  bool lowercase = false;
};

void run_train_tokenizer(const TrainTokenizerOpts& o, const Common& c, std::ostream& err) {
  const auto started = utc_now();
  const auto dir = out_dir(c);
  const Corpus corpus = read_corpus(o.corpus);
  TokenizerConfig cfg;
  cfg.vocab_size = o.vocab_size;
  cfg.byte_fallback = !o.no_byte_fallback;
  cfg.lowercase = o.lowercase;
  const auto tok = Tokenizer::train(corpus, cfg);
  tok.save(dir / "tokenizer.json");
  const auto rep = fertility_report(tok, corpus);
  json per = json::object();
  for (const auto& [lang, f] : rep.per_language) {
    per[lang] = {{"tokens", f.token_count}, {"words", f.word_count}, {"fertility", f.ratio}};
  }
  write_json(dir / "fertility.json", {{"overall", rep.overall_ratio}, {"per_language", per}});
  write_run_meta(dir, "train-tokenizer", c, started);
  err << "tokenizer: " << tok.vocab_size() << " tokens, fertility " << fmt(rep.overall_ratio)
      << "\n";
}

struct TokenizeOpts {
  std::string tokenizer;
  std::string text;
  bool decode = false;
};

void run_tokenize(const TokenizeOpts& o, std::ostream& out) {
  const auto tok = Tokenizer::load(o.tokenizer);
  if (o.decode) {
    std::vector<int> ids;
    for (const auto& w : text::split_whitespace(o.text)) ids.push_back(std::stoi(w));
    out << tok.decode(ids) << "\n";
    return;
  }
  const auto ids = tok.encode(o.text);
  for (std::size_t i = 0; i < ids.size(); ++i) out << (i ? " " : "") << ids[i];
  out << "\n";
}

struct PrepareOpts {
  std::string corpus;
  std::string tokenizer;
  std::size_t min_chars = 1;
  std::size_t min_words = 1;
  double max_symbol_fraction = 0.5;
  double near_dup_threshold = 0.8;
};

void run_prepare(const PrepareOpts& o, const Common& c, std::ostream& err) {
  const auto started = utc_now();
  const auto dir = out_dir(c);
  CleaningConfig cfg{o.min_chars, o.min_words, o.max_symbol_fraction, o.near_dup_threshold};
  cfg.validate();
  const Corpus raw = read_corpus(o.corpus);
  const Corpus exact = exact_dedup(raw);
  const Corpus near = near_dedup(exact, cfg.near_dup_threshold);
  const Corpus clean = quality_filter(near, cfg);
  write_corpus(dir / "clean.jsonl", clean);
  json stats = {{"input", raw.size()},
                {"after_exact_dedup", exact.size()},
                {"after_near_dedup", near.size()},
                {"after_quality_filter", clean.size()}};
  if (!o.tokenizer.empty() && !clean.empty()) {
    stats["balance"] = balance_report(clean, Tokenizer::load(o.tokenizer)).to_json();
  }
  write_json(dir / "prepare_report.json", stats);
  write_run_meta(dir, "prepare-data", c, started);
  err << "prepare-data: " << raw.size() << " -> " << clean.size() << " documents\n";
}

struct MixOpts {
  std::vector<std::string> sources;
  std::vector<std::string> weights;
  std::size_t n = 1000;
};

void run_mix(const MixOpts& o, const Common& c, std::ostream& err) {
  const auto started = utc_now();
  const auto dir = out_dir(c);
  std::map<std::string, Corpus> corpora;
  for (const auto& s : o.sources) {
    auto [key, path] = split_kv(s);
    Corpus corpus = read_corpus(path);
    for (auto& d : corpus) d.source = key;
    corpora[key] = std::move(corpus);
  }
  MixtureSpec spec;
  spec.seed = c.seed;
  for (const auto& w : o.weights) {
    auto [key, value] = split_kv(w);
    try {
      spec.weights[key] = std::stod(value);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad weight '" + w + "'");
    }
  }
  const auto sample = sample_mixture(corpora, spec, o.n);
  std::map<std::string, std::size_t> counts;
  for (const auto& [key, w] : spec.weights) counts[key] = 0;
  for (const auto& d : sample) ++counts[d.source];
  const auto chi = mixture_chi_square(counts, spec);
  write_corpus(dir / "mixture.jsonl", sample);
  json observed = json::object();
  for (const auto& [k, n] : counts) observed[k] = {{"count", n}, {"fraction", static_cast<double>(n) / o.n}};
  write_json(dir / "mixture_report.json", {{"spec", spec.to_json()},
                                           {"n", o.n},
                                           {"observed", observed},
                                           {"chi_square", chi.statistic},
                                           {"degrees_of_freedom", chi.degrees_of_freedom},
                                           {"p_value", chi.p_value}});
  write_run_meta(dir, "mix", c, started);
  err << "mix: " << o.n << " documents, chi-square p = " << fmt(chi.p_value) << "\n";
}

struct TrainOpts {
  std::string stage = "pt";
  std::string tokenizer;
  std::vector<std::string> data;
  std::string init;
  std::string config;
  std::string model_config;
  std::optional<int> steps, batch_size, checkpoint_interval, layers, hidden, heads, kv_heads, seq_len;
  std::optional<double> lr, beta;
};

void run_train(const TrainOpts& o, const Common& c, std::ostream& err) {
  const auto started = utc_now();
  const auto dir = out_dir(c);
  const auto tok = Tokenizer::load(o.tokenizer);

  StageConfig cfg = o.config.empty() ? StageConfig::defaults(parse_stage(o.stage))
                                     : StageConfig::from_json(read_json_file(o.config));
  if (!o.config.empty() && cfg.stage != parse_stage(o.stage)) {
    throw std::invalid_argument("--stage " + o.stage + " disagrees with config stage " +
                                std::string(stage_name(cfg.stage)));
  }
  if (o.steps) cfg.steps = *o.steps;
  if (o.batch_size) cfg.batch_size = *o.batch_size;
  if (o.checkpoint_interval) cfg.checkpoint_interval = *o.checkpoint_interval;
  if (o.lr) cfg.learning_rate = *o.lr;
  if (o.beta) cfg.beta = *o.beta;
  if (c.seed_set || o.config.empty()) {
    cfg.seed = c.seed;
    cfg.mixture.seed = c.seed;
  }

  std::optional<Model<float>> model;
  if (!o.init.empty()) {
    model = load_checkpoint(o.init);
  } else {
    if (cfg.stage == Stage::kDPO) throw std::invalid_argument("dpo needs --init (the reference policy)");
    ModelConfig mc = o.model_config.empty() ? ModelConfig::desk(tok.vocab_size())
                                            : ModelConfig::from_json(read_json_file(o.model_config));
    if (o.layers) mc.n_layers = *o.layers;
    if (o.hidden) mc.hidden_dim = *o.hidden;
    if (o.heads) mc.n_heads = *o.heads;
    if (o.kv_heads) mc.n_kv_heads = *o.kv_heads;
    if (o.seq_len) mc.max_seq_len = *o.seq_len;
    mc.validate();
    model = Model<float>::initialize(mc, c.seed);
  }
  check_vocab(*model, tok);
  const int max_len = model->config().max_seq_len;

  if (o.data.empty()) throw std::invalid_argument("train needs at least one --data");
  TrainData data;
  switch (cfg.stage) {
    case Stage::kPT:
    case Stage::kCPT:
      for (const auto& d : o.data) {
        std::string key = cfg.stage == Stage::kCPT ? "" : "pt", path = d;
        if (d.find('=') != std::string::npos) std::tie(key, path) = split_kv(d);
        if (key.empty()) throw std::invalid_argument("cpt --data must be key=path");
        auto seqs = chunk_sequences(read_corpus(path), tok, max_len);
        auto& dst = data.sequences[key];
        dst.insert(dst.end(), seqs.begin(), seqs.end());
      }
      if (cfg.stage == Stage::kPT && cfg.mixture.weights.empty() && data.sequences.size() > 1) {
        for (const auto& [k, v] : data.sequences) cfg.mixture.weights[k] = static_cast<double>(v.size());
      }
      break;
    case Stage::kSFT:
      for (const auto& d : o.data) {
        for (const auto& row : read_jsonl(d)) {
          const auto ex = SFTExample::from_json(row);
          data.sft.push_back(tokenize_example(tok, ex.prompt, ex.response));
        }
      }
      break;
    case Stage::kDPO:
      for (const auto& d : o.data) {
        for (const auto& row : read_jsonl(d)) {
          const auto p = PreferencePair::from_json(row);
          data.preferences.push_back({tokenize_example(tok, p.prompt, p.chosen),
                                      tokenize_example(tok, p.prompt, p.rejected)});
        }
      }
      break;
  }

  TrainOptions opts;
  const auto ckpt_dir = dir / "checkpoints";
  if (cfg.checkpoint_interval > 0 && cfg.checkpoint_interval <= cfg.steps) {
    fs::create_directories(ckpt_dir);
    opts.checkpoint_dir = ckpt_dir;
  }
  std::optional<Model<float>> reference;
  if (cfg.stage == Stage::kDPO) {
    reference = *model;
    opts.reference = &*reference;
  }
  const auto result = train_stage(*model, cfg, data, opts);
  result.log.write_csv(dir / "train_log.csv");
  save_checkpoint((dir / "model.krtm").string(), *model,
                  {{"stage", stage_name(cfg.stage)}, {"steps", cfg.steps}});
  write_json(dir / "stage_config.json", cfg.to_json());
  write_run_meta(dir, "train", c, started);
  const double last = result.log.records.empty() ? 0.0 : result.log.records.back().loss;
  err << "train " << stage_name(cfg.stage) << ": " << cfg.steps << " steps, final loss "
      << fmt(last) << "\n";
}

void run_model_info(const std::string& ckpt, std::ostream& out) {
  json extra;
  const auto model = load_checkpoint(ckpt, &extra);
  const auto& cfg = model.config();
  KVCache<float> cache(cfg);
  ModelConfig mha = cfg;
  mha.n_kv_heads = cfg.n_heads;
  KVCache<float> mha_cache(mha);
  out << json{{"config", cfg.to_json()},
              {"parameters", cfg.parameter_count()},
              {"kv_cache_elements", cache.element_count()},
              {"kv_cache_elements_mha", mha_cache.element_count()},
              {"extra", extra}}
             .dump(2)
      << "\n";
}

struct ProbeOpts {
  ModelFlags m;
  std::string tasks;
  std::string layers = "all";
  std::string pooling = "mean";
  int epochs = 300;
  double probe_lr = 0.1;
};

void run_probe(const ProbeOpts& o, const Common& c, std::ostream& err) {
  const auto started = utc_now();
  const auto dir = out_dir(c);
  const auto model = load_checkpoint(o.m.ckpt);
  const auto tok = Tokenizer::load(o.m.tokenizer);
  check_vocab(model, tok);
  if (!fs::is_directory(o.tasks)) throw std::invalid_argument("--tasks must be a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(o.tasks)) {
    if (e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, std::vector<MCQItem>> sets;
  std::vector<MCQItem> xmps;
  for (const auto& f : files) {
    for (auto& item : read_mcq_jsonl(f.string())) {
      if (item.language_pair) {
        xmps.push_back(std::move(item));
      } else {
        sets[item.task].push_back(std::move(item));
      }
    }
  }
  if (sets.empty() && xmps.empty()) throw std::invalid_argument("no probe items under " + o.tasks);
  ProbeConfig templ;
  templ.pooling = parse_pooling(o.pooling);
  templ.probe_epochs = o.epochs;
  templ.probe_lr = o.probe_lr;
  templ.seed = c.seed;
  const auto layers = parse_layers(o.layers, model.config().n_layers);
  if (!sets.empty()) {
    const auto grid = layer_sweep(model, tok, sets, layers, templ);
    write_text(dir / "layer_sweep.csv", grid.to_csv());
  }
  if (!xmps.empty()) write_json(dir / "xmps.json", xmps_eval(model, tok, xmps, layers, templ).to_json());
  write_run_meta(dir, "probe", c, started);
  err << "probe: " << sets.size() << " task(s), " << xmps.size() << " xMPS item(s)\n";
}

struct EmbedOpts {
  ModelFlags m;
  std::string prompts;
  bool by_category = false;
  std::optional<int> layer;
  std::string pooling = "mean";
};

void run_embed_map(const EmbedOpts& o, const Common& c, std::ostream& err) {
  const auto started = utc_now();
  const auto dir = out_dir(c);
  const auto model = load_checkpoint(o.m.ckpt);
  const auto tok = Tokenizer::load(o.m.tokenizer);
  check_vocab(model, tok);
  ProbeConfig pc;
  pc.layer_index = o.layer.value_or(penultimate_layer(model.config()));
  pc.pooling = parse_pooling(o.pooling);
  std::vector<std::vector<double>> vecs;
  std::vector<std::string> cats;
  for (const auto& row : read_jsonl(o.prompts)) {
    vecs.push_back(extract_layer_reps(model, tok, row.at("text").get<std::string>(), pc));
    cats.push_back(o.by_category ? row.value("category", std::string("none")) : "all");
  }
  SeparabilityReport rep;
  std::set<std::string> distinct(cats.begin(), cats.end());
  if (distinct.size() >= 2) {
    rep = project_embeddings(vecs, cats);
  } else {
    std::vector<std::string> dummy(cats);
    if (!dummy.empty()) dummy[0] = "_";
    rep = project_embeddings(vecs, dummy);
    rep.points[0].category = cats[0];
  }
  write_text(dir / "embeddings.tsv", rep.to_tsv());
  {
    std::ofstream bin(dir / "embeddings.bin", std::ios::binary);
    auto u32 = [&](std::uint32_t v) {
      for (int i = 0; i < 4; ++i) bin.put(static_cast<char>(v >> (8 * i)));
    };
    u32(static_cast<std::uint32_t>(vecs.size()));
    u32(static_cast<std::uint32_t>(vecs.empty() ? 0 : vecs[0].size()));
    for (const auto& v : vecs) {
      for (double x : v) u32(std::bit_cast<std::uint32_t>(static_cast<float>(x)));
    }
  }
  json summary = {{"layer", pc.layer_index}, {"n", vecs.size()}};
  if (distinct.size() >= 2) summary["silhouette"] = rep.silhouette;
  write_json(dir / "separability.json", summary);
  write_run_meta(dir, "embed-map", c, started);
  err << "embed-map: " << vecs.size() << " prompts";
  if (distinct.size() >= 2) err << ", silhouette " << fmt(rep.silhouette);
  err << "\n";
}

struct EvalOpts {
  ModelFlags m;
  std::string spec;
  std::string data;
};

void run_eval(const EvalOpts& o, const Common& c, std::ostream& out) {
  const auto started = utc_now();
  const auto dir = out_dir(c);
  const auto model = load_checkpoint(o.m.ckpt);
  const auto tok = Tokenizer::load(o.m.tokenizer);
  check_vocab(model, tok);
  const auto spec = BenchmarkSpec::from_json(read_json_file(o.spec));
  const auto rows = read_jsonl(o.data);
  ModelGenerator gen(model, tok);
  ModelEmbedder emb(model, tok);
  const auto result = run_benchmark(gen, spec, rows, &emb);
  write_json(dir / "eval_report.json", result.report.to_json());
  std::vector<json> outputs;
  for (const auto& s : result.outputs) outputs.push_back({{"output", s}});
  write_jsonl(dir / "eval_outputs.jsonl", outputs);
  write_run_meta(dir, "eval", c, started);
  out << result.report.to_json().dump() << "\n";
}

struct ScoreOpts {
  std::string metric;
  std::string candidate;
  std::vector<std::string> references;
  int max_n = 4;
  bool smooth = false;
  ModelFlags m;
};

void run_score(const ScoreOpts& o, std::ostream& out) {
  MetricReport rep;
  if (o.metric == "bleu") {
    rep = bleu(o.candidate, o.references, {o.max_n, o.smooth});
  } else if (o.metric == "rouge") {
    if (o.references.size() != 1) throw std::invalid_argument("rouge takes exactly one --reference");
    rep = rouge_suite(o.candidate, o.references[0]);
  } else if (o.metric == "match") {
    if (o.m.ckpt.empty() || o.m.tokenizer.empty()) {
      throw std::invalid_argument("match needs --ckpt and --tokenizer for token embeddings");
    }
    if (o.references.size() != 1) throw std::invalid_argument("match takes exactly one --reference");
    const auto model = load_checkpoint(o.m.ckpt);
    const auto tok = Tokenizer::load(o.m.tokenizer);
    rep = greedy_match(o.candidate, o.references[0], ModelEmbedder(model, tok));
  } else {
    throw std::invalid_argument("unknown metric '" + o.metric + "' (bleu|rouge|match)");
  }
  json j = rep.to_json();
  if (o.metric == "bleu") {
    json p = json::array();
    for (int n = 1; n <= o.max_n; ++n) p.push_back(rep.components.at("precision_" + std::to_string(n)));
    j["precisions"] = p;
  }
  out << j.dump() << "\n";
}

struct RagOpts {
  std::string corpus;
  std::string index;
  std::string query;
  std::string judged;
  std::size_t k = 5;
  double min_score = 0.0;
  double min_overlap = 0.5;
  bool premise_check = false;
  ModelFlags m;
};

struct Answerer {
  std::optional<Model<float>> model;
  std::optional<Tokenizer> tok;
  std::unique_ptr<ModelGenerator> gen;
  std::unique_ptr<AnswerGenerator> answerer;

  explicit Answerer(const ModelFlags& m) {
    if (m.ckpt.empty() != m.tokenizer.empty()) {
      throw std::invalid_argument("--ckpt and --tokenizer must be given together");
    }
    if (m.ckpt.empty()) {
      answerer = std::make_unique<ExtractiveAnswerer>();
      return;
    }
    model = load_checkpoint(m.ckpt);
    tok = Tokenizer::load(m.tokenizer);
    check_vocab(*model, *tok);
    gen = std::make_unique<ModelGenerator>(*model, *tok);
    answerer = std::make_unique<PromptedAnswerer>(*gen);
  }
};

GroundingPolicy policy_of(const RagOpts& o) {
  if (o.k < 1) throw std::invalid_argument("--k must be >= 1");
  return {o.k, o.min_score, o.min_overlap, o.premise_check};
}

void run_rag_index(const RagOpts& o, const Common& c, std::ostream& err) {
  const auto started = utc_now();
  const auto dir = out_dir(c);
  const auto index = DocIndex::build(read_corpus(o.corpus));
  index.save((dir / "index.json").string());
  write_run_meta(dir, "rag-index", c, started);
  err << "rag-index: " << index.size() << " documents\n";
}

void run_rag_answer(const RagOpts& o, const Common& c, std::ostream& out) {
  const auto dir = out_dir(c);
  const auto index = DocIndex::load(o.index);
  Answerer a(o.m);
  const auto ans = grounded_answer(*a.answerer, index, o.query, policy_of(o));
  write_json(dir / "answer.json", ans.to_json());
  out << ans.to_json().dump() << "\n";
}

void run_rag_eval(const RagOpts& o, const Common& c, std::ostream& out) {
  const auto started = utc_now();
  const auto dir = out_dir(c);
  const auto index = DocIndex::load(o.index);
  Answerer a(o.m);
  const auto policy = policy_of(o);
  const auto items = read_judged_jsonl(o.judged);
  const auto report = evaluate_grounded(
      [&](std::string_view q) { return grounded_answer(*a.answerer, index, q, policy); }, items);
  write_json(dir / "rag_report.json", report.to_json());
  write_run_meta(dir, "rag-eval", c, started);
  out << report.to_json().dump() << "\n";
}

struct ChatOpts {
  ModelFlags m;
  std::string rag;
  int max_new = 48;
  std::size_t k = 3;
};

void run_chat(const ChatOpts& o, std::istream& in, std::ostream& out) {
  const auto model = load_checkpoint(o.m.ckpt);
  const auto tok = Tokenizer::load(o.m.tokenizer);
  check_vocab(model, tok);
  std::optional<DocIndex> index;
  if (!o.rag.empty()) index = DocIndex::load(o.rag);
  ModelGenerator gen(model, tok);
  PromptedAnswerer answerer(gen, o.max_new);
  std::string line;
  while (std::getline(in, line)) {
    const auto msg = text::trim(line);
    if (msg == "/quit") break;
    if (msg.empty()) continue;
    if (index) {
      GroundingPolicy policy;
      policy.k = o.k;
      const auto ans = grounded_answer(answerer, *index, msg, policy);
      out << ans.text;
      if (ans.status == AnswerStatus::kAnswered) {
        out << " [";
        for (std::size_t i = 0; i < ans.citations.size(); ++i) out << (i ? ", " : "") << ans.citations[i];
        out << "]";
      }
      out << "\n";
    } else {
      out << text::trim(gen.generate(msg, o.max_new)) << "\n";
    }
    out.flush();
  }
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
             std::ostream& err) {
  CLI::App app{"krutrim: tokenizer, training, probing, evaluation and grounded QA", "krutrim"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out-dir", common.out_dir, "Artifact directory (default $KRUTRIM_OUT_DIR or .)");
    sub->add_option("--seed", common.seed, "Seed for every seeded subsystem");
  };

  TrainTokenizerOpts tt;
  auto* s_tt = app.add_subcommand("train-tokenizer", "Train a byte-level BPE tokenizer");
  s_tt->add_option("--corpus", tt.corpus, "Corpus JSONL")->required();
  s_tt->add_option("--vocab-size", tt.vocab_size, "Target vocabulary size");
  s_tt->add_flag("--no-byte-fallback", tt.no_byte_fallback, "Use code points as base symbols");
  s_tt->add_flag("--lowercase", tt.lowercase, "Lowercase text before training and encoding");
  add_common(s_tt);

  TokenizeOpts tk;
  auto* s_tk = app.add_subcommand("tokenize", "Encode text (or decode ids with --decode)");
  s_tk->add_option("--tokenizer", tk.tokenizer)->required();
  s_tk->add_option("--text", tk.text)->required();
  s_tk->add_flag("--decode", tk.decode, "Treat --text as whitespace-separated ids");
  add_common(s_tk);

  PrepareOpts pr;
  auto* s_pr = app.add_subcommand("prepare-data", "Deduplicate and quality-filter a corpus");
  s_pr->add_option("--corpus", pr.corpus)->required();
  s_pr->add_option("--tokenizer", pr.tokenizer, "Optional tokenizer for the balance report");
  s_pr->add_option("--min-chars", pr.min_chars);
  s_pr->add_option("--min-words", pr.min_words);
  s_pr->add_option("--max-symbol-fraction", pr.max_symbol_fraction);
  s_pr->add_option("--near-dup-threshold", pr.near_dup_threshold);
  add_common(s_pr);

  MixOpts mx;
  auto* s_mx = app.add_subcommand("mix", "Sample a weighted mixture of corpora");
  s_mx->add_option("--source", mx.sources, "key=corpus.jsonl")->required();
  s_mx->add_option("--weight", mx.weights, "key=weight")->required();
  s_mx->add_option("--n", mx.n, "Documents to draw");
  add_common(s_mx);

  TrainOpts tr;
  auto* s_tr = app.add_subcommand("train", "Run one training stage (pt, cpt, sft, dpo)");
  s_tr->add_option("--stage", tr.stage)->required();
  s_tr->add_option("--tokenizer", tr.tokenizer)->required();
  s_tr->add_option("--data", tr.data, "Data file; key=path for cpt mixtures")->required();
  s_tr->add_option("--init", tr.init, "Checkpoint to start from");
  s_tr->add_option("--config", tr.config, "Stage config JSON (flags override it)");
  s_tr->add_option("--model-config", tr.model_config, "Model config JSON for fresh models");
  s_tr->add_option("--steps", tr.steps);
  s_tr->add_option("--batch-size", tr.batch_size);
  s_tr->add_option("--checkpoint-interval", tr.checkpoint_interval);
  s_tr->add_option("--lr", tr.lr);
  s_tr->add_option("--beta", tr.beta);
  s_tr->add_option("--layers", tr.layers);
  s_tr->add_option("--hidden", tr.hidden);
  s_tr->add_option("--heads", tr.heads);
  s_tr->add_option("--kv-heads", tr.kv_heads);
  s_tr->add_option("--seq-len", tr.seq_len);
  add_common(s_tr);

  std::string info_ckpt;
  auto* s_info = app.add_subcommand("model-info", "Print a checkpoint's configuration");
  s_info->add_option("--ckpt", info_ckpt)->required();
  add_common(s_info);

  ProbeOpts pb;
  auto* s_pb = app.add_subcommand("probe", "Layer-wise linear probes over MCQ task files");
  add_model_flags(s_pb, pb.m, true);
  s_pb->add_option("--tasks", pb.tasks, "Directory of MCQ JSONL files")->required();
  s_pb->add_option("--layers", pb.layers, "all or a comma list");
  s_pb->add_option("--pooling", pb.pooling, "mean or last-token");
  s_pb->add_option("--epochs", pb.epochs);
  s_pb->add_option("--probe-lr", pb.probe_lr);
  add_common(s_pb);

  EmbedOpts em;
  auto* s_em = app.add_subcommand("embed-map", "Project prompt embeddings to 2-D");
  add_model_flags(s_em, em.m, true);
  s_em->add_option("--prompts", em.prompts, "JSONL {text, category}")->required();
  s_em->add_flag("--by-category", em.by_category, "Group points by their category field");
  s_em->add_option("--layer", em.layer, "Layer (default penultimate)");
  s_em->add_option("--pooling", em.pooling, "mean or last-token");
  add_common(s_em);

  EvalOpts ev;
  auto* s_ev = app.add_subcommand("eval", "Run a benchmark spec against a checkpoint");
  add_model_flags(s_ev, ev.m, true);
  s_ev->add_option("--spec", ev.spec)->required();
  s_ev->add_option("--data", ev.data)->required();
  add_common(s_ev);

  ScoreOpts sc;
  auto* s_sc = app.add_subcommand("score", "Score a candidate against references");
  s_sc->add_option("--metric", sc.metric, "bleu|rouge|match")->required();
  s_sc->add_option("--candidate", sc.candidate)->required();
  s_sc->add_option("--reference", sc.references)->required();
  s_sc->add_option("--max-n", sc.max_n);
  s_sc->add_flag("--smooth", sc.smooth, "Add-one smoothing for n > 1");
  add_model_flags(s_sc, sc.m, false);
  add_common(s_sc);

  RagOpts rg;
  auto* s_ri = app.add_subcommand("rag-index", "Build a BM25 index over a corpus");
  s_ri->add_option("--corpus", rg.corpus)->required();
  add_common(s_ri);
  auto add_rag = [&](CLI::App* sub) {
    sub->add_option("--index", rg.index)->required();
    sub->add_option("--k", rg.k);
    sub->add_option("--min-score", rg.min_score);
    sub->add_option("--min-overlap", rg.min_overlap);
    sub->add_flag("--premise-check", rg.premise_check);
    add_model_flags(sub, rg.m, false);
    add_common(sub);
  };
  auto* s_ra = app.add_subcommand("rag-answer", "Answer a query from indexed sources");
  s_ra->add_option("--query", rg.query)->required();
  add_rag(s_ra);
  auto* s_re = app.add_subcommand("rag-eval", "Score grounded answers on a judged set");
  s_re->add_option("--judged", rg.judged)->required();
  add_rag(s_re);

  ChatOpts ch;
  auto* s_ch = app.add_subcommand("chat", "Line-based chat over a checkpoint (/quit exits)");
  add_model_flags(s_ch, ch.m, true);
  s_ch->add_option("--rag", ch.rag, "Index for grounded replies");
  s_ch->add_option("--max-new", ch.max_new);
  s_ch->add_option("--k", ch.k);
  add_common(s_ch);

  std::vector<const char*> argv{"krutrim"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    CLI::App* shown = &app;
    for (auto* sub : app.get_subcommands()) shown = sub;
    err << shown->help();
    return e.get_exit_code() ? e.get_exit_code() : 2;
  }

  for (auto* sub : app.get_subcommands()) {
    for (auto* opt : sub->get_options()) {
      if (opt->get_name() == "--seed" && opt->count() > 0) common.seed_set = true;
    }
  }

  try {
    if (s_tt->parsed()) run_train_tokenizer(tt, common, err);
    else if (s_tk->parsed()) run_tokenize(tk, out);
    else if (s_pr->parsed()) run_prepare(pr, common, err);
    else if (s_mx->parsed()) run_mix(mx, common, err);
    else if (s_tr->parsed()) run_train(tr, common, err);
    else if (s_info->parsed()) run_model_info(info_ckpt, out);
    else if (s_pb->parsed()) run_probe(pb, common, err);
    else if (s_em->parsed()) run_embed_map(em, common, err);
    else if (s_ev->parsed()) run_eval(ev, common, out);
    else if (s_sc->parsed()) run_score(sc, out);
    else if (s_ri->parsed()) run_rag_index(rg, common, err);
    else if (s_ra->parsed()) run_rag_answer(rg, common, out);
    else if (s_re->parsed()) run_rag_eval(rg, common, out);
    else if (s_ch->parsed()) run_chat(ch, in, out);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << "\n";
    return 1;
  }
  return 0;
}

}  // namespace krutrim::cli
