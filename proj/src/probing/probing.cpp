#include "krutrim/probing.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "krutrim/jsonl.hpp"
#include "krutrim/rng.hpp"

namespace krutrim {

void MCQItem::validate() const {
  if (choices.size() < 2) throw std::invalid_argument("MCQ item needs at least two choices");
  if (answer_index < 0 || static_cast<std::size_t>(answer_index) >= choices.size()) {
    throw std::invalid_argument("MCQ answer_index out of range");
  }
  const auto& tasks = probe_tasks();
  if (std::find(tasks.begin(), tasks.end(), task) == tasks.end()) {
    throw std::invalid_argument("unknown probe task '" + task + "'");
  }
}

MCQItem MCQItem::from_json(const nlohmann::json& j) {
  MCQItem item;
  item.question = j.at("question").get<std::string>();
  item.choices = j.at("choices").get<std::vector<std::string>>();
  item.answer_index = j.at("answer_index").get<int>();
  item.task = j.at("task").get<std::string>();
  if (j.contains("language_pair") && !j["language_pair"].is_null()) {
    item.language_pair = j["language_pair"].get<std::string>();
  }
  item.validate();
  return item;
}

nlohmann::json MCQItem::to_json() const {
  nlohmann::json j = {{"question", question},
                      {"choices", choices},
                      {"answer_index", answer_index},
                      {"task", task}};
  if (language_pair) j["language_pair"] = *language_pair;
  return j;
}

std::string MCQItem::choice_text(std::size_t choice) const {
  if (question.empty()) return choices.at(choice);
  return question + " " + choices.at(choice);
}

std::vector<MCQItem> read_mcq_jsonl(const std::string& path) {
  std::vector<MCQItem> items;
  for (const auto& row : read_jsonl(path)) items.push_back(MCQItem::from_json(row));
  return items;
}

void ProbeConfig::validate(const ModelConfig& config) const {
  if (layer_index < 0 || layer_index > config.n_layers) {
    throw std::invalid_argument("probe layer_index " + std::to_string(layer_index) +
                                " outside [0, " + std::to_string(config.n_layers) + "]");
  }
  if (probe_epochs < 1) throw std::invalid_argument("probe_epochs must be >= 1");
  if (!(probe_lr > 0.0)) throw std::invalid_argument("probe_lr must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("train_fraction must lie in (0, 1)");
  }
}

namespace {

std::vector<int> encode_for_probe(const Model<float>& model, const Tokenizer& tokenizer,
                                  std::string_view text) {
  auto tokens = tokenizer.encode(text);
  if (tokens.empty()) throw std::invalid_argument("probe text encodes to no tokens");
  if (tokens.size() > static_cast<std::size_t>(model.config().max_seq_len)) {
    throw std::length_error("probe text has " + std::to_string(tokens.size()) +
                            " tokens, more than max_seq_len " +
                            std::to_string(model.config().max_seq_len));
  }
  return tokens;
}

std::vector<double> pool(const std::vector<float>& states, int seq_len, int hidden,
                         Pooling pooling) {
  std::vector<double> out(hidden, 0.0);
  if (pooling == Pooling::kLastToken) {
    for (int d = 0; d < hidden; ++d) out[d] = states[static_cast<std::size_t>(seq_len - 1) * hidden + d];
    return out;
  }
  for (int t = 0; t < seq_len; ++t) {
    for (int d = 0; d < hidden; ++d) out[d] += states[static_cast<std::size_t>(t) * hidden + d];
  }
  for (auto& v : out) v /= seq_len;
  return out;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Pcg32 rng(seed, 0x70726f6265ULL);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.bounded(static_cast<std::uint32_t>(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

// features for all layers: out[layer][item][choice]
std::vector<ChoiceFeatures> all_layer_features(const Model<float>& model,
                                               const Tokenizer& tokenizer,
                                               const std::vector<MCQItem>& items,
                                               Pooling pooling) {
  const int n_states = model.config().n_layers + 1;
  std::vector<ChoiceFeatures> out(n_states, ChoiceFeatures(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) {
    items[i].validate();
    for (std::size_t c = 0; c < items[i].choices.size(); ++c) {
      const auto tokens = encode_for_probe(model, tokenizer, items[i].choice_text(c));
      auto reps = extract_all_layers(model, tokens, pooling);
      for (int l = 0; l < n_states; ++l) out[l][i].push_back(std::move(reps[l]));
    }
  }
  return out;
}

std::vector<int> answers_of(const std::vector<MCQItem>& items) {
  std::vector<int> a;
  for (const auto& it : items) a.push_back(it.answer_index);
  return a;
}

void check_layers(const ModelConfig& config, const std::vector<int>& layers) {
  if (layers.empty()) throw std::invalid_argument("no layers requested");
  for (int l : layers) {
    if (l < 0 || l > config.n_layers) {
      throw std::invalid_argument("layer " + std::to_string(l) + " outside [0, " +
                                  std::to_string(config.n_layers) + "]");
    }
  }
}

}  // namespace

std::vector<std::vector<double>> extract_all_layers(const Model<float>& model,
                                                    std::span<const int> tokens,
                                                    Pooling pooling) {
  const auto trace = model.forward(tokens);
  std::vector<std::vector<double>> out;
  for (const auto& h : trace.hidden_states) {
    out.push_back(pool(h, trace.seq_len, model.config().hidden_dim, pooling));
  }
  return out;
}

std::vector<double> extract_layer_reps(const Model<float>& model, const Tokenizer& tokenizer,
                                       std::string_view text, const ProbeConfig& config) {
  config.validate(model.config());
  const auto tokens = encode_for_probe(model, tokenizer, text);
  const auto trace = model.forward(tokens);
  return pool(trace.hidden_states[config.layer_index], trace.seq_len, model.config().hidden_dim,
              config.pooling);
}

double probe_features(const ChoiceFeatures& features, const std::vector<int>& answers,
                      const ProbeConfig& config, std::uint64_t split_seed) {
  const std::size_t n = features.size();
  if (n < 20) {
    throw std::invalid_argument("probe needs at least 20 items, got " + std::to_string(n));
  }
  if (answers.size() != n) throw std::invalid_argument("answers/features size mismatch");
  const std::size_t dim = features[0][0].size();

  const auto order = shuffled(n, split_seed);
  const std::size_t n_train =
      std::clamp<std::size_t>(static_cast<std::size_t>(config.train_fraction * n), 1, n - 1);
  const std::vector<std::size_t> train(order.begin(), order.begin() + n_train);
  const std::vector<std::size_t> test(order.begin() + n_train, order.end());

  // Standardise with training statistics.
  std::vector<double> mean(dim, 0.0), scale(dim, 0.0);
  std::size_t rows = 0;
  for (auto i : train) {
    for (const auto& x : features[i]) {
      for (std::size_t d = 0; d < dim; ++d) mean[d] += x[d];
      ++rows;
    }
  }
  for (auto& m : mean) m /= rows;
  for (auto i : train) {
    for (const auto& x : features[i]) {
      for (std::size_t d = 0; d < dim; ++d) scale[d] += (x[d] - mean[d]) * (x[d] - mean[d]);
    }
  }
  for (auto& s : scale) {
    s = std::sqrt(s / rows);
    s = s > 1e-12 ? 1.0 / s : 0.0;
  }
  auto standardise = [&](const std::vector<double>& x) {
    std::vector<double> z(dim);
    for (std::size_t d = 0; d < dim; ++d) z[d] = (x[d] - mean[d]) * scale[d];
    return z;
  };
  std::vector<std::vector<std::vector<double>>> z(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& x : features[i]) z[i].push_back(standardise(x));
  }

  auto scores = [&](std::size_t i, const std::vector<double>& w) {
    std::vector<double> s;
    for (const auto& x : z[i]) {
      double v = 0.0;
      for (std::size_t d = 0; d < dim; ++d) v += w[d] * x[d];
      s.push_back(v);
    }
    return s;
  };

  // Full-batch gradient descent on softmax cross-entropy over choices.
  std::vector<double> w(dim, 0.0), grad(dim);
  for (int epoch = 0; epoch < config.probe_epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (auto i : train) {
      auto s = scores(i, w);
      const double mx = *std::max_element(s.begin(), s.end());
      double sum = 0.0;
      for (auto& v : s) sum += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < s.size(); ++c) {
        const double g = s[c] / sum - (static_cast<int>(c) == answers[i] ? 1.0 : 0.0);
        for (std::size_t d = 0; d < dim; ++d) grad[d] += g * z[i][c][d];
      }
    }
    for (std::size_t d = 0; d < dim; ++d) {
      w[d] -= config.probe_lr * (grad[d] / n_train + config.l2 * w[d]);
    }
  }

  std::size_t correct = 0;
  for (auto i : test) {
    const auto s = scores(i, w);
    const auto best = std::max_element(s.begin(), s.end()) - s.begin();
    if (best == answers[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

double probe_eval(const Model<float>& model, const Tokenizer& tokenizer,
                  const std::vector<MCQItem>& items, const ProbeConfig& config,
                  std::uint64_t split_seed) {
  config.validate(model.config());
  if (items.size() < 20) {
    throw std::invalid_argument("probe needs at least 20 items, got " +
                                std::to_string(items.size()));
  }
  ChoiceFeatures feats(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    items[i].validate();
    for (std::size_t c = 0; c < items[i].choices.size(); ++c) {
      feats[i].push_back(extract_layer_reps(model, tokenizer, items[i].choice_text(c), config));
    }
  }
  return probe_features(feats, answers_of(items), config, split_seed);
}

std::string LayerTaskMatrix::to_csv() const {
  std::ostringstream out;
  out << "layer,task,accuracy\n";
  char buf[32];
  for (int l : layers) {
    for (const auto& t : tasks) {
      std::snprintf(buf, sizeof buf, "%.6f", at(l, t));
      out << l << ',' << t << ',' << buf << '\n';
    }
  }
  return out.str();
}

LayerTaskMatrix layer_sweep(const Model<float>& model, const Tokenizer& tokenizer,
                            const std::map<std::string, std::vector<MCQItem>>& task_sets,
                            const std::vector<int>& layers, const ProbeConfig& templ) {
  if (task_sets.empty()) throw std::invalid_argument("layer_sweep: no task sets");
  check_layers(model.config(), layers);
  LayerTaskMatrix m;
  m.layers = layers;
  for (const auto& [task, items] : task_sets) {
    if (items.empty()) throw std::invalid_argument("layer_sweep: task '" + task + "' is empty");
    m.tasks.push_back(task);
    const auto feats = all_layer_features(model, tokenizer, items, templ.pooling);
    const auto answers = answers_of(items);
    for (int l : layers) {
      ProbeConfig cfg = templ;
      cfg.layer_index = l;
      m.accuracy[{l, task}] = probe_features(feats[l], answers, cfg, templ.seed);
    }
  }
  return m;
}

nlohmann::json XmpsReport::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [pair, by_layer] : accuracy) {
    nlohmann::json layers = nlohmann::json::object();
    for (const auto& [l, a] : by_layer) layers[std::to_string(l)] = a;
    j[pair] = {{"accuracy", layers}};
    if (auto it = penultimate_ge_last.find(pair); it != penultimate_ge_last.end()) {
      j[pair]["penultimate_ge_last"] = it->second;
    }
  }
  return j;
}

XmpsReport xmps_eval(const Model<float>& model, const Tokenizer& tokenizer,
                     const std::vector<MCQItem>& items, const std::vector<int>& layers,
                     const ProbeConfig& templ) {
  check_layers(model.config(), layers);
  std::map<std::string, std::vector<MCQItem>> by_pair;
  for (const auto& it : items) {
    if (!it.language_pair || it.language_pair->empty()) {
      throw std::invalid_argument("xMPS item without language_pair tag: " + it.question);
    }
    by_pair[*it.language_pair].push_back(it);
  }
  XmpsReport report;
  const int pen = penultimate_layer(model.config());
  const int last = model.config().n_layers;
  for (const auto& [pair, subset] : by_pair) {
    const auto feats = all_layer_features(model, tokenizer, subset, templ.pooling);
    const auto answers = answers_of(subset);
    std::vector<int> wanted = layers;
    for (int extra : {pen, last}) {
      if (std::find(wanted.begin(), wanted.end(), extra) == wanted.end()) wanted.push_back(extra);
    }
    std::map<int, double> acc;
    for (int l : wanted) {
      ProbeConfig cfg = templ;
      cfg.layer_index = l;
      acc[l] = probe_features(feats[l], answers, cfg, templ.seed);
    }
    report.penultimate_ge_last[pair] = acc.at(pen) >= acc.at(last);
    for (auto it = acc.begin(); it != acc.end();) {
      if (std::find(layers.begin(), layers.end(), it->first) == layers.end()) {
        it = acc.erase(it);
      } else {
        ++it;
      }
    }
    report.accuracy[pair] = std::move(acc);
  }
  return report;
}

std::string SeparabilityReport::to_tsv() const {
  std::ostringstream out;
  char buf[64];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.9g\t%.9g\t", p.x, p.y);
    out << buf << p.category << '\n';
  }
  return out.str();
}

double silhouette_score(const std::vector<std::vector<double>>& vectors,
                        const std::vector<std::string>& categories) {
  const std::size_t n = vectors.size();
  if (categories.size() != n) throw std::invalid_argument("silhouette: size mismatch");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[categories[i]].push_back(i);
  if (groups.size() < 2) throw std::invalid_argument("silhouette needs at least two categories");

  auto dist = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t d = 0; d < vectors[a].size(); ++d) {
      const double t = vectors[a][d] - vectors[b][d];
      s += t * t;
    }
    return std::sqrt(s);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& own = groups[categories[i]];
    if (own.size() == 1) continue;  // singleton clusters score zero
    double a = 0.0;
    for (auto j : own) a += dist(i, j);
    a /= static_cast<double>(own.size() - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [cat, members] : groups) {
      if (cat == categories[i]) continue;
      double s = 0.0;
      for (auto j : members) s += dist(i, j);
      b = std::min(b, s / static_cast<double>(members.size()));
    }
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

SeparabilityReport project_embeddings(const std::vector<std::vector<double>>& vectors,
                                      const std::vector<std::string>& categories) {
  const std::size_t n = vectors.size();
  if (n < 3) throw std::invalid_argument("projection needs at least 3 vectors");
  if (categories.size() != n) throw std::invalid_argument("projection: size mismatch");
  const std::size_t dim = vectors[0].size();
  for (const auto& v : vectors) {
    if (v.size() != dim) throw std::invalid_argument("projection: ragged vectors");
  }
  Eigen::MatrixXd x(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dim; ++d) x(i, d) = vectors[i][d];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  if (x.cwiseAbs().maxCoeff() == 0.0) {
    throw std::invalid_argument("projection: all vectors are identical");
  }
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw std::runtime_error("projection: eigen solve failed");
  // Eigenvalues ascend; take the last two columns.
  Eigen::MatrixXd basis(dim, 2);
  for (int k = 0; k < 2; ++k) {
    Eigen::VectorXd v = dim > static_cast<std::size_t>(k)
                            ? Eigen::VectorXd(solver.eigenvectors().col(dim - 1 - k))
                            : Eigen::VectorXd::Zero(dim);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    basis.col(k) = v;
  }
  const Eigen::MatrixXd proj = x * basis;
  SeparabilityReport report;
  for (std::size_t i = 0; i < n; ++i) {
    report.points.push_back({proj(i, 0), proj(i, 1), categories[i]});
  }
  report.silhouette = silhouette_score(vectors, categories);
  return report;
}

}  // namespace krutrim
