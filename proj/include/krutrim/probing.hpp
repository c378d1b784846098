#pragma once
// Layer-wise linear probes and embedding separability.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "krutrim/model.hpp"
#include "krutrim/tokenizer.hpp"

namespace krutrim {

inline const std::vector<std::string>& probe_tasks() {
  static const std::vector<std::string> tasks{"MPS-Cal", "MPS-Reason", "Reclor",
                                              "TFQA",    "LAMA",       "xMPS-Reason"};
  return tasks;
}

struct MCQItem {
  std::string question;
  std::vector<std::string> choices;
  int answer_index = 0;
  std::string task;
  std::optional<std::string> language_pair;  // e.g. "en-hi"

  void validate() const;
  static MCQItem from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  // Text fed to the model for one choice.
  std::string choice_text(std::size_t choice) const;
};

std::vector<MCQItem> read_mcq_jsonl(const std::string& path);

enum class Pooling { kMean, kLastToken };

struct ProbeConfig {
  int layer_index = 0;  // 0 = embedding output, n_layers = last block output
  Pooling pooling = Pooling::kMean;
  int probe_epochs = 300;
  double probe_lr = 0.1;
  double l2 = 1e-4;
  double train_fraction = 0.7;
  std::uint64_t seed = 0;

  void validate(const ModelConfig& config) const;
};

inline int penultimate_layer(const ModelConfig& config) { return config.n_layers - 1; }

// Pooled hidden state of one layer; throws std::length_error for overlong text.
std::vector<double> extract_layer_reps(const Model<float>& model, const Tokenizer& tokenizer,
                                       std::string_view text, const ProbeConfig& config);
// Pooled representations of every layer from a single forward pass.
std::vector<std::vector<double>> extract_all_layers(const Model<float>& model,
                                                    std::span<const int> tokens, Pooling pooling);

// Held-out accuracy of a linear probe trained on a seeded split of items.
double probe_eval(const Model<float>& model, const Tokenizer& tokenizer,
                  const std::vector<MCQItem>& items, const ProbeConfig& config,
                  std::uint64_t split_seed);

// Probe on precomputed features: features[item][choice] is a vector.
using ChoiceFeatures = std::vector<std::vector<std::vector<double>>>;
double probe_features(const ChoiceFeatures& features, const std::vector<int>& answers,
                      const ProbeConfig& config, std::uint64_t split_seed);

struct LayerTaskMatrix {
  std::vector<int> layers;
  std::vector<std::string> tasks;
  std::map<std::pair<int, std::string>, double> accuracy;

  double at(int layer, const std::string& task) const { return accuracy.at({layer, task}); }
  std::string to_csv() const;  // layer,task,accuracy
};

LayerTaskMatrix layer_sweep(const Model<float>& model, const Tokenizer& tokenizer,
                            const std::map<std::string, std::vector<MCQItem>>& task_sets,
                            const std::vector<int>& layers, const ProbeConfig& templ);

struct XmpsReport {
  // accuracy[pair][layer]
  std::map<std::string, std::map<int, double>> accuracy;
  // Tracked statistic: penultimate layer accuracy >= last layer accuracy.
  std::map<std::string, bool> penultimate_ge_last;

  nlohmann::json to_json() const;
};

XmpsReport xmps_eval(const Model<float>& model, const Tokenizer& tokenizer,
                     const std::vector<MCQItem>& items, const std::vector<int>& layers,
                     const ProbeConfig& templ);

struct ProjectedPoint {
  double x = 0.0;
  double y = 0.0;
  std::string category;
};

struct SeparabilityReport {
  std::vector<ProjectedPoint> points;
  double silhouette = 0.0;

  std::string to_tsv() const;  // x<TAB>y<TAB>category
};

// Top-2 principal components of the mean-centred data, each oriented so its
// largest-magnitude loading is positive. Silhouette uses Euclidean distance
// in the original space.
SeparabilityReport project_embeddings(const std::vector<std::vector<double>>& vectors,
                                      const std::vector<std::string>& categories);

double silhouette_score(const std::vector<std::vector<double>>& vectors,
                        const std::vector<std::string>& categories);

}  // namespace krutrim
