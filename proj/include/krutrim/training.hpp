#pragma once
// Losses and the stage-driven training loop (PT, CPT, SFT, DPO).
//
// Conventions: a training sequence of n tokens is fed as inputs [0, n-1) and
// scored against targets [1, n). Masks select which target positions count.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "krutrim/datapipe.hpp"
#include "krutrim/model.hpp"

namespace krutrim {

class Tokenizer;

enum class Stage { kPT, kCPT, kSFT, kDPO };

std::string_view stage_name(Stage stage);
Stage parse_stage(std::string_view name);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
};

struct StageConfig {
  Stage stage = Stage::kPT;
  double learning_rate = 1e-3;
  std::optional<double> beta;  // DPO only
  int steps = 100;
  int batch_size = 8;
  int checkpoint_interval = 20000;
  MixtureSpec mixture;  // PT / CPT
  std::uint64_t seed = 0;
  // CPT continues from the learning rate the previous stage stopped at.
  std::optional<double> resume_lr;
  AdamConfig adam;

  double effective_lr() const { return resume_lr.value_or(learning_rate); }
  void validate() const;

  // Stage defaults: DPO uses lr 5e-7 and beta 0.1; CPT replays 25% original
  // data against 75% new data.
  static StageConfig defaults(Stage stage);
  static StageConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

inline const std::vector<std::string>& sft_task_tags() {
  static const std::vector<std::string> tags{
      "translation", "summarization", "cot",    "dialogue",
      "safety",      "general-knowledge", "coding", "self-identification"};
  return tags;
}

struct SFTExample {
  std::string prompt;
  std::string response;
  std::string task_tag;

  void validate() const;
  static SFTExample from_json(const nlohmann::json& j);
};

struct PreferencePair {
  std::string prompt;
  std::string chosen;
  std::string rejected;

  void validate() const;
  static PreferencePair from_json(const nlohmann::json& j);
};

// Prompt tokens followed by response tokens; only response tokens are scored.
struct TokenizedExample {
  std::vector<int> tokens;
  std::size_t response_start = 0;

  std::span<const int> inputs() const { return {tokens.data(), tokens.size() - 1}; }
  std::vector<int> targets() const { return {tokens.begin() + 1, tokens.end()}; }
  std::vector<std::uint8_t> response_mask() const;
};

TokenizedExample tokenize_example(const Tokenizer& tokenizer, std::string_view prompt,
                                  std::string_view response, bool append_eos = true);

struct TokenizedPair {
  TokenizedExample chosen;
  TokenizedExample rejected;
};

// ---------------------------------------------------------------------------
// Losses

// Sum of cross-entropy over unmasked rows. When dlogits is non-empty,
// adds grad_scale * (softmax - onehot) for those rows. Returns {sum, count}.
template <class T>
std::pair<double, std::size_t> cross_entropy(std::span<const T> logits, int vocab,
                                             std::span<const int> targets,
                                             std::span<const std::uint8_t> mask,
                                             std::span<T> dlogits = {}, double grad_scale = 1.0);

// Mean next-token cross-entropy; mask (optional) marks counted positions.
template <class T>
double lm_loss(std::span<const T> logits, int vocab, std::span<const int> targets,
               std::span<const std::uint8_t> mask = {});

// Cross-entropy over response positions only; logits cover example.inputs().
template <class T>
double sft_loss(std::span<const T> logits, int vocab, const TokenizedExample& example);

// -log sigmoid(beta * ((pc - pr) - (rc - rr)))
double dpo_loss(double policy_chosen, double policy_rejected, double ref_chosen,
                double ref_rejected, double beta);
double implicit_reward_margin(double policy_chosen, double policy_rejected, double ref_chosen,
                              double ref_rejected, double beta);

struct DpoGradient {
  double loss = 0.0;
  double d_policy_chosen = 0.0;
  double d_policy_rejected = 0.0;
};
DpoGradient dpo_loss_grad(double policy_chosen, double policy_rejected, double ref_chosen,
                          double ref_rejected, double beta);

// Sum of response-token log-probabilities.
template <class T>
double sequence_logprob(const Model<T>& model, const TokenizedExample& example);

// ---------------------------------------------------------------------------
// Loss-and-gradient closures over a model (used by training and grad checks)

template <class T>
double lm_loss_and_grad(const Model<T>& model, std::span<const int> sequence, Weights<T>* grads);

template <class T>
double sft_loss_and_grad(const Model<T>& model, const TokenizedExample& example,
                         Weights<T>* grads);

template <class T>
double dpo_loss_and_grad(const Model<T>& policy, const TokenizedPair& pair, double ref_chosen,
                         double ref_rejected, double beta, Weights<T>* grads);

// ---------------------------------------------------------------------------
// Optimizer

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& tensor)
      : std::runtime_error("non-finite gradient in tensor " + tensor), tensor_(tensor) {}
  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};

template <class T>
class Adam {
 public:
  Adam(const ModelConfig& config, AdamConfig hyper = {});

  // Verifies every gradient is finite (throws NonFiniteGradient naming the
  // tensor), then applies one bias-corrected Adam update.
  void step(Weights<T>& weights, const Weights<T>& grads, double learning_rate);

  long steps_taken() const { return t_; }
  const Weights<T>& first_moment() const { return m_; }
  const Weights<T>& second_moment() const { return v_; }
  void restore(Weights<T> m, Weights<T> v, long t);

 private:
  ModelConfig config_;
  AdamConfig hyper_;
  Weights<T> m_;
  Weights<T> v_;
  long t_ = 0;
};

template <class T>
void backward_and_step(Model<T>& model, const Weights<T>& grads, Adam<T>& optimizer,
                       double learning_rate) {
  optimizer.step(model.mutable_weights(), grads, learning_rate);
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradSample {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradSample> samples;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Returns the loss; when grads is non-null, accumulates analytic gradients.
using DoubleLossFn = std::function<double(const Model<double>&, Weights<double>*)>;

// Central differences on n_samples parameters drawn uniformly from the
// flattened parameter vector. Relative error is |a - n| / max(|a|, |n|),
// taken as zero when both magnitudes are below zero_floor.
GradCheckReport grad_check(const Model<double>& model, const DoubleLossFn& loss_fn,
                           std::size_t n_samples, double tolerance, std::uint64_t seed,
                           double step = 1e-5, double zero_floor = 1e-10);

// ---------------------------------------------------------------------------
// Training loop

struct TrainRecord {
  int step = 0;
  Stage stage = Stage::kPT;
  double loss = 0.0;
  double learning_rate = 0.0;
  std::size_t tokens_seen = 0;
};

struct TrainLog {
  std::vector<TrainRecord> records;

  std::string to_csv() const;  // step,stage,loss,lr,tokens_seen
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainData {
  // PT / CPT: token sequences per mixture key.
  std::map<std::string, std::vector<std::vector<int>>> sequences;
  std::vector<TokenizedExample> sft;
  std::vector<TokenizedPair> preferences;
};

struct TrainState {
  Adam<float> optimizer;
  int step = 0;
  std::size_t tokens_seen = 0;

  explicit TrainState(const ModelConfig& config, AdamConfig hyper = {})
      : optimizer(config, hyper) {}
};

struct TrainOptions {
  // Checkpoints go here every checkpoint_interval steps; empty disables them.
  std::filesystem::path checkpoint_dir;
  // DPO reference policy; defaults to a frozen copy of the model at stage start.
  const Model<float>* reference = nullptr;
  // Continue from a saved state instead of a fresh optimizer.
  TrainState* resume = nullptr;
  // Stop after this many steps of the current call (resume tests); 0 = run to config.steps.
  int max_steps_this_call = 0;
};

struct TrainResult {
  TrainLog log;
  std::vector<std::filesystem::path> checkpoints;
  std::map<std::string, std::size_t> key_draws;  // PT/CPT batch composition
  std::vector<double> dpo_margins;               // mean batch margin per DPO step
};

TrainResult train_stage(Model<float>& model, const StageConfig& config, const TrainData& data,
                        const TrainOptions& options = {});

void save_train_state(const std::filesystem::path& path, const Model<float>& model,
                      const TrainState& state, Stage stage);
// Loads model weights and optimizer state written by save_train_state.
std::pair<Model<float>, TrainState> load_train_state(const std::filesystem::path& path);

// Mean next-token loss over whole sequences.
double mean_lm_loss(const Model<float>& model, const std::vector<std::vector<int>>& sequences);
double mean_implicit_margin(const Model<float>& policy, const Model<float>& reference,
                            const std::vector<TokenizedPair>& pairs, double beta);

}  // namespace krutrim
