#pragma once
// Decoder-only transformer: grouped-query attention with ALiBi biases,
// clipped Q/K/V activations, pre-norm RMS normalization and a ReLU
// feed-forward block. There are no positional parameters anywhere.
//
// The model is templated on the scalar type. Training and inference run in
// float; gradient checks instantiate the same code in double.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace krutrim {

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 8;
  int n_kv_heads = 4;
  int hidden_dim = 128;
  int max_seq_len = 128;
  int vocab_size = 512;
  double qkv_clip = 3.0;
  double ffn_multiplier = 4.0;
  double norm_eps = 1e-5;

  int head_dim() const { return hidden_dim / n_heads; }
  int kv_dim() const { return n_kv_heads * head_dim(); }
  int group_size() const { return n_heads / n_kv_heads; }
  int ffn_dim() const;
  std::size_t parameter_count() const;
  void validate() const;

  static ModelConfig desk(int vocab_size);
  // Full-size architecture: 32 layers, 48 query heads, 8 KV heads,
  // hidden 4608, context 4096. Constructible, not meant to be trained here.
  static ModelConfig reference_7b(int vocab_size);

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct TensorShape {
  std::string name;
  std::vector<std::size_t> dims;

  std::size_t numel() const;
};

// Canonical parameter order; checkpoints and parameter visitation follow it.
std::vector<TensorShape> parameter_layout(const ModelConfig& config);

template <class T>
struct LayerWeights {
  std::vector<T> attn_norm;  // [hidden]
  std::vector<T> wq;         // [hidden, hidden]
  std::vector<T> wk;         // [kv_dim, hidden]
  std::vector<T> wv;         // [kv_dim, hidden]
  std::vector<T> wo;         // [hidden, hidden]
  std::vector<T> ffn_norm;   // [hidden]
  std::vector<T> w1;         // [ffn, hidden]
  std::vector<T> w2;         // [hidden, ffn]

  bool operator==(const LayerWeights&) const = default;
};

template <class T>
struct Weights {
  std::vector<T> token_embedding;  // [vocab, hidden]
  std::vector<LayerWeights<T>> layers;
  std::vector<T> final_norm;   // [hidden]
  std::vector<T> unembedding;  // [vocab, hidden]

  static Weights zeros(const ModelConfig& config);
  // Normal(0, 0.02); residual output projections use 0.02 / sqrt(2 * n_layers);
  // norm gains start at one.
  static Weights initialize(const ModelConfig& config, std::uint64_t seed);

  // Calls f(index, tensor) in parameter_layout order.
  template <class F>
  void visit(F&& f) {
    std::size_t i = 0;
    f(i++, token_embedding);
    for (auto& l : layers) {
      f(i++, l.attn_norm);
      f(i++, l.wq);
      f(i++, l.wk);
      f(i++, l.wv);
      f(i++, l.wo);
      f(i++, l.ffn_norm);
      f(i++, l.w1);
      f(i++, l.w2);
    }
    f(i++, final_norm);
    f(i++, unembedding);
  }
  template <class F>
  void visit(F&& f) const {
    const_cast<Weights*>(this)->visit([&](std::size_t i, std::vector<T>& t) {
      f(i, static_cast<const std::vector<T>&>(t));
    });
  }

  std::size_t numel() const;
  void fill(T value);

  template <class U>
  Weights<U> cast() const {
    auto conv = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
    Weights<U> out;
    out.token_embedding = conv(token_embedding);
    for (const auto& l : layers) {
      out.layers.push_back({conv(l.attn_norm), conv(l.wq), conv(l.wk), conv(l.wv), conv(l.wo),
                            conv(l.ffn_norm), conv(l.w1), conv(l.w2)});
    }
    out.final_norm = conv(final_norm);
    out.unembedding = conv(unembedding);
    return out;
  }

  bool operator==(const Weights&) const = default;
};

// Per-head linear biases. Query i sits at absolute position
// (k_len - q_len + i); bias(h, i, j) = -slope(h) * (pos_i - j) for j <= pos_i
// and -inf beyond it.
struct AlibiBias {
  int n_heads = 0;
  int q_len = 0;
  int k_len = 0;
  std::vector<double> slopes;

  AlibiBias(int n_heads, int q_len, int k_len);
  double at(int head, int i, int j) const;
};

// slope for zero-based head h: 2^(-8 (h + 1) / n_heads)
double alibi_slope(int head, int n_heads);
AlibiBias alibi_bias(int n_heads, int q_len, int k_len);

template <class T>
void clip_qkv(std::span<T> x, double c);

// q: [q_len, n_heads * head_dim]; k, v: [k_len, n_kv_heads * head_dim].
// Query head h reads KV head h / group_size. Returns [q_len, hidden]. When
// probs is given it receives softmax weights laid out [head][i][j].
template <class T>
std::vector<T> gqa_attention(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                             int q_len, int k_len, const ModelConfig& config,
                             const AlibiBias& bias, std::vector<T>* probs = nullptr);

template <class T>
struct ForwardTrace {
  int seq_len = 0;
  // n_layers + 1 entries of [seq_len, hidden]: embedding output, then the
  // output of each block. The last entry is the state before the final norm.
  std::vector<std::vector<T>> hidden_states;
  std::vector<T> logits;  // [seq_len, vocab]
};

template <class T>
struct KVCache {
  int n_layers = 0;
  int n_kv_heads = 0;
  int head_dim = 0;
  int max_positions = 0;
  int positions = 0;
  std::vector<std::vector<T>> keys;    // per layer [positions, kv_dim]
  std::vector<std::vector<T>> values;  // per layer [positions, kv_dim]

  explicit KVCache(const ModelConfig& config);
  std::size_t element_count() const;
};

// Everything backward() needs from a training forward pass.
template <class T>
struct ActivationCache {
  struct Layer {
    std::vector<T> x_in, attn_rms, attn_normed, q_pre, k_pre, v_pre, q, k, v, probs, attn_out;
    std::vector<T> x_mid, ffn_rms, ffn_normed, ffn_pre, ffn_act;
  };
  std::vector<int> tokens;
  std::vector<Layer> layers;
  std::vector<T> x_final, final_rms, final_normed, logits;
};

struct SamplingStrategy {
  enum class Kind { kGreedy, kTopK };
  Kind kind = Kind::kGreedy;
  int top_k = 1;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  static SamplingStrategy greedy() { return {}; }
  static SamplingStrategy topk(int k, double temperature, std::uint64_t seed) {
    return {Kind::kTopK, k, temperature, seed};
  }
};

template <class T>
class Model {
 public:
  Model(ModelConfig config, Weights<T> weights);
  static Model initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Weights<T>& weights() const { return weights_; }
  Weights<T>& mutable_weights() { return weights_; }

  ForwardTrace<T> forward(std::span<const int> tokens) const;
  // Returns logits [seq_len, vocab] and records activations.
  const std::vector<T>& forward_train(std::span<const int> tokens, ActivationCache<T>& cache) const;
  // Accumulates parameter gradients for the given logit gradients.
  void backward(const ActivationCache<T>& cache, std::span<const T> dlogits,
                Weights<T>& grads) const;

  std::vector<T> decode_step(KVCache<T>& cache, int token) const;
  std::vector<int> generate(std::span<const int> prompt, int max_new,
                            const SamplingStrategy& strategy,
                            std::optional<int> eos = std::nullopt) const;

 private:
  void check_tokens(std::span<const int> tokens) const;

  ModelConfig config_;
  Weights<T> weights_;
};

extern template class Model<float>;
extern template class Model<double>;

// Checkpoint container: "KRTM" magic, format version, JSON metadata blob
// (holding the model config), tensor table, FNV-1a 64 checksum over every
// other byte, then little-endian float32 tensor data.
struct NamedTensor {
  std::string name;
  std::vector<std::size_t> dims;
  std::vector<float> data;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_tensor_file(const std::string& path, const nlohmann::json& meta,
                       const std::vector<NamedTensor>& tensors);
std::pair<nlohmann::json, std::vector<NamedTensor>> read_tensor_file(const std::string& path);

void save_checkpoint(const std::string& path, const Model<float>& model,
                     const nlohmann::json& extra = nlohmann::json::object());
Model<float> load_checkpoint(const std::string& path, nlohmann::json* extra = nullptr);

std::vector<NamedTensor> to_named_tensors(const ModelConfig& config, const Weights<float>& w,
                                          const std::string& prefix = "");
Weights<float> from_named_tensors(const ModelConfig& config,
                                  const std::vector<NamedTensor>& tensors,
                                  const std::string& prefix = "");

}  // namespace krutrim
