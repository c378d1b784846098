#include "krutrim/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "krutrim/rng.hpp"
#include "krutrim/simd.hpp"

namespace krutrim {

// ---------------------------------------------------------------------------
// Config and layout

int ModelConfig::ffn_dim() const {
  return static_cast<int>(std::llround(ffn_multiplier * static_cast<double>(hidden_dim)));
}

std::size_t ModelConfig::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameter_layout(*this)) n += t.numel();
  return n;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (n_layers < 1) fail("n_layers must be >= 1");
  if (n_heads < 1 || n_kv_heads < 1) fail("head counts must be >= 1");
  if (n_heads % n_kv_heads != 0) fail("n_heads must be divisible by n_kv_heads");
  if (hidden_dim < 1 || hidden_dim % n_heads != 0) fail("hidden_dim must be divisible by n_heads");
  if (max_seq_len < 1) fail("max_seq_len must be >= 1");
  if (vocab_size < 1) fail("vocab_size must be >= 1");
  if (!(qkv_clip > 0.0)) fail("qkv_clip must be positive");
  if (!(ffn_multiplier > 0.0) || ffn_dim() < 1) fail("ffn_multiplier must be positive");
  if (!(norm_eps > 0.0)) fail("norm_eps must be positive");
}

ModelConfig ModelConfig::desk(int vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  return c;
}

ModelConfig ModelConfig::reference_7b(int vocab_size) {
  ModelConfig c;
  c.n_layers = 32;
  c.n_heads = 48;
  c.n_kv_heads = 8;
  c.hidden_dim = 4608;
  c.max_seq_len = 4096;
  c.vocab_size = vocab_size;
  return c;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"n_layers", n_layers},         {"n_heads", n_heads},
          {"n_kv_heads", n_kv_heads},     {"hidden_dim", hidden_dim},
          {"max_seq_len", max_seq_len},   {"vocab_size", vocab_size},
          {"qkv_clip", qkv_clip},         {"ffn_multiplier", ffn_multiplier},
          {"norm_eps", norm_eps}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_kv_heads = j.value("n_kv_heads", c.n_kv_heads);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.qkv_clip = j.value("qkv_clip", c.qkv_clip);
  c.ffn_multiplier = j.value("ffn_multiplier", c.ffn_multiplier);
  c.norm_eps = j.value("norm_eps", c.norm_eps);
  c.validate();
  return c;
}

std::size_t TensorShape::numel() const {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::vector<TensorShape> parameter_layout(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.hidden_dim);
  const auto kv = static_cast<std::size_t>(c.kv_dim());
  const auto f = static_cast<std::size_t>(c.ffn_dim());
  const auto v = static_cast<std::size_t>(c.vocab_size);
  std::vector<TensorShape> out;
  out.push_back({"token_embedding", {v, d}});
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    out.push_back({p + "attn_norm", {d}});
    out.push_back({p + "wq", {d, d}});
    out.push_back({p + "wk", {kv, d}});
    out.push_back({p + "wv", {kv, d}});
    out.push_back({p + "wo", {d, d}});
    out.push_back({p + "ffn_norm", {d}});
    out.push_back({p + "w1", {f, d}});
    out.push_back({p + "w2", {d, f}});
  }
  out.push_back({"final_norm", {d}});
  out.push_back({"unembedding", {v, d}});
  return out;
}

template <class T>
Weights<T> Weights<T>::zeros(const ModelConfig& config) {
  config.validate();
  Weights<T> w;
  w.layers.resize(config.n_layers);
  const auto layout = parameter_layout(config);
  w.visit([&](std::size_t i, std::vector<T>& t) { t.assign(layout[i].numel(), T(0)); });
  return w;
}

template <class T>
Weights<T> Weights<T>::initialize(const ModelConfig& config, std::uint64_t seed) {
  Weights<T> w = zeros(config);
  Pcg32 rng(seed);
  const double std_base = 0.02;
  const double std_resid = 0.02 / std::sqrt(2.0 * config.n_layers);
  auto fill_normal = [&](std::vector<T>& t, double std) {
    for (auto& x : t) x = static_cast<T>(rng.normal() * std);
  };
  fill_normal(w.token_embedding, std_base);
  for (auto& l : w.layers) {
    std::fill(l.attn_norm.begin(), l.attn_norm.end(), T(1));
    fill_normal(l.wq, std_base);
    fill_normal(l.wk, std_base);
    fill_normal(l.wv, std_base);
    fill_normal(l.wo, std_resid);
    std::fill(l.ffn_norm.begin(), l.ffn_norm.end(), T(1));
    fill_normal(l.w1, std_base);
    fill_normal(l.w2, std_resid);
  }
  std::fill(w.final_norm.begin(), w.final_norm.end(), T(1));
  fill_normal(w.unembedding, std_base);
  return w;
}

template <class T>
std::size_t Weights<T>::numel() const {
  std::size_t n = 0;
  visit([&](std::size_t, const std::vector<T>& t) { n += t.size(); });
  return n;
}

template <class T>
void Weights<T>::fill(T value) {
  visit([&](std::size_t, std::vector<T>& t) { std::fill(t.begin(), t.end(), value); });
}

template struct Weights<float>;
template struct Weights<double>;

// ---------------------------------------------------------------------------
// ALiBi, clipping, attention

double alibi_slope(int head, int n_heads) {
  return std::exp2(-8.0 * static_cast<double>(head + 1) / static_cast<double>(n_heads));
}

AlibiBias::AlibiBias(int heads, int q, int k) : n_heads(heads), q_len(q), k_len(k) {
  if (heads < 1 || q < 1 || k < 1 || q > k) {
    throw std::invalid_argument("alibi_bias: need heads >= 1 and 1 <= q_len <= k_len");
  }
  slopes.resize(heads);
  for (int h = 0; h < heads; ++h) slopes[h] = alibi_slope(h, heads);
}

double AlibiBias::at(int head, int i, int j) const {
  const int pos = k_len - q_len + i;
  if (j > pos) return -std::numeric_limits<double>::infinity();
  return -slopes[head] * static_cast<double>(pos - j);
}

AlibiBias alibi_bias(int n_heads, int q_len, int k_len) { return {n_heads, q_len, k_len}; }

template <class T>
void clip_qkv(std::span<T> x, double c) {
  if (!(c > 0.0)) throw std::invalid_argument("clip_qkv: bound must be positive");
  const T hi = static_cast<T>(c);
  for (auto& v : x) v = std::clamp(v, -hi, hi);
}

template void clip_qkv<float>(std::span<float>, double);
template void clip_qkv<double>(std::span<double>, double);

template <class T>
std::vector<T> gqa_attention(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                             int q_len, int k_len, const ModelConfig& config,
                             const AlibiBias& bias, std::vector<T>* probs) {
  const int H = config.n_heads;
  const int KVH = config.n_kv_heads;
  if (H % KVH != 0) throw std::invalid_argument("gqa_attention: heads not divisible by kv heads");
  const int hd = config.head_dim();
  const int d = H * hd;
  const int kvd = KVH * hd;
  if (q.size() != static_cast<std::size_t>(q_len) * d ||
      k.size() != static_cast<std::size_t>(k_len) * kvd ||
      v.size() != static_cast<std::size_t>(k_len) * kvd) {
    throw std::invalid_argument("gqa_attention: tensor shapes do not match config");
  }
  if (bias.n_heads != H || bias.q_len != q_len || bias.k_len != k_len) {
    throw std::invalid_argument("gqa_attention: bias shape mismatch");
  }
  const auto& kern = simd::kernels<T>();
  const int group = H / KVH;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  std::vector<T> out(static_cast<std::size_t>(q_len) * d, T(0));
  std::vector<T> local;
  std::vector<T>& p = probs ? *probs : local;
  p.assign(static_cast<std::size_t>(H) * q_len * k_len, T(0));

  for (int h = 0; h < H; ++h) {
    const int g = h / group;
    for (int i = 0; i < q_len; ++i) {
      const T* qi = q.data() + static_cast<std::size_t>(i) * d + h * hd;
      T* row = p.data() + (static_cast<std::size_t>(h) * q_len + i) * k_len;
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < k_len; ++j) {
        const double b = bias.at(h, i, j);
        if (std::isinf(b)) {
          row[j] = -std::numeric_limits<T>::infinity();
          continue;
        }
        const T* kj = k.data() + static_cast<std::size_t>(j) * kvd + g * hd;
        row[j] = kern.dot(qi, kj, hd) * scale + static_cast<T>(b);
        mx = std::max(mx, row[j]);
      }
      T sum = 0;
      for (int j = 0; j < k_len; ++j) {
        row[j] = std::isinf(row[j]) ? T(0) : std::exp(row[j] - mx);
        sum += row[j];
      }
      const T inv = T(1) / sum;
      T* oi = out.data() + static_cast<std::size_t>(i) * d + h * hd;
      for (int j = 0; j < k_len; ++j) {
        row[j] *= inv;
        if (row[j] != T(0)) {
          kern.axpy(row[j], v.data() + static_cast<std::size_t>(j) * kvd + g * hd, oi, hd);
        }
      }
    }
  }
  return out;
}

template std::vector<float> gqa_attention<float>(std::span<const float>, std::span<const float>,
                                                 std::span<const float>, int, int,
                                                 const ModelConfig&, const AlibiBias&,
                                                 std::vector<float>*);
template std::vector<double> gqa_attention<double>(std::span<const double>,
                                                   std::span<const double>,
                                                   std::span<const double>, int, int,
                                                   const ModelConfig&, const AlibiBias&,
                                                   std::vector<double>*);

// ---------------------------------------------------------------------------
// Building blocks

namespace {

template <class T>
void rmsnorm_forward(const T* x, const T* gain, T* y, T* rms_out, int rows, int d, double eps) {
  for (int t = 0; t < rows; ++t) {
    const T* xr = x + static_cast<std::size_t>(t) * d;
    double ss = 0.0;
    for (int i = 0; i < d; ++i) ss += static_cast<double>(xr[i]) * xr[i];
    const T rms = static_cast<T>(std::sqrt(ss / d + eps));
    rms_out[t] = rms;
    T* yr = y + static_cast<std::size_t>(t) * d;
    for (int i = 0; i < d; ++i) yr[i] = xr[i] / rms * gain[i];
  }
}

// dx += d(rmsnorm)/dx . dy ; dgain += sum_t dy * x / rms
template <class T>
void rmsnorm_backward(const T* x, const T* rms, const T* gain, const T* dy, T* dgain, T* dx,
                      int rows, int d) {
  for (int t = 0; t < rows; ++t) {
    const T* xr = x + static_cast<std::size_t>(t) * d;
    const T* dyr = dy + static_cast<std::size_t>(t) * d;
    T* dxr = dx + static_cast<std::size_t>(t) * d;
    const T r = rms[t];
    T dot = 0;
    for (int i = 0; i < d; ++i) {
      const T n = xr[i] / r;
      dgain[i] += dyr[i] * n;
      dot += dyr[i] * gain[i] * n;
    }
    const T mean = dot / static_cast<T>(d);
    for (int i = 0; i < d; ++i) dxr[i] += (dyr[i] * gain[i] - xr[i] / r * mean) / r;
  }
}

template <class T>
std::vector<T> linear(const std::vector<T>& in, const std::vector<T>& w, int rows, int in_dim,
                      int out_dim) {
  std::vector<T> out(static_cast<std::size_t>(rows) * out_dim);
  simd::kernels<T>().matmul_nt(in.data(), w.data(), out.data(), rows, in_dim, out_dim);
  return out;
}

template <class T>
void clip_backward(const std::vector<T>& pre, std::vector<T>& grad, double c) {
  const T hi = static_cast<T>(c);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (pre[i] > hi || pre[i] < -hi) grad[i] = T(0);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Model

template <class T>
Model<T>::Model(ModelConfig config, Weights<T> weights)
    : config_(std::move(config)), weights_(std::move(weights)) {
  config_.validate();
  const auto layout = parameter_layout(config_);
  if (weights_.layers.size() != static_cast<std::size_t>(config_.n_layers)) {
    throw std::invalid_argument("weights: layer count does not match config");
  }
  weights_.visit([&](std::size_t i, const std::vector<T>& t) {
    if (t.size() != layout[i].numel()) {
      throw std::invalid_argument("weights: tensor " + layout[i].name + " has wrong size");
    }
  });
}

template <class T>
Model<T> Model<T>::initialize(const ModelConfig& config, std::uint64_t seed) {
  return Model(config, Weights<T>::initialize(config, seed));
}

template <class T>
void Model<T>::check_tokens(std::span<const int> tokens) const {
  if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
  if (tokens.size() > static_cast<std::size_t>(config_.max_seq_len)) {
    throw std::invalid_argument("forward: sequence length " + std::to_string(tokens.size()) +
                                " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  }
  for (int t : tokens) {
    if (t < 0 || t >= config_.vocab_size) {
      throw std::invalid_argument("forward: token id " + std::to_string(t) + " out of range");
    }
  }
}

template <class T>
const std::vector<T>& Model<T>::forward_train(std::span<const int> tokens,
                                              ActivationCache<T>& cache) const {
  check_tokens(tokens);
  const int n = static_cast<int>(tokens.size());
  const int d = config_.hidden_dim;
  const int kvd = config_.kv_dim();
  const int f = config_.ffn_dim();
  const int V = config_.vocab_size;
  const auto& W = weights_;

  cache.tokens.assign(tokens.begin(), tokens.end());
  cache.layers.resize(config_.n_layers);

  std::vector<T> x(static_cast<std::size_t>(n) * d);
  for (int t = 0; t < n; ++t) {
    std::copy_n(W.token_embedding.begin() + static_cast<std::size_t>(tokens[t]) * d, d,
                x.begin() + static_cast<std::size_t>(t) * d);
  }

  const AlibiBias bias(config_.n_heads, n, n);
  for (int l = 0; l < config_.n_layers; ++l) {
    const auto& lw = W.layers[l];
    auto& L = cache.layers[l];
    L.x_in = x;
    L.attn_rms.resize(n);
    L.attn_normed.resize(x.size());
    rmsnorm_forward(x.data(), lw.attn_norm.data(), L.attn_normed.data(), L.attn_rms.data(), n, d,
                    config_.norm_eps);
    L.q_pre = linear(L.attn_normed, lw.wq, n, d, d);
    L.k_pre = linear(L.attn_normed, lw.wk, n, d, kvd);
    L.v_pre = linear(L.attn_normed, lw.wv, n, d, kvd);
    L.q = L.q_pre;
    L.k = L.k_pre;
    L.v = L.v_pre;
    clip_qkv<T>(L.q, config_.qkv_clip);
    clip_qkv<T>(L.k, config_.qkv_clip);
    clip_qkv<T>(L.v, config_.qkv_clip);
    L.attn_out = gqa_attention<T>(L.q, L.k, L.v, n, n, config_, bias, &L.probs);
    const auto proj = linear(L.attn_out, lw.wo, n, d, d);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += proj[i];
    L.x_mid = x;

    L.ffn_rms.resize(n);
    L.ffn_normed.resize(x.size());
    rmsnorm_forward(x.data(), lw.ffn_norm.data(), L.ffn_normed.data(), L.ffn_rms.data(), n, d,
                    config_.norm_eps);
    L.ffn_pre = linear(L.ffn_normed, lw.w1, n, d, f);
    L.ffn_act = L.ffn_pre;
    for (auto& a : L.ffn_act) a = std::max(a, T(0));
    const auto down = linear(L.ffn_act, lw.w2, n, f, d);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += down[i];
  }

  cache.x_final = x;
  cache.final_rms.resize(n);
  cache.final_normed.resize(x.size());
  rmsnorm_forward(x.data(), W.final_norm.data(), cache.final_normed.data(),
                  cache.final_rms.data(), n, d, config_.norm_eps);
  cache.logits = linear(cache.final_normed, W.unembedding, n, d, V);
  return cache.logits;
}

template <class T>
ForwardTrace<T> Model<T>::forward(std::span<const int> tokens) const {
  ActivationCache<T> cache;
  forward_train(tokens, cache);
  ForwardTrace<T> trace;
  trace.seq_len = static_cast<int>(tokens.size());
  trace.hidden_states.reserve(config_.n_layers + 1);
  for (auto& L : cache.layers) trace.hidden_states.push_back(std::move(L.x_in));
  trace.hidden_states.push_back(std::move(cache.x_final));
  trace.logits = std::move(cache.logits);
  return trace;
}

template <class T>
void Model<T>::backward(const ActivationCache<T>& cache, std::span<const T> dlogits,
                        Weights<T>& grads) const {
  const int n = static_cast<int>(cache.tokens.size());
  const int d = config_.hidden_dim;
  const int kvd = config_.kv_dim();
  const int f = config_.ffn_dim();
  const int V = config_.vocab_size;
  const int H = config_.n_heads;
  const int hd = config_.head_dim();
  const int group = config_.group_size();
  if (dlogits.size() != static_cast<std::size_t>(n) * V) {
    throw std::invalid_argument("backward: dlogits shape mismatch");
  }
  const auto& K = simd::kernels<T>();
  const auto& W = weights_;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  K.matmul_tn_acc(dlogits.data(), cache.final_normed.data(), grads.unembedding.data(), n, d, V);
  std::vector<T> dnorm(static_cast<std::size_t>(n) * d, T(0));
  K.matmul_nn_acc(dlogits.data(), W.unembedding.data(), dnorm.data(), n, d, V);
  std::vector<T> dx(static_cast<std::size_t>(n) * d, T(0));
  rmsnorm_backward(cache.x_final.data(), cache.final_rms.data(), W.final_norm.data(),
                   dnorm.data(), grads.final_norm.data(), dx.data(), n, d);

  for (int l = config_.n_layers - 1; l >= 0; --l) {
    const auto& lw = W.layers[l];
    auto& lg = grads.layers[l];
    const auto& L = cache.layers[l];

    // Feed-forward block: x = x_mid + w2 relu(w1 norm(x_mid))
    K.matmul_tn_acc(dx.data(), L.ffn_act.data(), lg.w2.data(), n, f, d);
    std::vector<T> dact(static_cast<std::size_t>(n) * f, T(0));
    K.matmul_nn_acc(dx.data(), lw.w2.data(), dact.data(), n, f, d);
    for (std::size_t i = 0; i < dact.size(); ++i) {
      if (!(L.ffn_pre[i] > T(0))) dact[i] = T(0);
    }
    K.matmul_tn_acc(dact.data(), L.ffn_normed.data(), lg.w1.data(), n, d, f);
    std::fill(dnorm.begin(), dnorm.end(), T(0));
    K.matmul_nn_acc(dact.data(), lw.w1.data(), dnorm.data(), n, d, f);
    rmsnorm_backward(L.x_mid.data(), L.ffn_rms.data(), lw.ffn_norm.data(), dnorm.data(),
                     lg.ffn_norm.data(), dx.data(), n, d);

    // Attention block: x_mid = x_in + wo attn(clip(q), clip(k), clip(v))
    K.matmul_tn_acc(dx.data(), L.attn_out.data(), lg.wo.data(), n, d, d);
    std::vector<T> dattn(static_cast<std::size_t>(n) * d, T(0));
    K.matmul_nn_acc(dx.data(), lw.wo.data(), dattn.data(), n, d, d);

    std::vector<T> dq(L.q.size(), T(0)), dk(L.k.size(), T(0)), dv(L.v.size(), T(0));
    std::vector<T> dp(n);
    for (int h = 0; h < H; ++h) {
      const int g = h / group;
      for (int i = 0; i < n; ++i) {
        const T* prow = L.probs.data() + (static_cast<std::size_t>(h) * n + i) * n;
        const T* doi = dattn.data() + static_cast<std::size_t>(i) * d + h * hd;
        T weighted = 0;
        for (int j = 0; j <= i; ++j) {
          const std::size_t kv_off = static_cast<std::size_t>(j) * kvd + g * hd;
          dp[j] = K.dot(doi, L.v.data() + kv_off, hd);
          if (prow[j] != T(0)) K.axpy(prow[j], doi, dv.data() + kv_off, hd);
          weighted += prow[j] * dp[j];
        }
        T* dqi = dq.data() + static_cast<std::size_t>(i) * d + h * hd;
        const T* qi = L.q.data() + static_cast<std::size_t>(i) * d + h * hd;
        for (int j = 0; j <= i; ++j) {
          const T ds = prow[j] * (dp[j] - weighted) * scale;
          if (ds == T(0)) continue;
          const std::size_t kv_off = static_cast<std::size_t>(j) * kvd + g * hd;
          K.axpy(ds, L.k.data() + kv_off, dqi, hd);
          K.axpy(ds, qi, dk.data() + kv_off, hd);
        }
      }
    }
    clip_backward(L.q_pre, dq, config_.qkv_clip);
    clip_backward(L.k_pre, dk, config_.qkv_clip);
    clip_backward(L.v_pre, dv, config_.qkv_clip);

    K.matmul_tn_acc(dq.data(), L.attn_normed.data(), lg.wq.data(), n, d, d);
    K.matmul_tn_acc(dk.data(), L.attn_normed.data(), lg.wk.data(), n, d, kvd);
    K.matmul_tn_acc(dv.data(), L.attn_normed.data(), lg.wv.data(), n, d, kvd);
    std::fill(dnorm.begin(), dnorm.end(), T(0));
    K.matmul_nn_acc(dq.data(), lw.wq.data(), dnorm.data(), n, d, d);
    K.matmul_nn_acc(dk.data(), lw.wk.data(), dnorm.data(), n, d, kvd);
    K.matmul_nn_acc(dv.data(), lw.wv.data(), dnorm.data(), n, d, kvd);
    rmsnorm_backward(L.x_in.data(), L.attn_rms.data(), lw.attn_norm.data(), dnorm.data(),
                     lg.attn_norm.data(), dx.data(), n, d);
  }

  for (int t = 0; t < n; ++t) {
    K.axpy(T(1), dx.data() + static_cast<std::size_t>(t) * d,
           grads.token_embedding.data() + static_cast<std::size_t>(cache.tokens[t]) * d, d);
  }
}

template <class T>
KVCache<T>::KVCache(const ModelConfig& config)
    : n_layers(config.n_layers),
      n_kv_heads(config.n_kv_heads),
      head_dim(config.head_dim()),
      max_positions(config.max_seq_len),
      keys(config.n_layers),
      values(config.n_layers) {}

template <class T>
std::size_t KVCache<T>::element_count() const {
  std::size_t n = 0;
  for (int l = 0; l < n_layers; ++l) n += keys[l].size() + values[l].size();
  return n;
}

template struct KVCache<float>;
template struct KVCache<double>;

template <class T>
std::vector<T> Model<T>::decode_step(KVCache<T>& cache, int token) const {
  if (cache.n_layers != config_.n_layers || cache.n_kv_heads != config_.n_kv_heads ||
      cache.head_dim != config_.head_dim()) {
    throw std::invalid_argument("decode_step: cache built for a different config");
  }
  if (cache.positions >= config_.max_seq_len) {
    throw std::length_error("decode_step: KV cache is full (" + std::to_string(cache.positions) +
                            " positions)");
  }
  if (token < 0 || token >= config_.vocab_size) {
    throw std::invalid_argument("decode_step: token id " + std::to_string(token) +
                                " out of range");
  }
  const int d = config_.hidden_dim;
  const int kvd = config_.kv_dim();
  const int f = config_.ffn_dim();
  const int pos = cache.positions;
  const auto& W = weights_;

  std::vector<T> x(W.token_embedding.begin() + static_cast<std::size_t>(token) * d,
                   W.token_embedding.begin() + static_cast<std::size_t>(token + 1) * d);
  std::vector<T> normed(d);
  T rms;
  const AlibiBias bias(config_.n_heads, 1, pos + 1);
  for (int l = 0; l < config_.n_layers; ++l) {
    const auto& lw = W.layers[l];
    rmsnorm_forward(x.data(), lw.attn_norm.data(), normed.data(), &rms, 1, d, config_.norm_eps);
    auto q = linear(normed, lw.wq, 1, d, d);
    auto k = linear(normed, lw.wk, 1, d, kvd);
    auto v = linear(normed, lw.wv, 1, d, kvd);
    clip_qkv<T>(q, config_.qkv_clip);
    clip_qkv<T>(k, config_.qkv_clip);
    clip_qkv<T>(v, config_.qkv_clip);
    cache.keys[l].insert(cache.keys[l].end(), k.begin(), k.end());
    cache.values[l].insert(cache.values[l].end(), v.begin(), v.end());
    const auto attn = gqa_attention<T>(q, cache.keys[l], cache.values[l], 1, pos + 1, config_, bias);
    const auto proj = linear(attn, lw.wo, 1, d, d);
    for (int i = 0; i < d; ++i) x[i] += proj[i];
    rmsnorm_forward(x.data(), lw.ffn_norm.data(), normed.data(), &rms, 1, d, config_.norm_eps);
    auto up = linear(normed, lw.w1, 1, d, f);
    for (auto& a : up) a = std::max(a, T(0));
    const auto down = linear(up, lw.w2, 1, f, d);
    for (int i = 0; i < d; ++i) x[i] += down[i];
  }
  ++cache.positions;
  rmsnorm_forward(x.data(), W.final_norm.data(), normed.data(), &rms, 1, d, config_.norm_eps);
  return linear(normed, W.unembedding, 1, d, config_.vocab_size);
}

namespace {

template <class T>
int pick_token(const std::vector<T>& logits, const SamplingStrategy& s, Pcg32& rng) {
  if (s.kind == SamplingStrategy::Kind::kGreedy) {
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  if (s.top_k < 1) throw std::invalid_argument("generate: top_k must be >= 1");
  if (!(s.temperature > 0.0)) throw std::invalid_argument("generate: temperature must be > 0");
  std::vector<int> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  const auto k = std::min<std::size_t>(s.top_k, order.size());
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
  });
  std::vector<double> w(k);
  const double top = static_cast<double>(logits[order[0]]);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    w[i] = std::exp((static_cast<double>(logits[order[i]]) - top) / s.temperature);
    sum += w[i];
  }
  double u = rng.uniform() * sum;
  for (std::size_t i = 0; i < k; ++i) {
    if (u < w[i]) return order[i];
    u -= w[i];
  }
  return order[k - 1];
}

}  // namespace

template <class T>
std::vector<int> Model<T>::generate(std::span<const int> prompt, int max_new,
                                    const SamplingStrategy& strategy,
                                    std::optional<int> eos) const {
  if (prompt.empty()) throw std::invalid_argument("generate: empty prompt");
  if (max_new < 0) throw std::invalid_argument("generate: max_new must be >= 0");
  if (prompt.size() + static_cast<std::size_t>(max_new) >
      static_cast<std::size_t>(config_.max_seq_len)) {
    throw std::invalid_argument("generate: prompt of " + std::to_string(prompt.size()) +
                                " tokens does not fit max_seq_len - max_new");
  }
  std::vector<int> out;
  if (max_new == 0) return out;
  KVCache<T> cache(config_);
  std::vector<T> logits;
  for (int t : prompt) logits = decode_step(cache, t);
  Pcg32 rng(strategy.seed);
  for (int i = 0; i < max_new; ++i) {
    const int next = pick_token(logits, strategy, rng);
    out.push_back(next);
    if (eos && next == *eos) break;
    if (i + 1 < max_new) logits = decode_step(cache, next);
  }
  return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace krutrim
