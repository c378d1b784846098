#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "krutrim/rng.hpp"
#include "krutrim/tokenizer.hpp"
#include "krutrim/training.hpp"
#include "training_detail.hpp"

namespace krutrim {

std::vector<std::uint8_t> TokenizedExample::response_mask() const {
  std::vector<std::uint8_t> mask(tokens.size() - 1);
  for (std::size_t t = 0; t < mask.size(); ++t) mask[t] = (t + 1 >= response_start) ? 1 : 0;
  return mask;
}

TokenizedExample tokenize_example(const Tokenizer& tokenizer, std::string_view prompt,
                                  std::string_view response, bool append_eos) {
  TokenizedExample ex;
  ex.tokens = tokenizer.encode(prompt);
  ex.response_start = ex.tokens.size();
  const auto resp = tokenizer.encode(response);
  if (resp.empty()) throw std::invalid_argument("empty response after tokenization");
  ex.tokens.insert(ex.tokens.end(), resp.begin(), resp.end());
  if (append_eos && tokenizer.eos_id()) ex.tokens.push_back(*tokenizer.eos_id());
  if (ex.tokens.size() < 2) throw std::invalid_argument("example shorter than two tokens");
  return ex;
}

template <class T>
std::pair<double, std::size_t> cross_entropy(std::span<const T> logits, int vocab,
                                             std::span<const int> targets,
                                             std::span<const std::uint8_t> mask,
                                             std::span<T> dlogits, double grad_scale) {
  const std::size_t rows = targets.size();
  if (logits.size() != rows * static_cast<std::size_t>(vocab)) {
    throw std::invalid_argument("cross_entropy: logits shape does not match targets");
  }
  if (!mask.empty() && mask.size() != rows) {
    throw std::invalid_argument("cross_entropy: mask length does not match targets");
  }
  if (!dlogits.empty() && dlogits.size() != logits.size()) {
    throw std::invalid_argument("cross_entropy: gradient buffer shape mismatch");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask.empty() && !mask[r]) continue;
    const int y = targets[r];
    if (y < 0 || y >= vocab) throw std::invalid_argument("cross_entropy: target out of range");
    const T* row = logits.data() + r * vocab;
    double mx = row[0];
    for (int v = 1; v < vocab; ++v) mx = std::max(mx, static_cast<double>(row[v]));
    double sum = 0.0;
    for (int v = 0; v < vocab; ++v) sum += std::exp(static_cast<double>(row[v]) - mx);
    const double lse = mx + std::log(sum);
    total += lse - static_cast<double>(row[y]);
    ++count;
    if (!dlogits.empty()) {
      T* g = dlogits.data() + r * vocab;
      for (int v = 0; v < vocab; ++v) {
        g[v] += static_cast<T>(grad_scale * std::exp(static_cast<double>(row[v]) - lse));
      }
      g[y] -= static_cast<T>(grad_scale);
    }
  }
  return {total, count};
}

template std::pair<double, std::size_t> cross_entropy<float>(std::span<const float>, int,
                                                             std::span<const int>,
                                                             std::span<const std::uint8_t>,
                                                             std::span<float>, double);
template std::pair<double, std::size_t> cross_entropy<double>(std::span<const double>, int,
                                                              std::span<const int>,
                                                              std::span<const std::uint8_t>,
                                                              std::span<double>, double);

template <class T>
double lm_loss(std::span<const T> logits, int vocab, std::span<const int> targets,
               std::span<const std::uint8_t> mask) {
  const auto [sum, count] = cross_entropy<T>(logits, vocab, targets, mask);
  if (count == 0) throw std::invalid_argument("lm_loss: every position is masked");
  return sum / static_cast<double>(count);
}

template double lm_loss<float>(std::span<const float>, int, std::span<const int>,
                               std::span<const std::uint8_t>);
template double lm_loss<double>(std::span<const double>, int, std::span<const int>,
                                std::span<const std::uint8_t>);

template <class T>
double sft_loss(std::span<const T> logits, int vocab, const TokenizedExample& example) {
  const auto targets = example.targets();
  const auto mask = example.response_mask();
  return lm_loss<T>(logits, vocab, targets, mask);
}

template double sft_loss<float>(std::span<const float>, int, const TokenizedExample&);
template double sft_loss<double>(std::span<const double>, int, const TokenizedExample&);

namespace {

// log(1 + exp(x)) without overflow
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_dpo_inputs(double pc, double pr, double rc, double rr, double beta) {
  if (!std::isfinite(pc) || !std::isfinite(pr) || !std::isfinite(rc) || !std::isfinite(rr)) {
    throw std::invalid_argument("dpo_loss: non-finite log-probability");
  }
  if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("dpo_loss: beta must be > 0");
}

}  // namespace

double implicit_reward_margin(double pc, double pr, double rc, double rr, double beta) {
  check_dpo_inputs(pc, pr, rc, rr, beta);
  return beta * ((pc - pr) - (rc - rr));
}

double dpo_loss(double pc, double pr, double rc, double rr, double beta) {
  return softplus(-implicit_reward_margin(pc, pr, rc, rr, beta));
}

DpoGradient dpo_loss_grad(double pc, double pr, double rc, double rr, double beta) {
  const double z = implicit_reward_margin(pc, pr, rc, rr, beta);
  const double s = sigmoid(-z);
  return {softplus(-z), -beta * s, beta * s};
}

template <class T>
double sequence_logprob(const Model<T>& model, const TokenizedExample& example) {
  ActivationCache<T> cache;
  const auto& logits = model.forward_train(example.inputs(), cache);
  const auto targets = example.targets();
  const auto mask = example.response_mask();
  return -cross_entropy<T>(logits, model.config().vocab_size, targets, mask).first;
}

template double sequence_logprob<float>(const Model<float>&, const TokenizedExample&);
template double sequence_logprob<double>(const Model<double>&, const TokenizedExample&);

namespace detail {

// Adds grad_scale * d(sum CE)/dparams to grads; returns {sum CE, count}.
template <class T>
std::pair<double, std::size_t> masked_ce_step(const Model<T>& model, std::span<const int> tokens,
                                              std::span<const std::uint8_t> mask,
                                              double grad_scale, Weights<T>* grads) {
  if (tokens.size() < 2) throw std::invalid_argument("sequence shorter than two tokens");
  ActivationCache<T> cache;
  const std::span<const int> inputs(tokens.data(), tokens.size() - 1);
  const std::span<const int> targets(tokens.data() + 1, tokens.size() - 1);
  const auto& logits = model.forward_train(inputs, cache);
  const int V = model.config().vocab_size;
  if (!grads) return cross_entropy<T>(logits, V, targets, mask);
  std::vector<T> dlogits(logits.size(), T(0));
  auto res = cross_entropy<T>(logits, V, targets, mask, dlogits, grad_scale);
  model.backward(cache, dlogits, *grads);
  return res;
}

template std::pair<double, std::size_t> masked_ce_step<float>(const Model<float>&,
                                                              std::span<const int>,
                                                              std::span<const std::uint8_t>,
                                                              double, Weights<float>*);
template std::pair<double, std::size_t> masked_ce_step<double>(const Model<double>&,
                                                               std::span<const int>,
                                                               std::span<const std::uint8_t>,
                                                               double, Weights<double>*);

// DPO loss for one pair; grads receive grad_scale * dL/dparams.
template <class T>
std::pair<double, double> dpo_step(const Model<T>& policy, const TokenizedPair& pair,
                                   double ref_chosen, double ref_rejected, double beta,
                                   double grad_scale, Weights<T>* grads) {
  const int V = policy.config().vocab_size;
  ActivationCache<T> cc, cr;
  const auto tc = pair.chosen.targets();
  const auto mc = pair.chosen.response_mask();
  const auto tr = pair.rejected.targets();
  const auto mr = pair.rejected.response_mask();
  const auto& lc = policy.forward_train(pair.chosen.inputs(), cc);
  const auto& lr = policy.forward_train(pair.rejected.inputs(), cr);
  const double pc = -cross_entropy<T>(lc, V, tc, mc).first;
  const double pr = -cross_entropy<T>(lr, V, tr, mr).first;
  const DpoGradient g = dpo_loss_grad(pc, pr, ref_chosen, ref_rejected, beta);
  const double margin = implicit_reward_margin(pc, pr, ref_chosen, ref_rejected, beta);
  if (grads) {
    // d(logp)/d(logits) = onehot - softmax, so the CE gradient is scaled by -dL/dlogp.
    std::vector<T> dc(lc.size(), T(0));
    cross_entropy<T>(lc, V, tc, mc, dc, -g.d_policy_chosen * grad_scale);
    policy.backward(cc, dc, *grads);
    std::vector<T> dr(lr.size(), T(0));
    cross_entropy<T>(lr, V, tr, mr, dr, -g.d_policy_rejected * grad_scale);
    policy.backward(cr, dr, *grads);
  }
  return {g.loss, margin};
}

template std::pair<double, double> dpo_step<float>(const Model<float>&, const TokenizedPair&,
                                                   double, double, double, double,
                                                   Weights<float>*);
template std::pair<double, double> dpo_step<double>(const Model<double>&, const TokenizedPair&,
                                                    double, double, double, double,
                                                    Weights<double>*);

}  // namespace detail

template <class T>
double lm_loss_and_grad(const Model<T>& model, std::span<const int> sequence, Weights<T>* grads) {
  if (sequence.size() < 2) throw std::invalid_argument("lm_loss: sequence shorter than two tokens");
  const std::size_t count = sequence.size() - 1;
  const auto [sum, n] = detail::masked_ce_step<T>(model, sequence, {}, 1.0 / count, grads);
  return sum / static_cast<double>(n);
}

template double lm_loss_and_grad<float>(const Model<float>&, std::span<const int>,
                                        Weights<float>*);
template double lm_loss_and_grad<double>(const Model<double>&, std::span<const int>,
                                         Weights<double>*);

template <class T>
double sft_loss_and_grad(const Model<T>& model, const TokenizedExample& example,
                         Weights<T>* grads) {
  const auto mask = example.response_mask();
  const auto count = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
  if (count == 0) throw std::invalid_argument("sft_loss: no response positions");
  const auto [sum, n] = detail::masked_ce_step<T>(model, example.tokens, mask, 1.0 / count, grads);
  return sum / static_cast<double>(n);
}

template double sft_loss_and_grad<float>(const Model<float>&, const TokenizedExample&,
                                         Weights<float>*);
template double sft_loss_and_grad<double>(const Model<double>&, const TokenizedExample&,
                                          Weights<double>*);

template <class T>
double dpo_loss_and_grad(const Model<T>& policy, const TokenizedPair& pair, double ref_chosen,
                         double ref_rejected, double beta, Weights<T>* grads) {
  return detail::dpo_step<T>(policy, pair, ref_chosen, ref_rejected, beta, 1.0, grads).first;
}

template double dpo_loss_and_grad<float>(const Model<float>&, const TokenizedPair&, double,
                                         double, double, Weights<float>*);
template double dpo_loss_and_grad<double>(const Model<double>&, const TokenizedPair&, double,
                                          double, double, Weights<double>*);

// ---------------------------------------------------------------------------

template <class T>
Adam<T>::Adam(const ModelConfig& config, AdamConfig hyper)
    : config_(config),
      hyper_(hyper),
      m_(Weights<T>::zeros(config)),
      v_(Weights<T>::zeros(config)) {}

template <class T>
void Adam<T>::step(Weights<T>& weights, const Weights<T>& grads, double lr) {
  const auto layout = parameter_layout(config_);
  grads.visit([&](std::size_t i, const std::vector<T>& g) {
    for (T x : g) {
      if (!std::isfinite(static_cast<double>(x))) throw NonFiniteGradient(layout[i].name);
    }
  });
  ++t_;
  const double b1 = hyper_.beta1;
  const double b2 = hyper_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  std::vector<std::vector<T>*> w_t, m_t, v_t;
  std::vector<const std::vector<T>*> g_t;
  weights.visit([&](std::size_t, std::vector<T>& t) { w_t.push_back(&t); });
  m_.visit([&](std::size_t, std::vector<T>& t) { m_t.push_back(&t); });
  v_.visit([&](std::size_t, std::vector<T>& t) { v_t.push_back(&t); });
  grads.visit([&](std::size_t, const std::vector<T>& t) { g_t.push_back(&t); });
  for (std::size_t i = 0; i < w_t.size(); ++i) {
    auto& w = *w_t[i];
    auto& m = *m_t[i];
    auto& v = *v_t[i];
    const auto& g = *g_t[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      const double mk = b1 * m[k] + (1.0 - b1) * gk;
      const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = lr * (mk / c1) / (std::sqrt(vk / c2) + hyper_.eps);
      w[k] = static_cast<T>(static_cast<double>(w[k]) - update);
    }
  }
}

template <class T>
void Adam<T>::restore(Weights<T> m, Weights<T> v, long t) {
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

template class Adam<float>;
template class Adam<double>;

// ---------------------------------------------------------------------------

GradCheckReport grad_check(const Model<double>& model, const DoubleLossFn& loss_fn,
                           std::size_t n_samples, double tolerance, std::uint64_t seed,
                           double step, double zero_floor) {
  Model<double> work = model;
  Weights<double> grads = Weights<double>::zeros(model.config());
  loss_fn(work, &grads);

  const auto layout = parameter_layout(model.config());
  std::vector<std::vector<double>*> params;
  std::vector<const std::vector<double>*> grad_t;
  work.mutable_weights().visit([&](std::size_t, std::vector<double>& t) { params.push_back(&t); });
  grads.visit([&](std::size_t, const std::vector<double>& t) { grad_t.push_back(&t); });
  std::vector<std::size_t> offsets{0};
  for (auto* p : params) offsets.push_back(offsets.back() + p->size());
  const std::size_t total = offsets.back();
  n_samples = std::min(n_samples, total);

  Pcg32 rng(seed);
  std::set<std::size_t> picked;
  while (picked.size() < n_samples) picked.insert(rng.bounded(static_cast<std::uint32_t>(total)));

  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t flat : picked) {
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat);
    const std::size_t ti = static_cast<std::size_t>(it - offsets.begin()) - 1;
    const std::size_t k = flat - offsets[ti];
    double& w = (*params[ti])[k];
    const double orig = w;
    w = orig + step;
    const double lp = loss_fn(work, nullptr);
    w = orig - step;
    const double lm = loss_fn(work, nullptr);
    w = orig;
    GradSample s;
    s.tensor = layout[ti].name;
    s.index = k;
    s.analytic = (*grad_t[ti])[k];
    s.numeric = (lp - lm) / (2.0 * step);
    const double scale = std::max(std::abs(s.analytic), std::abs(s.numeric));
    s.rel_error = scale < zero_floor ? 0.0 : std::abs(s.analytic - s.numeric) / scale;
    report.max_rel_error = std::max(report.max_rel_error, s.rel_error);
    report.samples.push_back(std::move(s));
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace krutrim
