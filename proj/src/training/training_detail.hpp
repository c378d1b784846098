#pragma once

#include <cstdint>
#include <span>
#include <utility>

#include "krutrim/training.hpp"

namespace krutrim::detail {

// Adds grad_scale * d(sum CE)/dparams to grads; returns {sum CE, count}.
template <class T>
std::pair<double, std::size_t> masked_ce_step(const Model<T>& model, std::span<const int> tokens,
                                              std::span<const std::uint8_t> mask,
                                              double grad_scale, Weights<T>* grads);

// DPO loss for one pair; grads receive grad_scale * dL/dparams. Returns {loss, margin}.
template <class T>
std::pair<double, double> dpo_step(const Model<T>& policy, const TokenizedPair& pair,
                                   double ref_chosen, double ref_rejected, double beta,
                                   double grad_scale, Weights<T>* grads);

}  // namespace krutrim::detail
