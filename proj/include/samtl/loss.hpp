#pragma once

#include <cstdint>
#include <vector>

#include "samtl/tensor.hpp"

namespace samtl {

// Numerically stable weighted binary cross-entropy against logits,
// summed over masked-in items:
//   sum_i mask_i * [ w*y_i*softplus(-z_i) + (1-y_i)*softplus(z_i) ]
// Masked-out items contribute exactly zero loss and gradient.
template <typename T>
Tensor<T> weighted_bce_sum(Tape<T>& tape, const Tensor<T>& logits,
                           const std::vector<uint8_t>& labels,
                           const std::vector<uint8_t>& mask, T pos_weight) {
  int n = logits.size();
  if (static_cast<int>(labels.size()) != n ||
      static_cast<int>(mask.size()) != n)
    throw NumericError("weighted_bce_sum: label/mask size mismatch for " +
                       shape_str(logits.shape()));
  if (pos_weight <= T(0))
    throw NumericError("weighted_bce_sum: pos_weight must be positive");
  auto softplus = [](T v) {
    return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
  };
  Tensor<T> out = Tensor<T>::zeros({1});
  T acc = T(0);
  for (int i = 0; i < n; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    T z = logits.data()[i];
    acc += labels[static_cast<size_t>(i)] ? pos_weight * softplus(-z)
                                          : softplus(z);
  }
  out.data()[0] = acc;
  if (detail::track(tape, logits)) {
    out.set_requires_grad(true);
    Tensor<T> lc = logits, oc = out;
    auto lab = std::make_shared<std::vector<uint8_t>>(labels);
    auto msk = std::make_shared<std::vector<uint8_t>>(mask);
    tape.record([lc, oc, lab, msk, pos_weight, n]() mutable {
      if (!oc.has_grad()) return;
      T dy = oc.grad()[0];
      auto& dz = lc.grad();
      for (int i = 0; i < n; ++i) {
        if (!(*msk)[static_cast<size_t>(i)]) continue;
        T z = lc.data()[i];
        T sig = z >= T(0) ? T(1) / (T(1) + std::exp(-z))
                          : std::exp(z) / (T(1) + std::exp(z));
        T g = (*lab)[static_cast<size_t>(i)] ? pos_weight * (sig - T(1)) : sig;
        dz[static_cast<size_t>(i)] += dy * g;
      }
    });
  }
  return out;
}

// Multi-task form: per-task weighted sums divided by the total number
// of labeled (task, instance) pairs in the batch.
template <typename T>
Tensor<T> weighted_multitask_loss(
    Tape<T>& tape, const std::vector<Tensor<T>>& task_logits,
    const std::vector<std::vector<uint8_t>>& labels,
    const std::vector<std::vector<uint8_t>>& mask,
    const std::vector<T>& pos_weights) {
  if (task_logits.size() != labels.size() || labels.size() != mask.size() ||
      mask.size() != pos_weights.size())
    throw NumericError("weighted_multitask_loss: task count mismatch");
  long labeled = 0;
  for (const auto& m : mask)
    for (uint8_t v : m) labeled += v ? 1 : 0;
  if (labeled == 0)
    throw DataError("AllMasked: batch has no labeled instance on any task");
  Tensor<T> total;
  for (size_t t = 0; t < task_logits.size(); ++t) {
    Tensor<T> part =
        weighted_bce_sum(tape, task_logits[t], labels[t], mask[t],
                         pos_weights[t]);
    total = t == 0 ? part : add(tape, total, part);
  }
  return mul_scalar(tape, total, T(1) / static_cast<T>(labeled));
}

}  // namespace samtl
