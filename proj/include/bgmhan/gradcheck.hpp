#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "bgmhan/tensor.hpp"

namespace bgmhan {

// Runs f once on a fresh tape and back-propagates into the leaves it touches.
template <class T>
Tensor<T> forward_backward(const std::function<Tensor<T>()>& f) {
  GradTape<T> tape;
  Tensor<T> loss;
  {
    TapeScope<T> scope(tape);
    loss = f();
  }
  tape.backward(loss);
  return loss;
}

// Largest relative disagreement between the tape gradient and central
// differences over every coordinate of every parameter:
//   |analytic - cd| / max(|analytic|, |cd|, 1e-8)
// f must be deterministic and must read the parameters through the given
// handles, which are perturbed in place and restored.
template <class T>
double grad_check(const std::function<Tensor<T>()>& f, std::span<Tensor<T>> params, double eps = 1e-5) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  forward_backward<T>(f);
  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    analytic.emplace_back(p.has_grad() ? std::vector<T>(p.grad().begin(), p.grad().end())
                                       : std::vector<T>(p.numel(), T(0)));
  }

  NoGradScope<T> no_grad;
  double worst = 0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto data = params[pi].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const T saved = data[i];
      data[i] = static_cast<T>(saved + eps);
      const double up = f().item();
      data[i] = static_cast<T>(saved - eps);
      const double down = f().item();
      data[i] = saved;
      const double cd = (up - down) / (2 * eps);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(cd), 1e-8});
      worst = std::max(worst, std::abs(a - cd) / denom);
    }
  }
  return worst;
}

template <class T>
double global_grad_norm(std::span<const Tensor<T>> params) {
  double sq = 0;
  for (const auto& p : params)
    for (const T g : p.grad()) sq += static_cast<double>(g) * g;
  return std::sqrt(sq);
}

// Rescales every gradient by max_norm / g when the global L2 norm g exceeds
// max_norm. Returns g measured before clipping.
template <class T>
double clip_grad_norm(std::span<Tensor<T>> params, double max_norm) {
  if (!(max_norm > 0)) throw UsageError("clip_grad_norm: max_norm must be positive");
  const double norm = global_grad_norm<T>(std::span<const Tensor<T>>(params.data(), params.size()));
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g = static_cast<T>(g * factor);
    }
  }
  return norm;
}

}  // namespace bgmhan
