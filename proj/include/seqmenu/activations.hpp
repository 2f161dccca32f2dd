#pragma once

#include <cmath>

namespace seqmenu {

// Offset output activations. The shifts make freshly initialized networks emit
// low prices that grow during training.

/// 1 / (1 + exp(-(x - 0.5)))
inline double sigmoid_with_offset(double x) noexcept { return 1.0 / (1.0 + std::exp(-(x - 0.5))); }

inline double sigmoid_with_offset_grad(double x) noexcept {
  const double s = sigmoid_with_offset(x);
  return s * (1.0 - s);
}

/// log(1 + exp(x - 1)), evaluated without overflow for large x.
inline double softplus_with_offset(double x) noexcept {
  const double z = x - 1.0;
  return z > 30.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double softplus_with_offset_grad(double x) noexcept { return 1.0 / (1.0 + std::exp(-(x - 1.0))); }

}  // namespace seqmenu
