#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "seqmenu/errors.hpp"

namespace seqmenu {

/// Row-stochastic matrix of softmax choice weights, one row per valuation sample.
struct SoftChoice {
  std::size_t options = 0;
  std::vector<double> weights;  // row-major, rows x options

  std::size_t rows() const noexcept { return options ? weights.size() / options : 0; }
  std::span<const double> row(std::size_t j) const { return {weights.data() + j * options, options}; }
};

/**
 * Softmax over each row of `utilities` at inverse temperature `kappa`:
 * exp(kappa * u) / sum exp(kappa * u'), with the row max subtracted first.
 */
inline SoftChoice soft_weights(std::span<const double> utilities, std::size_t options, double kappa) {
  require(kappa > 0.0, "inverse temperature must be positive");
  require(options > 0 && utilities.size() % options == 0, "utilities are not a whole number of rows");
  SoftChoice out;
  out.options = options;
  out.weights.resize(utilities.size());
  for (std::size_t r = 0; r < utilities.size() / options; ++r) {
    const double* u = utilities.data() + r * options;
    double* w = out.weights.data() + r * options;
    double umax = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < options; ++i) {
      if (!std::isfinite(u[i])) throw std::domain_error("soft_weights: non-finite utility");
      umax = std::max(umax, u[i]);
    }
    double z = 0.0;
    for (std::size_t i = 0; i < options; ++i) z += (w[i] = std::exp(kappa * (u[i] - umax)));
    for (std::size_t i = 0; i < options; ++i) w[i] /= z;
  }
  return out;
}

namespace detail {

using F64x8 = double __attribute__((vector_size(64)));
using U64x8 = std::uint64_t __attribute__((vector_size(64)));

inline F64x8 load8(const double* p) noexcept {
  F64x8 v;
  __builtin_memcpy(&v, p, sizeof(v));
  return v;
}
inline void store8(double* p, F64x8 v) noexcept { __builtin_memcpy(p, &v, sizeof(v)); }
inline double hsum8(F64x8 v) noexcept {
  return ((v[0] + v[4]) + (v[1] + v[5])) + ((v[2] + v[6]) + (v[3] + v[7]));
}

/**
 * exp(x) for x <= 0 (inputs below -700 are clamped), within a couple of ulps.
 * Written with plain arithmetic so the same code serves doubles and F64x8.
 */
template <class T>
inline T exp_nonpositive(T x) noexcept {
  x = x < -700.0 ? T{} - 700.0 : x;
  constexpr double shifter = 0x1.8p52;  // adding it rounds to the nearest integer
  const T k = (x * 1.4426950408889634 + shifter) - shifter;
  const T r = (x - k * 6.93147180369123816490e-01) - k * 1.90821492927058770002e-10;
  T p = T{} + 1.0 / 6227020800.0;
  p = p * r + 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  // 2^k through the exponent bits; k + 1023 lands in the low mantissa bits of t.
  const T t = k + (1023.0 + 0x1p52);
  if constexpr (std::is_same_v<T, double>) {
    return p * std::bit_cast<double>(std::bit_cast<std::uint64_t>(t) << 52);
  } else {
    return p * reinterpret_cast<F64x8>(reinterpret_cast<U64x8>(t) << 52);
  }
}

}  // namespace detail

/**
 * Smoothed revenue objective for one valuation sample. With u = value - price
 * and g = price + offset, returns the per-sample loss -sum_T D_T g_T where
 * D = softmax(kappa u). When `grad` is non-empty, adds
 *
 *     scale * dloss/dprice_S = -scale * D_S (1 - kappa (g_S - R)),   R = sum_T D_T g_T
 *
 * to it, which includes the dependence of D on the prices. `scratch` must hold
 * at least values.size() doubles.
 */
inline double soft_revenue_row(std::span<const double> values, std::span<const double> prices,
                               std::span<const double> offsets, double kappa,
                               std::span<double> scratch, std::span<double> grad = {},
                               double scale = 1.0) {
  using detail::F64x8;
  const std::size_t k = values.size();
  const std::size_t k8 = k - k % 8;
  const double* v = values.data();
  const double* p = prices.data();
  const double* o = offsets.data();
  double* w = scratch.data();

  double umax = -std::numeric_limits<double>::infinity();
  {
    F64x8 mx = F64x8{} + umax;
    for (std::size_t i = 0; i < k8; i += 8) {
      const F64x8 u = detail::load8(v + i) - detail::load8(p + i);
      mx = u > mx ? u : mx;
    }
    for (int l = 0; l < 8; ++l) umax = mx[l] > umax ? mx[l] : umax;
    for (std::size_t i = k8; i < k; ++i) umax = v[i] - p[i] > umax ? v[i] - p[i] : umax;
  }
  if (!std::isfinite(umax)) return std::numeric_limits<double>::quiet_NaN();

  F64x8 z8{}, r8{};
  for (std::size_t i = 0; i < k8; i += 8) {
    const F64x8 pi = detail::load8(p + i);
    const F64x8 e = detail::exp_nonpositive<F64x8>(kappa * ((detail::load8(v + i) - pi) - umax));
    detail::store8(w + i, e);
    z8 += e;
    r8 += e * (pi + detail::load8(o + i));
  }
  double z = detail::hsum8(z8), r = detail::hsum8(r8);
  for (std::size_t i = k8; i < k; ++i) {
    const double e = detail::exp_nonpositive<double>(kappa * ((v[i] - p[i]) - umax));
    w[i] = e;
    z += e;
    r += e * (p[i] + o[i]);
  }
  r /= z;
  if (!grad.empty()) {
    const double f = scale / z;
    double* g = grad.data();
    for (std::size_t i = 0; i < k8; i += 8) {
      const F64x8 gi = detail::load8(p + i) + detail::load8(o + i);
      detail::store8(g + i, detail::load8(g + i) - f * detail::load8(w + i) * (1.0 - kappa * (gi - r)));
    }
    for (std::size_t i = k8; i < k; ++i) g[i] -= f * w[i] * (1.0 - kappa * (p[i] + o[i] - r));
  }
  return -r;
}

}  // namespace seqmenu
