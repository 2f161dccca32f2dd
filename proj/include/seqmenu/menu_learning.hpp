#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "seqmenu/core_types.hpp"
#include "seqmenu/errors.hpp"
#include "seqmenu/rng.hpp"
#include "seqmenu/soft_choice.hpp"
#include "seqmenu/valuations.hpp"

namespace seqmenu {

enum class PriceOptimizer { Sgd, Adam };

struct PIHyper {
  std::size_t ell = 4096;  // samples per gradient step
  double kappa = 100.0;    // softmax inverse temperature
  double eta = 0.5;
  int gamma_steps = 500;
  PriceOptimizer optimizer = PriceOptimizer::Sgd;
  std::size_t eval_samples = 0;  // fresh batch for the reported value; 0 = max(ell, 2^15)
};

struct PITrainReport {
  std::vector<double> prices;  // one per option; option 0 is the empty bundle
  double value = 0.0;          // mean hard-argmax price + offset on a fresh batch
  double value_std_error = 0.0;
  std::vector<double> loss_curve;  // smoothed loss per gradient step
};

// ---------------------------------------------------------------------------
// Loss over an explicit value matrix (rows = samples, columns = options).

/**
 * Mean smoothed loss -sum_T D_T (price_T + offset_T) over the rows of `values`.
 * If `grad` is non-empty it is overwritten with the exact gradient w.r.t. prices.
 */
inline double pi_loss_matrix(std::span<const double> values, std::span<const double> prices,
                             std::span<const double> offsets, double kappa, std::span<double> grad = {}) {
  const std::size_t k = prices.size();
  require(k > 0 && offsets.size() == k && values.size() % k == 0, "pi_loss: shape mismatch");
  require(kappa > 0.0, "inverse temperature must be positive");
  const std::size_t rows = values.size() / k;
  require(rows > 0, "pi_loss: need at least one sample");
  std::fill(grad.begin(), grad.end(), 0.0);
  std::vector<double> scratch(k);
  const double scale = 1.0 / static_cast<double>(rows);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    loss += soft_revenue_row(values.subspan(r * k, k), prices, offsets, kappa, scratch, grad, scale);
  return loss * scale;
}

namespace detail {
inline std::vector<double> value_matrix(std::span<const ItemSet> bundles, std::span<const Valuation> samples,
                                        const ValuationModel& model) {
  std::vector<double> values(samples.size() * bundles.size());
  for (std::size_t r = 0; r < samples.size(); ++r)
    for (std::size_t i = 0; i < bundles.size(); ++i)
      values[r * bundles.size() + i] = bundle_value(samples[r], bundles[i], model);
  return values;
}
}  // namespace detail

/// Smoothed loss of the menu {bundles[i] at prices[i]} with continuation offsets.
inline double pi_loss(std::span<const ItemSet> bundles, std::span<const double> prices,
                      std::span<const double> offsets, std::span<const Valuation> samples, double kappa,
                      const ValuationModel& model) {
  require(bundles.size() == prices.size(), "pi_loss: one price per bundle");
  const auto values = detail::value_matrix(bundles, samples, model);
  return pi_loss_matrix(values, prices, offsets, kappa);
}

inline std::vector<double> pi_loss_gradient(std::span<const ItemSet> bundles, std::span<const double> prices,
                                            std::span<const double> offsets, std::span<const Valuation> samples,
                                            double kappa, const ValuationModel& model) {
  require(bundles.size() == prices.size(), "pi_loss: one price per bundle");
  const auto values = detail::value_matrix(bundles, samples, model);
  std::vector<double> grad(prices.size());
  pi_loss_matrix(values, prices, offsets, kappa, grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Per-state training.

/// Tie-break key matching `preferred`: fewer items first, then smaller bitmask.
inline std::uint64_t tie_key(ItemSet b) noexcept {
  return (static_cast<std::uint64_t>(b.size()) << 52) | b.bits();
}

/**
 * Index of the hard-argmax option for one sample: highest utility, then lowest
 * price, then lowest tie key.
 */
inline std::size_t hard_choice(std::span<const double> values, std::span<const double> prices,
                               std::span<const std::uint64_t> keys) {
  std::size_t best = 0;
  double bu = values[0] - prices[0];
  for (std::size_t i = 1; i < values.size(); ++i) {
    const double u = values[i] - prices[i];
    if (u > bu || (u == bu && (prices[i] < prices[best] || (prices[i] == prices[best] && keys[i] < keys[best])))) {
      best = i;
      bu = u;
    }
  }
  return best;
}

/**
 * Trains prices for a fixed option list. `draw(row)` fills one fresh
 * sample's option values. Option 0 must be the empty bundle; its price stays 0.
 * Every other price starts at 0 (or `init`) and is kept >= 0 after each step.
 * `label` names the state in divergence diagnostics.
 */
template <class Draw>
PITrainReport train_option_prices(std::span<const std::uint64_t> keys, std::span<const double> offsets,
                                  Draw&& draw, const PIHyper& h, const std::string& label = "",
                                  std::span<const double> init = {}) {
  const std::size_t k = keys.size();
  require(k >= 1 && offsets.size() == k, "option list and offsets disagree");
  require(h.ell >= 1 && h.gamma_steps >= 0 && h.kappa > 0.0 && h.eta > 0.0, "invalid policy-improvement hyperparameters");
  for (double o : offsets) require(std::isfinite(o), "continuation offsets must be finite");

  PITrainReport rep;
  rep.prices.assign(k, 0.0);
  if (!init.empty()) {
    require(init.size() == k, "initial prices have the wrong length");
    std::copy(init.begin(), init.end(), rep.prices.begin());
    rep.prices[0] = 0.0;
  }
  rep.loss_curve.reserve(static_cast<std::size_t>(h.gamma_steps));
  std::vector<double> row(k), scratch(k), grad(k), m1, m2;
  if (h.optimizer == PriceOptimizer::Adam) {
    m1.assign(k, 0.0);
    m2.assign(k, 0.0);
  }
  const double scale = 1.0 / static_cast<double>(h.ell);
  // The reported prices are the mean iterate over the second half of training;
  // a constant step leaves the last iterate jittering around the optimum.
  const int tail_start = h.gamma_steps / 2;
  std::vector<double> tail(k, 0.0);

  if (k > 1) {
    for (int step = 0; step < h.gamma_steps; ++step) {
      std::fill(grad.begin(), grad.end(), 0.0);
      double loss = 0.0;
      for (std::size_t j = 0; j < h.ell; ++j) {
        draw(std::span<double>(row));
        loss += soft_revenue_row(row, rep.prices, offsets, h.kappa, scratch, grad, scale);
      }
      loss *= scale;
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "policy improvement diverged at " << label << " step " << step << " (loss " << loss << ")";
        throw DivergenceError(os.str());
      }
      rep.loss_curve.push_back(loss);
      if (h.optimizer == PriceOptimizer::Sgd) {
        for (std::size_t i = 1; i < k; ++i) rep.prices[i] = std::max(0.0, rep.prices[i] - h.eta * grad[i]);
      } else {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(b1, step + 1), c2 = 1.0 - std::pow(b2, step + 1);
        for (std::size_t i = 1; i < k; ++i) {
          m1[i] = b1 * m1[i] + (1 - b1) * grad[i];
          m2[i] = b2 * m2[i] + (1 - b2) * grad[i] * grad[i];
          rep.prices[i] = std::max(0.0, rep.prices[i] - h.eta * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + eps));
        }
      }
      if (step >= tail_start)
        for (std::size_t i = 1; i < k; ++i) tail[i] += rep.prices[i];
    }
    if (h.gamma_steps > 0)
      for (std::size_t i = 1; i < k; ++i) rep.prices[i] = tail[i] / static_cast<double>(h.gamma_steps - tail_start);
  }

  const std::size_t eval = h.eval_samples ? h.eval_samples : std::max<std::size_t>(h.ell, 1 << 15);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t j = 0; j < eval; ++j) {
    draw(std::span<double>(row));
    const std::size_t c = hard_choice(row, rep.prices, keys);
    const double g = rep.prices[c] + offsets[c];
    sum += g;
    sum_sq += g * g;
  }
  const double n = static_cast<double>(eval);
  rep.value = sum / n;
  if (eval > 1) {
    const double var = std::max(0.0, (sum_sq - n * rep.value * rep.value) / (n - 1));
    rep.value_std_error = std::sqrt(var / n);
  }
  if (!std::isfinite(rep.value)) throw DivergenceError("policy improvement produced a non-finite value at " + label);
  return rep;
}

/**
 * Policy improvement at one state: learns a price per bundle of the available
 * items (all subsets, or those of size <= max_size) with offsets
 * continuation(available \ T) held fixed. Prices line up with `bundles`.
 */
struct StateMenuResult {
  std::vector<ItemSet> bundles;
  std::vector<double> offsets;
  PITrainReport report;

  Menu menu() const {
    Menu out;
    out.options.reserve(bundles.size());
    for (std::size_t i = 0; i < bundles.size(); ++i) out.options.push_back({bundles[i], report.prices[i], offsets[i]});
    return out;
  }
};

inline StateMenuResult policy_improvement(const AuctionState& state, const std::function<double(ItemSet)>& continuation,
                                          const ValuationModel& model, const PIHyper& hyper, Rng& rng,
                                          std::optional<int> max_size = std::nullopt) {
  StateMenuResult res;
  res.bundles = enumerate_bundles(state.available, max_size);
  res.offsets.resize(res.bundles.size());
  std::vector<std::uint64_t> keys(res.bundles.size());
  for (std::size_t i = 0; i < res.bundles.size(); ++i) {
    res.offsets[i] = continuation(state.available - res.bundles[i]);
    keys[i] = tie_key(res.bundles[i]);
  }
  BundleValueSampler sampler(model, res.bundles);
  BulkRng bulk(rng);
  res.report = train_option_prices(
      keys, res.offsets, [&](std::span<double> row) { sampler.draw(bulk, row); }, hyper, to_string(state));
  return res;
}

}  // namespace seqmenu
