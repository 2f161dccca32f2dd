#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "seqmenu/activations.hpp"
#include "seqmenu/core_types.hpp"
#include "seqmenu/soft_choice.hpp"
#include "seqmenu/valuations.hpp"

namespace seqmenu {

/**
 * Posted item prices plus an entry fee. A nonempty bundle T costs
 * fee + sum_{i in T} item_prices[i]; the empty bundle is free. Unavailable
 * items carry the mask price.
 */
struct EntryFeeMenu {
  std::vector<double> item_prices;
  double fee = 0.0;

  double price(ItemSet bundle) const {
    if (bundle.is_empty()) return 0.0;
    double p = fee;
    bundle.for_each([&](int j) { p += item_prices[j]; });
    return p;
  }

  void validate() const {
    require(std::isfinite(fee) && fee >= 0.0, "entry fee must be finite and >= 0");
    for (double p : item_prices) require(std::isfinite(p) && p >= 0.0, "item prices must be >= 0");
  }
};

namespace detail {
/// Available items ordered by marginal surplus t_i - p_i, descending; ties keep index order.
inline void sort_by_marginal(std::span<const double> item_values, const EntryFeeMenu& menu,
                             ItemSet available, std::vector<int>& order) {
  order = available.items();
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return item_values[a] - menu.item_prices[a] > item_values[b] - menu.item_prices[b];
  });
}
}  // namespace detail

/**
 * Utility-maximizing bundle for an additive bidder facing an entry-fee menu.
 * Only the prefixes of the marginal-surplus order can be optimal, so this
 * scans m + 1 candidates after an O(m log m) sort.
 */
inline Choice best_prefix_bundle(const Valuation& v, const EntryFeeMenu& menu, ItemSet available,
                                 const ValuationModel& model) {
  if (!model.additive()) throw ContractViolation("best_prefix_bundle requires an additive valuation");
  std::vector<int> order;
  detail::sort_by_marginal(v.item_values, menu, available, order);
  Choice best{ItemSet(), 0.0, 0.0};
  ItemSet bundle;
  double value = 0.0, price = menu.fee;
  for (int j : order) {
    bundle = bundle.with(j);
    value += v.item_values[j];
    price += menu.item_prices[j];
    const Choice c{bundle, price, value - price};
    if (preferred(c, best)) best = c;
  }
  return best;
}

/**
 * Maps m + 1 raw network outputs to an entry-fee menu: item prices through the
 * offset sigmoid scaled by each item's value support, the fee through the
 * offset softplus. Unavailable items get the mask price.
 */
inline EntryFeeMenu entry_fee_actor_head(std::span<const double> raw, ItemSet available,
                                         const ValuationModel& model) {
  require(static_cast<int>(raw.size()) == model.m + 1, "entry-fee head expects m + 1 outputs");
  EntryFeeMenu menu;
  menu.item_prices.resize(model.m);
  const double mask = model.mask_price();
  for (int j = 0; j < model.m; ++j)
    menu.item_prices[j] = available.contains(j)
                              ? sigmoid_with_offset(raw[j]) * model.item_support_max(j)
                              : mask;
  menu.fee = softplus_with_offset(raw[model.m]);
  return menu;
}

/// Derivative of each emitted price (and the fee, last) w.r.t. its raw output.
inline std::vector<double> entry_fee_head_jacobian(std::span<const double> raw, ItemSet available,
                                                   const ValuationModel& model) {
  std::vector<double> d(model.m + 1, 0.0);
  for (int j = 0; j < model.m; ++j)
    if (available.contains(j)) d[j] = sigmoid_with_offset_grad(raw[j]) * model.item_support_max(j);
  d[model.m] = softplus_with_offset_grad(raw[model.m]);
  return d;
}

/**
 * The m + 1 candidate options of one sample: the empty bundle followed by the
 * marginal-surplus prefixes. `successors[k]` is what remains after option k.
 */
struct PrefixOptions {
  std::vector<int> order;
  std::vector<double> values;
  std::vector<double> prices;
  std::vector<ItemSet> successors;
};

inline PrefixOptions prefix_options(std::span<const double> item_values, const EntryFeeMenu& menu,
                                    ItemSet available) {
  PrefixOptions po;
  detail::sort_by_marginal(item_values, menu, available, po.order);
  const std::size_t q = po.order.size();
  po.values.resize(q + 1);
  po.prices.resize(q + 1);
  po.successors.resize(q + 1);
  po.values[0] = 0.0;
  po.prices[0] = 0.0;
  po.successors[0] = available;
  double value = 0.0, price = menu.fee;
  ItemSet rest = available;
  for (std::size_t i = 0; i < q; ++i) {
    value += item_values[po.order[i]];
    price += menu.item_prices[po.order[i]];
    rest = rest.without(po.order[i]);
    po.values[i + 1] = value;
    po.prices[i + 1] = price;
    po.successors[i + 1] = rest;
  }
  return po;
}

struct EntryFeeLoss {
  double loss = 0.0;
  std::vector<double> grad_item_prices;
  double grad_fee = 0.0;
};

/**
 * Adds one sample's smoothed loss over the prefix options, and its gradient
 * w.r.t. item prices and fee, into `acc` (weighted by `scale`). Offsets are the
 * continuation values of po.successors.
 */
inline void accumulate_prefix_loss(const PrefixOptions& po, std::span<const double> offsets,
                                   double kappa, double scale, EntryFeeLoss& acc,
                                   std::vector<double>& scratch, std::vector<double>& option_grad) {
  const std::size_t k = po.values.size();
  scratch.resize(k);
  option_grad.assign(k, 0.0);
  acc.loss += scale * soft_revenue_row(po.values, po.prices, offsets, kappa, scratch, option_grad, scale);
  // price_k = fee + sum_{i<=k} p_{order_i}: suffix sums carry the chain rule.
  double suffix = 0.0;
  for (std::size_t i = k - 1; i >= 1; --i) {
    suffix += option_grad[i];
    acc.grad_item_prices[po.order[i - 1]] += suffix;
  }
  acc.grad_fee += suffix;
}

/**
 * Mean smoothed loss over `samples` for an entry-fee menu at a state with the
 * given available set, with offsets from `continuation`, plus its exact
 * gradient. Requires additive valuations.
 */
inline EntryFeeLoss entry_fee_soft_loss(const EntryFeeMenu& menu, ItemSet available,
                                        const std::function<double(ItemSet)>& continuation,
                                        std::span<const Valuation> samples, double kappa,
                                        const ValuationModel& model) {
  if (!model.additive()) throw ContractViolation("entry-fee loss requires additive valuations");
  require(!samples.empty(), "need at least one sample");
  EntryFeeLoss acc;
  acc.grad_item_prices.assign(model.m, 0.0);
  std::vector<double> scratch, option_grad, offsets;
  const double scale = 1.0 / static_cast<double>(samples.size());
  for (const auto& v : samples) {
    const auto po = prefix_options(v.item_values, menu, available);
    offsets.resize(po.successors.size());
    for (std::size_t i = 0; i < offsets.size(); ++i) offsets[i] = continuation(po.successors[i]);
    accumulate_prefix_loss(po, offsets, kappa, scale, acc, scratch, option_grad);
  }
  return acc;
}

}  // namespace seqmenu
