#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "seqmenu/config.hpp"
#include "seqmenu/dp_solver.hpp"
#include "seqmenu/mechanism.hpp"
#include "seqmenu/parallel.hpp"

namespace seqmenu {

/**
 * Maximizes f on [lo, hi]: scan `grid` evenly spaced points, then golden-section
 * search on the bracket around the best one. Returns {argmax, max}.
 */
inline std::pair<double, double> maximize_on_grid(const std::function<double(double)>& f, double lo, double hi,
                                                  int grid) {
  if (grid < 2) throw ConfigError("price grid needs at least 2 points");
  const double step = (hi - lo) / (grid - 1);
  int best = 0;
  double best_f = f(lo);
  for (int i = 1; i < grid; ++i) {
    const double v = f(lo + step * i);
    if (v > best_f) {
      best_f = v;
      best = i;
    }
  }
  double a = lo + step * std::max(0, best - 1), b = lo + step * std::min(grid - 1, best + 1);
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - r * (b - a), x2 = a + r * (b - a);
  double f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < 60 && b - a > 1e-10; ++it) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + r * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - r * (b - a);
      f1 = f(x1);
    }
  }
  const double x = f1 > f2 ? x1 : x2;
  const double fx = std::max(f1, f2);
  if (fx > best_f) return {x, fx};
  return {lo + step * best, best_f};
}

/// Largest price worth posting on item j alone.
inline double item_price_cap(const ValuationModel& model, int j) {
  switch (model.family) {
    case Family::Complementarity: return 3.0;
    case Family::SubsetSqrt: return 1.0;
    default: return model.item_support_max(j);
  }
}

/**
 * Items sold separately at posted prices. Additive settings decompose per item,
 * so prices depend only on (agent, item); otherwise each (agent, available set)
 * state has its own price vector.
 */
class ItemWisePolicy {
public:
  ItemWisePolicy() = default;
  ItemWisePolicy(int n, ValuationModel model, bool per_item)
      : n_(n), model_(model), per_item_(per_item),
        prices_(static_cast<std::size_t>(n + 2),
                std::vector<std::vector<double>>(per_item ? 1 : (std::size_t{1} << model.m))),
        values_(static_cast<std::size_t>(n + 2), std::vector<double>(per_item ? 1 : (std::size_t{1} << model.m), 0.0)) {}

  int agents() const noexcept { return n_; }
  const ValuationModel& model() const noexcept { return model_; }
  bool per_item() const noexcept { return per_item_; }

  /// Item prices at a state; unavailable items carry the mask price.
  std::vector<double> item_prices(const AuctionState& s) const {
    require(s.agent >= 1 && s.agent <= n_, "state out of range: " + to_string(s));
    const auto& p = prices_[s.agent][per_item_ ? 0 : s.available.bits()];
    if (p.empty()) throw ContractViolation("no item prices stored for state " + to_string(s));
    std::vector<double> out(model_.m, model_.mask_price());
    s.available.for_each([&](int j) { out[j] = p[j]; });
    return out;
  }

  Offer offer(const AuctionState& s) const {
    const auto p = item_prices(s);
    if (per_item_) return EntryFeeMenu{p, 0.0};
    Menu menu;
    for (ItemSet b : enumerate_bundles(s.available)) {
      double price = 0.0;
      b.for_each([&](int j) { price += p[j]; });
      menu.options.push_back({b, price, 0.0});
    }
    return menu;
  }

  void set_item_prices(int agent, ItemSet available, std::vector<double> prices, double value) {
    const std::size_t idx = per_item_ ? 0 : available.bits();
    prices_[agent][idx] = std::move(prices);
    values_[agent][idx] = value;
  }

  /// Expected revenue from (agent, available) onward as estimated while solving.
  double value(int agent, ItemSet available) const {
    if (agent > n_) return 0.0;
    return values_[agent][per_item_ ? 0 : available.bits()];
  }

  /// Per-item continuation values (additive case): item_values_[t][j].
  std::vector<std::vector<double>> item_values;

  /// Tabular form, for writing the policy file (m <= 12).
  TabularPolicy to_tabular() const {
    require(model_.m <= 12, "tabular export requires m <= 12");
    TabularPolicy out(n_, model_, std::nullopt);
    for (int a = n_; a >= 1; --a)
      for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << model_.m); ++mask) {
        const ItemSet s(mask);
        if (a == 1 && s != ItemSet::full(model_.m)) continue;
        if (!per_item_ && prices_[a][mask].empty()) continue;
        const auto p = item_prices({a, s});
        Menu menu;
        for (ItemSet b : enumerate_bundles(s)) {
          double price = 0.0;
          b.for_each([&](int j) { price += p[j]; });
          menu.options.push_back({b, price, out.has({a + 1, s - b}) ? out.value({a + 1, s - b}) : 0.0});
        }
        double v = 0.0;
        if (per_item_)
          s.for_each([&](int j) { v += item_values[a][j]; });
        else
          v = values_[a][mask];
        out.store({a, s}, std::move(menu), v);
      }
    return out;
  }

private:
  int n_ = 0;
  ValuationModel model_;
  bool per_item_ = true;
  std::vector<std::vector<std::vector<double>>> prices_;
  std::vector<std::vector<double>> values_;
};

namespace detail {

/**
 * Revenue-to-go from posting price p on one item: a sample buys iff its
 * threshold exceeds p, yielding gain_in + p, otherwise gain_out. Evaluates the
 * sample mean in O(log N) per price from thresholds sorted ascending.
 */
class ThresholdObjective {
public:
  void reset(std::size_t n) {
    rows_.clear();
    rows_.reserve(n);
  }
  void add(double threshold, double gain_in, double gain_out) { rows_.push_back({threshold, gain_in, gain_out}); }

  void finalize() {
    std::sort(rows_.begin(), rows_.end(), [](const Row& a, const Row& b) { return a.threshold < b.threshold; });
    const std::size_t n = rows_.size();
    suffix_in_.assign(n + 1, 0.0);
    prefix_out_.assign(n + 1, 0.0);
    for (std::size_t i = n; i-- > 0;) suffix_in_[i] = suffix_in_[i + 1] + rows_[i].gain_in;
    for (std::size_t i = 0; i < n; ++i) prefix_out_[i + 1] = prefix_out_[i] + rows_[i].gain_out;
  }

  double operator()(double p) const {
    // First row whose threshold is strictly above p buys.
    const auto it = std::upper_bound(rows_.begin(), rows_.end(), p,
                                     [](double x, const Row& r) { return x < r.threshold; });
    const std::size_t i = static_cast<std::size_t>(it - rows_.begin());
    const double buyers = static_cast<double>(rows_.size() - i);
    return (suffix_in_[i] + buyers * p + prefix_out_[i]) / static_cast<double>(rows_.size());
  }

private:
  struct Row {
    double threshold, gain_in, gain_out;
  };
  std::vector<Row> rows_;
  std::vector<double> suffix_in_, prefix_out_;
};

/// Bidder's pick and the seller's revenue-to-go for one sample of bundle values.
struct SampleOutcome {
  std::size_t choice;
  double gain;
};

}  // namespace detail

/**
 * Optimal posted item prices by backward induction. Additive settings solve
 * each item's one-dimensional recursion V_t = max_p (1 - F(p)) p + F(p) V_{t+1}
 * on the price grid. Other settings run a DP over (agent, available set) with
 * the item-price vector at each state improved by coordinate ascent on
 * `item_samples` draws, and the state value re-estimated on a fresh batch.
 */
inline ItemWisePolicy solve_item_wise(const ExperimentConfig& config, const DpOptions& opt = {}) {
  config.validate();
  const ValuationModel model = config.model();
  const int n = config.n, m = config.m;
  const int grid = config.baseline.grid;
  if (grid < 2) throw ConfigError("price grid needs at least 2 points");

  if (model.additive()) {
    ItemWisePolicy policy(n, model, true);
    policy.item_values.assign(n + 2, std::vector<double>(m, 0.0));
    for (int t = n; t >= 1; --t) {
      std::vector<double> prices(m);
      double total = 0.0;
      for (int j = 0; j < m; ++j) {
        const double b = model.item_support_max(j);
        const double next = policy.item_values[t + 1][j];
        const auto [p, v] = maximize_on_grid([&](double x) { return (1.0 - x / b) * x + (x / b) * next; }, 0.0, b, grid);
        prices[j] = p;
        policy.item_values[t][j] = v;
        total += v;
      }
      policy.set_item_prices(t, ItemSet::full(m), prices, total);
    }
    return policy;
  }

  require(m <= 12, "state-space item pricing enumerates 2^m bundles and requires m <= 12");
  ItemWisePolicy policy(n, model, false);
  const std::size_t N = std::max<std::size_t>(config.baseline.item_samples, 1);

  for (int t = n; t >= 1; --t) {
    std::vector<ItemSet> states;
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << m); ++mask)
      if (t > 1 || mask == ItemSet::full(m).bits()) states.emplace_back(mask);
    std::vector<std::vector<double>> out_prices(states.size());
    std::vector<double> out_values(states.size());
    parallel_for(states.size(), opt.threads, [&](std::size_t si) {
      const ItemSet S = states[si];
      const auto bundles = enumerate_bundles(S);
      const std::size_t K = bundles.size();
      std::vector<double> offsets(K);
      for (std::size_t b = 0; b < K; ++b) offsets[b] = policy.value(t + 1, S - bundles[b]);
      const auto items = S.items();
      std::vector<double> prices(m, 0.0);
      Rng rng = detail::state_stream(config.seed, 0x17, n, t, S.bits(), config.dp.collapse_agents);
      BundleValueSampler sampler(model, bundles);
      BulkRng bulk(rng);
      std::vector<double> values(N * K);
      for (std::size_t r = 0; r < N; ++r) sampler.draw(bulk, std::span<double>(values.data() + r * K, K));

      std::vector<double> bundle_price(K);
      auto refresh_bundle_prices = [&] {
        for (std::size_t b = 0; b < K; ++b) {
          double p = 0.0;
          bundles[b].for_each([&](int j) { p += prices[j]; });
          bundle_price[b] = p;
        }
      };
      auto pick = [&](const double* v) {
        std::size_t best = 0;
        double bu = 0.0;
        for (std::size_t b = 1; b < K; ++b) {
          const double u = v[b] - bundle_price[b];
          if (u > bu || (u == bu && bundle_price[b] < bundle_price[best])) {
            best = b;
            bu = u;
          }
        }
        return best;
      };
      auto objective = [&] {
        double s = 0.0;
        for (std::size_t r = 0; r < N; ++r) {
          const std::size_t c = pick(values.data() + r * K);
          s += bundle_price[c] + offsets[c];
        }
        return s / static_cast<double>(N);
      };

      detail::ThresholdObjective f;
      refresh_bundle_prices();
      double current = objective();
      if (!items.empty()) {
        for (int sweep = 0; sweep < config.baseline.sweeps; ++sweep) {
          const double before = current;
          for (int i : items) {
            // With p_i removed, each sample's best bundle with i and without i.
            f.reset(N);
            for (std::size_t r = 0; r < N; ++r) {
              const double* v = values.data() + r * K;
              double in_u = -1e300, out_u = 0.0, in_g = 0.0, out_g = offsets[0];
              double in_p = 0.0, out_p = 0.0;
              for (std::size_t b = 1; b < K; ++b) {
                const bool has = bundles[b].contains(i);
                const double rest = bundle_price[b] - (has ? prices[i] : 0.0);
                const double u = v[b] - rest;
                if (has) {
                  if (u > in_u || (u == in_u && rest < in_p)) {
                    in_u = u;
                    in_p = rest;
                    in_g = rest + offsets[b];
                  }
                } else if (u > out_u || (u == out_u && rest < out_p)) {
                  out_u = u;
                  out_p = rest;
                  out_g = rest + offsets[b];
                }
              }
              f.add(in_u - out_u, in_g, out_g);
            }
            f.finalize();
            const auto [p, v] = maximize_on_grid(f, 0.0, item_price_cap(model, i), grid);
            if (v > f(prices[i])) prices[i] = p;
            refresh_bundle_prices();
          }
          current = objective();
          if (current - before <= 1e-4) break;
        }
      }

      // Fresh batch for the state value.
      for (std::size_t r = 0; r < N; ++r) sampler.draw(bulk, std::span<double>(values.data() + r * K, K));
      out_values[si] = objective();
      out_prices[si] = prices;
    });
    for (std::size_t si = 0; si < states.size(); ++si)
      policy.set_item_prices(t, states[si], std::move(out_prices[si]), out_values[si]);
  }
  return policy;
}

/// One posted price per stage for the whole remaining set.
struct BundleWisePolicy {
  std::vector<double> stage_prices;  // index t - 1
  std::vector<double> stage_values;  // expected revenue from stage t onward

  Offer offer(const AuctionState& s) const {
    require(s.agent >= 1 && s.agent <= static_cast<int>(stage_prices.size()), "state out of range: " + to_string(s));
    Menu menu;
    menu.options.push_back({ItemSet(), 0.0, 0.0});
    if (!s.available.is_empty()) menu.options.push_back({s.available, stage_prices[s.agent - 1], 0.0});
    return menu;
  }
};

/**
 * Grand-bundle pricing by backward induction on the empirical value CDF of
 * `baseline.samples` draws. The maximizer is searched over the sample points.
 */
inline BundleWisePolicy solve_bundle_wise(const ExperimentConfig& config) {
  config.validate();
  const ValuationModel model = config.model();
  if (model.family == Family::UnitDemand)
    throw ConfigError("bundle-wise pricing is not reported for unit-demand valuations");
  const std::size_t N = std::max<std::size_t>(config.baseline.samples, 1);
  Rng rng = Rng::substream(config.seed, {0xb0, 0});
  BundleValueSampler sampler(model, {ItemSet::full(config.m)});
  std::vector<double> x(N);
  for (auto& v : x) sampler.draw(rng, std::span<double>(&v, 1));
  std::sort(x.begin(), x.end());

  BundleWisePolicy policy;
  policy.stage_prices.assign(config.n, 0.0);
  policy.stage_values.assign(config.n + 1, 0.0);
  for (int t = config.n; t >= 1; --t) {
    const double next = policy.stage_values[t];
    double best = next, best_p = x.back() + 1.0;
    // Price x[i]: samples i.. (value >= price) buy.
    for (std::size_t i = 0; i < N; ++i) {
      if (i > 0 && x[i] == x[i - 1]) continue;
      const double buy = static_cast<double>(N - i) / static_cast<double>(N);
      const double r = buy * x[i] + (1.0 - buy) * next;
      if (r > best) {
        best = r;
        best_p = x[i];
      }
    }
    policy.stage_prices[t - 1] = best_p;
    policy.stage_values[t - 1] = best;
  }
  return policy;
}

}  // namespace seqmenu
