#pragma once

#include <cmath>
#include <concepts>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "seqmenu/core_types.hpp"
#include "seqmenu/entry_fee.hpp"
#include "seqmenu/parallel.hpp"
#include "seqmenu/valuations.hpp"

namespace seqmenu {

/**
 * Size-indexed menu used by the symmetric solver: option j is "your j most
 * valuable remaining items" at size_prices[j]. size_prices[0] is 0.
 */
struct SizeMenu {
  std::vector<double> size_prices;
};

/// What a policy shows the current bidder.
using Offer = std::variant<Menu, EntryFeeMenu, SizeMenu>;

/// Utility-maximizing option of an explicit menu under the global tie-break.
inline Choice best_bundle(const Valuation& v, const Menu& menu, const ValuationModel& model) {
  require(menu.has_free_empty_option(), "menu must offer the empty bundle at price 0");
  Choice best{ItemSet(), 0.0, 0.0};
  for (const auto& o : menu.options) {
    const Choice c{o.bundle, o.price, bundle_value(v, o.bundle, model) - o.price};
    if (preferred(c, best)) best = c;
  }
  return best;
}

/// Items of `available` ordered by the bidder's value, descending; ties keep index order.
inline std::vector<int> items_by_value(const Valuation& v, ItemSet available) {
  auto order = available.items();
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return v.item_values[a] > v.item_values[b]; });
  return order;
}

inline Choice best_size_bundle(const Valuation& v, const SizeMenu& menu, ItemSet available,
                               const ValuationModel& model) {
  require(model.item_symmetric(), "size menus need an item-symmetric valuation family");
  const auto order = items_by_value(v, available);
  Choice best{ItemSet(), 0.0, 0.0};
  ItemSet bundle;
  const std::size_t top = std::min(order.size() + 1, menu.size_prices.size());
  for (std::size_t j = 1; j < top; ++j) {
    bundle = bundle.with(order[j - 1]);
    const double price = menu.size_prices[j];
    const Choice c{bundle, price, bundle_value(v, bundle, model) - price};
    if (preferred(c, best)) best = c;
  }
  return best;
}

inline Choice best_response(const Offer& offer, const Valuation& v, ItemSet available,
                            const ValuationModel& model) {
  return std::visit(
      [&](const auto& o) -> Choice {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, Menu>)
          return best_bundle(v, o, model);
        else if constexpr (std::is_same_v<T, EntryFeeMenu>)
          return best_prefix_bundle(v, o, available, model);
        else
          return best_size_bundle(v, o, available, model);
      },
      offer);
}

struct StepResult {
  AuctionState next;
  double reward = 0.0;
  ItemSet chosen;
  double utility = 0.0;
};

/// One MDP transition: the bidder picks from the offer and pays its price.
inline StepResult env_step(const AuctionState& state, const Offer& offer, const Valuation& v,
                           const ValuationModel& model) {
  const Choice c = best_response(offer, v, state.available, model);
  require(c.bundle.subset_of(state.available), "offer let the bidder take an unavailable bundle");
  return StepResult{state_successor(state, c.bundle), c.price, c.bundle, c.utility};
}

/// Anything that maps states to offers. Policies are read-only while evaluated.
template <class P>
concept Policy = requires(const P& p, const AuctionState& s) {
  { p.offer(s) } -> std::convertible_to<Offer>;
};

/// Type-erased policy, for code that picks the policy kind at runtime.
class AnyPolicy {
public:
  AnyPolicy() = default;
  template <Policy P>
    requires(!std::same_as<std::decay_t<P>, AnyPolicy>)
  AnyPolicy(P policy) : fn_([p = std::move(policy)](const AuctionState& s) { return Offer(p.offer(s)); }) {}

  Offer offer(const AuctionState& s) const { return fn_(s); }

private:
  std::function<Offer(const AuctionState&)> fn_;
};

struct TrajectoryStep {
  AuctionState state;
  Offer offer;
  ItemSet chosen;
  double reward = 0.0;
  double utility = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;

  double revenue() const noexcept {
    double r = 0.0;
    for (const auto& s : steps) r += s.reward;
    return r;
  }
};

/// Visits bidders 1..n in order, each picking from the policy's offer.
template <Policy P>
Trajectory run_episode(const P& policy, const Profile& profile, const ValuationModel& model) {
  Trajectory traj;
  traj.steps.reserve(profile.size());
  AuctionState state{1, ItemSet::full(model.m)};
  for (const auto& v : profile) {
    Offer offer = policy.offer(state);
    const auto step = env_step(state, offer, v, model);
    traj.steps.push_back({state, std::move(offer), step.chosen, step.reward, step.utility});
    state = step.next;
  }
  return traj;
}

/// Revenue of one episode without keeping the trajectory.
template <Policy P>
double episode_revenue(const P& policy, const Profile& profile, const ValuationModel& model) {
  double revenue = 0.0;
  AuctionState state{1, ItemSet::full(model.m)};
  for (const auto& v : profile) {
    const auto step = env_step(state, policy.offer(state), v, model);
    revenue += step.reward;
    state = step.next;
  }
  return revenue;
}

struct RevenueEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t episodes = 0;
};

inline RevenueEstimate summarize(std::span<const double> xs) {
  RevenueEstimate e;
  e.episodes = xs.size();
  if (xs.empty()) return e;
  e.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - e.mean) * (x - e.mean);
    e.std_error = std::sqrt(ss / static_cast<double>(xs.size() - 1)) / std::sqrt(static_cast<double>(xs.size()));
  }
  return e;
}

/// Mean and standard error of episode revenue over the fixed test set.
template <Policy P>
RevenueEstimate evaluate_policy(const P& policy, const TestSet& test_set, int threads = 1) {
  std::vector<double> revenue(test_set.size());
  parallel_for(test_set.size(), threads, [&](std::size_t i) {
    revenue[i] = episode_revenue(policy, test_set[i], test_set.model());
  });
  return summarize(revenue);
}

template <Policy P>
RevenueEstimate evaluate_policy(const P& policy, std::span<const Profile> profiles,
                                const ValuationModel& model) {
  require(!profiles.empty(), "evaluation needs a nonempty test set");
  std::vector<double> revenue;
  revenue.reserve(profiles.size());
  for (const auto& p : profiles) revenue.push_back(episode_revenue(policy, p, model));
  return summarize(revenue);
}

/**
 * Truthfulness and participation check for one bidder facing `menu`: no
 * misreport's pick is worth more to the true type than the truthful pick, and
 * the truthful pick has nonnegative utility.
 */
inline bool verify_dsic_ir(const Menu& menu, const Valuation& truth, std::span<const Valuation> misreports,
                           const ValuationModel& model) {
  require(menu.has_free_empty_option(), "menu must offer the empty bundle at price 0");
  for (const auto& o : menu.options)
    require(std::isfinite(o.price) && o.price >= 0.0, "menu prices must be finite and >= 0");
  const Choice truthful = best_bundle(truth, menu, model);
  if (truthful.utility < 0.0) return false;
  for (const auto& r : misreports) {
    const Choice lie = best_bundle(r, menu, model);
    const double u = bundle_value(truth, lie.bundle, model) - lie.price;
    if (u > truthful.utility) return false;
  }
  return true;
}

/// CSV rows (episode, t, agent, available_mask, chosen_mask, price, reward).
inline void write_trajectory_csv_header(std::ostream& os) {
  os << "episode,t,agent,available_mask,chosen_mask,price,reward\n";
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj, std::size_t episode) {
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    const auto& s = traj.steps[t];
    os << episode << ',' << t + 1 << ',' << s.state.agent << ',' << s.state.available.bits() << ','
       << s.chosen.bits() << ',' << s.reward << ',' << s.reward << '\n';
  }
}

}  // namespace seqmenu
