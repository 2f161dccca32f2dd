#pragma once

#include <algorithm>
#include <chrono>
#include <fstream>
#include <functional>
#include <cmath>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "seqmenu/config.hpp"
#include "seqmenu/entry_fee.hpp"
#include "seqmenu/mechanism.hpp"
#include "seqmenu/menu_learning.hpp"
#include "seqmenu/nn.hpp"
#include "seqmenu/parallel.hpp"

namespace seqmenu {

/**
 * Actor and critic for one auction shape. Full and size-capped menus emit one
 * raw output per bundle of `bundles` (prices through the offset softplus);
 * entry-fee actors emit m item outputs and a fee output.
 */
struct FpiNetworks {
  ValuationModel model;
  int n = 1;
  bool entry_fee = false;
  std::vector<ItemSet> bundles;  // full/size-capped families; bundles[0] is empty
  MlpParams actor, critic;
};

inline FpiNetworks make_fpi_networks(const ExperimentConfig& c, Rng& rng) {
  c.validate();
  FpiNetworks nets;
  nets.model = c.model();
  nets.n = c.n;
  nets.entry_fee = c.menu_family == MenuFamily::EntryFee;
  if (!nets.entry_fee) nets.bundles = enumerate_bundles(ItemSet::full(c.m), c.menu_cap());
  MlpSpec spec;
  spec.features = c.m;
  spec.hidden_layers = c.fpi.hidden_layers;
  spec.hidden_units = c.fpi.hidden_units;
  spec.embed_rows = c.n;
  spec.d_emb = c.fpi.d_emb;
  spec.head = OutputHead::Identity;
  spec.output_dim = nets.entry_fee ? c.m + 1 : static_cast<int>(nets.bundles.size());
  nets.actor = init_mlp(spec, rng);
  spec.output_dim = 1;
  nets.critic = init_mlp(spec, rng);
  return nets;
}

/// Critic values for a batch of states; terminal states are 0.
inline std::vector<double> critic_values(const FpiNetworks& nets, std::span<const AuctionState> states) {
  std::vector<double> out(states.size(), 0.0);
  std::vector<AuctionState> live;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < states.size(); ++i)
    if (!states[i].is_terminal(nets.n)) {
      live.push_back(states[i]);
      where.push_back(i);
    }
  constexpr std::size_t chunk = 4096;
  for (std::size_t b = 0; b < live.size(); b += chunk) {
    const std::size_t e = std::min(live.size(), b + chunk);
    const auto X = encode_states(std::span(live).subspan(b, e - b), nets.critic, nets.model.m);
    const auto fc = forward(nets.critic, X);
    for (std::size_t i = b; i < e; ++i) out[where[i]] = fc.output(0, static_cast<Eigen::Index>(i - b));
  }
  return out;
}

/// Memo of critic values; valid while the critic is frozen.
class CriticCache {
public:
  explicit CriticCache(const FpiNetworks& nets) : nets_(&nets) {}

  void prefetch(std::span<const AuctionState> states) {
    std::vector<AuctionState> missing;
    for (const auto& s : states)
      if (!s.is_terminal(nets_->n) && !map_.contains(s)) {
        map_.emplace(s, 0.0);
        missing.push_back(s);
      }
    const auto v = critic_values(*nets_, missing);
    for (std::size_t i = 0; i < missing.size(); ++i) map_[missing[i]] = v[i];
  }

  double value(const AuctionState& s) {
    if (s.is_terminal(nets_->n)) return 0.0;
    auto it = map_.find(s);
    if (it == map_.end()) {
      prefetch(std::span(&s, 1));
      it = map_.find(s);
    }
    return it->second;
  }

  void clear() { map_.clear(); }
  std::size_t size() const { return map_.size(); }

private:
  const FpiNetworks* nets_;
  std::unordered_map<AuctionState, double, AuctionStateHash> map_;
};

/**
 * Emitted prices over `nets.bundles` for one raw actor output column: offset
 * softplus on available bundles, the mask price on bundles with an unavailable
 * item, and 0 for the empty bundle.
 */
inline std::vector<double> actor_prices(const FpiNetworks& nets, const AuctionState& s, std::span<const double> raw) {
  require(!nets.entry_fee, "actor_prices is for bundle-priced menus");
  std::vector<double> p(nets.bundles.size());
  const double mask = nets.model.mask_price();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const ItemSet b = nets.bundles[i];
    p[i] = b.is_empty() ? 0.0 : b.subset_of(s.available) ? softplus_with_offset(raw[i]) : mask;
  }
  return p;
}

inline std::vector<double> actor_prices(const FpiNetworks& nets, const AuctionState& s) {
  const auto X = encode_states(std::span(&s, 1), nets.actor, nets.model.m);
  const auto fc = forward(nets.actor, X);
  return actor_prices(nets, s, std::span<const double>(fc.output.data(), static_cast<std::size_t>(fc.output.rows())));
}

/// Turns an emitted price vector into the offer shown to the bidder.
inline Offer offer_from_prices(const FpiNetworks& nets, const AuctionState& s, std::span<const double> prices) {
  if (nets.entry_fee) {
    EntryFeeMenu menu{std::vector<double>(prices.begin(), prices.end() - 1), prices.back()};
    return menu;
  }
  Menu menu;
  for (std::size_t i = 0; i < nets.bundles.size(); ++i)
    if (nets.bundles[i].subset_of(s.available)) menu.options.push_back({nets.bundles[i], prices[i], 0.0});
  return menu;
}

/// Raw actor output column to emitted action: bundle prices, or m item prices then the fee.
inline std::vector<double> emitted_action(const FpiNetworks& nets, const AuctionState& s, std::span<const double> raw) {
  if (!nets.entry_fee) return actor_prices(nets, s, raw);
  const auto menu = entry_fee_actor_head(raw, s.available, nets.model);
  std::vector<double> a = menu.item_prices;
  a.push_back(menu.fee);
  return a;
}

/// Deterministic actor policy with a per-state memo, usable from evaluate_policy.
class ActorPolicy {
public:
  explicit ActorPolicy(std::shared_ptr<const FpiNetworks> nets) : nets_(std::move(nets)), memo_(std::make_shared<Memo>()) {}

  Offer offer(const AuctionState& s) const {
    {
      std::lock_guard lock(memo_->mutex);
      if (auto it = memo_->map.find(s); it != memo_->map.end()) return it->second;
    }
    const auto X = encode_states(std::span(&s, 1), nets_->actor, nets_->model.m);
    const auto fc = forward(nets_->actor, X);
    const auto a = emitted_action(*nets_, s, std::span<const double>(fc.output.data(), static_cast<std::size_t>(fc.output.rows())));
    Offer o = offer_from_prices(*nets_, s, a);
    std::lock_guard lock(memo_->mutex);
    memo_->map.emplace(s, o);
    return o;
  }

  /// Fills the memo for many states with batched forward passes.
  void warm(std::span<const AuctionState> states) const {
    std::vector<AuctionState> todo;
    {
      std::lock_guard lock(memo_->mutex);
      for (const auto& s : states)
        if (!memo_->map.contains(s)) todo.push_back(s);
    }
    constexpr std::size_t chunk = 4096;
    for (std::size_t b = 0; b < todo.size(); b += chunk) {
      const auto part = std::span<const AuctionState>(todo).subspan(b, std::min(chunk, todo.size() - b));
      const auto X = encode_states(part, nets_->actor, nets_->model.m);
      const auto fc = forward(nets_->actor, X);
      std::lock_guard lock(memo_->mutex);
      for (std::size_t i = 0; i < part.size(); ++i) {
        const auto col = fc.output.col(static_cast<Eigen::Index>(i));
        const auto a = emitted_action(*nets_, part[i], std::span<const double>(col.data(), static_cast<std::size_t>(col.size())));
        memo_->map.emplace(part[i], offer_from_prices(*nets_, part[i], a));
      }
    }
  }

private:
  struct Memo {
    std::mutex mutex;
    std::unordered_map<AuctionState, Offer, AuctionStateHash> map;
  };
  std::shared_ptr<const FpiNetworks> nets_;
  std::shared_ptr<Memo> memo_;
};

// ---------------------------------------------------------------------------
// Rollouts and value targets.

struct RolloutRow {
  AuctionState state;
  std::vector<double> action;  // emitted (noised) price vector
  double reward = 0.0;
  AuctionState next;
  int episode = 0;
  int t = 1;
};

/// Episodes of n consecutive rows each, in episode order.
struct RolloutBuffer {
  int n = 0;
  std::vector<RolloutRow> rows;

  double mean_episode_revenue() const {
    if (rows.empty()) return 0.0;
    double r = 0.0;
    for (const auto& row : rows) r += row.reward;
    return r / (static_cast<double>(rows.size()) / n);
  }
};

/**
 * Plays `episodes` full auctions with the actor's prices plus N(0, sigma^2)
 * noise per coordinate, clamped at 0 and then re-masked. Bidders are fresh
 * draws from the model.
 */
inline RolloutBuffer collect_rollouts(const FpiNetworks& nets, int episodes, double sigma, Rng& rng) {
  require(sigma >= 0.0, "exploration noise must be >= 0");
  const ValuationModel& model = nets.model;
  const int n = nets.n;
  RolloutBuffer buf;
  buf.n = n;
  buf.rows.resize(static_cast<std::size_t>(episodes) * n);
  std::vector<AuctionState> states(episodes, AuctionState{1, ItemSet::full(model.m)});
  const double mask = model.mask_price();
  for (int t = 1; t <= n; ++t) {
    const auto X = encode_states(states, nets.actor, model.m);
    const auto fc = forward(nets.actor, X);
    for (int e = 0; e < episodes; ++e) {
      const AuctionState s = states[e];
      const auto col = fc.output.col(e);
      auto a = emitted_action(nets, s, std::span<const double>(col.data(), static_cast<std::size_t>(col.size())));
      if (sigma > 0.0) {
        for (std::size_t i = 0; i < a.size(); ++i) {
          const bool masked = nets.entry_fee ? (i < static_cast<std::size_t>(model.m) && !s.available.contains(static_cast<int>(i)))
                                             : !nets.bundles[i].subset_of(s.available);
          const bool empty = !nets.entry_fee && nets.bundles[i].is_empty();
          const double noisy = std::max(0.0, a[i] + sigma * rng.normal());
          a[i] = masked ? mask : empty ? 0.0 : noisy;
        }
      }
      const Valuation v = sample(model, rng);
      const auto step = env_step(s, offer_from_prices(nets, s, a), v, model);
      auto& row = buf.rows[static_cast<std::size_t>(e) * n + (t - 1)];
      row = RolloutRow{s, std::move(a), step.reward, step.next, e, t};
      states[e] = step.next;
    }
  }
  return buf;
}

/**
 * Lambda-returns, computed backwards within each episode:
 * G_t = r_t + gamma ((1 - lambda) V(s_{t+1}) + lambda G_{t+1}), with G and V
 * zero past the last step. next_values[i] is the critic at rows[i].next.
 */
inline std::vector<double> td_lambda_targets(const RolloutBuffer& buf, std::span<const double> next_values,
                                             double lambda, double gamma = 1.0) {
  require(next_values.size() == buf.rows.size(), "one next-state value per row");
  std::vector<double> g(buf.rows.size(), 0.0);
  for (std::size_t i = buf.rows.size(); i-- > 0;) {
    const auto& row = buf.rows[i];
    const bool last = row.t == buf.n;
    const double v_next = last ? 0.0 : next_values[i];
    const double g_next = last ? 0.0 : g[i + 1];
    g[i] = row.reward + gamma * ((1.0 - lambda) * v_next + lambda * g_next);
  }
  return g;
}

inline std::vector<double> td_lambda_targets(const RolloutBuffer& buf, const FpiNetworks& nets, double lambda,
                                             double gamma = 1.0) {
  std::vector<AuctionState> next;
  next.reserve(buf.rows.size());
  for (const auto& r : buf.rows) next.push_back(r.next);
  const auto v = critic_values(nets, next);
  return td_lambda_targets(buf, v, lambda, gamma);
}

/// Distinct buffered states with their row counts, in first-seen order.
struct StateSet {
  std::vector<AuctionState> states;
  std::vector<double> counts;
  std::vector<std::size_t> row_state;  // row -> index into states
};

inline StateSet distinct_states(const RolloutBuffer& buf) {
  StateSet out;
  std::unordered_map<AuctionState, std::size_t, AuctionStateHash> index;
  out.row_state.reserve(buf.rows.size());
  for (const auto& r : buf.rows) {
    auto [it, fresh] = index.emplace(r.state, out.states.size());
    if (fresh) {
      out.states.push_back(r.state);
      out.counts.push_back(0.0);
    }
    out.counts[it->second] += 1.0;
    out.row_state.push_back(it->second);
  }
  return out;
}

namespace detail {
/// Item values of one fresh additive bidder.
inline void draw_item_values(const ValuationModel& model, BulkRng& rng, std::span<double> out) {
  rng.fill_uniform(out.data(), out.size());
  if (model.family == Family::AdditiveAsymmetric)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] *= static_cast<double>(j + 1) / model.m;
}
}  // namespace detail

/**
 * Model-based targets: for each buffered state, the mean over fresh bidders of
 * (hard-argmax price under the current actor + critic value of the successor).
 * A state seen c times gets min(c * samples, 16 * samples) bidders.
 */
inline std::vector<double> refresh_targets(const RolloutBuffer& buf, const FpiNetworks& nets, std::size_t samples,
                                           Rng& rng) {
  const ValuationModel& model = nets.model;
  const StateSet ss = distinct_states(buf);
  std::vector<double> value(ss.states.size(), 0.0);
  ActorPolicy policy(std::make_shared<const FpiNetworks>(nets));
  policy.warm(ss.states);
  CriticCache critic(nets);
  BulkRng bulk(rng);
  constexpr std::size_t chunk = 256;
  for (std::size_t b = 0; b < ss.states.size(); b += chunk) {
    const std::size_t e = std::min(ss.states.size(), b + chunk);
    std::vector<std::vector<std::pair<AuctionState, double>>> picks(e - b);
    std::vector<AuctionState> successors;
    for (std::size_t i = b; i < e; ++i) {
      const AuctionState& s = ss.states[i];
      const Offer offer = policy.offer(s);
      const std::size_t count = samples * static_cast<std::size_t>(std::min(ss.counts[i], 16.0));
      auto& out = picks[i - b];
      out.reserve(count);
      if (nets.entry_fee) {
        const auto& menu = std::get<EntryFeeMenu>(offer);
        Valuation v;
        v.item_values.resize(model.m);
        for (std::size_t j = 0; j < count; ++j) {
          detail::draw_item_values(model, bulk, v.item_values);
          const Choice c = best_prefix_bundle(v, menu, s.available, model);
          out.emplace_back(state_successor(s, c.bundle), c.price);
        }
      } else {
        const auto& menu = std::get<Menu>(offer);
        std::vector<ItemSet> bundles;
        std::vector<double> prices;
        std::vector<std::uint64_t> keys;
        for (const auto& o : menu.options) {
          bundles.push_back(o.bundle);
          prices.push_back(o.price);
          keys.push_back(tie_key(o.bundle));
        }
        BundleValueSampler sampler(model, bundles);
        std::vector<double> row(bundles.size());
        for (std::size_t j = 0; j < count; ++j) {
          sampler.draw(bulk, row);
          const std::size_t c = hard_choice(row, prices, keys);
          out.emplace_back(state_successor(s, bundles[c]), prices[c]);
        }
      }
      for (const auto& p : out) successors.push_back(p.first);
    }
    critic.prefetch(successors);
    for (std::size_t i = b; i < e; ++i) {
      double sum = 0.0;
      for (const auto& [next, price] : picks[i - b]) sum += price + critic.value(next);
      value[i] = sum / static_cast<double>(picks[i - b].size());
    }
    if (critic.size() > (1u << 20)) critic.clear();
  }
  std::vector<double> targets(buf.rows.size());
  for (std::size_t r = 0; r < buf.rows.size(); ++r) targets[r] = value[ss.row_state[r]];
  return targets;
}

/**
 * `steps` Adam steps on the mean squared error between critic(state) and the
 * target over minibatches of `batch` rows drawn uniformly with replacement.
 * Returns the mean minibatch loss of the last step (0 if steps == 0).
 */
inline double critic_fit(FpiNetworks& nets, OptimizerState& opt, std::span<const AuctionState> states,
                         std::span<const double> targets, int steps, std::size_t batch, Rng& rng) {
  require(states.size() == targets.size() && !states.empty(), "targets must align with states");
  double last = 0.0;
  std::vector<AuctionState> mb(batch);
  std::vector<double> y(batch);
  std::vector<int> agents(batch);
  for (int step = 0; step < steps; ++step) {
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t r = rng.below(states.size());
      mb[i] = states[r];
      y[i] = targets[r];
      agents[i] = states[r].agent;
    }
    const auto X = encode_states(mb, nets.critic, nets.model.m);
    const auto fc = forward(nets.critic, X);
    Eigen::MatrixXd d(1, static_cast<Eigen::Index>(batch));
    double loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
      const double err = fc.output(0, static_cast<Eigen::Index>(i)) - y[i];
      loss += err * err;
      d(0, static_cast<Eigen::Index>(i)) = 2.0 * err / static_cast<double>(batch);
    }
    loss /= static_cast<double>(batch);
    if (!std::isfinite(loss)) throw DivergenceError("critic loss became non-finite at step " + std::to_string(step));
    const auto g = backward(nets.critic, fc, d, agents);
    opt_step(nets.critic, g.theta, opt);
    last = loss;
  }
  return last;
}

// ---------------------------------------------------------------------------
// Actor loss for one state.

/**
 * Smoothed loss at a bundle-priced state for given raw actor outputs, option
 * offsets (continuation values of available \ T for the options T of the state,
 * in `options` order) and a value matrix (rows = samples). Adds
 * weight * dloss/draw into `d_raw`.
 */
inline double actor_state_loss_full(const FpiNetworks& nets, const AuctionState& s, std::span<const double> raw,
                                    std::span<const std::size_t> options, std::span<const double> offsets,
                                    std::span<const double> values, double kappa, double weight,
                                    std::span<double> d_raw) {
  const std::size_t k = options.size();
  std::vector<double> prices(k), grad(k, 0.0), scratch(k);
  for (std::size_t i = 0; i < k; ++i)
    prices[i] = nets.bundles[options[i]].is_empty() ? 0.0 : softplus_with_offset(raw[options[i]]);
  const std::size_t rows = values.size() / k;
  const double scale = 1.0 / static_cast<double>(rows);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    loss += soft_revenue_row(values.subspan(r * k, k), prices, offsets, kappa, scratch, grad, scale);
  loss *= scale;
  if (!d_raw.empty())
    for (std::size_t i = 0; i < k; ++i)
      if (!nets.bundles[options[i]].is_empty())
        d_raw[options[i]] += weight * grad[i] * softplus_with_offset_grad(raw[options[i]]);
  (void)s;
  return loss;
}

/**
 * Entry-fee counterpart: `items` holds `rows` samples of m item values; the
 * continuation maps successor sets to values.
 */
template <class Continuation>
double actor_state_loss_entry_fee(const FpiNetworks& nets, const AuctionState& s, std::span<const double> raw,
                                  std::span<const double> items, Continuation&& continuation, double kappa,
                                  double weight, std::span<double> d_raw) {
  const int m = nets.model.m;
  const auto menu = entry_fee_actor_head(raw, s.available, nets.model);
  EntryFeeLoss acc;
  acc.grad_item_prices.assign(m, 0.0);
  std::vector<double> scratch, option_grad, offsets;
  const std::size_t rows = items.size() / m;
  const double scale = 1.0 / static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto po = prefix_options(items.subspan(r * m, m), menu, s.available);
    offsets.resize(po.successors.size());
    for (std::size_t i = 0; i < offsets.size(); ++i) offsets[i] = continuation(po.successors[i]);
    accumulate_prefix_loss(po, offsets, kappa, scale, acc, scratch, option_grad);
  }
  if (!d_raw.empty()) {
    const auto jac = entry_fee_head_jacobian(raw, s.available, nets.model);
    for (int j = 0; j < m; ++j) d_raw[j] += weight * acc.grad_item_prices[j] * jac[j];
    d_raw[m] += weight * acc.grad_fee * jac[m];
  }
  return acc.loss;
}

/**
 * Actor phase: `steps` Adam steps on the count-weighted mean over buffered
 * states of the smoothed loss with critic offsets (critic frozen). Each step
 * draws `samples` fresh bidders per state; with actor_states > 0 each step
 * uses that many states drawn in proportion to their counts. Returns the
 * per-step losses.
 */
inline std::vector<double> actor_update(FpiNetworks& nets, OptimizerState& opt, const StateSet& ss, int steps,
                                        double kappa, std::size_t samples, std::size_t actor_states, Rng& rng) {
  const ValuationModel& model = nets.model;
  const int m = model.m;
  const std::size_t S = ss.states.size();
  std::vector<double> losses;
  if (S == 0) return losses;
  CriticCache critic(nets);

  // Bundle-priced menus: per-state options and offsets are fixed for the phase.
  std::vector<std::vector<std::size_t>> options;
  std::vector<std::vector<double>> offsets;
  std::vector<std::unique_ptr<BundleValueSampler>> samplers;
  if (!nets.entry_fee) {
    options.resize(S);
    offsets.resize(S);
    samplers.resize(S);
    std::vector<AuctionState> succ;
    for (std::size_t i = 0; i < S; ++i) {
      const auto& s = ss.states[i];
      for (std::size_t b = 0; b < nets.bundles.size(); ++b)
        if (nets.bundles[b].subset_of(s.available)) {
          options[i].push_back(b);
          succ.push_back(state_successor(s, nets.bundles[b]));
        }
    }
    critic.prefetch(succ);
    for (std::size_t i = 0; i < S; ++i) {
      std::vector<ItemSet> bl;
      for (std::size_t b : options[i]) {
        bl.push_back(nets.bundles[b]);
        offsets[i].push_back(critic.value(state_successor(ss.states[i], nets.bundles[b])));
      }
      samplers[i] = std::make_unique<BundleValueSampler>(model, bl);
    }
  }

  double total = 0.0;
  for (double c : ss.counts) total += c;
  std::vector<double> cumulative(S);
  std::partial_sum(ss.counts.begin(), ss.counts.end(), cumulative.begin());

  BulkRng bulk(rng);
  for (int step = 0; step < steps; ++step) {
    std::vector<std::size_t> chosen;
    std::vector<double> weight;
    if (actor_states == 0 || actor_states >= S) {
      for (std::size_t i = 0; i < S; ++i) {
        chosen.push_back(i);
        weight.push_back(ss.counts[i] / total);
      }
    } else {
      for (std::size_t j = 0; j < actor_states; ++j) {
        const double u = rng.uniform() * total;
        chosen.push_back(static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin()));
        if (chosen.back() >= S) chosen.back() = S - 1;
        weight.push_back(1.0 / static_cast<double>(actor_states));
      }
    }
    std::vector<AuctionState> states;
    std::vector<int> agents;
    for (std::size_t i : chosen) {
      states.push_back(ss.states[i]);
      agents.push_back(ss.states[i].agent);
    }
    const auto X = encode_states(states, nets.actor, m);
    const auto fc = forward(nets.actor, X);
    Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(fc.output.rows(), fc.output.cols());
    double loss = 0.0;

    if (!nets.entry_fee) {
      for (std::size_t c = 0; c < chosen.size(); ++c) {
        const std::size_t i = chosen[c];
        const std::size_t k = options[i].size();
        std::vector<double> values(samples * k);
        for (std::size_t r = 0; r < samples; ++r) samplers[i]->draw(bulk, std::span<double>(values.data() + r * k, k));
        const auto col = fc.output.col(static_cast<Eigen::Index>(c));
        loss += weight[c] * actor_state_loss_full(nets, states[c], std::span<const double>(col.data(), col.size()),
                                                  options[i], offsets[i], values, kappa, weight[c],
                                                  std::span<double>(d_out.col(static_cast<Eigen::Index>(c)).data(), d_out.rows()));
      }
    } else {
      // Draw bidders first so every prefix successor can be valued in one critic batch.
      std::vector<std::vector<double>> items(chosen.size(), std::vector<double>(samples * m));
      std::vector<AuctionState> succ;
      for (std::size_t c = 0; c < chosen.size(); ++c) {
        detail::draw_item_values(model, bulk, items[c]);
        const auto col = fc.output.col(static_cast<Eigen::Index>(c));
        const auto menu = entry_fee_actor_head(std::span<const double>(col.data(), col.size()), states[c].available, model);
        for (std::size_t r = 0; r < samples; ++r) {
          const auto po = prefix_options(std::span<const double>(items[c].data() + r * m, m), menu, states[c].available);
          for (ItemSet rest : po.successors) succ.push_back({states[c].agent + 1, rest});
        }
      }
      critic.prefetch(succ);
      for (std::size_t c = 0; c < chosen.size(); ++c) {
        const auto col = fc.output.col(static_cast<Eigen::Index>(c));
        const int next_agent = states[c].agent + 1;
        loss += weight[c] * actor_state_loss_entry_fee(
                                nets, states[c], std::span<const double>(col.data(), col.size()), items[c],
                                [&](ItemSet rest) { return critic.value({next_agent, rest}); }, kappa, weight[c],
                                std::span<double>(d_out.col(static_cast<Eigen::Index>(c)).data(), d_out.rows()));
      }
      if (critic.size() > (1u << 20)) critic.clear();
    }
    if (!std::isfinite(loss)) throw DivergenceError("actor loss became non-finite at step " + std::to_string(step));
    losses.push_back(loss);
    const auto g = backward(nets.actor, fc, d_out, agents);
    opt_step(nets.actor, g.theta, opt);
  }
  return losses;
}

// ---------------------------------------------------------------------------
// Outer loop.

struct FpiLogRow {
  int iteration = 0;
  double sigma = 0.0;
  double mean_buffer_revenue = 0.0;
  double test_revenue = 0.0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double wall_seconds = 0.0;
};

inline void write_fpi_log_header(std::ostream& os) {
  os << "iteration,sigma,mean_buffer_revenue,test_revenue,critic_loss,actor_loss,wall_seconds\n";
}
inline void write_fpi_log_row(std::ostream& os, const FpiLogRow& r) {
  os << r.iteration << ',' << r.sigma << ',' << r.mean_buffer_revenue << ',' << r.test_revenue << ','
     << r.critic_loss << ',' << r.actor_loss << ',' << r.wall_seconds << '\n';
}

struct FpiResult {
  std::shared_ptr<FpiNetworks> nets;
  std::vector<FpiLogRow> log;
  ActorPolicy policy() const { return ActorPolicy(nets); }
};

struct FpiOptions {
  int threads = 1;
  std::function<void(const FpiLogRow&)> on_iteration;
};

namespace detail {
/// Warms the actor memo level by level so each distinct state costs one batched forward column.
inline void warm_along_test_set(const ActorPolicy& policy, const TestSet& test, std::size_t count) {
  const ValuationModel& model = test.model();
  std::vector<AuctionState> states(count, AuctionState{1, ItemSet::full(model.m)});
  std::vector<Profile> profiles(count);
  for (std::size_t i = 0; i < count; ++i) profiles[i] = test[i];
  for (int t = 1; t <= test.agents(); ++t) {
    std::unordered_set<AuctionState, AuctionStateHash> seen(states.begin(), states.end());
    const std::vector<AuctionState> distinct(seen.begin(), seen.end());
    policy.warm(distinct);
    for (std::size_t i = 0; i < count; ++i)
      states[i] = env_step(states[i], policy.offer(states[i]), profiles[i][t - 1], model).next;
  }
}

/// Test revenue of the current actor on the first `count` profiles of the test set.
inline double fpi_test_revenue(const FpiNetworks& nets, const TestSet& test, std::size_t count, int threads) {
  const ActorPolicy policy(std::make_shared<const FpiNetworks>(nets));
  warm_along_test_set(policy, test, count);
  std::vector<double> revenue(count);
  parallel_for(count, threads, [&](std::size_t i) { revenue[i] = episode_revenue(policy, test[i], test.model()); });
  return summarize(revenue).mean;
}
}  // namespace detail

/**
 * Fitted policy iteration: per iteration, collect rollouts with noise sigma,
 * fit the critic on TD(lambda) targets, refresh the targets from the model and
 * fit again, improve the actor against the frozen critic, then decay sigma.
 */
inline FpiResult train_fpi(const ExperimentConfig& config, const FpiOptions& opt = {}) {
  config.validate();
  const FpiHyper& h = config.fpi;
  Rng init_rng = Rng::substream(config.seed, {0xf0});
  FpiResult res;
  res.nets = std::make_shared<FpiNetworks>(make_fpi_networks(config, init_rng));
  FpiNetworks& nets = *res.nets;
  OptimizerState critic_opt(nets.critic.theta.size(), h.eta_v);
  OptimizerState actor_opt(nets.actor.theta.size(), config.eta_pi());
  const TestSet test = canonical_test_set(config);
  const std::size_t eval_count = h.eval_count ? std::min(h.eval_count, test.size()) : test.size();
  const std::size_t refresh = h.refresh_samples ? h.refresh_samples : h.batch;

  RolloutBuffer kept;
  double sigma = h.eps0;
  const auto start = std::chrono::steady_clock::now();
  for (int it = 1; it <= h.num_iterations; ++it) {
    Rng rng = Rng::substream(config.seed, {0xf1, static_cast<std::uint64_t>(it)});
    RolloutBuffer buf = collect_rollouts(nets, h.num_environments, sigma, rng);
    const double buffer_revenue = buf.mean_episode_revenue();
    if (h.retain_buffer) {
      kept.n = buf.n;
      kept.rows.insert(kept.rows.end(), buf.rows.begin(), buf.rows.end());
      buf = kept;
    }
    std::vector<AuctionState> states;
    states.reserve(buf.rows.size());
    for (const auto& r : buf.rows) states.push_back(r.state);

    auto targets = td_lambda_targets(buf, nets, h.lambda, h.gamma);
    critic_fit(nets, critic_opt, states, targets, h.critic_steps_pre, h.batch, rng);
    targets = refresh_targets(buf, nets, refresh, rng);
    const double critic_loss = critic_fit(nets, critic_opt, states, targets, h.critic_steps_post, h.batch, rng);
    const auto losses = actor_update(nets, actor_opt, distinct_states(buf), h.actor_steps, h.kappa, h.batch,
                                     h.actor_states, rng);

    FpiLogRow row;
    row.iteration = it;
    row.sigma = sigma;
    row.mean_buffer_revenue = buffer_revenue;
    row.critic_loss = critic_loss;
    row.actor_loss = losses.empty() ? 0.0 : losses.back();
    row.test_revenue = detail::fpi_test_revenue(nets, test, eval_count, opt.threads);
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    res.log.push_back(row);
    if (opt.on_iteration) opt.on_iteration(row);
    sigma *= h.eta_eps;
  }
  return res;
}

inline void save_fpi(const FpiNetworks& nets, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os.write("SQFP", 4);
  detail::write_pod<std::uint32_t>(os, 1);
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(nets.model.family));
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(nets.model.m));
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(nets.model.k));
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(nets.n));
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(nets.bundles.size()));
  for (ItemSet b : nets.bundles) detail::write_pod<std::uint64_t>(os, b.bits());
  save_mlp(os, nets.actor, nets.entry_fee ? "actor-entry-fee" : "actor-bundle");
  save_mlp(os, nets.critic, "critic");
  if (!os) throw FormatError("write failed for " + path);
}

inline FpiNetworks load_fpi(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "SQFP") throw FormatError(path + ": not an FPI checkpoint");
  if (detail::read_pod<std::uint32_t>(is) != 1) throw FormatError(path + ": unsupported version");
  FpiNetworks nets;
  nets.model.family = static_cast<Family>(detail::read_pod<std::uint32_t>(is));
  nets.model.m = static_cast<int>(detail::read_pod<std::uint32_t>(is));
  nets.model.k = static_cast<int>(detail::read_pod<std::uint32_t>(is));
  nets.n = static_cast<int>(detail::read_pod<std::uint32_t>(is));
  nets.model.validate();
  const auto nb = detail::read_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < nb; ++i) nets.bundles.emplace_back(detail::read_pod<std::uint64_t>(is));
  std::string tag;
  nets.actor = load_mlp(is, &tag);
  nets.entry_fee = tag == "actor-entry-fee";
  nets.critic = load_mlp(is);
  return nets;
}

}  // namespace seqmenu
