#pragma once

// Independent reference checks: closed-form revenues, finite-difference
// gradients, brute-force best responses, and truthfulness. Used by the
// `selfcheck` subcommand and the acceptance suite.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "seqmenu/config.hpp"
#include "seqmenu/dp_solver.hpp"
#include "seqmenu/entry_fee.hpp"
#include "seqmenu/fpi.hpp"
#include "seqmenu/mechanism.hpp"
#include "seqmenu/menu_learning.hpp"
#include "seqmenu/nn.hpp"

namespace seqmenu {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

/// Deliberate faults for exercising the failure path of the checks.
struct OracleFaults {
  bool corrupt_gradient = false;
};

namespace detail {

inline std::string fmt(double x, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << x;
  return os.str();
}

/// max_i |a_i - b_i| / max(max_i |b_i|, floor). The floor keeps vanishing
/// gradients (a menu nobody buys from) from turning round-off into failures.
inline double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-6) {
  double diff = 0.0, scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return diff / scale;
}

/// Five-point central differences, O(h^4).
inline std::vector<double> central_differences(const std::function<double(std::span<const double>)>& f,
                                               std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  auto at = [&](std::size_t i, double x0, double d) {
    x[i] = x0 + d;
    return f(x);
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    g[i] = (8.0 * (at(i, x0, h) - at(i, x0, -h)) - (at(i, x0, 2 * h) - at(i, x0, -2 * h))) / (12.0 * h);
    x[i] = x0;
  }
  return g;
}

inline void maybe_corrupt(std::vector<double>& g, const OracleFaults& faults) {
  if (faults.corrupt_gradient && !g.empty()) g[0] = g[0] * 1.01 + 1e-3;
}

inline ValuationModel random_model(Rng& rng, int max_m) {
  ValuationModel model;
  model.family = static_cast<Family>(rng.below(6));
  model.m = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_m)));
  if (model.family == Family::KDemand) model.k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(model.m)));
  return model;
}

inline ItemSet random_subset(Rng& rng, int m) { return ItemSet(rng() & ItemSet::full(m).bits()); }

/// A menu over a random selection of bundles of `available`; prices occasionally coincide.
inline Menu random_menu(Rng& rng, const ValuationModel& model, ItemSet available, double keep = 0.6) {
  Menu menu;
  menu.options.push_back({ItemSet(), 0.0, 0.0});
  const double top = model.grand_bundle_max();
  for (ItemSet b : enumerate_bundles(available)) {
    if (b.is_empty() || rng.uniform() > keep) continue;
    double p = rng.uniform() * top;
    if (rng.uniform() < 0.1) p = std::round(p * 4.0) / 4.0;
    menu.options.push_back({b, p, 0.0});
  }
  return menu;
}

/// Tie-break order written out independently of `preferred`.
inline bool beats(double u, double p, ItemSet b, double bu, double bp, ItemSet bb) {
  if (u != bu) return u > bu;
  if (p != bp) return p < bp;
  if (b.size() != bb.size()) return b.size() < bb.size();
  return b.bits() < bb.bits();
}

template <class F>
CheckResult timed(const std::string& name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  try {
    r = body();
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Closed-form revenues.

/// One bidder, one U[0,1] item: learned price 0.5 +- 0.01 and revenue 0.25 +- 0.005.
inline CheckResult check_single_posted_price(std::uint64_t seed = 1) {
  return detail::timed("posted price n=1 m=1", [&] {
    ExperimentConfig c;
    c.n = 1;
    c.m = 1;
    Rng rng = Rng::substream(seed, {0x0c1});
    const auto res = policy_improvement({1, ItemSet::full(1)}, [](ItemSet) { return 0.0; }, c.model(), c.dp.pi(), rng);
    const double price = res.report.prices.at(1);
    const double value = res.report.value;
    CheckResult r;
    r.pass = std::abs(price - 0.5) <= 0.01 && std::abs(value - 0.25) <= 0.005;
    r.detail = "price " + detail::fmt(price) + ", revenue " + detail::fmt(value);
    return r;
  });
}

/// Two bidders, one U[0,1] item: root value 25/64 = 0.390625 +- 0.005.
inline CheckResult check_two_bidder_root(std::uint64_t seed = 1) {
  return detail::timed("dp root n=2 m=1", [&] {
    ExperimentConfig c;
    c.n = 2;
    c.m = 1;
    c.seed = seed;
    const auto policy = solve_dp(c);
    const double root = policy.value({1, ItemSet::full(1)});
    CheckResult r;
    r.pass = std::abs(root - 0.390625) <= 0.005;
    r.detail = "root value " + detail::fmt(root) + " (exact 0.390625)";
    return r;
  });
}

// ---------------------------------------------------------------------------
// TD(lambda) identities.

inline RolloutBuffer random_buffer(Rng& rng, int n, int episodes) {
  RolloutBuffer buf;
  buf.n = n;
  for (int e = 0; e < episodes; ++e)
    for (int t = 1; t <= n; ++t) {
      RolloutRow row;
      row.state = {t, ItemSet(rng() & 0xff)};
      row.next = {t + 1, ItemSet(rng() & 0xff)};
      row.reward = rng.uniform() < 0.3 ? 0.0 : rng.uniform() * 3.0;
      row.episode = e;
      row.t = t;
      buf.rows.push_back(row);
    }
  return buf;
}

/// lambda = 1 gives Monte-Carlo returns and lambda = 0 one-step targets, both bitwise.
inline CheckResult check_td_lambda_identities(int buffers = 200, std::uint64_t seed = 1) {
  return detail::timed("td(lambda) identities", [&] {
    Rng rng = Rng::substream(seed, {0x7d});
    std::size_t rows = 0, bad_mc = 0, bad_one = 0;
    for (int b = 0; b < buffers; ++b) {
      const int n = 1 + static_cast<int>(rng.below(8));
      const auto buf = random_buffer(rng, n, 1 + static_cast<int>(rng.below(16)));
      std::vector<double> v(buf.rows.size());
      for (auto& x : v) x = rng.uniform() * 5.0 - 1.0;
      const auto mc_targets = td_lambda_targets(buf, v, 1.0);
      const auto one_step = td_lambda_targets(buf, v, 0.0);
      for (std::size_t i = buf.rows.size(); i-- > 0;) {
        const auto& row = buf.rows[i];
        // Reference return, accumulated back to front.
        double mc = 0.0;
        const std::size_t end = static_cast<std::size_t>(row.episode + 1) * n;
        for (std::size_t j = end; j-- > i;) mc = buf.rows[j].reward + mc;
        const double one = row.reward + (row.t == n ? 0.0 : v[i]);
        bad_mc += mc_targets[i] != mc;
        bad_one += one_step[i] != one;
        ++rows;
      }
    }
    CheckResult r;
    r.pass = bad_mc == 0 && bad_one == 0;
    r.detail = std::to_string(rows) + " rows; lambda=1 mismatches " + std::to_string(bad_mc) +
               ", lambda=0 mismatches " + std::to_string(bad_one);
    return r;
  });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks.

/// Smoothed menu loss vs central differences on random menus.
inline CheckResult check_pi_loss_gradient(int instances = 60, std::uint64_t seed = 1, OracleFaults faults = {}) {
  return detail::timed("pi_loss gradient", [&] {
    Rng rng = Rng::substream(seed, {0x9a});
    double worst = 0.0;
    int failed = 0;
    for (int it = 0; it < instances; ++it) {
      ValuationModel model = detail::random_model(rng, 4);
      const auto bundles = enumerate_bundles(ItemSet::full(model.m));
      const double kappa = std::vector<double>{1.0, 10.0, 100.0}[rng.below(3)];
      std::vector<Valuation> samples;
      for (int s = 0; s < 64; ++s) samples.push_back(sample(model, rng));
      std::vector<double> prices(bundles.size()), offsets(bundles.size());
      for (std::size_t i = 1; i < bundles.size(); ++i) prices[i] = rng.uniform() * model.grand_bundle_max() * 0.7;
      for (auto& o : offsets) o = rng.uniform();
      auto g = pi_loss_gradient(bundles, prices, offsets, samples, kappa, model);
      detail::maybe_corrupt(g, faults);
      const auto fd = detail::central_differences(
          [&](std::span<const double> p) { return pi_loss(bundles, p, offsets, samples, kappa, model); }, prices,
          1e-3 / kappa);
      const double e = detail::relative_error(g, fd);
      worst = std::max(worst, e);
      failed += e > 1e-4;
    }
    CheckResult r;
    r.pass = failed == 0;
    r.detail = std::to_string(instances) + " instances, worst relative error " + detail::fmt(worst, 3);
    return r;
  });
}

/// Network parameter gradients (every head, embedding included) vs central differences.
inline CheckResult check_nn_backward(int instances = 60, std::uint64_t seed = 1, OracleFaults faults = {}) {
  return detail::timed("nn backward", [&] {
    Rng rng = Rng::substream(seed, {0x4e});
    double worst = 0.0;
    int failed = 0;
    for (int it = 0; it < instances; ++it) {
      MlpSpec spec;
      spec.features = 1 + static_cast<int>(rng.below(6));
      spec.hidden_layers = 1 + static_cast<int>(rng.below(3));
      spec.hidden_units = 1 + static_cast<int>(rng.below(8));
      spec.output_dim = 1 + static_cast<int>(rng.below(8));
      spec.head = static_cast<OutputHead>(it % 3);
      spec.embed_rows = 1 + static_cast<int>(rng.below(4));
      spec.d_emb = 1 + static_cast<int>(rng.below(4));
      MlpParams params = init_mlp(spec, rng);
      for (auto& t : params.theta) t += 0.3 * rng.normal();
      const int batch = 1 + static_cast<int>(rng.below(5));
      std::vector<AuctionState> states;
      std::vector<int> agents;
      for (int b = 0; b < batch; ++b) {
        states.push_back({1 + static_cast<int>(rng.below(spec.embed_rows)), detail::random_subset(rng, spec.features)});
        agents.push_back(states.back().agent);
      }
      Eigen::MatrixXd w(spec.output_dim, batch);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
      auto loss = [&](const MlpParams& p) {
        const auto fc = forward(p, encode_states(states, p, spec.features));
        return (fc.output.array() * w.array()).sum();
      };
      const auto fc = forward(params, encode_states(states, params, spec.features));
      const auto grads = backward(params, fc, w, agents);
      std::vector<double> g(grads.theta.data(), grads.theta.data() + grads.theta.size());
      detail::maybe_corrupt(g, faults);
      std::vector<double> theta(params.theta.data(), params.theta.data() + params.theta.size());
      MlpParams probe = params;
      const auto fd = detail::central_differences(
          [&](std::span<const double> x) {
            std::copy(x.begin(), x.end(), probe.theta.data());
            return loss(probe);
          },
          theta, 1e-4);
      const double e = detail::relative_error(g, fd);
      worst = std::max(worst, e);
      failed += e > 1e-4;
    }
    CheckResult r;
    r.pass = failed == 0;
    r.detail = std::to_string(instances) + " networks, worst relative error " + detail::fmt(worst, 3);
    return r;
  });
}

/// Entry-fee prefix loss w.r.t. item prices and fee vs central differences, m <= 6.
inline CheckResult check_entry_fee_gradient(int instances = 60, std::uint64_t seed = 1, OracleFaults faults = {}) {
  return detail::timed("entry-fee loss gradient", [&] {
    Rng rng = Rng::substream(seed, {0xef});
    double worst = 0.0;
    int failed = 0;
    for (int it = 0; it < instances; ++it) {
      ValuationModel model;
      model.family = rng.uniform() < 0.5 ? Family::AdditiveUniform : Family::AdditiveAsymmetric;
      model.m = 1 + static_cast<int>(rng.below(6));
      ItemSet available = detail::random_subset(rng, model.m);
      if (available.is_empty()) available = ItemSet::full(model.m);
      const double kappa = std::vector<double>{1.0, 10.0, 100.0}[rng.below(3)];
      std::vector<Valuation> samples;
      for (int s = 0; s < 64; ++s) samples.push_back(sample(model, rng));
      const std::uint64_t salt = rng();
      auto continuation = [salt](ItemSet rest) {
        return static_cast<double>(mix64(rest.bits() ^ salt) >> 11) * 0x1.0p-53;
      };
      std::vector<double> x(model.m + 1);
      for (int j = 0; j < model.m; ++j)
        x[j] = available.contains(j) ? rng.uniform() * model.item_support_max(j) : model.mask_price();
      x[model.m] = rng.uniform() * 0.5;
      auto menu_of = [&](std::span<const double> v) {
        return EntryFeeMenu{std::vector<double>(v.begin(), v.end() - 1), v.back()};
      };
      const auto acc = entry_fee_soft_loss(menu_of(x), available, continuation, samples, kappa, model);
      std::vector<double> g, fd_g;
      const auto fd = detail::central_differences(
          [&](std::span<const double> v) {
            return entry_fee_soft_loss(menu_of(v), available, continuation, samples, kappa, model).loss;
          },
          x, 1e-5);
      for (int j = 0; j < model.m; ++j)
        if (available.contains(j)) {
          g.push_back(acc.grad_item_prices[j]);
          fd_g.push_back(fd[j]);
        }
      g.push_back(acc.grad_fee);
      fd_g.push_back(fd[model.m]);
      detail::maybe_corrupt(g, faults);
      const double e = detail::relative_error(g, fd_g);
      worst = std::max(worst, e);
      failed += e > 1e-4;
    }
    CheckResult r;
    r.pass = failed == 0;
    r.detail = std::to_string(instances) + " instances, worst relative error " + detail::fmt(worst, 3);
    return r;
  });
}

// ---------------------------------------------------------------------------
// Best responses against brute force.

/// best_bundle vs an exhaustive scan of all 2^m bundles priced by the menu.
inline CheckResult check_best_bundle(int instances = 10000, std::uint64_t seed = 1) {
  return detail::timed("best_bundle vs enumeration", [&] {
    Rng rng = Rng::substream(seed, {0xbb});
    int mismatches = 0;
    for (int it = 0; it < instances; ++it) {
      const ValuationModel model = detail::random_model(rng, 10);
      const ItemSet available = detail::random_subset(rng, model.m);
      const Menu menu = detail::random_menu(rng, model, available, rng.uniform());
      const Valuation v = sample(model, rng);
      const Choice got = best_bundle(v, menu, model);
      // Dense price table over every bundle; bundles off the menu are unbuyable.
      std::vector<double> price(std::size_t{1} << model.m, std::numeric_limits<double>::infinity());
      for (const auto& o : menu.options) price[o.bundle.bits()] = o.price;
      ItemSet best;
      double bu = 0.0, bp = 0.0;
      for (std::uint64_t mask = 1; mask < price.size(); ++mask) {
        if (!std::isfinite(price[mask])) continue;
        const ItemSet b(mask);
        const double u = bundle_value(v, b, model) - price[mask];
        if (detail::beats(u, price[mask], b, bu, bp, best)) {
          best = b;
          bu = u;
          bp = price[mask];
        }
      }
      mismatches += got.bundle != best;
    }
    CheckResult r;
    r.pass = mismatches == 0;
    r.detail = std::to_string(instances) + " instances, " + std::to_string(mismatches) + " mismatches";
    return r;
  });
}

/// best_prefix_bundle vs an exhaustive scan of the induced 2^m menu.
inline CheckResult check_best_prefix_bundle(int instances = 10000, std::uint64_t seed = 1) {
  return detail::timed("best_prefix_bundle vs enumeration", [&] {
    Rng rng = Rng::substream(seed, {0xbf});
    int mismatches = 0;
    for (int it = 0; it < instances; ++it) {
      ValuationModel model;
      model.family = rng.uniform() < 0.5 ? Family::AdditiveUniform : Family::AdditiveAsymmetric;
      model.m = 1 + static_cast<int>(rng.below(10));
      const ItemSet available = detail::random_subset(rng, model.m);
      EntryFeeMenu menu;
      menu.item_prices.resize(model.m);
      for (int j = 0; j < model.m; ++j)
        menu.item_prices[j] = available.contains(j) ? rng.uniform() * model.item_support_max(j) : model.mask_price();
      menu.fee = rng.uniform() < 0.2 ? 0.0 : rng.uniform() * 0.5 * model.m * 0.3;
      const Valuation v = sample(model, rng);
      const Choice got = best_prefix_bundle(v, menu, available, model);
      ItemSet best;
      double bu = 0.0, bp = 0.0;
      for (ItemSet b : enumerate_bundles(available)) {
        if (b.is_empty()) continue;
        double value = 0.0, price = menu.fee;
        b.for_each([&](int j) {
          value += v.item_values[j];
          price += menu.item_prices[j];
        });
        if (detail::beats(value - price, price, b, bu, bp, best)) {
          best = b;
          bu = value - price;
          bp = price;
        }
      }
      mismatches += got.bundle != best;
    }
    CheckResult r;
    r.pass = mismatches == 0;
    r.detail = std::to_string(instances) + " instances, " + std::to_string(mismatches) + " mismatches";
    return r;
  });
}

// ---------------------------------------------------------------------------
// Truthfulness and participation.

/**
 * verify_dsic_ir over random (menu, truth, misreport) triples across all
 * families, then random episodes under every offer kind with a check that no
 * bidder ever ends with negative utility.
 */
inline CheckResult check_dsic_ir(int triples = 100000, int episodes = 20000, std::uint64_t seed = 1) {
  return detail::timed("dsic/ir", [&] {
    Rng rng = Rng::substream(seed, {0xd5});
    int dsic_failures = 0;
    for (int it = 0; it < triples; ++it) {
      const ValuationModel model = detail::random_model(rng, 8);
      const ItemSet available = detail::random_subset(rng, model.m);
      const Menu menu = detail::random_menu(rng, model, available, rng.uniform());
      const Valuation truth = sample(model, rng);
      Valuation lie = sample(model, rng);
      if (it % 4 == 0) {
        // Shaded report: same type scaled down.
        lie = truth;
        const double s = rng.uniform();
        for (auto& x : lie.item_values) x *= s;
        for (auto& x : lie.bundle_table) x *= s;
      }
      dsic_failures += !verify_dsic_ir(menu, truth, std::span(&lie, 1), model);
    }
    std::size_t steps = 0;
    int negative = 0;
    for (int e = 0; e < episodes; ++e) {
      const ValuationModel model = detail::random_model(rng, 8);
      const int n = 1 + static_cast<int>(rng.below(5));
      const int kind = static_cast<int>(rng.below(3));
      AuctionState s{1, ItemSet::full(model.m)};
      for (int t = 1; t <= n; ++t) {
        Offer offer;
        if (kind == 1 && model.additive()) {
          EntryFeeMenu menu;
          for (int j = 0; j < model.m; ++j)
            menu.item_prices.push_back(s.available.contains(j) ? rng.uniform() * model.item_support_max(j)
                                                               : model.mask_price());
          menu.fee = rng.uniform();
          offer = menu;
        } else if (kind == 2 && model.item_symmetric()) {
          SizeMenu menu{{0.0}};
          for (int j = 1; j <= model.m; ++j) menu.size_prices.push_back(rng.uniform() * model.grand_bundle_max());
          offer = menu;
        } else {
          offer = detail::random_menu(rng, model, s.available);
        }
        const auto step = env_step(s, offer, sample(model, rng), model);
        negative += step.utility < 0.0;
        ++steps;
        s = step.next;
      }
    }
    CheckResult r;
    r.pass = dsic_failures == 0 && negative == 0;
    r.detail = std::to_string(triples) + " triples, " + std::to_string(dsic_failures) + " DSIC/IR failures; " +
               std::to_string(steps) + " steps, " + std::to_string(negative) + " with negative utility";
    return r;
  });
}

}  // namespace seqmenu
