#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "seqmenu/config.hpp"
#include "seqmenu/core_types.hpp"
#include "seqmenu/mechanism.hpp"
#include "seqmenu/menu_learning.hpp"
#include "seqmenu/parallel.hpp"

namespace seqmenu {

/// Called after each state solve with (agent, states done at this agent, states at this agent).
using DpProgress = std::function<void(int, std::size_t, std::size_t)>;

struct DpOptions {
  int threads = 1;
  DpProgress progress;
};

namespace detail {
/// States an agent can face: with bundles capped at `cap` items, agent t sees
/// at least m - (t - 1) * cap items. Agent 1 sees only the full set.
inline bool reachable(int agent, int size, int m, std::optional<int> cap) {
  if (agent == 1) return size == m;
  if (!cap) return true;
  return size >= m - static_cast<long>(agent - 1) * *cap;
}

/// Substream keys for the state solve. With the agent dimension collapsed the
/// key is (agents remaining, mask), so trailing stages do not depend on n.
inline Rng state_stream(std::uint64_t seed, std::uint64_t tag, int n, int agent, std::uint64_t mask, bool collapse) {
  const std::uint64_t first = collapse ? static_cast<std::uint64_t>(n - agent + 1) : static_cast<std::uint64_t>(agent);
  return Rng::substream(seed, {tag, collapse ? 1ULL : 0ULL, first, mask});
}
}  // namespace detail

/**
 * Menus and values for every reachable (agent, available-set) state. Agent
 * n + 1 is terminal with value 0.
 */
class TabularPolicy {
public:
  TabularPolicy() = default;
  TabularPolicy(int n, ValuationModel model, std::optional<int> cap)
      : n_(n), model_(model), cap_(cap),
        values_(static_cast<std::size_t>(n + 2), std::vector<double>(std::size_t{1} << model.m, 0.0)),
        menus_(static_cast<std::size_t>(n + 2), std::vector<Menu>(std::size_t{1} << model.m)),
        solved_(static_cast<std::size_t>(n + 2), std::vector<char>(std::size_t{1} << model.m, 0)) {
    std::fill(solved_[n + 1].begin(), solved_[n + 1].end(), 1);
  }

  int agents() const noexcept { return n_; }
  const ValuationModel& model() const noexcept { return model_; }
  std::optional<int> cap() const noexcept { return cap_; }

  bool has(const AuctionState& s) const {
    return s.agent >= 1 && s.agent <= n_ + 1 && s.available.fits(model_.m) && solved_[s.agent][s.available.bits()];
  }

  double value(const AuctionState& s) const {
    if (!has(s)) throw ContractViolation("no value stored for state " + to_string(s));
    return values_[s.agent][s.available.bits()];
  }

  const Menu& menu(const AuctionState& s) const {
    if (!has(s) || s.is_terminal(n_)) throw ContractViolation("no menu stored for state " + to_string(s));
    return menus_[s.agent][s.available.bits()];
  }

  Offer offer(const AuctionState& s) const { return menu(s); }

  void store(const AuctionState& s, Menu menu, double value) {
    require(s.agent >= 1 && s.agent <= n_ && s.available.fits(model_.m), "state out of range");
    menus_[s.agent][s.available.bits()] = std::move(menu);
    values_[s.agent][s.available.bits()] = value;
    solved_[s.agent][s.available.bits()] = 1;
  }

  /// Every solved non-terminal state, agent-major then by mask.
  std::vector<AuctionState> states() const {
    std::vector<AuctionState> out;
    for (int a = 1; a <= n_; ++a)
      for (std::size_t mask = 0; mask < solved_[a].size(); ++mask)
        if (solved_[a][mask]) out.push_back({a, ItemSet(mask)});
    return out;
  }

private:
  int n_ = 0;
  ValuationModel model_;
  std::optional<int> cap_;
  std::vector<std::vector<double>> values_;
  std::vector<std::vector<Menu>> menus_;
  std::vector<std::vector<char>> solved_;
};

/**
 * Backward induction: for agent t = n..1 and each reachable available set,
 * trains that state's menu against the stored values of agent t + 1.
 */
inline TabularPolicy solve_dp(const ExperimentConfig& config, const DpOptions& opt = {}) {
  config.validate();
  require(config.menu_family != MenuFamily::EntryFee, "solve_dp needs the full or size_capped menu family");
  const ValuationModel model = config.model();
  const int n = config.n, m = config.m;
  const auto cap = config.menu_cap();
  const PIHyper hyper = config.dp.pi();
  TabularPolicy policy(n, model, cap);

  for (int t = n; t >= 1; --t) {
    std::vector<ItemSet> states;
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << m); ++mask)
      if (detail::reachable(t, std::popcount(mask), m, cap)) states.emplace_back(mask);
    std::vector<StateMenuResult> results(states.size());
    std::atomic<std::size_t> done{0};
    parallel_for(states.size(), opt.threads, [&](std::size_t i) {
      const AuctionState s{t, states[i]};
      Rng rng = detail::state_stream(config.seed, 0xd1, n, t, states[i].bits(), config.dp.collapse_agents);
      auto continuation = [&](ItemSet rest) { return policy.value({t + 1, rest}); };
      results[i] = policy_improvement(s, continuation, model, hyper, rng, cap);
      if (opt.progress) opt.progress(t, ++done, states.size());
    });
    for (std::size_t i = 0; i < states.size(); ++i)
      policy.store({t, states[i]}, results[i].menu(), results[i].report.value);
  }
  return policy;
}

/**
 * Size-indexed tables for item-symmetric settings: at agent t with q items
 * left, option j sells the bidder's j most valuable remaining items at
 * size_prices[j].
 */
class SymmetricPolicy {
public:
  SymmetricPolicy() = default;
  SymmetricPolicy(int n, ValuationModel model, std::optional<int> cap)
      : n_(n), model_(model), cap_(cap),
        values_(static_cast<std::size_t>(n + 2), std::vector<double>(model.m + 1, 0.0)),
        prices_(static_cast<std::size_t>(n + 2), std::vector<std::vector<double>>(model.m + 1)),
        solved_(static_cast<std::size_t>(n + 2), std::vector<char>(model.m + 1, 0)) {
    std::fill(solved_[n + 1].begin(), solved_[n + 1].end(), 1);
  }

  int agents() const noexcept { return n_; }
  const ValuationModel& model() const noexcept { return model_; }
  std::optional<int> cap() const noexcept { return cap_; }

  bool has(int agent, int q) const {
    return agent >= 1 && agent <= n_ + 1 && q >= 0 && q <= model_.m && solved_[agent][q];
  }
  double value(int agent, int q) const {
    if (!has(agent, q))
      throw ContractViolation("no value stored for agent " + std::to_string(agent) + " with " + std::to_string(q) + " items");
    return values_[agent][q];
  }
  const std::vector<double>& size_prices(int agent, int q) const {
    if (!has(agent, q) || agent > n_)
      throw ContractViolation("no menu stored for agent " + std::to_string(agent) + " with " + std::to_string(q) + " items");
    return prices_[agent][q];
  }

  Offer offer(const AuctionState& s) const { return SizeMenu{size_prices(s.agent, s.available.size())}; }

  void store(int agent, int q, std::vector<double> prices, double value) {
    require(agent >= 1 && agent <= n_ && q >= 0 && q <= model_.m, "state out of range");
    require(!prices.empty() && prices[0] == 0.0, "size 0 must be priced 0");
    prices_[agent][q] = std::move(prices);
    values_[agent][q] = value;
    solved_[agent][q] = 1;
  }

private:
  int n_ = 0;
  ValuationModel model_;
  std::optional<int> cap_;
  std::vector<std::vector<double>> values_;
  std::vector<std::vector<std::vector<double>>> prices_;
  std::vector<std::vector<char>> solved_;
};

namespace detail {
/// Values of "top j of q iid items" for j = 0..width-1, from one fresh bidder.
class TopItemsSampler {
public:
  TopItemsSampler(const ValuationModel& model, int q) : model_(model), items_(static_cast<std::size_t>(q)) {}

  void draw(BulkRng& rng, std::span<double> out) {
    rng.fill_uniform(items_.data(), items_.size());
    std::sort(items_.begin(), items_.end(), std::greater<>());
    out[0] = 0.0;
    for (std::size_t j = 1; j < out.size(); ++j) {
      const double t = items_[j - 1];
      switch (model_.family) {
        case Family::UnitDemand: out[j] = items_[0]; break;
        case Family::KDemand: out[j] = out[j - 1] + (static_cast<int>(j) <= model_.k ? t : 0.0); break;
        default: out[j] = out[j - 1] + t; break;
      }
    }
  }

private:
  ValuationModel model_;
  std::vector<double> items_;
};
}  // namespace detail

/// Backward induction over (agent, items remaining) with size-indexed menus.
inline SymmetricPolicy solve_dp_symmetric(const ExperimentConfig& config, const DpOptions& opt = {}) {
  config.validate();
  const ValuationModel model = config.model();
  if (!model.item_symmetric())
    throw ConfigError("the symmetric solver needs iid items (settings A, C or D)");
  const int n = config.n, m = config.m;
  const auto cap = config.menu_cap();
  const PIHyper hyper = config.dp.pi();
  SymmetricPolicy policy(n, model, cap);

  for (int t = n; t >= 1; --t) {
    std::vector<int> qs;
    for (int q = 0; q <= m; ++q)
      if (detail::reachable(t, q, m, cap)) qs.push_back(q);
    std::vector<PITrainReport> results(qs.size());
    std::atomic<std::size_t> done{0};
    parallel_for(qs.size(), opt.threads, [&](std::size_t i) {
      const int q = qs[i];
      const int width = std::min(q, cap.value_or(q)) + 1;
      std::vector<double> offsets(width);
      std::vector<std::uint64_t> keys(width);
      for (int j = 0; j < width; ++j) {
        offsets[j] = policy.value(t + 1, q - j);
        keys[j] = static_cast<std::uint64_t>(j);
      }
      detail::TopItemsSampler sampler(model, q);
      Rng rng = detail::state_stream(config.seed, 0x5e, n, t, static_cast<std::uint64_t>(q), config.dp.collapse_agents);
      BulkRng bulk(rng);
      const std::string label = "(agent " + std::to_string(t) + ", " + std::to_string(q) + " items)";
      results[i] = train_option_prices(
          keys, offsets, [&](std::span<double> row) { sampler.draw(bulk, row); }, hyper, label);
      if (opt.progress) opt.progress(t, ++done, qs.size());
    });
    for (std::size_t i = 0; i < qs.size(); ++i) policy.store(t, qs[i], results[i].prices, results[i].value);
  }
  return policy;
}

inline AnyPolicy dp_policy_as_policy(TabularPolicy p) { return AnyPolicy(std::move(p)); }
inline AnyPolicy dp_policy_as_policy(SymmetricPolicy p) { return AnyPolicy(std::move(p)); }

// ---------------------------------------------------------------------------
// Policy files (little-endian):
//   char[4] "SQDP", u32 version=1, u32 kind (0 tabular, 1 symmetric),
//   u32 n, u32 family, u32 m, u32 k, i32 cap (-1 for none),
//   u32 echo length, echo bytes (the config as key=value text),
//   u64 record count, then per state:
//     u16 agent, u64 mask, u32 option count, count x (u64 bundle mask, f64 price), f64 value.
// Symmetric records encode "q items left" as the mask of the q lowest items and
// the size-j option as the mask of the j lowest items.

namespace detail {
inline void write_policy_header(std::ostream& os, std::uint32_t kind, int n, const ValuationModel& model,
                                std::optional<int> cap, const std::string& echo) {
  os.write("SQDP", 4);
  write_pod<std::uint32_t>(os, 1);
  write_pod<std::uint32_t>(os, kind);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(n));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(model.family));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(model.m));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(model.k));
  write_pod<std::int32_t>(os, cap ? *cap : -1);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(echo.size()));
  os.write(echo.data(), static_cast<std::streamsize>(echo.size()));
}

inline std::uint64_t low_mask(int q) { return q >= 64 ? ~0ULL : ((std::uint64_t{1} << q) - 1); }
}  // namespace detail

inline void save_policy(const TabularPolicy& p, const std::string& path, const std::string& config_echo = "") {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  detail::write_policy_header(os, 0, p.agents(), p.model(), p.cap(), config_echo);
  const auto states = p.states();
  detail::write_pod<std::uint64_t>(os, states.size());
  for (const auto& s : states) {
    const Menu& menu = p.menu(s);
    detail::write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(s.agent));
    detail::write_pod<std::uint64_t>(os, s.available.bits());
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(menu.options.size()));
    for (const auto& o : menu.options) {
      detail::write_pod<std::uint64_t>(os, o.bundle.bits());
      detail::write_pod<double>(os, o.price);
    }
    detail::write_pod<double>(os, p.value(s));
  }
  if (!os) throw FormatError("write failed for " + path);
}

inline void save_policy(const SymmetricPolicy& p, const std::string& path, const std::string& config_echo = "") {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  detail::write_policy_header(os, 1, p.agents(), p.model(), p.cap(), config_echo);
  std::uint64_t count = 0;
  for (int a = 1; a <= p.agents(); ++a)
    for (int q = 0; q <= p.model().m; ++q) count += p.has(a, q);
  detail::write_pod<std::uint64_t>(os, count);
  for (int a = 1; a <= p.agents(); ++a)
    for (int q = 0; q <= p.model().m; ++q) {
      if (!p.has(a, q)) continue;
      const auto& prices = p.size_prices(a, q);
      detail::write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(a));
      detail::write_pod<std::uint64_t>(os, detail::low_mask(q));
      detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(prices.size()));
      for (std::size_t j = 0; j < prices.size(); ++j) {
        detail::write_pod<std::uint64_t>(os, detail::low_mask(static_cast<int>(j)));
        detail::write_pod<double>(os, prices[j]);
      }
      detail::write_pod<double>(os, p.value(a, q));
    }
  if (!os) throw FormatError("write failed for " + path);
}

struct LoadedPolicy {
  std::uint32_t kind = 0;
  std::string config_echo;
  TabularPolicy tabular;
  SymmetricPolicy symmetric;

  AnyPolicy policy() const { return kind == 0 ? AnyPolicy(tabular) : AnyPolicy(symmetric); }
};

/// Reads a policy file. Menu offsets are rebuilt from the stored successor values.
inline LoadedPolicy load_policy(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "SQDP") throw FormatError(path + ": not a policy file");
  if (detail::read_pod<std::uint32_t>(is) != 1) throw FormatError(path + ": unsupported version");
  LoadedPolicy out;
  out.kind = detail::read_pod<std::uint32_t>(is);
  if (out.kind > 1) throw FormatError(path + ": unknown policy kind");
  const int n = static_cast<int>(detail::read_pod<std::uint32_t>(is));
  ValuationModel model;
  model.family = static_cast<Family>(detail::read_pod<std::uint32_t>(is));
  model.m = static_cast<int>(detail::read_pod<std::uint32_t>(is));
  model.k = static_cast<int>(detail::read_pod<std::uint32_t>(is));
  const std::int32_t cap_raw = detail::read_pod<std::int32_t>(is);
  const std::optional<int> cap = cap_raw < 0 ? std::nullopt : std::optional<int>(cap_raw);
  model.validate();
  const auto echo_len = detail::read_pod<std::uint32_t>(is);
  out.config_echo.resize(echo_len);
  is.read(out.config_echo.data(), echo_len);
  const auto count = detail::read_pod<std::uint64_t>(is);

  struct Record {
    int agent;
    std::uint64_t mask;
    std::vector<std::pair<std::uint64_t, double>> options;
    double value;
  };
  std::vector<Record> records(count);
  for (auto& r : records) {
    r.agent = detail::read_pod<std::uint16_t>(is);
    r.mask = detail::read_pod<std::uint64_t>(is);
    r.options.resize(detail::read_pod<std::uint32_t>(is));
    for (auto& o : r.options) {
      o.first = detail::read_pod<std::uint64_t>(is);
      o.second = detail::read_pod<double>(is);
    }
    r.value = detail::read_pod<double>(is);
    if (r.agent < 1 || r.agent > n) throw FormatError(path + ": record agent out of range");
  }

  if (out.kind == 0) {
    out.tabular = TabularPolicy(n, model, cap);
    // Store values first so offsets can be looked up in any record order.
    std::vector<std::vector<double>> values(n + 2, std::vector<double>(std::size_t{1} << model.m, 0.0));
    for (const auto& r : records) values[r.agent][r.mask] = r.value;
    for (const auto& r : records) {
      Menu menu;
      for (const auto& [b, price] : r.options) {
        const ItemSet bundle(b);
        const double offset = values[r.agent + 1][(ItemSet(r.mask) - bundle).bits()];
        menu.options.push_back({bundle, price, r.agent == n ? 0.0 : offset});
      }
      out.tabular.store({r.agent, ItemSet(r.mask)}, std::move(menu), r.value);
    }
  } else {
    out.symmetric = SymmetricPolicy(n, model, cap);
    for (const auto& r : records) {
      std::vector<double> prices;
      for (const auto& o : r.options) prices.push_back(o.second);
      out.symmetric.store(r.agent, std::popcount(r.mask), std::move(prices), r.value);
    }
  }
  return out;
}

}  // namespace seqmenu
