#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "seqmenu/errors.hpp"
#include "seqmenu/item_set.hpp"

namespace seqmenu {

/// MDP state: the bidder being visited (1-based) and the items still for sale.
/// agent == n + 1 is the absorbing terminal state with value 0.
struct AuctionState {
  int agent = 1;
  ItemSet available;

  bool is_terminal(int n) const noexcept { return agent > n; }
  bool operator==(const AuctionState&) const noexcept = default;
};

inline std::string to_string(const AuctionState& s) {
  std::ostringstream os;
  os << "(agent " << s.agent << ", " << s.available << ")";
  return os.str();
}

struct AuctionStateHash {
  std::size_t operator()(const AuctionState& s) const noexcept {
    return std::hash<std::uint64_t>{}(s.available.bits() * 0x9e3779b97f4a7c15ULL ^
                                      static_cast<std::uint64_t>(s.agent));
  }
};

/// Next state after the visited bidder takes `chosen`.
inline AuctionState state_successor(const AuctionState& state, ItemSet chosen) {
  require(chosen.subset_of(state.available), "chosen bundle is not a subset of the available set");
  return AuctionState{state.agent + 1, state.available - chosen};
}

struct MenuOption {
  ItemSet bundle;
  double price = 0.0;
  /// Continuation value of the state reached when this bundle is taken.
  double offset = 0.0;
};

/// A deterministic menu of priced bundles shown to one bidder.
struct Menu {
  std::vector<MenuOption> options;

  bool has_free_empty_option() const noexcept {
    for (const auto& o : options)
      if (o.bundle.is_empty() && o.price == 0.0) return true;
    return false;
  }

  /**
   * Throws ContractViolation unless: the empty bundle is offered at exactly 0,
   * prices are finite and nonnegative, and every bundle outside `available`
   * carries at least `mask_price`.
   */
  void validate(ItemSet available, double mask_price = std::numeric_limits<double>::infinity()) const {
    require(has_free_empty_option(), "menu must offer the empty bundle at price 0");
    for (const auto& o : options) {
      require(std::isfinite(o.price) && o.price >= 0.0, "menu prices must be finite and >= 0");
      require(o.bundle.subset_of(available) || o.price >= mask_price,
              "menu offers an unavailable bundle below the mask price");
    }
  }
};

/// A bidder's pick from an offer: the bundle, what it costs, and the bidder's surplus.
struct Choice {
  ItemSet bundle;
  double price = 0.0;
  double utility = 0.0;
};

/**
 * Global tie-break for utility-maximizing picks: higher utility, then lower
 * price, then fewer items, then smaller bitmask. True when `a` beats `b`.
 */
inline bool preferred(const Choice& a, const Choice& b) noexcept {
  if (a.utility != b.utility) return a.utility > b.utility;
  if (a.price != b.price) return a.price < b.price;
  if (a.bundle.size() != b.bundle.size()) return a.bundle.size() < b.bundle.size();
  return a.bundle.bits() < b.bundle.bits();
}

}  // namespace seqmenu
