#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "seqmenu/errors.hpp"

namespace seqmenu {

inline constexpr int kMaxItems = 50;

/// Set of items as a bitmask; item j (0-based) is bit j.
class ItemSet {
public:
  constexpr ItemSet() noexcept = default;
  constexpr explicit ItemSet(std::uint64_t bits) noexcept : bits_(bits) {}

  static constexpr ItemSet empty() noexcept { return ItemSet(); }

  static constexpr ItemSet full(int m) {
    if (m < 0 || m > kMaxItems) throw ContractViolation("item count out of range");
    return ItemSet(m == 64 ? ~0ULL : ((1ULL << m) - 1));
  }

  static ItemSet of(std::initializer_list<int> items) {
    ItemSet s;
    for (int j : items) {
      if (j < 0 || j >= kMaxItems) throw ContractViolation("item index out of range");
      s.bits_ |= 1ULL << j;
    }
    return s;
  }

  constexpr std::uint64_t bits() const noexcept { return bits_; }
  constexpr int size() const noexcept { return std::popcount(bits_); }
  constexpr bool is_empty() const noexcept { return bits_ == 0; }
  constexpr bool contains(int j) const noexcept { return (bits_ >> j) & 1ULL; }
  constexpr bool subset_of(ItemSet other) const noexcept { return (bits_ & ~other.bits_) == 0; }
  constexpr bool fits(int m) const noexcept { return subset_of(ItemSet::full(m)); }
  constexpr int lowest() const noexcept { return std::countr_zero(bits_); }

  constexpr ItemSet with(int j) const noexcept { return ItemSet(bits_ | (1ULL << j)); }
  constexpr ItemSet without(int j) const noexcept { return ItemSet(bits_ & ~(1ULL << j)); }

  constexpr ItemSet operator|(ItemSet o) const noexcept { return ItemSet(bits_ | o.bits_); }
  constexpr ItemSet operator&(ItemSet o) const noexcept { return ItemSet(bits_ & o.bits_); }
  /// Set difference.
  constexpr ItemSet operator-(ItemSet o) const noexcept { return ItemSet(bits_ & ~o.bits_); }

  constexpr bool operator==(const ItemSet&) const noexcept = default;
  constexpr auto operator<=>(const ItemSet&) const noexcept = default;

  std::vector<int> items() const {
    std::vector<int> out;
    out.reserve(size());
    for (std::uint64_t b = bits_; b; b &= b - 1) out.push_back(std::countr_zero(b));
    return out;
  }

  template <class F>
  constexpr void for_each(F&& f) const {
    for (std::uint64_t b = bits_; b; b &= b - 1) f(std::countr_zero(b));
  }

private:
  std::uint64_t bits_ = 0;
};

inline std::ostream& operator<<(std::ostream& os, ItemSet s) {
  os << '{';
  bool first = true;
  s.for_each([&](int j) {
    os << (first ? "" : ",") << j;
    first = false;
  });
  return os << '}';
}

/**
 * All subsets of `available` with at most `max_size` items (all subsets when no
 * cap), including the empty set, in increasing bitmask order. Every module
 * indexes menus by position in this list, so the order is part of the contract.
 */
inline std::vector<ItemSet> enumerate_bundles(ItemSet available,
                                              std::optional<int> max_size = std::nullopt) {
  if (max_size && *max_size < 0) throw ContractViolation("max_size must be nonnegative");
  const int cap = max_size.value_or(kMaxItems);
  if (!max_size && available.size() > 30)
    throw ContractViolation("refusing to enumerate more than 2^30 bundles");
  std::vector<ItemSet> out;
  if (cap >= available.size()) {
    const std::uint64_t a = available.bits();
    std::uint64_t sub = 0;
    do {
      out.emplace_back(sub);
      sub = (sub - a) & a;
    } while (sub != 0);
    return out;
  }
  // Capped: grow combinations item by item, then restore bitmask order.
  const auto items = available.items();
  out.emplace_back();
  std::size_t level_begin = 0;
  for (int size = 1; size <= cap; ++size) {
    const std::size_t level_end = out.size();
    for (std::size_t i = level_begin; i < level_end; ++i) {
      const ItemSet base = out[i];
      const int top = base.is_empty() ? -1 : 63 - std::countl_zero(base.bits());
      for (int j : items)
        if (j > top) out.push_back(base.with(j));
    }
    level_begin = level_end;
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace seqmenu
