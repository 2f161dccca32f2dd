#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "seqmenu/errors.hpp"
#include "seqmenu/item_set.hpp"
#include "seqmenu/rng.hpp"

namespace seqmenu {

/// Bidder valuation families, lettered as in the benchmark tables.
enum class Family {
  AdditiveUniform,     // A: t_j ~ U[0,1]
  AdditiveAsymmetric,  // B: t_j ~ U[0, j/m]
  UnitDemand,          // C: max item value
  KDemand,             // D: sum of the k largest item values
  SubsetSqrt,          // E: v(S) ~ U[0, sqrt|S|] independently per bundle
  Complementarity,     // F: sum of t_j ~ U[1,2] plus c_T ~ U[-|T|, |T|]
};

inline char family_letter(Family f) { return static_cast<char>('A' + static_cast<int>(f)); }

inline Family family_from_letter(char c) {
  if (c >= 'a' && c <= 'f') c = static_cast<char>(c - 'a' + 'A');
  if (c < 'A' || c > 'F') throw ConfigError(std::string("unknown setting '") + c + "'");
  return static_cast<Family>(c - 'A');
}

struct ValuationModel {
  Family family = Family::AdditiveUniform;
  int m = 1;
  int k = 0;  // demand cap; only read for KDemand

  void validate() const {
    if (m < 1 || m > kMaxItems) throw ConfigError("m must be in [1, 50]");
    if ((family == Family::SubsetSqrt || family == Family::Complementarity) && m > 12)
      throw ConfigError("settings E and F materialize 2^m values per draw and require m <= 12");
    if (family == Family::KDemand && k < 1) throw ConfigError("k-demand requires k >= 1");
  }

  bool additive() const noexcept {
    return family == Family::AdditiveUniform || family == Family::AdditiveAsymmetric;
  }
  bool has_bundle_table() const noexcept {
    return family == Family::SubsetSqrt || family == Family::Complementarity;
  }
  /// Items iid across positions and values a function of the sorted item values.
  bool item_symmetric() const noexcept {
    return family == Family::AdditiveUniform || family == Family::UnitDemand ||
           family == Family::KDemand;
  }

  /// Largest value item j (0-based) can take; the scale of the entry-fee price head.
  double item_support_max(int j) const noexcept {
    switch (family) {
      case Family::AdditiveAsymmetric: return static_cast<double>(j + 1) / m;
      case Family::Complementarity: return 2.0;
      default: return 1.0;
    }
  }

  /// Upper bound on any bundle's value for this family.
  double grand_bundle_max() const noexcept {
    switch (family) {
      case Family::AdditiveUniform: return m;
      case Family::AdditiveAsymmetric: return (m + 1) / 2.0;
      case Family::UnitDemand: return 1.0;
      case Family::KDemand: return std::min(k, m);
      case Family::SubsetSqrt: return std::sqrt(static_cast<double>(m));
      case Family::Complementarity: return 3.0 * m;
    }
    return m;
  }

  /// Price assigned to infeasible bundles: ten times the largest attainable value.
  double mask_price() const noexcept { return 10.0 * grand_bundle_max(); }
};

/// One bidder's realized type.
struct Valuation {
  std::vector<double> item_values;   // families A-D and F
  std::vector<double> bundle_table;  // families E-F, indexed by bitmask
};

namespace detail {
inline double top_k_sum(const std::vector<double>& t, ItemSet bundle, int k) {
  double best[kMaxItems];
  int count = 0;
  bundle.for_each([&](int j) { best[count++] = t[j]; });
  const int take = std::min(k, count);
  std::partial_sort(best, best + take, best + count, std::greater<>());
  double sum = 0.0;
  for (int i = 0; i < take; ++i) sum += best[i];
  return sum;
}
}  // namespace detail

inline Valuation sample(const ValuationModel& model, Rng& rng) {
  Valuation v;
  const int m = model.m;
  switch (model.family) {
    case Family::AdditiveUniform:
    case Family::UnitDemand:
    case Family::KDemand:
      v.item_values.resize(m);
      for (auto& t : v.item_values) t = rng.uniform();
      break;
    case Family::AdditiveAsymmetric:
      v.item_values.resize(m);
      for (int j = 0; j < m; ++j) v.item_values[j] = rng.uniform() * (j + 1) / m;
      break;
    case Family::SubsetSqrt: {
      const std::size_t size = std::size_t{1} << m;
      v.bundle_table.assign(size, 0.0);
      for (std::size_t s = 1; s < size; ++s)
        v.bundle_table[s] = rng.uniform() * std::sqrt(static_cast<double>(std::popcount(s)));
      break;
    }
    case Family::Complementarity: {
      v.item_values.resize(m);
      for (auto& t : v.item_values) t = rng.uniform(1.0, 2.0);
      const std::size_t size = std::size_t{1} << m;
      v.bundle_table.assign(size, 0.0);
      std::vector<double> item_sum(size, 0.0);
      for (std::size_t s = 1; s < size; ++s) {
        item_sum[s] = item_sum[s & (s - 1)] + v.item_values[std::countr_zero(s)];
        const double c = static_cast<double>(std::popcount(s));
        v.bundle_table[s] = std::max(0.0, item_sum[s] + rng.uniform(-c, c));
      }
      break;
    }
  }
  return v;
}

inline double bundle_value(const Valuation& v, ItemSet bundle, const ValuationModel& model) {
  require(bundle.fits(model.m), "bundle does not fit within m items");
  switch (model.family) {
    case Family::AdditiveUniform:
    case Family::AdditiveAsymmetric: {
      double sum = 0.0;
      bundle.for_each([&](int j) { sum += v.item_values[j]; });
      return sum;
    }
    case Family::UnitDemand: {
      double best = 0.0;
      bundle.for_each([&](int j) { best = std::max(best, v.item_values[j]); });
      return best;
    }
    case Family::KDemand: return detail::top_k_sum(v.item_values, bundle, model.k);
    case Family::SubsetSqrt:
    case Family::Complementarity: return v.bundle_table[bundle.bits()];
  }
  return 0.0;
}

/**
 * Draws the values of a fixed list of bundles for one fresh bidder without
 * materializing the full 2^m table. Used on the training hot paths.
 *
 * For bundle-table families only the listed bundles are drawn; since those
 * values are independent per bundle, the marginal law is unchanged.
 */
class BundleValueSampler {
public:
  BundleValueSampler(const ValuationModel& model, std::vector<ItemSet> bundles)
      : model_(model), bundles_(std::move(bundles)) {
    parent_.assign(bundles_.size(), -1);
    scale_.assign(bundles_.size(), 0.0);
    for (std::size_t i = 0; i < bundles_.size(); ++i) {
      const ItemSet b = bundles_[i];
      scale_[i] = std::sqrt(static_cast<double>(b.size()));
      if (b.is_empty()) continue;
      const ItemSet rest(b.bits() & (b.bits() - 1));
      auto it = std::lower_bound(bundles_.begin(), bundles_.end(), rest);
      if (it != bundles_.end() && *it == rest) parent_[i] = static_cast<int>(it - bundles_.begin());
    }
    sorted_ = std::is_sorted(bundles_.begin(), bundles_.end());
    for (std::size_t i = 0; i < bundles_.size(); ++i)
      if (!bundles_[i].is_empty() && (parent_[i] < 0 || !sorted_)) incremental_ = false;
    items_.resize(model.m);
  }

  std::size_t size() const noexcept { return bundles_.size(); }
  const std::vector<ItemSet>& bundles() const noexcept { return bundles_; }

  /// One fresh bidder. G is Rng or BulkRng.
  template <class G>
  void draw(G& gen, std::span<double> out) {
    const std::size_t count = bundles_.size();
    switch (model_.family) {
      case Family::SubsetSqrt:
        gen.fill_uniform(out.data(), count);
        for (std::size_t i = 0; i < count; ++i) out[i] *= scale_[i];
        return;
      case Family::AdditiveUniform:
      case Family::UnitDemand:
      case Family::KDemand:
        gen.fill_uniform(items_.data(), items_.size());
        break;
      case Family::AdditiveAsymmetric:
        gen.fill_uniform(items_.data(), items_.size());
        for (int j = 0; j < model_.m; ++j) items_[j] *= static_cast<double>(j + 1) / model_.m;
        break;
      case Family::Complementarity:
        gen.fill_uniform(items_.data(), items_.size());
        for (auto& t : items_) t += 1.0;
        break;
    }
    fill_from_items(out);
    if (model_.family == Family::Complementarity) {
      // out[] holds pure item sums so far; add the complementarity draw last.
      noise_.resize(count);
      gen.fill_uniform(noise_.data(), count);
      for (std::size_t i = 0; i < count; ++i) {
        const double c = static_cast<double>(bundles_[i].size());
        if (c > 0) out[i] = std::max(0.0, out[i] + c * (2.0 * noise_[i] - 1.0));
      }
    }
  }

  /// Values of every listed bundle for a given item vector (families A-D only).
  void values_for_items(std::span<const double> items, std::span<double> out) {
    std::copy(items.begin(), items.end(), items_.begin());
    fill_from_items(out);
  }

private:
  void fill_from_items(std::span<double> out) {
    const std::size_t count = bundles_.size();
    const bool sum_like = model_.additive() || model_.family == Family::Complementarity;
    if (model_.family == Family::KDemand) {
      for (std::size_t i = 0; i < count; ++i)
        out[i] = detail::top_k_sum(items_, bundles_[i], model_.k);
      return;
    }
    for (std::size_t i = 0; i < count; ++i) {
      const ItemSet b = bundles_[i];
      if (b.is_empty()) {
        out[i] = 0.0;
        continue;
      }
      double base;
      if (incremental_) {
        const double t = items_[b.lowest()];
        base = sum_like ? out[parent_[i]] + t : std::max(out[parent_[i]], t);
      } else {
        base = 0.0;
        b.for_each([&](int j) { base = sum_like ? base + items_[j] : std::max(base, items_[j]); });
      }
      out[i] = base;
    }
  }

  ValuationModel model_;
  std::vector<ItemSet> bundles_;
  std::vector<int> parent_;
  std::vector<double> scale_;
  std::vector<double> items_;
  std::vector<double> noise_;
  bool sorted_ = true;
  bool incremental_ = true;
};

using Profile = std::vector<Valuation>;

/**
 * The fixed evaluation batch. Profiles are generated on demand from
 * (seed, profile index), one substream per profile, so a 10^4-profile test set
 * for 2^10-entry tables never has to sit in memory at once.
 */
class TestSet {
public:
  TestSet(ValuationModel model, int n, std::size_t count, std::uint64_t seed)
      : model_(model), n_(n), count_(count), seed_(seed) {
    require(count >= 1, "test set needs at least one profile");
    require(n >= 1, "test set needs at least one agent");
    model_.validate();
  }

  std::size_t size() const noexcept { return count_; }
  int agents() const noexcept { return n_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const ValuationModel& model() const noexcept { return model_; }

  Profile operator[](std::size_t i) const {
    require(i < count_, "profile index out of range");
    Rng rng = Rng::substream(seed_, {0x7e57ULL, i});
    Profile p;
    p.reserve(n_);
    for (int a = 0; a < n_; ++a) p.push_back(sample(model_, rng));
    return p;
  }

  std::vector<Profile> materialize() const {
    std::vector<Profile> out;
    out.reserve(count_);
    for (std::size_t i = 0; i < count_; ++i) out.push_back((*this)[i]);
    return out;
  }

private:
  ValuationModel model_;
  int n_;
  std::size_t count_;
  std::uint64_t seed_;
};

inline TestSet make_test_set(const ValuationModel& model, int n, std::size_t count, std::uint64_t seed) {
  return TestSet(model, n, count, seed);
}

// ---------------------------------------------------------------------------
// Binary persistence. Layout (little-endian):
//   char[4] "SQTS", u32 version=1, u32 family, u32 n, u32 m, u32 k, u64 count, u64 seed
//   then `count` rows; each row is n agents x width f64 values, where width is
//   m (A-D), 2^m (E) or m + 2^m (F: item values followed by the bundle table).

namespace detail {
static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <class T>
void write_pod(std::ostream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}
template <class T>
T read_pod(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw FormatError("unexpected end of file");
  return value;
}
}  // namespace detail

inline void save_test_set(const TestSet& ts, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  const auto& model = ts.model();
  os.write("SQTS", 4);
  detail::write_pod<std::uint32_t>(os, 1);
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(model.family));
  detail::write_pod<std::uint32_t>(os, ts.agents());
  detail::write_pod<std::uint32_t>(os, model.m);
  detail::write_pod<std::uint32_t>(os, model.k);
  detail::write_pod<std::uint64_t>(os, ts.size());
  detail::write_pod<std::uint64_t>(os, ts.seed());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    for (const auto& v : ts[i]) {
      os.write(reinterpret_cast<const char*>(v.item_values.data()),
               static_cast<std::streamsize>(v.item_values.size() * sizeof(double)));
      os.write(reinterpret_cast<const char*>(v.bundle_table.data()),
               static_cast<std::streamsize>(v.bundle_table.size() * sizeof(double)));
    }
  }
  if (!os) throw FormatError("write failed for " + path);
}

struct LoadedTestSet {
  ValuationModel model;
  int n = 0;
  std::uint64_t seed = 0;
  std::vector<Profile> profiles;
};

inline LoadedTestSet load_test_set(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "SQTS") throw FormatError(path + ": not a test-set file");
  if (detail::read_pod<std::uint32_t>(is) != 1) throw FormatError(path + ": unsupported version");
  LoadedTestSet out;
  out.model.family = static_cast<Family>(detail::read_pod<std::uint32_t>(is));
  out.n = static_cast<int>(detail::read_pod<std::uint32_t>(is));
  out.model.m = static_cast<int>(detail::read_pod<std::uint32_t>(is));
  out.model.k = static_cast<int>(detail::read_pod<std::uint32_t>(is));
  const auto count = detail::read_pod<std::uint64_t>(is);
  out.seed = detail::read_pod<std::uint64_t>(is);
  out.model.validate();
  const bool items = out.model.family != Family::SubsetSqrt;
  const std::size_t table = out.model.has_bundle_table() ? (std::size_t{1} << out.model.m) : 0;
  out.profiles.resize(count);
  for (auto& p : out.profiles) {
    p.resize(out.n);
    for (auto& v : p) {
      if (items) v.item_values.resize(out.model.m);
      v.bundle_table.resize(table);
      is.read(reinterpret_cast<char*>(v.item_values.data()),
              static_cast<std::streamsize>(v.item_values.size() * sizeof(double)));
      is.read(reinterpret_cast<char*>(v.bundle_table.data()),
              static_cast<std::streamsize>(v.bundle_table.size() * sizeof(double)));
      if (!is) throw FormatError(path + ": truncated");
    }
  }
  return out;
}

}  // namespace seqmenu
