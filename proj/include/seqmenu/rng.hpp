#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace seqmenu {

/// splitmix64 finalizer; used for seeding and for deriving substream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/**
 * xoshiro256++ generator. Satisfies UniformRandomBitGenerator so it plugs into
 * <random> distributions, but the hot paths call uniform() directly.
 *
 * Stream splitting: Rng::substream(seed, {k0, k1, ...}) folds each key into the
 * seed with mix64, so substream(s, {i}) for profile i, or {t, mask} for a DP
 * state, is independent of how many other streams were drawn before it. This is
 * what keeps results identical across thread counts.
 */
class Rng {
public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) noexcept { reseed(seed); }

  static Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) noexcept {
    std::uint64_t h = mix64(seed ^ 0x5eedbeefcafef00dULL);
    for (auto k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
    return Rng(h);
  }

  void reseed(std::uint64_t seed) noexcept {
    std::uint64_t x = seed;
    for (auto& w : s_) {
      x += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      w = z ^ (z >> 31);
    }
    has_spare_ = false;
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  void fill_uniform(double* out, std::size_t n) noexcept {
    for (std::size_t i = 0; i < n; ++i) out[i] = uniform();
  }

  /// Standard normal via Marsaglia's polar method.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  std::uint64_t below(std::uint64_t bound) noexcept {
    // Lemire's multiply-shift; the bias is below 2^-64 * bound.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>((*this)()) * bound) >> 64);
  }

private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/**
 * Eight interleaved xoshiro256++ lanes for bulk uniform draws, written with
 * GCC/Clang vector extensions. Lanes are seeded from a parent Rng, so a BulkRng
 * is as reproducible as its parent stream. Uniforms carry 52 random bits.
 */
class BulkRng {
public:
  static constexpr std::size_t kLanes = 8;

  explicit BulkRng(Rng& parent) noexcept {
    for (std::size_t l = 0; l < kLanes; ++l) {
      s0_[l] = parent();
      s1_[l] = parent();
      s2_[l] = parent();
      s3_[l] = parent() | 1;  // never the all-zero state
    }
  }

  double uniform() noexcept {
    if (pos_ == kLanes) {
      next_block(buf_);
      pos_ = 0;
    }
    return buf_[pos_++];
  }

  void fill_uniform(double* out, std::size_t n) noexcept {
    std::size_t i = 0;
    while (i < n && pos_ < kLanes) out[i++] = buf_[pos_++];
    for (; i + kLanes <= n; i += kLanes) next_block(out + i);
    while (i < n) out[i++] = uniform();
  }

private:
  using U64x8 = std::uint64_t __attribute__((vector_size(64)));
  using F64x8 = double __attribute__((vector_size(64)));

  static U64x8 rotl(U64x8 x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

  void next_block(double* out) noexcept {
    const U64x8 result = rotl(s0_ + s3_, 23) + s0_;
    const U64x8 t = s1_ << 17;
    s2_ ^= s0_;
    s3_ ^= s1_;
    s1_ ^= s2_;
    s0_ ^= s3_;
    s2_ ^= t;
    s3_ = rotl(s3_, 45);
    const F64x8 u = reinterpret_cast<F64x8>((result >> 12) | 0x3ff0000000000000ULL) - 1.0;
    __builtin_memcpy(out, &u, sizeof(u));
  }

  U64x8 s0_, s1_, s2_, s3_;
  alignas(64) double buf_[kLanes]{};
  std::size_t pos_ = kLanes;
};

}  // namespace seqmenu
