#include <gtest/gtest.h>

#include <cmath>

#include "seqmenu/entry_fee.hpp"
#include "seqmenu/mechanism.hpp"
#include "seqmenu/oracles.hpp"

using namespace seqmenu;

namespace {

Valuation items(std::vector<double> t) {
  Valuation v;
  v.item_values = std::move(t);
  return v;
}

std::vector<Valuation> draws(const ValuationModel& vm, int n, Rng& rng) {
  std::vector<Valuation> out;
  for (int i = 0; i < n; ++i) out.push_back(sample(vm, rng));
  return out;
}

/// The 2^q-option menu an entry-fee menu induces on `available`.
Menu induced_menu(const EntryFeeMenu& ef, ItemSet available) {
  Menu menu;
  for (ItemSet b : enumerate_bundles(available)) menu.options.push_back({b, ef.price(b), 0.0});
  return menu;
}

}  // namespace

TEST(EntryFeeMenu, PriceFormula) {
  const EntryFeeMenu ef{{0.2, 0.3, 0.4}, 0.15};
  EXPECT_EQ(ef.price(ItemSet()), 0.0);
  EXPECT_DOUBLE_EQ(ef.price(ItemSet::of({1})), 0.45);
  EXPECT_DOUBLE_EQ(ef.price(ItemSet::of({0, 2})), 0.75);
  EXPECT_NO_THROW(ef.validate());
  EXPECT_THROW((EntryFeeMenu{{0.2}, -0.1}).validate(), ContractViolation);
  EXPECT_THROW((EntryFeeMenu{{-0.2}, 0.1}).validate(), ContractViolation);
}

TEST(ActorHead, ZeroRawOutputs) {
  const ValuationModel vm{Family::AdditiveUniform, 4, 0};
  const std::vector<double> raw(5, 0.0);
  const auto ef = entry_fee_actor_head(raw, ItemSet::of({0, 1, 3}), vm);
  for (int j : {0, 1, 3}) EXPECT_NEAR(ef.item_prices[j], 0.3775, 1e-4);
  EXPECT_EQ(ef.item_prices[2], vm.mask_price());
  EXPECT_NEAR(ef.fee, 0.3133, 1e-4);
}

TEST(ActorHead, NoAvailableItemsMasksEverything) {
  const ValuationModel vm{Family::AdditiveUniform, 3, 0};
  const auto ef = entry_fee_actor_head(std::vector<double>(4, 0.7), ItemSet(), vm);
  for (double p : ef.item_prices) EXPECT_EQ(p, vm.mask_price());
  Rng rng(1);
  for (int it = 0; it < 100; ++it) EXPECT_TRUE(best_prefix_bundle(sample(vm, rng), ef, ItemSet::full(3), vm).bundle.is_empty());
}

TEST(ActorHead, AsymmetricSupportScaling) {
  const ValuationModel vm{Family::AdditiveAsymmetric, 5, 0};
  const std::vector<double> raw{0.3, -1.0, 2.0, 0.0, 0.8, 0.1};
  const auto ef = entry_fee_actor_head(raw, ItemSet::full(5), vm);
  for (int j = 0; j < 5; ++j) EXPECT_NEAR(ef.item_prices[j], sigmoid_with_offset(raw[j]) * (j + 1) / 5.0, 1e-12);
}

TEST(ActorHead, JacobianMatchesDifferences) {
  const ValuationModel vm{Family::AdditiveAsymmetric, 4, 0};
  const ItemSet avail = ItemSet::of({0, 2, 3});
  const std::vector<double> raw{0.4, -0.3, 1.2, -2.0, 0.5};
  const auto d = entry_fee_head_jacobian(raw, avail, vm);
  const double h = 1e-6;
  for (int j = 0; j <= 4; ++j) {
    auto up = raw, dn = raw;
    up[j] += h;
    dn[j] -= h;
    const auto a = entry_fee_actor_head(up, avail, vm), b = entry_fee_actor_head(dn, avail, vm);
    const double fd = j < 4 ? (avail.contains(j) ? (a.item_prices[j] - b.item_prices[j]) / (2 * h) : 0.0)
                            : (a.fee - b.fee) / (2 * h);
    EXPECT_NEAR(d[j], fd, 1e-7) << j;
  }
}

TEST(BestPrefixBundle, ZeroFeeBuysPositiveMarginals) {
  const ValuationModel vm{Family::AdditiveUniform, 4, 0};
  const EntryFeeMenu ef{{0.5, 0.5, 0.2, 0.9}, 0.0};
  const auto c = best_prefix_bundle(items({0.7, 0.4, 0.3, 0.95}), ef, ItemSet::full(4), vm);
  EXPECT_EQ(c.bundle, ItemSet::of({0, 2, 3}));
  EXPECT_NEAR(c.utility, 0.2 + 0.1 + 0.05, 1e-12);
}

TEST(BestPrefixBundle, ProhibitiveFeeBuysNothing) {
  const ValuationModel vm{Family::AdditiveUniform, 3, 0};
  const EntryFeeMenu ef{{0.1, 0.2, 0.3}, 0.6 + 0.4 + 0.2 + 1e-9};
  const auto c = best_prefix_bundle(items({0.7, 0.6, 0.5}), ef, ItemSet::full(3), vm);
  EXPECT_TRUE(c.bundle.is_empty());
  EXPECT_EQ(c.utility, 0.0);
}

TEST(BestPrefixBundle, AgreesWithExhaustiveSearch) {
  const auto r = check_best_prefix_bundle(10000, 2);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(BestPrefixBundle, RespectsAvailability) {
  const ValuationModel vm{Family::AdditiveUniform, 6, 0};
  Rng rng(3);
  for (int it = 0; it < 500; ++it) {
    const ItemSet avail = detail::random_subset(rng, 6);
    EntryFeeMenu ef{std::vector<double>(6), rng.uniform()};
    for (auto& p : ef.item_prices) p = rng.uniform() * 0.5;
    const auto v = sample(vm, rng);
    const auto c = best_prefix_bundle(v, ef, avail, vm);
    EXPECT_TRUE(c.bundle.subset_of(avail));
    const auto e = best_bundle(v, induced_menu(ef, avail), vm);
    EXPECT_EQ(c.bundle, e.bundle);
  }
}

TEST(BestPrefixBundle, RejectsNonAdditive) {
  const ValuationModel vm{Family::UnitDemand, 2, 0};
  EXPECT_THROW(best_prefix_bundle(items({0.5, 0.5}), EntryFeeMenu{{0.1, 0.1}, 0.0}, ItemSet::full(2), vm),
               ContractViolation);
}

TEST(EntryFeeMechanism, ZeroFeeIsItemPricing) {
  // With no fee the mechanism is item-wise posted pricing: revenue equals
  // the per-item independent sales on the same profiles.
  const ValuationModel vm{Family::AdditiveUniform, 3, 0};
  const EntryFeeMenu ef{{0.4, 0.55, 0.7}, 0.0};
  const auto ts = make_test_set(vm, 2, 3000, 9);
  struct Fixed {
    EntryFeeMenu ef;
    Offer offer(const AuctionState&) const { return ef; }
  };
  const double got = evaluate_policy(Fixed{ef}, ts).mean;
  double expect = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto prof = ts[i];
    for (int j = 0; j < 3; ++j)
      for (int t = 0; t < 2; ++t)
        if (prof[t].item_values[j] > ef.item_prices[j]) {
          expect += ef.item_prices[j];
          break;
        }
  }
  EXPECT_NEAR(got, expect / ts.size(), 1e-12);
}

TEST(EntryFeeSoftLoss, GradientMatchesFiniteDifferences) {
  const auto r = check_entry_fee_gradient(60, 4);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(EntryFeeSoftLoss, HardLimitMatchesBestPrefix) {
  Rng rng(5);
  for (int it = 0; it < 50; ++it) {
    const int m = 1 + static_cast<int>(rng.below(5));
    const ValuationModel vm{Family::AdditiveUniform, m, 0};
    const ItemSet avail = detail::random_subset(rng, m);
    EntryFeeMenu ef{std::vector<double>(m), 0.3 * rng.uniform()};
    for (auto& p : ef.item_prices) p = rng.uniform();
    const auto cont = [](ItemSet s) { return 0.1 * s.size(); };
    const auto samples = draws(vm, 30, rng);
    double hard = 0.0;
    for (const auto& v : samples) {
      const auto c = best_prefix_bundle(v, ef, avail, vm);
      hard -= c.price + cont(avail - c.bundle);
    }
    hard /= 30.0;
    EXPECT_NEAR(entry_fee_soft_loss(ef, avail, cont, samples, 1e5, vm).loss, hard, 1e-3);
  }
}

TEST(EntryFeeSoftLoss, SingleItemRecoversPostedPriceSum) {
  // Only price + fee is identified for one item; its optimum is the 0.5 posted price.
  const ValuationModel vm{Family::AdditiveUniform, 1, 0};
  Rng rng(6);
  const auto samples = draws(vm, 4096, rng);
  const auto zero = [](ItemSet) { return 0.0; };
  EntryFeeMenu ef{{0.2}, 0.1};
  for (int step = 0; step < 3000; ++step) {
    const auto l = entry_fee_soft_loss(ef, ItemSet::full(1), zero, samples, 100.0, vm);
    // Price and fee share one gradient, so the sum moves at twice this rate.
    ef.item_prices[0] = std::max(0.0, ef.item_prices[0] - 0.1 * l.grad_item_prices[0]);
    ef.fee = std::max(0.0, ef.fee - 0.1 * l.grad_fee);
  }
  EXPECT_NEAR(ef.item_prices[0] + ef.fee, 0.5, 0.03);
}
