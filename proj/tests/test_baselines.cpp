#include <gtest/gtest.h>

#include <cmath>

#include "seqmenu/baselines.hpp"
#include "seqmenu/dp_solver.hpp"

using namespace seqmenu;

namespace {

ExperimentConfig setting(Family f, int n, int m) {
  ExperimentConfig c;
  c.setting = f;
  c.n = n;
  c.m = m;
  return c;
}

}  // namespace

TEST(MaximizeOnGrid, FindsInteriorMaximum) {
  const auto [x, fx] = maximize_on_grid([](double p) { return p * (1 - p); }, 0.0, 1.0, 11);
  EXPECT_NEAR(x, 0.5, 1e-8);
  EXPECT_NEAR(fx, 0.25, 1e-12);
  const auto [y, fy] = maximize_on_grid([](double p) { return -(p - 0.3137) * (p - 0.3137); }, 0.0, 2.0, 1000);
  EXPECT_NEAR(y, 0.3137, 1e-6);
  EXPECT_LE(fy, 0.0);
  EXPECT_THROW(maximize_on_grid([](double) { return 0.0; }, 0.0, 1.0, 1), ConfigError);
}

TEST(MaximizeOnGrid, EndpointMaximum) {
  const auto [x, fx] = maximize_on_grid([](double p) { return p; }, 0.0, 2.0, 50);
  EXPECT_NEAR(x, 2.0, 1e-8);
  EXPECT_NEAR(fx, 2.0, 1e-8);
}

TEST(ItemWise, SingleItemPostedPrice) {
  const auto p = solve_item_wise(setting(Family::AdditiveUniform, 1, 1));
  EXPECT_NEAR(p.item_prices({1, ItemSet::full(1)})[0], 0.5, 1e-6);
  EXPECT_NEAR(p.value(1, ItemSet::full(1)), 0.25, 1e-9);
}

TEST(ItemWise, TwoStageRecursion) {
  // V_2 = 1/4, V_1 = max_p (1 - p) p + p V_2 at p = 5/8.
  const auto p = solve_item_wise(setting(Family::AdditiveUniform, 2, 1));
  EXPECT_NEAR(p.item_prices({1, ItemSet::full(1)})[0], 0.625, 1e-6);
  EXPECT_NEAR(p.value(1, ItemSet::full(1)), 0.390625, 1e-9);
}

TEST(ItemWise, AdditiveUniformFiveByFive) {
  const auto c = setting(Family::AdditiveUniform, 5, 5);
  const auto p = solve_item_wise(c);
  EXPECT_TRUE(p.per_item());
  EXPECT_NEAR(evaluate_policy(p, canonical_test_set(c)).mean, 3.00, 0.02);
}

TEST(ItemWise, AsymmetricPricesScaleWithSupport) {
  const auto p = solve_item_wise(setting(Family::AdditiveAsymmetric, 1, 4));
  const auto prices = p.item_prices({1, ItemSet::full(4)});
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(prices[j], 0.5 * (j + 1) / 4.0, 1e-6);
}

TEST(ItemWise, MasksUnavailableItems) {
  const auto c = setting(Family::AdditiveUniform, 2, 3);
  const auto p = solve_item_wise(c);
  const auto prices = p.item_prices({2, ItemSet::of({1})});
  EXPECT_EQ(prices[0], c.model().mask_price());
  EXPECT_LT(prices[1], 1.0);
  EXPECT_EQ(prices[2], c.model().mask_price());
}

TEST(ItemWise, NeverBeatsFullMenuDp) {
  for (Family f : {Family::AdditiveUniform, Family::UnitDemand, Family::SubsetSqrt}) {
    auto c = setting(f, 2, 3);
    c.test_count = 4000;
    const auto ts = canonical_test_set(c);
    const auto item = evaluate_policy(solve_item_wise(c), ts);
    const auto dp = evaluate_policy(solve_dp(c), ts);
    EXPECT_LE(item.mean, dp.mean + 3 * std::hypot(item.std_error, dp.std_error)) << family_letter(f);
  }
}

TEST(ItemWise, StateDependentForUnitDemand) {
  auto c = setting(Family::UnitDemand, 2, 3);
  const auto p = solve_item_wise(c);
  EXPECT_FALSE(p.per_item());
  EXPECT_NO_THROW(p.item_prices({2, ItemSet::of({0, 2})}));
  EXPECT_TRUE(std::holds_alternative<Menu>(p.offer({1, ItemSet::full(3)})));
}

TEST(BundleWise, AdditiveUniformFiveByFive) {
  const auto c = setting(Family::AdditiveUniform, 5, 5);
  EXPECT_NEAR(evaluate_policy(solve_bundle_wise(c), canonical_test_set(c)).mean, 2.58, 0.03);
}

TEST(BundleWise, SingleItemMatchesItemWise) {
  for (int n : {1, 3}) {
    const auto c = setting(Family::AdditiveUniform, n, 1);
    const auto b = solve_bundle_wise(c);
    const auto i = solve_item_wise(c);
    EXPECT_NEAR(b.stage_values[0], i.value(1, ItemSet::full(1)), 0.005);
    EXPECT_NEAR(b.stage_prices[0], i.item_prices({1, ItemSet::full(1)})[0], 0.02);
  }
}

TEST(BundleWise, StageValuesDecrease) {
  const auto b = solve_bundle_wise(setting(Family::SubsetSqrt, 4, 4));
  EXPECT_EQ(b.stage_values[4], 0.0);
  for (int t = 0; t < 4; ++t) EXPECT_GT(b.stage_values[t], b.stage_values[t + 1]);
}

TEST(BundleWise, OffersOnlyGrandBundle) {
  const auto b = solve_bundle_wise(setting(Family::AdditiveUniform, 2, 3));
  const auto menu = std::get<Menu>(b.offer({2, ItemSet::of({0, 2})}));
  ASSERT_EQ(menu.options.size(), 2u);
  EXPECT_TRUE(menu.options[0].bundle.is_empty());
  EXPECT_EQ(menu.options[1].bundle, ItemSet::of({0, 2}));
  EXPECT_EQ(std::get<Menu>(b.offer({2, ItemSet()})).options.size(), 1u);
}

TEST(BundleWise, UnitDemandNotReported) {
  EXPECT_THROW(solve_bundle_wise(setting(Family::UnitDemand, 5, 5)), ConfigError);
}
