#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "seqmenu/mechanism.hpp"
#include "seqmenu/menu_learning.hpp"
#include "seqmenu/oracles.hpp"

using namespace seqmenu;

namespace {

std::vector<Valuation> draws(const ValuationModel& vm, int count, Rng& rng) {
  std::vector<Valuation> out;
  for (int i = 0; i < count; ++i) out.push_back(sample(vm, rng));
  return out;
}

double zero_continuation(ItemSet) { return 0.0; }

}  // namespace

TEST(SoftWeights, EqualUtilitiesAreUniform) {
  const std::vector<double> u{0.3, 0.3, 0.3, 0.3};
  const auto w = soft_weights(u, 4, 100.0);
  for (double x : w.row(0)) EXPECT_NEAR(x, 0.25, 1e-15);
}

TEST(SoftWeights, Saturation) {
  const std::vector<double> u{1.0, 0.0};
  const auto w = soft_weights(u, 2, 100.0);
  EXPECT_EQ(w.row(0)[0], 1.0);
  EXPECT_LT(w.row(0)[1], 1e-40);
}

TEST(SoftWeights, TwoOptionLogistic) {
  const std::vector<double> u{0.3, 0.1};
  const auto w = soft_weights(u, 2, 1.0);
  const double s = 1.0 / (1.0 + std::exp(-0.2));
  EXPECT_NEAR(w.row(0)[0], s, 1e-15);
  EXPECT_NEAR(w.row(0)[1], 1.0 - s, 1e-15);
}

TEST(SoftWeights, RowsAreStochasticAndOverflowSafe) {
  Rng rng(1);
  std::vector<double> u(7 * 50);
  for (auto& x : u) x = (rng.uniform() - 0.5) * 1e4;
  const auto w = soft_weights(u, 7, 100.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double sum = 0.0;
    for (double x : w.row(r)) {
      EXPECT_GE(x, 0.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(SoftWeights, Errors) {
  const std::vector<double> bad{0.0, std::nan("")};
  EXPECT_THROW(soft_weights(bad, 2, 1.0), std::domain_error);
  const std::vector<double> ok{0.0, 1.0};
  EXPECT_THROW(soft_weights(ok, 2, 0.0), ContractViolation);
}

TEST(SoftRevenueRow, MatchesReferenceSoftmax) {
  // The vectorized row kernel agrees with soft_weights to a few ulps.
  Rng rng(2);
  for (int it = 0; it < 200; ++it) {
    const std::size_t k = 1 + rng.below(40);
    std::vector<double> v(k), p(k), o(k), u(k), scratch(k);
    for (std::size_t i = 0; i < k; ++i) {
      v[i] = rng.uniform() * 3;
      p[i] = rng.uniform() * 2;
      o[i] = rng.uniform();
      u[i] = v[i] - p[i];
    }
    const auto w = soft_weights(u, k, 100.0);
    double ref = 0.0;
    for (std::size_t i = 0; i < k; ++i) ref -= w.row(0)[i] * (p[i] + o[i]);
    EXPECT_NEAR(soft_revenue_row(v, p, o, 100.0, scratch), ref, 1e-13);
  }
}

TEST(PiLoss, EmptyOnlyMenuIsZero) {
  const ValuationModel vm{Family::AdditiveUniform, 2, 0};
  Rng rng(3);
  const auto samples = draws(vm, 10, rng);
  const std::vector<ItemSet> bundles{ItemSet()};
  const std::vector<double> prices{0.0}, offsets{0.0};
  EXPECT_EQ(pi_loss(bundles, prices, offsets, samples, 100.0, vm), 0.0);
}

TEST(PiLoss, HardLimitMatchesBestBundle) {
  Rng rng(4);
  for (int it = 0; it < 100; ++it) {
    const auto vm = detail::random_model(rng, 4);
    const auto bundles = enumerate_bundles(ItemSet::full(vm.m));
    std::vector<double> prices(bundles.size()), offsets(bundles.size());
    for (std::size_t i = 1; i < bundles.size(); ++i) prices[i] = rng.uniform() * vm.grand_bundle_max();
    for (auto& o : offsets) o = rng.uniform();
    const auto samples = draws(vm, 20, rng);
    Menu menu;
    for (std::size_t i = 0; i < bundles.size(); ++i) menu.options.push_back({bundles[i], prices[i], offsets[i]});
    double hard = 0.0;
    for (const auto& v : samples) {
      const auto c = best_bundle(v, menu, vm);
      const auto it_b = std::find(bundles.begin(), bundles.end(), c.bundle);
      hard -= c.price + offsets[static_cast<std::size_t>(it_b - bundles.begin())];
    }
    hard /= 20.0;
    EXPECT_NEAR(pi_loss(bundles, prices, offsets, samples, 1e4, vm), hard, 1e-3);
  }
}

TEST(PiLoss, OffsetShiftMovesLossByConstant) {
  const ValuationModel vm{Family::AdditiveUniform, 3, 0};
  Rng rng(5);
  const auto bundles = enumerate_bundles(ItemSet::full(3));
  std::vector<double> prices(8), offsets(8);
  for (std::size_t i = 1; i < 8; ++i) prices[i] = rng.uniform();
  for (auto& o : offsets) o = rng.uniform();
  const auto samples = draws(vm, 50, rng);
  const double base = pi_loss(bundles, prices, offsets, samples, 100.0, vm);
  auto shifted = offsets;
  for (auto& o : shifted) o += 0.7;
  EXPECT_NEAR(pi_loss(bundles, prices, shifted, samples, 100.0, vm), base - 0.7, 1e-12);
}

TEST(PiLoss, PermutationInvariant) {
  const ValuationModel vm{Family::UnitDemand, 3, 0};
  Rng rng(6);
  auto bundles = enumerate_bundles(ItemSet::full(3));
  std::vector<double> prices(8), offsets(8);
  for (std::size_t i = 1; i < 8; ++i) prices[i] = rng.uniform();
  for (auto& o : offsets) o = rng.uniform();
  const auto samples = draws(vm, 50, rng);
  const double base = pi_loss(bundles, prices, offsets, samples, 100.0, vm);
  std::vector<std::size_t> perm(8);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::vector<ItemSet> pb;
  std::vector<double> pp, po;
  for (auto i : perm) {
    pb.push_back(bundles[i]);
    pp.push_back(prices[i]);
    po.push_back(offsets[i]);
  }
  EXPECT_NEAR(pi_loss(pb, pp, po, samples, 100.0, vm), base, 1e-12);
}

TEST(PiLoss, AffineInPricesForFrozenWeights) {
  const ValuationModel vm{Family::AdditiveUniform, 2, 0};
  Rng rng(7);
  const auto bundles = enumerate_bundles(ItemSet::full(2));
  std::vector<double> prices{0.0, 0.4, 0.5, 0.8}, offsets{0.3, 0.1, 0.2, 0.0};
  const auto samples = draws(vm, 30, rng);
  // Frozen weights at `prices`.
  std::vector<double> u;
  for (const auto& v : samples)
    for (std::size_t i = 0; i < 4; ++i) u.push_back(bundle_value(v, bundles[i], vm) - prices[i]);
  const auto w = soft_weights(u, 4, 10.0);
  std::vector<double> mean_w(4, 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t i = 0; i < 4; ++i) mean_w[i] += w.row(r)[i] / 30.0;
  const auto frozen = [&](const std::vector<double>& a) {
    double l = 0.0;
    for (std::size_t i = 0; i < 4; ++i) l -= mean_w[i] * (a[i] + offsets[i]);
    return l;
  };
  EXPECT_NEAR(frozen(prices), pi_loss(bundles, prices, offsets, samples, 10.0, vm), 1e-12);
  const std::vector<double> moved{0.0, 0.9, 0.1, 0.3};
  double slope = 0.0;
  for (std::size_t i = 0; i < 4; ++i) slope -= mean_w[i] * (moved[i] - prices[i]);
  EXPECT_NEAR(frozen(moved) - frozen(prices), slope, 1e-12);
}

TEST(PiLossGradient, MatchesFiniteDifferences) {
  Rng rng(8);
  double worst = 0.0;
  for (int it = 0; it < 50; ++it) {
    const auto vm = detail::random_model(rng, 4);
    const auto bundles = enumerate_bundles(ItemSet::full(vm.m));
    const double kappa = std::vector<double>{1.0, 10.0, 100.0}[rng.below(3)];
    const auto samples = draws(vm, 32, rng);
    std::vector<double> prices(bundles.size()), offsets(bundles.size());
    for (std::size_t i = 1; i < bundles.size(); ++i) prices[i] = rng.uniform() * vm.grand_bundle_max() * 0.7;
    for (auto& o : offsets) o = rng.uniform();
    const auto g = pi_loss_gradient(bundles, prices, offsets, samples, kappa, vm);
    const auto fd = detail::central_differences(
        [&](std::span<const double> p) { return pi_loss(bundles, p, offsets, samples, kappa, vm); }, prices,
        1e-3 / kappa);
    worst = std::max(worst, detail::relative_error(g, fd));
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(PiLossGradient, SymmetricForIdenticalOptions) {
  const ValuationModel vm{Family::AdditiveUniform, 2, 0};
  Valuation v;
  v.item_values = {0.6, 0.6};
  const std::vector<ItemSet> bundles{ItemSet(), ItemSet::of({0}), ItemSet::of({1})};
  const std::vector<double> prices{0.0, 0.3, 0.3}, offsets{0.2, 0.1, 0.1};
  const auto g = pi_loss_gradient(bundles, prices, offsets, std::span(&v, 1), 100.0, vm);
  EXPECT_NEAR(g[1], g[2], 1e-15);
}

TEST(PiLossGradient, MaskedOptionHasNoGradient) {
  const ValuationModel vm{Family::AdditiveUniform, 2, 0};
  Rng rng(9);
  const auto samples = draws(vm, 20, rng);
  const auto bundles = enumerate_bundles(ItemSet::full(2));
  const std::vector<double> prices{0.0, 0.4, vm.mask_price(), 0.9}, offsets{0.3, 0.1, 0.2, 0.0};
  const auto g = pi_loss_gradient(bundles, prices, offsets, samples, 100.0, vm);
  EXPECT_LT(std::abs(g[2]), 1e-12);
}

TEST(PolicyImprovement, SingleItemPostedPrice) {
  const ValuationModel vm{Family::AdditiveUniform, 1, 0};
  Rng rng(10);
  const auto res = policy_improvement({1, ItemSet::full(1)}, zero_continuation, vm, PIHyper{}, rng);
  ASSERT_EQ(res.bundles.size(), 2u);
  EXPECT_EQ(res.report.prices[0], 0.0);
  EXPECT_NEAR(res.report.prices[1], 0.5, 0.01);
  EXPECT_NEAR(res.report.value, 0.25, 0.005);
  EXPECT_EQ(res.report.loss_curve.size(), 500u);
}

TEST(PolicyImprovement, PointMassBuyerPaysFullValue) {
  PIHyper h;
  h.kappa = 1000.0;
  h.gamma_steps = 2000;
  h.ell = 64;
  h.eval_samples = 64;
  // Near a point mass the kappa = 1000 gradient reaches ~kappa / 4; Adam keeps steps lr-sized.
  h.optimizer = PriceOptimizer::Adam;
  h.eta = 0.002;
  const std::vector<std::uint64_t> keys{tie_key(ItemSet()), tie_key(ItemSet::of({0}))};
  const std::vector<double> offsets{0.0, 0.0};
  const auto rep = train_option_prices(keys, offsets, [](std::span<double> row) { row[0] = 0.0, row[1] = 1.0; }, h);
  EXPECT_NEAR(rep.prices[1], 1.0, 0.01);
  EXPECT_NEAR(rep.value, 1.0, 0.01);
  EXPECT_LE(rep.prices[1], 1.0);
}

TEST(PolicyImprovement, TwoStagePostedPrice) {
  const ValuationModel vm{Family::AdditiveUniform, 1, 0};
  Rng rng2(11), rng1(12);
  const auto last = policy_improvement({2, ItemSet::full(1)}, zero_continuation, vm, PIHyper{}, rng2);
  const double v2 = last.report.value;
  const auto first = policy_improvement(
      {1, ItemSet::full(1)}, [&](ItemSet rest) { return rest.is_empty() ? 0.0 : v2; }, vm, PIHyper{}, rng1);
  EXPECT_NEAR(first.report.prices[1], 0.625, 0.01);
  EXPECT_NEAR(first.report.value, 0.390625, 0.005);
  // Offsets are continuation(available minus bundle).
  EXPECT_EQ(first.offsets[0], v2);
  EXPECT_EQ(first.offsets[1], 0.0);
}

TEST(PolicyImprovement, ImprovesSmoothedObjectiveOnFixedBatch) {
  const ValuationModel vm{Family::AdditiveUniform, 3, 0};
  const auto bundles = enumerate_bundles(ItemSet::full(3));
  std::vector<double> offsets(bundles.size());
  for (std::size_t i = 0; i < bundles.size(); ++i) offsets[i] = 0.2 * (3 - bundles[i].size());
  std::vector<std::uint64_t> keys;
  for (ItemSet b : bundles) keys.push_back(tie_key(b));
  BundleValueSampler sampler(vm, bundles);
  Rng train_rng(13), eval_rng(14);
  BulkRng bulk(train_rng);
  PIHyper h;
  h.gamma_steps = 200;
  h.ell = 1024;
  const auto rep = train_option_prices(keys, offsets, [&](std::span<double> row) { sampler.draw(bulk, row); }, h);
  std::vector<double> values(4096 * bundles.size());
  for (std::size_t r = 0; r < 4096; ++r) sampler.draw(eval_rng, std::span<double>(values.data() + r * 8, 8));
  const std::vector<double> zero(bundles.size(), 0.0);
  EXPECT_LE(pi_loss_matrix(values, rep.prices, offsets, h.kappa), pi_loss_matrix(values, zero, offsets, h.kappa) + 1e-6);
  for (double p : rep.prices) EXPECT_GE(p, 0.0);
  EXPECT_GE(rep.value, 0.0);
}

TEST(PolicyImprovement, DivergenceIsReported) {
  PIHyper h;
  h.gamma_steps = 3;
  h.ell = 4;
  const std::vector<std::uint64_t> keys{0, 1};
  const std::vector<double> offsets{0.0, 0.0};
  EXPECT_THROW(train_option_prices(keys, offsets,
                                   [](std::span<double> row) {
                                     row[0] = 0.0;
                                     row[1] = std::numeric_limits<double>::infinity();
                                   },
                                   h, "(agent 1, {0})"),
               DivergenceError);
}

TEST(HardChoice, FollowsGlobalTieBreak) {
  const std::vector<ItemSet> b{ItemSet(), ItemSet::of({0, 1}), ItemSet::of({2}), ItemSet::of({1})};
  std::vector<std::uint64_t> keys;
  for (auto x : b) keys.push_back(tie_key(x));
  // All nonempty options give utility 0.1 at price 0.4; {1} is smallest by size then mask.
  const std::vector<double> values{0.0, 0.5, 0.5, 0.5}, prices{0.0, 0.4, 0.4, 0.4};
  EXPECT_EQ(hard_choice(values, prices, keys), 3u);
  const std::vector<double> tie_empty{0.0, 0.4, 0.0, 0.0}, p2{0.0, 0.4, 0.1, 0.1};
  EXPECT_EQ(hard_choice(tie_empty, p2, keys), 0u);
}
