#include <gtest/gtest.h>

#include <sstream>

#include "seqmenu/nn.hpp"
#include "seqmenu/oracles.hpp"

using namespace seqmenu;

namespace {

MlpSpec small_spec(OutputHead head) {
  MlpSpec s;
  s.features = 3;
  s.hidden_layers = 2;
  s.hidden_units = 5;
  s.output_dim = 4;
  s.head = head;
  s.embed_rows = 3;
  s.d_emb = 4;
  return s;
}

}  // namespace

TEST(EncodeState, LayoutAndEmbedding) {
  Rng rng(1);
  const auto p = init_mlp(small_spec(OutputHead::Identity), rng);
  const auto x = encode_state({1, ItemSet::full(3)}, p, 3);
  ASSERT_EQ(x.size(), 7);
  EXPECT_EQ(x.tail(3), Eigen::Vector3d(1, 1, 1));
  EXPECT_EQ(x.head(4), p.embedding().row(0).transpose());

  const auto y = encode_state({1, ItemSet::of({1})}, p, 3);
  EXPECT_EQ(x.head(4), y.head(4));
  EXPECT_EQ(y.tail(3), Eigen::Vector3d(0, 1, 0));

  const auto z = encode_state({2, ItemSet()}, p, 3);
  EXPECT_EQ(z.tail(3), Eigen::Vector3d::Zero());
  EXPECT_NE(z.head(4), x.head(4));

  EXPECT_THROW(encode_state({4, ItemSet()}, p, 3), ContractViolation);
  EXPECT_THROW(encode_state({1, ItemSet()}, p, 4), ContractViolation);
}

TEST(Forward, ZeroWeightsGiveHeadAtZero) {
  Rng rng(2);
  for (auto [head, want] : {std::pair{OutputHead::SoftplusOffset, 0.3133}, std::pair{OutputHead::SigmoidOffset, 0.3775}}) {
    auto p = init_mlp(small_spec(head), rng);
    p.theta.setZero();
    const std::vector<AuctionState> states{{1, ItemSet::full(3)}, {3, ItemSet::of({2})}};
    const auto fc = forward(p, encode_states(states, p, 3));
    ASSERT_EQ(fc.output.rows(), 4);
    ASSERT_EQ(fc.output.cols(), 2);
    for (Eigen::Index i = 0; i < fc.output.size(); ++i) EXPECT_NEAR(fc.output.data()[i], want, 1e-4);
  }
}

TEST(Forward, LinearIdentityLayer) {
  MlpSpec s;
  s.features = 4;
  s.hidden_layers = 0;
  s.output_dim = 4;
  Rng rng(3);
  auto p = init_mlp(s, rng);
  p.theta.setZero();
  for (int i = 0; i < 4; ++i) p.theta[i * 4 + i] = 1.0;  // column-major identity
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(4, 6);
  EXPECT_TRUE(forward(p, X).output.isApprox(X));
}

TEST(Forward, RejectsWrongInputDimension) {
  Rng rng(4);
  const auto p = init_mlp(small_spec(OutputHead::Identity), rng);
  EXPECT_THROW(forward(p, Eigen::MatrixXd::Zero(6, 1)), ContractViolation);
}

TEST(Backward, MatchesFiniteDifferences) {
  const auto r = check_nn_backward(60, 5);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Backward, ZeroOutputGradientGivesZero) {
  Rng rng(6);
  const auto p = init_mlp(small_spec(OutputHead::SigmoidOffset), rng);
  const std::vector<AuctionState> states{{2, ItemSet::of({0, 2})}};
  const std::vector<int> agents{2};
  const auto fc = forward(p, encode_states(states, p, 3));
  const auto g = backward(p, fc, Eigen::MatrixXd::Zero(4, 1), agents);
  EXPECT_EQ(g.theta.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.input.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, SumsOverBatch) {
  Rng rng(7);
  auto p = init_mlp(small_spec(OutputHead::SoftplusOffset), rng);
  const AuctionState s{3, ItemSet::of({0, 1})};
  const Eigen::MatrixXd w1 = Eigen::MatrixXd::Random(4, 1);
  const auto one = backward(p, forward(p, encode_states(std::vector{s}, p, 3)), w1, std::vector{3});
  const std::vector<AuctionState> five(5, s);
  const auto all = backward(p, forward(p, encode_states(five, p, 3)), w1.replicate(1, 5), std::vector<int>(5, 3));
  EXPECT_TRUE(all.theta.isApprox(5.0 * one.theta, 1e-12));
}

TEST(OptStep, ZeroGradientLeavesParameters) {
  Rng rng(8);
  auto p = init_mlp(small_spec(OutputHead::Identity), rng);
  const auto before = p.theta;
  OptimizerState st(p.theta.size(), 1e-3);
  for (int i = 0; i < 10; ++i) opt_step(p, Eigen::VectorXd::Zero(p.theta.size()), st);
  EXPECT_EQ(p.theta, before);
}

TEST(OptStep, MovesAgainstGradient) {
  Rng rng(9);
  auto p = init_mlp(small_spec(OutputHead::Identity), rng);
  const auto before = p.theta;
  Eigen::VectorXd g(p.theta.size());
  for (Eigen::Index i = 0; i < g.size(); ++i) g[i] = i % 2 ? 0.7 : -0.2;
  OptimizerState st(p.theta.size(), 1e-3);
  for (int i = 0; i < 100; ++i) opt_step(p, g, st);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double moved = p.theta[i] - before[i];
    EXPECT_LT(moved * g[i], 0.0);
    EXPECT_NEAR(std::abs(moved), 0.1, 1e-6);  // Adam steps are lr-sized for a constant gradient
  }
}

TEST(OptStep, Deterministic) {
  Rng rng(10);
  auto a = init_mlp(small_spec(OutputHead::Identity), rng);
  auto b = a;
  OptimizerState sa(a.theta.size(), 1e-4), sb(b.theta.size(), 1e-4);
  Rng gr(11);
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd g(a.theta.size());
    for (Eigen::Index j = 0; j < g.size(); ++j) g[j] = gr.normal();
    opt_step(a, g, sa);
    opt_step(b, g, sb);
  }
  EXPECT_EQ(a.theta, b.theta);
}

TEST(OptStep, ShapeMismatchThrows) {
  Rng rng(12);
  auto p = init_mlp(small_spec(OutputHead::Identity), rng);
  OptimizerState st(p.theta.size());
  EXPECT_THROW(opt_step(p, Eigen::VectorXd::Zero(3), st), ContractViolation);
}

TEST(Checkpoint, RoundTrip) {
  Rng rng(13);
  const auto p = init_mlp(small_spec(OutputHead::SigmoidOffset), rng);
  std::stringstream ss;
  save_mlp(ss, p, "actor-full");
  std::string tag;
  const auto q = load_mlp(ss, &tag);
  EXPECT_EQ(tag, "actor-full");
  EXPECT_EQ(q.theta, p.theta);
  EXPECT_EQ(q.spec.head, OutputHead::SigmoidOffset);
  EXPECT_EQ(q.spec.d_emb, 4);
}

TEST(Checkpoint, RejectsGarbageAndTruncation) {
  std::stringstream bad("nope");
  EXPECT_THROW(load_mlp(bad), FormatError);
  Rng rng(14);
  std::stringstream ss;
  save_mlp(ss, init_mlp(small_spec(OutputHead::Identity), rng), "critic");
  const auto s = ss.str();
  std::stringstream cut(s.substr(0, s.size() - 8));
  EXPECT_THROW(load_mlp(cut), FormatError);
}
