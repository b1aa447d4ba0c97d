#include <gtest/gtest.h>

#include <cmath>

#include "gccspam/discriminator.hpp"
#include "gccspam/encoder.hpp"
#include "test_support.hpp"

using namespace gccspam;
using testing_support::numeric_gradient;
using testing_support::oracle_sentence;
using testing_support::relative_error;

namespace {

Eigen::MatrixXd random_mat(int r, int c, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal();
  return m;
}

EmbeddingTable toy_table(std::uint64_t seed, int d) {
  CharRecord a, b, c;
  a.ch = U'甲';
  a.pron = parse_pinyin("jia3");
  a.freq = 0.3;
  b.ch = U'乙';
  b.pron = parse_pinyin("yi3");
  b.freq = 0.2;
  c.ch = U'丙';
  c.pron = parse_pinyin("bing3");
  c.freq = 0.1;
  const auto net = build_network({a, b, c}, 0.7);
  Rng rng(seed);
  CharVectors base;
  for (char32_t ch : {U'甲', U'乙', U'丙'}) {
    Eigen::VectorXd v(d);
    for (int k = 0; k < d; ++k) v(k) = rng.normal();
    base[ch] = v;
  }
  return build_table(net, base, d);
}

}  // namespace

TEST(Attention, SingleRow) {
  Eigen::MatrixXd x(1, 3);
  x << 1, 2, 3;
  const auto a = attend(x);
  EXPECT_DOUBLE_EQ(a.weights(0, 0), 1.0);
  EXPECT_EQ(a.context, x);
}

TEST(Attention, IdenticalRowsAreUniform) {
  Eigen::MatrixXd x(2, 2);
  x << 0.3, -1.0, 0.3, -1.0;
  const auto a = attend(x);
  EXPECT_NEAR(a.weights(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(a.weights(1, 0), 0.5, 1e-15);
  EXPECT_TRUE(a.context.isApprox(x));
}

TEST(Attention, HandComputedTwoByTwo) {
  Eigen::MatrixXd x(2, 2);
  x << 1, 0, 0, 2;
  // logits: [[1/sqrt2, 0], [0, 4/sqrt2]]
  const double a00 = 1.0 / (1.0 + std::exp(-1.0 / std::sqrt(2.0)));
  const double a11 = 1.0 / (1.0 + std::exp(-4.0 / std::sqrt(2.0)));
  const auto a = attend(x);
  EXPECT_NEAR(a.weights(0, 0), a00, 1e-12);
  EXPECT_NEAR(a.weights(0, 1), 1 - a00, 1e-12);
  EXPECT_NEAR(a.weights(1, 1), a11, 1e-12);
  EXPECT_NEAR(a.context(0, 0), a00, 1e-12);
  EXPECT_NEAR(a.context(0, 1), 2 * (1 - a00), 1e-12);
  EXPECT_NEAR(a.context(1, 0), 1 - a11, 1e-12);
  EXPECT_NEAR(a.context(1, 1), 2 * a11, 1e-12);
}

TEST(Attention, Errors) {
  EXPECT_THROW(attend(Eigen::MatrixXd(0, 3)), Error);
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(2, 2);
  x(1, 1) = std::nan("");
  try {
    attend(x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::non_finite);
  }
}

TEST(Encode, SingleAndRepeatedCharacters) {
  const auto table = toy_table(1, 4);
  const auto one = encode(U"甲", table);
  EXPECT_TRUE(one.vector.isApprox(table.aggregated_vector(U'甲')));
  const auto rep = encode(U"甲甲甲甲", table);
  EXPECT_TRUE(rep.vector.isApprox(table.aggregated_vector(U'甲')));
  EXPECT_EQ(rep.length, 4u);
}

TEST(Encode, ThreeCharacterOracle) {
  const auto table = toy_table(2, 5);
  const auto e = encode(U"甲乙丙", table);
  EXPECT_LT((e.vector - oracle_sentence(table.lookup(U"甲乙丙"))).norm(), 1e-12);
}

TEST(Encode, UnknownCharactersUseZeroVector) {
  const auto table = toy_table(3, 4);
  EXPECT_TRUE(encode(U"zz", table).vector.isZero());
}

TEST(Encode, EmptyAndLong) {
  const auto table = toy_table(3, 4);
  try {
    encode(U"", table);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_input);
  }
  std::u32string s(600, U'甲');
  s[550] = U'乙';  // past the cut, so the result equals the all-甲 sentence
  EXPECT_EQ(encode(s, table).length, kMaxSequenceLength);
  EXPECT_TRUE(encode(s, table).vector.isApprox(table.aggregated_vector(U'甲')));
}

class AttentionProperties : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(AttentionProperties, RowStochasticAndPermutationInvariant) {
  Rng rng(GetParam());
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(9));
    const int d = 1 + static_cast<int>(rng.below(8));
    const auto x = random_mat(n, d, GetParam() * 100 + trial);
    const auto a = attend(x);
    EXPECT_TRUE((a.weights.array() >= 0).all());
    EXPECT_LT((a.weights.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Eigen::MatrixXd px(n, d);
    for (int i = 0; i < n; ++i) px.row(i) = x.row(perm[i]);
    const Eigen::VectorXd e1 = a.context.colwise().mean().transpose();
    const Eigen::VectorXd e2 = attend(px).context.colwise().mean().transpose();
    EXPECT_LT((e1 - e2).norm(), 1e-12);
    EXPECT_LT((e1 - oracle_sentence(x)).norm(), 1e-12);
  }
}

TEST_P(AttentionProperties, GradientMatchesFiniteDifferences) {
  const auto x0 = random_mat(4, 8, GetParam());
  auto f = [](const Eigen::MatrixXd& x) { return oracle_sentence(x).squaredNorm(); };
  const auto numeric = numeric_gradient(f, x0);
  {
    ag::Mat x = x0;
    ag::Mat g = ag::Mat::Zero(4, 8);
    ag::Tape t;
    auto e = encode_var(t, t.param(x, g));
    t.backward(ag::sum(t, ag::mul(t, e, e)));
    EXPECT_LT(relative_error(g, numeric), 1e-6);
  }
  {
    // Fused segment op over two stacked copies: each copy gets the same gradient.
    ag::Mat x(8, 8);
    x << x0, x0;
    ag::Mat g = ag::Mat::Zero(8, 8);
    ag::Tape t;
    auto e = ops::attention_pool_segments(t, t.param(x, g), {{0, 4}, {4, 4}});
    t.backward(ag::sum(t, ag::mul(t, e, e)));
    EXPECT_LT(relative_error(g.topRows(4), numeric), 1e-6);
    EXPECT_LT(relative_error(g.bottomRows(4), numeric), 1e-6);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, AttentionProperties, ::testing::Values(21, 22, 23, 24, 25));
