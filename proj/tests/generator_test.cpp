#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "gccspam/generator.hpp"
#include "test_support.hpp"

using namespace gccspam;
using testing_support::data_path;
using testing_support::numeric_gradient;
using testing_support::recompute_logprob;
using testing_support::relative_error;

namespace {

SimilarityNetwork fixture_net(double rho = 0.7) { return build_network(load_dictionary(data_path("dict10.tsv")), rho); }

CharVectors random_base(const SimilarityNetwork& net, int d, std::uint64_t seed) {
  Rng rng(seed);
  CharVectors base;
  for (const auto& r : net.records()) {
    Eigen::VectorXd v(d);
    for (int k = 0; k < d; ++k) v(k) = rng.normal();
    base[r.ch] = v;
  }
  return base;
}

GeneratorOptions small_options() {
  GeneratorOptions o;
  o.model_dim = 16;
  o.heads = 2;
  o.layers = 1;
  o.ffn_dim = 32;
  return o;
}

Generator make_generator(GeneratorOptions opt = small_options(), std::uint64_t seed = 1) {
  const auto net = fixture_net();
  const auto table = build_table(net, random_base(net, 4, 3), 4);
  return Generator(table.chars(), net, opt, seed);
}

// Discriminator that scores sentences by how much of `target` they contain.
Discriminator penalizing_discriminator(const SimilarityNetwork& net, char32_t target) {
  CharVectors base;
  for (const auto& r : net.records()) base[r.ch] = Eigen::Vector3d(0.0, 1.0, 0.0);
  base[target] = Eigen::Vector3d(1.0, 0.0, 0.0);
  // rho = 1 keeps every character on its own vector.
  auto own = build_network(std::vector<CharRecord>(net.records().begin(), net.records().end()), 1.0);
  Discriminator d(build_table(own, base, 3), {});
  d.set_head(Eigen::Vector3d(8.0, 0.0, 0.0), -2.0);
  return d;
}

std::vector<std::u32string> toy_spam() {
  return {U"微信加钱", U"加微信", U"微言钱线", U"钱微加", U"言微信浅", U"线微", U"微加信言", U"浅微钱"};
}

}  // namespace

TEST(Perturb, ZeroMaskProbabilityIsIdentity) {
  auto g = make_generator();
  const std::u32string s = U"微信加钱V";
  Rng rng(5);
  const auto [p, logits] = g.policy(s);
  const auto tr = sample_trace(g, s, Eigen::VectorXd::Zero(5), logits, rng);
  EXPECT_EQ(tr.perturbed, s);
  EXPECT_EQ(tr.logprob, 0.0);
  EXPECT_TRUE(tr.considered.empty());
}

TEST(Perturb, ForcedPathReplacesEveryPosition) {
  auto g = make_generator();
  const std::u32string s = U"微信加言";
  const int target = g.id(U'钱');
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(4, g.vocab_size());
  logits.col(target).setConstant(std::numeric_limits<double>::infinity());
  Rng rng(5);
  const auto tr = sample_trace(g, s, Eigen::VectorXd::Ones(4), logits, rng);
  EXPECT_EQ(tr.perturbed, U"钱钱钱钱");
  EXPECT_EQ(tr.logprob, 0.0);  // sum of log P(c~_i) = sum log 1
  // Finite logits: logprob is the sum of log-softmax entries.
  logits = Eigen::MatrixXd::Zero(4, g.vocab_size());
  logits.col(target).setConstant(2.0);
  const auto tr2 = sample_trace(g, s, Eigen::VectorXd::Ones(4), logits, rng);
  double expect = 0.0;
  for (int i = 0; i < 4; ++i) {
    const int k = tr2.replacements[i];
    const double z = std::exp(2.0) + (g.vocab_size() - 2);  // the unknown symbol is excluded
    expect += (k == target ? 2.0 : 0.0) - std::log(z);
  }
  EXPECT_NEAR(tr2.logprob, expect, 1e-12);
}

TEST(Perturb, NonChinesePositionsAreNeverMasked) {
  auto g = make_generator();
  const std::u32string s = U"V7微a信";
  Rng rng(1);
  const auto [p, logits] = g.policy(s);
  const auto tr = sample_trace(g, s, Eigen::VectorXd::Ones(5), logits, rng);
  EXPECT_EQ(tr.masks, (std::vector<int>{0, 0, 1, 0, 1}));
  EXPECT_EQ(tr.perturbed[0], U'V');
  EXPECT_EQ(tr.perturbed[1], U'7');
  EXPECT_EQ(tr.perturbed[3], U'a');
  EXPECT_EQ(tr.considered, (std::vector<int>{2, 4}));
}

TEST(Perturb, DeterministicForSeedAndRejectsEmpty) {
  auto g = make_generator();
  const auto a = perturb(g, U"微信加钱浅", 9);
  const auto b = perturb(g, U"微信加钱浅", 9);
  EXPECT_EQ(a.perturbed, b.perturbed);
  EXPECT_EQ(a.logprob, b.logprob);
  try {
    perturb(g, U"", 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_input);
  }
}

TEST(Perturb, ThousandTracesAreOneHotAndConsistent) {
  auto opt = small_options();
  opt.initial_mask_rate = 0.5;
  auto g = make_generator(opt, 2);
  const std::u32string sentences[] = {U"微信加钱", U"V微言钱线7", U"浅", U"加微信薇威言"};
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto& s = sentences[seed % 4];
    const auto tr = perturb(g, s, seed);
    ASSERT_EQ(tr.perturbed.size(), s.size());
    ASSERT_EQ(tr.masks.size(), s.size());
    EXPECT_LE(tr.logprob, 0.0);
    EXPECT_NEAR(tr.logprob, recompute_logprob(tr), 1e-6);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!tr.masks[i]) {
        EXPECT_EQ(tr.perturbed[i], s[i]);
        continue;
      }
      // Hard sample: exactly one argmax of r + g, and it is the stored index.
      const Eigen::VectorXd r = g.policy(s).second.row(static_cast<Eigen::Index>(i)).transpose() +
                                g.candidate_mask(s[i]).transpose();
      const Eigen::VectorXd score = r + tr.gumbel[i];
      Eigen::Index best = 0;
      const double top = score.maxCoeff(&best);
      EXPECT_EQ(best, tr.replacements[i]);
      EXPECT_EQ((score.array() == top).count(), 1);
      EXPECT_EQ(tr.perturbed[i], g.vocab()[tr.replacements[i]]);
    }
  }
}

TEST(Perturb, NeighbourCandidatesStayInNeighbourhood) {
  auto opt = small_options();
  opt.initial_mask_rate = 0.9;
  opt.candidates = CandidateMode::neighbors;
  auto g = make_generator(opt, 4);
  const auto& net = g.network();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto tr = perturb(g, U"微信钱浅线", seed);
    for (int i : tr.considered) {
      const char32_t c = tr.original[i];
      const char32_t r = tr.perturbed[i];
      bool ok = r == c;
      for (const auto& n : net.neighbors(c)) ok = ok || n.ch == r;
      EXPECT_TRUE(ok);
    }
  }
}

TEST(Reward, Examples) {
  EXPECT_NEAR(reward(1.0 - 1e-9), 1e-9, 1e-15);
  EXPECT_DOUBLE_EQ(reward(0.5), 0.5);
  EXPECT_DOUBLE_EQ(reward(0.3), 0.7);
  EXPECT_THROW(reward(0.0), Error);
  EXPECT_THROW(reward(1.0), Error);
  EXPECT_THROW(reward(std::nan("")), Error);
  double last = 2.0;
  for (double d = 0.01; d < 1.0; d += 0.01) {
    EXPECT_LT(reward(d), last);
    last = reward(d);
  }
}

TEST(RlLoss, Examples) {
  PerturbationTrace a, b, c;
  a.logprob = -2.0;
  b.logprob = -0.5;
  c.logprob = -1.25;
  const std::vector<PerturbationTrace> one{a};
  const std::vector<double> r1{0.7};
  EXPECT_DOUBLE_EQ(rl_loss(one, r1, 0.0), 1.4);
  const std::vector<PerturbationTrace> three{a, b, c};
  const std::vector<double> equal{0.4, 0.4, 0.4};
  EXPECT_DOUBLE_EQ(rl_loss(three, equal, 0.4), 0.0);
  const std::vector<double> r3{0.9, 0.1, 0.5};
  // -( -2*0.5 + -0.5*(-0.3) + -1.25*0.1 ) / 3 = (1.0 - 0.15 + 0.125) / 3
  EXPECT_NEAR(rl_loss(three, r3, 0.4), 0.975 / 3.0, 1e-15);
  EXPECT_THROW(rl_loss(three, r1, 0.0), Error);
}

TEST(SimLoss, Examples) {
  const auto net = fixture_net();
  PerturbationTrace tr;
  tr.original = U"钱V";
  tr.perturbed = U"浅V";
  EXPECT_EQ(sim_loss(tr, net), 0.0);  // V empty
  tr.considered = {0};
  EXPECT_NEAR(sim_loss(tr, net), 0.2, 1e-12);  // sim(钱, 浅) = 0.8
  tr.perturbed = U"钱V";
  EXPECT_EQ(sim_loss(tr, net), 0.0);
  tr.perturbed = U"xV";
  EXPECT_EQ(sim_loss(tr, net), 1.0);  // outside the dictionary
}

TEST(GeneratorLoss, Examples) {
  EXPECT_DOUBLE_EQ(generator_loss(1.4, 0.3, 0.0), 1.4);
  EXPECT_NEAR(generator_loss(1.4, 0.2, 1.0), 1.6, 1e-15);
  const std::vector<PerturbationTrace> t{[] {
    PerturbationTrace x;
    x.logprob = -3.0;
    return x;
  }()};
  const std::vector<double> r{0.25};
  EXPECT_DOUBLE_EQ(generator_loss(rl_loss(t, r, 0.0), 0.5, 2.0), 0.75 + 1.0);
  EXPECT_THROW(generator_loss(1.0, 0.1, -1.0), Error);
  EXPECT_THROW(generator_loss(std::nan(""), 0.1, 1.0), Error);
}

TEST(SegmentAttention, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  auto rnd = [&](int r, int c) {
    ag::Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal();
    return m;
  };
  const ag::Mat q0 = rnd(7, 4), k0 = rnd(7, 4), v0 = rnd(7, 3), w = rnd(7, 3);
  const std::vector<std::pair<int, int>> segs{{0, 3}, {3, 1}, {4, 3}};
  auto value = [&](const ag::Mat& q, const ag::Mat& k, const ag::Mat& v) {
    ag::Tape t;
    return t.value(ops::segment_attention(t, t.constant(q), t.constant(k), t.constant(v), segs, 0.5)).cwiseProduct(w).sum();
  };
  ag::Mat q = q0, k = k0, v = v0;
  ag::Mat gq = ag::Mat::Zero(7, 4), gk = ag::Mat::Zero(7, 4), gv = ag::Mat::Zero(7, 3);
  ag::Tape t;
  auto out = ops::segment_attention(t, t.param(q, gq), t.param(k, gk), t.param(v, gv), segs, 0.5);
  t.backward(ag::sum(t, ag::mul(t, out, t.constant(w))));
  EXPECT_LT(relative_error(gq, numeric_gradient([&](const ag::Mat& x) { return value(x, k0, v0); }, q0)), 1e-6);
  EXPECT_LT(relative_error(gk, numeric_gradient([&](const ag::Mat& x) { return value(q0, x, v0); }, k0)), 1e-6);
  EXPECT_LT(relative_error(gv, numeric_gradient([&](const ag::Mat& x) { return value(q0, k0, x); }, v0)), 1e-6);
}

class SurrogateGradient : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(SurrogateGradient, MatchesFiniteDifferences) {
  auto opt = small_options();
  opt.initial_mask_rate = 0.5;
  auto g = make_generator(opt, GetParam());
  const auto spam = toy_spam();
  const auto b = g.make_batch(spam);
  Rng rng(GetParam());
  SampledBatch sb;
  {
    ag::Tape t;
    const auto h = g.states(t, b);
    const Eigen::VectorXd ml = t.value(g.mask_logits(t, h)).col(0);
    sb = sample_batch(g, b, ml, [&](const std::vector<int>& rows) {
      ag::Tape s;
      return s.value(g.replacement_logits(s, s.constant(t.value(h)(rows, Eigen::all))));
    }, rng);
  }
  ASSERT_FALSE(sb.masked_rows.empty());
  std::vector<double> adv;
  for (std::size_t i = 0; i < sb.traces.size(); ++i) adv.push_back(0.3 - 0.1 * static_cast<double>(i));
  auto objective = [&]() {
    ag::Tape t;
    const auto obj = generator_objective(t, g, g.states(t, b), sb, adv, 1.5, 0.7, false);
    return t.value(obj.total)(0, 0);
  };
  g.zero_grads();
  {
    ag::Tape t;
    const auto obj = generator_objective(t, g, g.states(t, b), sb, adv, 1.5, 0.7, false);
    t.backward(obj.total);
  }
  // The tape value of the RL part equals rl_loss over the sampled traces.
  {
    ag::Tape t;
    const auto obj = generator_objective(t, g, g.states(t, b), sb, adv, 0.0, 0.7, true);
    std::vector<double> rewards;
    for (double a : adv) rewards.push_back(a + 0.2);
    EXPECT_NEAR(t.value(obj.rl)(0, 0), rl_loss(sb.traces, rewards, 0.2), 1e-9);
    double hard = 0.0;
    for (const auto& tr : sb.traces) hard += sim_loss(tr, g.network());
    const auto obj2 = generator_objective(t, g, g.states(t, b), sb, adv, 1.0, 0.7, true);
    EXPECT_NEAR(t.value(obj2.sim)(0, 0), hard / static_cast<double>(sb.traces.size()), 1e-12);
  }
  for (auto* p : g.parameters()) {
    if (p->name != "mask.w" && p->name != "replace.w" && p->name != "layer0.wq" && p->name != "embed" &&
        p->name != "layer0.w1") {
      continue;
    }
    const ag::Mat keep = p->value;
    const ag::Mat analytic = p->grad;
    auto f = [&](const ag::Mat& x) {
      p->value = x;
      return objective();
    };
    const ag::Mat numeric = numeric_gradient(f, keep, 1e-6);
    p->value = keep;
    EXPECT_LT(relative_error(analytic, numeric), 1e-4) << p->name;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, SurrogateGradient, ::testing::Values(1, 2, 3));

TEST(GeneratorStep, ZeroLearningRateAndFrozenDiscriminator) {
  auto opt = small_options();
  opt.learning_rate = 0.0;
  auto g = make_generator(opt, 5);
  const auto d = penalizing_discriminator(g.network(), U'微');
  const auto before = g.parameter_hash();
  const auto d_before = d.parameter_hash();
  auto adam = make_generator_optimizer(opt);
  RewardBaseline baseline;
  Rng rng(1);
  const auto spam = toy_spam();
  for (int i = 0; i < 3; ++i) generator_step(g, spam, d, adam, baseline, rng);
  EXPECT_EQ(g.parameter_hash(), before);
  EXPECT_EQ(d.parameter_hash(), d_before);
}

TEST(GeneratorStep, LearnsToEvadePenalizingDiscriminator) {
  auto opt = small_options();
  opt.learning_rate = 0.01;
  opt.lambda_sim = 0.0;
  auto g = make_generator(opt, 6);
  const auto d = penalizing_discriminator(g.network(), U'微');
  auto adam = make_generator_optimizer(opt);
  RewardBaseline baseline;
  Rng rng(2);
  const auto spam = toy_spam();
  double early = 0.0, late = 0.0;
  for (int step = 0; step < 200; ++step) {
    const auto res = generator_step(g, spam, d, adam, baseline, rng);
    const auto& diag = res.diagnostics;
    EXPECT_GE(diag.mask_rate, 0.0);
    EXPECT_LE(diag.mask_rate, 1.0);
    EXPECT_GE(diag.sim, -1e-12);
    EXPECT_LE(diag.sim, 1.0 + 1e-12);
    if (step < 20) early += diag.mean_reward / 20;
    if (step >= 180) late += diag.mean_reward / 20;
  }
  EXPECT_GT(late, early + 0.1);
}

TEST(GeneratorStep, SimilarityWeightRaisesSubstitutionSimilarity) {
  auto mean_sim_after_training = [](double lambda_sim, std::uint64_t seed) {
    auto opt = small_options();
    opt.learning_rate = 0.01;
    opt.lambda_sim = lambda_sim;
    auto g = make_generator(opt, seed);
    const auto d = penalizing_discriminator(g.network(), U'微');
    auto adam = make_generator_optimizer(opt);
    RewardBaseline baseline;
    Rng rng(seed);
    const auto spam = toy_spam();
    for (int step = 0; step < 150; ++step) generator_step(g, spam, d, adam, baseline, rng);
    double total = 0.0;
    int count = 0;
    for (std::uint64_t k = 0; k < 100; ++k) {
      const auto tr = perturb(g, spam[k % spam.size()], k);
      for (int i : tr.considered) {
        total += g.network().similarity_or_zero(tr.original[i], tr.perturbed[i]);
        ++count;
      }
    }
    return count ? total / count : 1.0;
  };
  double strong = 0.0, none = 0.0;
  for (std::uint64_t seed : {11, 12, 13}) {
    strong += mean_sim_after_training(10.0, seed);
    none += mean_sim_after_training(0.0, seed);
  }
  EXPECT_GT(strong, none);
}

TEST(GeneratorCheckpoint, RoundTrip) {
  auto g = make_generator();
  std::stringstream ss;
  save_generator(g, ss);
  EXPECT_TRUE(ss.str().starts_with("gccspam-generator\t1\n"));
  auto back = load_generator(ss);
  EXPECT_EQ(back.vocab(), g.vocab());
  EXPECT_EQ(back.parameter_hash(), g.parameter_hash());
  EXPECT_TRUE(back.network() == g.network());
  const auto a = perturb(g, U"微信加钱", 3);
  const auto b = perturb(back, U"微信加钱", 3);
  EXPECT_EQ(a.perturbed, b.perturbed);
  EXPECT_DOUBLE_EQ(a.logprob, b.logprob);
}

TEST(GeneratorCheckpoint, RejectsCorruptInput) {
  std::istringstream bad("gccspam-generator\t1\n[meta]\nmodel_dim=16\n");
  EXPECT_THROW(load_generator(bad), Error);
  std::istringstream junk("hello\n");
  EXPECT_THROW(load_generator(junk), Error);
}
