#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "gccspam/augment.hpp"
#include "gccspam/embeddings.hpp"
#include "test_support.hpp"

using namespace gccspam;
using testing_support::data_path;

namespace {

std::shared_ptr<const SimilarityNetwork> dict10_net() {
  static const auto net =
      std::make_shared<const SimilarityNetwork>(build_network(load_dictionary(data_path("dict10.tsv")), 0.7));
  return net;
}

// Predicts spam exactly when 钱 is present.
Discriminator money_model() {
  const auto net = dict10_net();
  CharVectors base;
  for (const auto& r : net->records()) base[r.ch] = Eigen::Vector2d(0.0, 1.0);
  base[U'钱'] = Eigen::Vector2d(1.0, 0.0);
  // ρ = 1 keeps every character on its own vector.
  Discriminator d(build_table(build_network(load_dictionary(data_path("dict10.tsv")), 1.0), base, 2), {});
  d.set_head(Eigen::Vector2d(40.0, 0.0), -5.0);
  return d;
}

class FixedClient : public AugmentClient {
 public:
  explicit FixedClient(std::string response) : response_(std::move(response)) {}
  std::string complete(const std::string& prompt) override {
    prompts.push_back(prompt);
    return response_;
  }
  std::string name() const override { return "fixed"; }
  std::vector<std::string> prompts;

 private:
  std::string response_;
};

class FailingClient : public AugmentClient {
 public:
  std::string complete(const std::string&) override {
    ++calls;
    throw Error(Errc::client_failure, "unreachable");
  }
  std::string name() const override { return "failing"; }
  int calls = 0;
};

AugmentationRequest fixture_request() {
  AugmentationRequest r;
  r.exemplars = {{U"加微信领钱", 1, 0.2}, {U"明天一起吃饭", 0, 0.7}};
  r.spam_count = 250;
  r.normal_count = 250;
  return r;
}

}  // namespace

TEST(MineErrors, PerfectAndConstantModels) {
  const auto d = money_model();
  const std::vector<LabeledSample> clean{{U"钱", 1}, {U"加钱", 1}, {U"微信", 0}, {U"言", 0}};
  EXPECT_TRUE(mine_errors(d, clean).empty());

  Discriminator half(build_table(*dict10_net(), {{U'微', Eigen::Vector2d(1.0, 0.0)}}, 2), {});
  const auto errors = mine_errors(half, clean);  // p = 0.5 counts as spam
  ASSERT_EQ(errors.size(), 2u);
  for (const auto& e : errors) {
    EXPECT_EQ(e.label, 0);
    EXPECT_DOUBLE_EQ(e.prob, 0.5);
  }
}

TEST(MineErrors, TenSampleFixtureMatchesManualComparison) {
  const auto d = money_model();
  // Spam without 钱 and normal with 钱 are the only mistakes.
  const std::vector<LabeledSample> set{{U"加钱", 1},   {U"钱钱", 1}, {U"加微信", 1}, {U"线", 1},   {U"浅钱", 1},
                                       {U"信言", 0}, {U"钱线", 0}, {U"微", 0},     {U"言钱", 0}, {U"V", 0}};
  const auto errors = mine_errors(d, set);
  std::vector<std::u32string> texts;
  for (const auto& e : errors) texts.push_back(e.text);
  EXPECT_EQ(texts, (std::vector<std::u32string>{U"加微信", U"线", U"钱线", U"言钱"}));
  for (const auto& e : errors) {
    // Re-predicting reproduces the mismatch.
    EXPECT_NE(d.classify(e.text), e.label);
    EXPECT_DOUBLE_EQ(d.predict(e.text), e.prob);
  }
}

TEST(Prompt, EmbedsExemplarsCountsAndRequirements) {
  AugmentationRequest one;
  one.exemplars = {{U"加微信领钱", 1, 0.3}};
  one.spam_count = 3;
  one.normal_count = 2;
  const auto p = build_prompt(one);
  EXPECT_NE(p.find("加微信领钱"), std::string::npos);
  for (const char* n : {"\n1. ", "\n2. ", "\n3. ", "\n4. ", "\n5. ", "\n6. "}) EXPECT_NE(p.find(n), std::string::npos);
  const auto big = build_prompt(fixture_request());
  EXPECT_NE(big.find("exactly 250 SPAM texts and 250 NORMAL texts"), std::string::npos);
}

TEST(Prompt, MatchesGoldenFile) {
  std::ifstream in(data_path("prompt_golden.txt"), std::ios::binary);
  ASSERT_TRUE(in);
  std::stringstream golden;
  golden << in.rdbuf();
  EXPECT_EQ(build_prompt(fixture_request()), golden.str());
}

TEST(Prompt, RejectsInvalidRequests) {
  auto r = fixture_request();
  r.spam_count = 0;
  EXPECT_THROW(build_prompt(r), Error);
  r = fixture_request();
  r.exemplars.clear();
  EXPECT_THROW(build_prompt(r), Error);
  r = fixture_request();
  r.exemplars.assign(101, r.exemplars.front());
  EXPECT_THROW(build_prompt(r), Error);
}

TEST(ParseResponse, SkipsMalformedLines) {
  const auto set = parse_response("SPAM\t加薇信\nthis line is chatter\nNORMAL\t明天见\n", 3, "fixed");
  ASSERT_EQ(set.samples.size(), 2u);
  EXPECT_EQ(set.skipped_lines, 1u);
  EXPECT_EQ(set.samples[0], (LabeledSample{U"加薇信", 1}));
  EXPECT_EQ(set.samples[1], (LabeledSample{U"明天见", 0}));
  EXPECT_EQ(set.epoch, 3);
  EXPECT_THROW(parse_response(""), Error);
  EXPECT_THROW(parse_response("junk\nSPAM\t\n"), Error);
}

TEST(ParseResponse, SerializeRoundTrip) {
  AugmentedSet set;
  set.epoch = 2;
  set.provenance = "mock";
  set.samples = {{U"加薇信", 1}, {U"明天见", 0}, {U"钱浅", 1}};
  EXPECT_EQ(parse_response(serialize(set), 2, "mock"), set);
}

TEST(MockClient, HonoursCountsAndSubstitutesSimilarCharacters) {
  MockClient mock(dict10_net());
  AugmentationRequest r;
  r.exemplars = {{U"加微信领钱", 1, 0.2}, {U"微信言", 0, 0.8}};
  r.spam_count = 7;
  r.normal_count = 4;
  const auto prompt = build_prompt(r);
  const auto raw = mock.complete(prompt);
  EXPECT_EQ(raw, mock.complete(prompt));  // deterministic per prompt
  const auto set = parse_response(raw);
  int spam = 0, normal = 0;
  const auto& net = *dict10_net();
  for (const auto& s : set.samples) {
    (s.label ? spam : normal) += 1;
    const std::u32string& src = s.label ? r.exemplars[0].text : r.exemplars[1].text;
    ASSERT_EQ(s.text.size(), src.size());
    EXPECT_NE(s.text, src);
    if (s.label == 0) {
      // Natural text: a reordering of normal exemplar characters only.
      EXPECT_TRUE(std::is_permutation(s.text.begin(), s.text.end(), src.begin()));
      continue;
    }
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (s.text[i] != src[i]) EXPECT_GT(net.similarity_or_zero(src[i], s.text[i]), 0.7);
    }
  }
  EXPECT_EQ(spam, 7);
  EXPECT_EQ(normal, 4);
}

TEST(StaticAugment, TargetEqualToSizeIsUnchanged) {
  FailingClient client;
  const std::vector<LabeledSample> corpus{{U"加钱", 1}, {U"微信", 0}};
  EXPECT_EQ(static_augment(corpus, client, 2), corpus);
  EXPECT_EQ(client.calls, 0);
}

TEST(StaticAugment, GrowsByExactlyTheFixedSet) {
  FixedClient client("SPAM\t加薇信\nNORMAL\t明天见\nSPAM\t钱浅\nNORMAL\t信言\n");
  const std::vector<LabeledSample> corpus{{U"加钱", 1}, {U"微信", 0}, {U"言", 0}};
  const auto out = static_augment(corpus, client, 7);
  ASSERT_EQ(out.size(), 7u);
  EXPECT_TRUE(std::equal(corpus.begin(), corpus.end(), out.begin()));
  const std::vector<LabeledSample> added(out.begin() + 3, out.end());
  EXPECT_EQ(added, (std::vector<LabeledSample>{{U"加薇信", 1}, {U"明天见", 0}, {U"钱浅", 1}, {U"信言", 0}}));
  ASSERT_EQ(client.prompts.size(), 1u);
  EXPECT_NE(client.prompts[0].find("exactly 2 SPAM texts and 2 NORMAL texts"), std::string::npos);
}

TEST(StaticAugment, MockSplitWithinOneAndFailureSurfaces) {
  MockClient mock(dict10_net());
  std::vector<LabeledSample> corpus{{U"加微信领钱", 1}, {U"微信言", 0}, {U"钱线", 1}, {U"信", 0}};
  AugmentOptions opt;
  opt.per_request = 4;
  const auto out = static_augment(corpus, mock, 13, opt);
  ASSERT_EQ(out.size(), 13u);
  int spam = 0;
  for (std::size_t i = corpus.size(); i < out.size(); ++i) spam += out[i].label;
  EXPECT_LE(std::abs(2 * spam - 9), 1);

  FailingClient failing;
  try {
    static_augment(corpus, failing, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::client_failure);
  }
  EXPECT_EQ(failing.calls, 3);
}

TEST(DynamicAugment, NoErrorsMeansNoRequest) {
  const auto d = money_model();
  FailingClient client;
  AugmentAccumulator acc;
  const std::vector<LabeledSample> train{{U"钱", 1}, {U"信", 0}};
  EXPECT_FALSE(dynamic_augment_epoch_hook(1, d, train, client, acc));
  EXPECT_EQ(client.calls, 0);
  EXPECT_TRUE(acc.sets().empty());
}

TEST(DynamicAugment, TwoEpochsAccumulateTaggedSetsAndReplay) {
  const auto d = money_model();
  MockClient mock(dict10_net());
  AugmentAccumulator acc;
  const std::vector<LabeledSample> train{{U"钱", 1}, {U"加微信", 1}, {U"信", 0}, {U"钱线", 0}};
  AugmentOptions opt;
  opt.per_request = 6;
  ASSERT_TRUE(dynamic_augment_epoch_hook(1, d, train, mock, acc, opt));
  ASSERT_TRUE(dynamic_augment_epoch_hook(2, d, train, mock, acc, opt));
  ASSERT_EQ(acc.sets().size(), 2u);
  EXPECT_EQ(acc.sets()[0].epoch, 1);
  EXPECT_EQ(acc.sets()[1].epoch, 2);
  EXPECT_EQ(acc.pool().size(), acc.sets()[0].samples.size() + acc.sets()[1].samples.size());
  for (const auto& s : acc.sets()) EXPECT_EQ(s.samples.size(), 6u);
  EXPECT_THROW(acc.append(acc.sets()[0]), Error);  // append-only, increasing epochs

  const auto dir = testing_support::temp_dir("replay");
  for (const auto& s : acc.sets()) save_augmented(s, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "augmented_epoch_1.tsv"));
  EXPECT_EQ(replay_accumulator(dir, "mock"), acc);
}

TEST(DynamicAugment, ClientFailureLeavesAccumulatorUnchanged) {
  const auto d = money_model();
  FailingClient client;
  AugmentAccumulator acc;
  const std::vector<LabeledSample> train{{U"加微信", 1}, {U"信", 0}};
  EXPECT_FALSE(dynamic_augment_epoch_hook(1, d, train, client, acc));
  EXPECT_EQ(client.calls, 3);
  EXPECT_TRUE(acc.sets().empty());
}
