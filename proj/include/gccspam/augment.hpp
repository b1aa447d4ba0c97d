#pragma once

// LLM-style data augmentation: mine misclassified training samples, ask a
// text-generation client for look-alike samples, parse them back.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <regex>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gccspam/charsim.hpp"
#include "gccspam/corpus.hpp"
#include "gccspam/discriminator.hpp"
#include "gccspam/error.hpp"
#include "gccspam/log.hpp"
#include "gccspam/rng.hpp"
#include "gccspam/utf8.hpp"

namespace gccspam {

struct ErrorSample {
  std::u32string text;
  int label = 0;
  double prob = 0.0;  // predicted spam probability
};

inline std::vector<ErrorSample> mine_errors(const Discriminator& d, std::span<const LabeledSample> train) {
  std::vector<ErrorSample> out;
  const double thr = d.options().threshold;
  for (const auto& s : train) {
    const double p = d.predict(s.text);
    if ((p >= thr ? 1 : 0) != s.label) out.push_back({s.text, s.label, p});
  }
  return out;
}

inline constexpr std::size_t kMaxExemplars = 100;

struct AugmentationRequest {
  std::vector<ErrorSample> exemplars;
  int spam_count = 0;
  int normal_count = 0;
};

inline void validate(const AugmentationRequest& r) {
  if (r.exemplars.empty()) throw Error(Errc::invalid_argument, "augmentation request has no exemplars");
  if (r.exemplars.size() > kMaxExemplars) throw Error(Errc::invalid_argument, "too many exemplars (max 100)");
  if (r.spam_count <= 0 || r.normal_count <= 0) {
    throw Error(Errc::invalid_argument, "augmentation counts must be positive");
  }
}

inline std::string_view label_name(int label) { return label == 1 ? "SPAM" : "NORMAL"; }

inline std::string build_prompt(const AugmentationRequest& r) {
  validate(r);
  std::ostringstream p;
  p << "You are helping build training data for a Chinese spam text classifier.\n"
       "Below are example texts, one per line, each written as LABEL<TAB>text where LABEL is SPAM or NORMAL.\n"
       "<examples>\n";
  for (const auto& e : r.exemplars) p << label_name(e.label) << '\t' << utf8::encode(e.text) << '\n';
  p << "</examples>\n"
       "Write new texts that satisfy all of the following requirements.\n"
       "1. Match the writing style of the examples with the same label.\n"
       "2. Keep the meaning close to the examples, but never copy an example verbatim.\n"
       "3. Replace some characters with characters that look alike or sound alike (similar glyph or similar "
       "pinyin).\n"
       "4. Keep each text about as long as the examples.\n"
       "5. SPAM texts may read unnaturally; NORMAL texts must read naturally.\n"
    << "6. Produce exactly " << r.spam_count << " SPAM texts and " << r.normal_count << " NORMAL texts.\n"
    << "Output one text per line as LABEL<TAB>text and nothing else.\n";
  return p.str();
}

struct AugmentedSet {
  int epoch = 0;
  std::vector<LabeledSample> samples;
  std::string provenance;
  std::size_t skipped_lines = 0;

  bool operator==(const AugmentedSet& o) const {
    return epoch == o.epoch && samples == o.samples && provenance == o.provenance;
  }
};

inline AugmentedSet parse_response(std::string_view raw, int epoch = 0, std::string provenance = {}) {
  AugmentedSet set;
  set.epoch = epoch;
  set.provenance = std::move(provenance);
  std::istringstream in{std::string(raw)};
  std::string line;
  while (std::getline(in, line)) {
    line = strip_cr(std::move(line));
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    const std::string label = tab == std::string::npos ? std::string() : line.substr(0, tab);
    std::u32string text;
    if (tab != std::string::npos && utf8::is_valid(std::string_view(line).substr(tab + 1))) {
      text = utf8::decode(std::string_view(line).substr(tab + 1));
    }
    if ((label != "SPAM" && label != "NORMAL") || text.empty()) {
      ++set.skipped_lines;
      continue;
    }
    set.samples.push_back({std::move(text), label == "SPAM" ? 1 : 0});
  }
  if (set.skipped_lines > 0) log::warn("augmentation response: skipped ", set.skipped_lines, " malformed line(s)");
  if (set.samples.empty()) throw Error(Errc::parse_error, "augmentation response has no parsable lines");
  return set;
}

inline std::string serialize(const AugmentedSet& set) {
  std::string out;
  for (const auto& s : set.samples) {
    out += label_name(s.label);
    out += '\t';
    out += utf8::encode(s.text);
    out += '\n';
  }
  return out;
}

// Keeps at most the requested number per class, in response order.
inline void enforce_split(AugmentedSet& set, int spam, int normal) {
  std::vector<LabeledSample> kept;
  int s = 0, n = 0;
  for (auto& x : set.samples) {
    int& have = x.label == 1 ? s : n;
    if (have < (x.label == 1 ? spam : normal)) {
      ++have;
      kept.push_back(std::move(x));
    }
  }
  if (s < spam || n < normal) {
    log::warn("augmentation returned ", s, " spam / ", n, " normal of ", spam, " / ", normal, " requested");
  }
  set.samples = std::move(kept);
}

inline std::filesystem::path augmented_file(const std::filesystem::path& dir, int epoch) {
  return dir / ("augmented_epoch_" + std::to_string(epoch) + ".tsv");
}

inline void save_augmented(const AugmentedSet& set, const std::filesystem::path& dir) {
  std::ofstream out(augmented_file(dir, set.epoch), std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + augmented_file(dir, set.epoch).string());
  out << serialize(set);
}

// ---------------------------------------------------------------------------
// Clients.

class AugmentClient {
 public:
  virtual ~AugmentClient() = default;
  // Raw completion text; throws Error(client_failure) on transport errors.
  virtual std::string complete(const std::string& prompt) = 0;
  virtual std::string name() const = 0;
};

inline std::string complete_with_retries(AugmentClient& client, const std::string& prompt, int attempts = 3) {
  std::string last;
  for (int i = 1; i <= attempts; ++i) {
    try {
      return client.complete(prompt);
    } catch (const Error& e) {
      if (e.code() != Errc::client_failure) throw;
      last = e.what();
      log::warn("augmentation client ", client.name(), " attempt ", i, "/", attempts, " failed: ", last);
    }
  }
  throw Error(Errc::client_failure, "augmentation client failed after " + std::to_string(attempts) + " attempts: " + last);
}

// Offline stand-in for a text-generation model. Reads the exemplars and the
// requested counts back out of the prompt. SPAM outputs are spam exemplars
// with some characters swapped for similar ones; NORMAL outputs must stay
// natural, so they splice the head of one normal exemplar onto the tail of
// another without substitutions. Deterministic for a given prompt and seed.
class MockClient : public AugmentClient {
 public:
  struct Options {
    double spam_rate = 0.3;
    std::uint64_t seed = 42;
  };

  MockClient(std::shared_ptr<const SimilarityNetwork> net, Options opt) : net_(std::move(net)), opt_(opt) {}
  explicit MockClient(std::shared_ptr<const SimilarityNetwork> net) : MockClient(std::move(net), Options{}) {}

  std::string name() const override { return "mock"; }

  std::string complete(const std::string& prompt) override {
    std::vector<LabeledSample> pool[2];
    const auto open = prompt.find("<examples>\n");
    const auto close = prompt.find("</examples>");
    if (open == std::string::npos || close == std::string::npos || close < open) {
      throw Error(Errc::client_failure, "mock client: prompt has no examples block");
    }
    std::istringstream block(prompt.substr(open + 11, close - open - 11));
    std::string line;
    while (std::getline(block, line)) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) continue;
      const auto label = line.substr(0, tab);
      if (label != "SPAM" && label != "NORMAL") continue;
      pool[label == "SPAM" ? 1 : 0].push_back({utf8::decode(line.substr(tab + 1)), label == "SPAM"});
    }
    static const std::regex counts(R"(exactly (\d+) SPAM texts and (\d+) NORMAL texts)");
    std::smatch m;
    if (!std::regex_search(prompt, m, counts)) throw Error(Errc::client_failure, "mock client: no counts in prompt");
    const int want[2] = {std::stoi(m[2]), std::stoi(m[1])};

    std::uint64_t h = 1469598103934665603ULL;
    for (char c : prompt) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
    Rng rng(mix_seed(opt_.seed, h));
    std::string out;
    for (int label : {1, 0}) {
      const auto& src = pool[label];
      if (src.empty()) continue;
      for (int k = 0; k < want[label]; ++k) {
        const auto& ex = src[rng.below(src.size())];
        out += label_name(label);
        out += '\t';
        out += utf8::encode(label == 1 ? substitute(ex.text, opt_.spam_rate, rng) : splice(ex.text, src, rng));
        out += '\n';
      }
    }
    return out;
  }

 private:
  std::u32string substitute(const std::u32string& s, double rate, Rng& rng) const {
    std::u32string t = s;
    std::vector<std::size_t> swappable;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (net_->is_chinese(s[i]) && others(s[i]) > 0) swappable.push_back(i);
    }
    bool changed = false;
    for (std::size_t i : swappable) {
      if (rng.bernoulli(rate)) changed |= swap(t, i, rng);
    }
    // Never return an exemplar verbatim when a swap is possible.
    if (!changed && !swappable.empty()) swap(t, swappable[rng.below(swappable.size())], rng);
    return t;
  }

  static std::u32string splice(const std::u32string& head, const std::vector<LabeledSample>& pool, Rng& rng) {
    const auto& tail = pool[rng.below(pool.size())].text;
    const std::size_t cut = head.size() / 2;
    std::u32string t = head.substr(0, cut) + tail.substr(std::min(cut, tail.size()));
    if (t == head && head.size() > 1) std::rotate(t.begin(), t.begin() + 1, t.end());
    return t.empty() ? head : t;
  }

  std::size_t others(char32_t c) const {
    std::size_t n = 0;
    for (const auto& nb : net_->neighbors(c)) n += nb.ch != c;
    return n;
  }

  bool swap(std::u32string& t, std::size_t i, Rng& rng) const {
    std::vector<char32_t> cands;
    for (const auto& nb : net_->neighbors(t[i])) {
      if (nb.ch != t[i]) cands.push_back(nb.ch);
    }
    if (cands.empty()) return false;
    t[i] = cands[rng.below(cands.size())];
    return true;
  }

  std::shared_ptr<const SimilarityNetwork> net_;
  Options opt_;
};

// ---------------------------------------------------------------------------
// Static and dynamic augmentation.

struct AugmentOptions {
  int per_request = 500;  // samples per request, split evenly between classes
  std::size_t exemplars = kMaxExemplars;
  int attempts = 3;
  std::uint64_t seed = 42;
};

inline std::pair<int, int> split_counts(int total) { return {total - total / 2, total / 2}; }

// Grows the corpus to target_size with generated samples. Exemplars are
// drawn at random from the corpus (no model exists yet to mine errors).
inline std::vector<LabeledSample> static_augment(std::vector<LabeledSample> corpus, AugmentClient& client,
                                                 std::size_t target_size, const AugmentOptions& opt = {}) {
  if (target_size <= corpus.size()) return corpus;
  if (corpus.empty()) throw Error(Errc::empty_input, "static augmentation needs a non-empty corpus");
  Rng rng(mix_seed(opt.seed, 0x57A71C));
  const std::size_t real = corpus.size();
  std::size_t request = 0;
  while (corpus.size() < target_size) {
    const int want = static_cast<int>(std::min<std::size_t>(target_size - corpus.size(), opt.per_request));
    auto [spam, normal] = split_counts(want);
    if (normal == 0) {
      // A single missing sample: ask for one of each and keep one.
      normal = 1;
    }
    std::vector<std::size_t> idx(real);
    for (std::size_t i = 0; i < real; ++i) idx[i] = i;
    rng.shuffle(idx);
    AugmentationRequest req;
    req.spam_count = spam;
    req.normal_count = normal;
    for (std::size_t i = 0; i < std::min(opt.exemplars, real); ++i) {
      const auto& s = corpus[idx[i]];
      req.exemplars.push_back({s.text, s.label, static_cast<double>(s.label)});
    }
    auto set = parse_response(complete_with_retries(client, build_prompt(req), opt.attempts), 0, client.name());
    enforce_split(set, spam, normal);
    const std::size_t before = corpus.size();
    for (auto& s : set.samples) {
      if (corpus.size() >= target_size) break;
      corpus.push_back(std::move(s));
    }
    ++request;
    if (corpus.size() == before) {
      log::warn("static augmentation stopped at ", corpus.size(), " samples: client returned nothing usable");
      break;
    }
  }
  log::info("static augmentation: ", corpus.size() - real, " generated sample(s) in ", request, " request(s)");
  return corpus;
}

// Append-only store of per-epoch augmented sets.
class AugmentAccumulator {
 public:
  void append(AugmentedSet set) {
    if (!sets_.empty() && set.epoch <= sets_.back().epoch) {
      throw Error(Errc::invalid_argument, "augmented sets must arrive in increasing epoch order");
    }
    for (auto& s : set.samples) pool_.push_back(s);
    sets_.push_back(std::move(set));
  }

  const std::vector<AugmentedSet>& sets() const { return sets_; }
  const std::vector<LabeledSample>& pool() const { return pool_; }
  bool empty() const { return pool_.empty(); }

  bool operator==(const AugmentAccumulator& o) const { return sets_ == o.sets_; }

 private:
  std::vector<AugmentedSet> sets_;
  std::vector<LabeledSample> pool_;
};

// Rebuilds an accumulator from augmented_epoch_<n>.tsv files in a directory.
inline AugmentAccumulator replay_accumulator(const std::filesystem::path& dir, const std::string& provenance) {
  std::map<int, std::filesystem::path> files;
  static const std::regex name(R"(augmented_epoch_(\d+)\.tsv)");
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string f = e.path().filename().string();
    if (std::regex_match(f, m, name)) files[std::stoi(m[1])] = e.path();
  }
  AugmentAccumulator acc;
  for (const auto& [epoch, path] : files) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    acc.append(parse_response(ss.str(), epoch, provenance));
  }
  return acc;
}

// Mines the model's training errors and requests look-alike samples. The
// exemplar list is padded with random samples of a class the errors do not
// cover, so the style of both classes reaches the client. Client failure
// leaves the accumulator untouched. Returns whether a set was appended.
inline bool dynamic_augment_epoch_hook(int epoch, const Discriminator& model, std::span<const LabeledSample> train,
                                       AugmentClient& client, AugmentAccumulator& acc,
                                       const AugmentOptions& opt = {}) {
  auto errors = mine_errors(model, train);
  if (errors.empty()) {
    log::info("epoch ", epoch, ": no training errors, no augmentation request");
    return false;
  }
  Rng rng(mix_seed(opt.seed, 0xD7A00 + static_cast<std::uint64_t>(epoch)));
  rng.shuffle(errors);
  if (errors.size() > opt.exemplars) errors.resize(opt.exemplars);
  for (int label : {0, 1}) {
    const bool covered = std::any_of(errors.begin(), errors.end(), [&](const ErrorSample& e) { return e.label == label; });
    if (covered) continue;
    std::vector<const LabeledSample*> cls;
    for (const auto& s : train) {
      if (s.label == label) cls.push_back(&s);
    }
    const std::size_t pad = std::min<std::size_t>({cls.size(), 10, opt.exemplars});
    for (std::size_t k = 0; k < pad; ++k) {
      const auto* s = cls[rng.below(cls.size())];
      if (errors.size() >= opt.exemplars) errors.erase(errors.begin());
      errors.push_back({s->text, s->label, model.predict(s->text)});
    }
  }
  AugmentationRequest req;
  req.exemplars = std::move(errors);
  std::tie(req.spam_count, req.normal_count) = split_counts(std::max(opt.per_request, 2));
  AugmentedSet set;
  try {
    set = parse_response(complete_with_retries(client, build_prompt(req), opt.attempts), epoch, client.name());
  } catch (const Error& e) {
    if (e.code() != Errc::client_failure && e.code() != Errc::parse_error) throw;
    log::warn("epoch ", epoch, ": augmentation skipped: ", e.what());
    return false;
  }
  enforce_split(set, req.spam_count, req.normal_count);
  acc.append(std::move(set));
  return true;
}

}  // namespace gccspam
