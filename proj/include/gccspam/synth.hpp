#pragma once

// Synthetic character repository and two-topic corpus with glyph/phonetic
// obfuscation of spam, for offline experiments and the acceptance runs.
//
// Roles:
//   spam keywords K, normal-topic characters N, shared filler characters C.
//   Each keyword k has a homophone variant h (same syllable, other tone) and
//   a homoglyph variant g (one four-corner digit changed). g's syllable is
//   the syllable of a frequent normal-topic character, so g's aggregated
//   embedding leans towards normal text.
//   Rare unused characters pad the repository.
// Training spam is obfuscated lightly with homophones only; validation and
// test spam come from a later period in which keywords are swapped for any
// variant at a much higher rate.

#include <cstdint>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gccspam/charsim.hpp"
#include "gccspam/discriminator.hpp"
#include "gccspam/error.hpp"
#include "gccspam/rng.hpp"
#include "gccspam/utf8.hpp"

namespace gccspam {

struct SynthOptions {
  std::uint64_t seed = 42;
  int sentences = 2400;
  double train_share = 0.6;
  double val_share = 0.2;
  int spam_keywords = 24;
  int normal_chars = 24;
  int filler_chars = 40;
  int padding_chars = 100;
  int min_length = 10;
  int max_length = 20;
  double topic_rate = 0.35;        // share of topic characters in a sentence
  double train_obfuscation = 0.1;  // per-keyword swap rate, homophones only
  double drift_obfuscation = 0.7;  // per-keyword swap rate in val/test
  double drift_homoglyph = 0.9;    // share of drifted swaps that use g
};

struct SynthChar {
  CharRecord record;
  long raw_count = 0;
};

struct SynthKeyword {
  char32_t keyword = 0;
  char32_t homophone = 0;
  char32_t homoglyph = 0;
};

struct SynthCorpus {
  std::vector<SynthChar> dictionary;
  std::vector<SynthKeyword> keywords;
  std::vector<char32_t> normal_chars;
  std::vector<char32_t> filler_chars;
  std::vector<LabeledSample> train, val, test;
};

// Dictionary file in the repository format, raw counts in the last column.
inline void write_dictionary(const std::vector<SynthChar>& dict, std::ostream& out) {
  out << "# char\tstructure\tcorners\tstrokes\tpinyin\traw_count\n";
  for (const auto& c : dict) {
    const auto& r = c.record;
    out << utf8::encode(r.ch) << '\t';
    if (r.glyph) {
      out << to_string(r.glyph->structure) << '\t';
      for (auto d : r.glyph->corners) out << static_cast<int>(d);
      out << '\t' << r.glyph->strokes << '\t';
    } else {
      out << "-\t-\t-\t";
    }
    out << (r.pron ? to_pinyin(*r.pron) : std::string("-")) << '\t' << c.raw_count << '\n';
  }
}

inline std::vector<CharRecord> normalized_records(const std::vector<SynthChar>& dict) {
  long total = 0;
  for (const auto& c : dict) total += c.raw_count;
  std::vector<CharRecord> out;
  for (const auto& c : dict) {
    out.push_back(c.record);
    out.back().freq = static_cast<double>(c.raw_count) / static_cast<double>(total + 1);
  }
  return out;
}

inline SynthCorpus make_synthetic_corpus(const SynthOptions& opt) {
  if (opt.sentences < 10 || opt.min_length < 1 || opt.max_length < opt.min_length || opt.spam_keywords < 1 ||
      opt.normal_chars < opt.spam_keywords || opt.filler_chars < 1) {
    throw Error(Errc::invalid_argument, "synthetic corpus: inconsistent options");
  }
  static constexpr std::string_view kFinals[] = {"a",   "o",    "e",   "ai",  "ei",  "ao",  "ou",   "an",
                                                 "en",  "ang",  "eng", "ong", "i",   "ia",  "ie",  "iao",
                                                 "iu",  "ian",  "in",  "iang", "ing", "iong", "u",  "ua",
                                                 "uo",  "uai",  "ui",  "uan", "un",  "uang", "ueng", "er"};
  Rng rng(opt.seed);
  SynthCorpus sc;
  char32_t next_cp = 0x4E00;

  // Unique (initial, final) pairs so distinct families never share both.
  std::vector<std::pair<std::string, std::string>> syllables;
  for (auto ini : detail::kInitials) {
    for (auto fin : kFinals) syllables.emplace_back(std::string(ini), std::string(fin));
  }
  rng.shuffle(syllables);
  std::size_t next_syllable = 0;
  auto fresh_pron = [&]() {
    if (next_syllable == syllables.size()) throw Error(Errc::invalid_argument, "synthetic corpus: out of syllables");
    const auto& [i, f] = syllables[next_syllable++];
    return PronCode{i, f, 1 + static_cast<int>(rng.below(4))};
  };
  auto fresh_glyph = [&]() {
    GlyphCode g;
    g.structure = static_cast<Structure>(rng.below(8));
    for (auto& d : g.corners) d = static_cast<std::uint8_t>(rng.below(10));
    g.strokes = 3 + static_cast<int>(rng.below(16));
    return g;
  };
  auto add = [&](GlyphCode g, PronCode p, long raw) {
    SynthChar c;
    c.record.ch = next_cp++;
    c.record.glyph = g;
    c.record.pron = std::move(p);
    c.raw_count = raw;
    sc.dictionary.push_back(c);
    return c.record.ch;
  };

  std::vector<PronCode> normal_pron;
  for (int i = 0; i < opt.normal_chars; ++i) {
    normal_pron.push_back(fresh_pron());
    sc.normal_chars.push_back(add(fresh_glyph(), normal_pron.back(), 3000 + static_cast<long>(rng.below(2000))));
  }
  for (int i = 0; i < opt.filler_chars; ++i) {
    sc.filler_chars.push_back(add(fresh_glyph(), fresh_pron(), 4000 + static_cast<long>(rng.below(4000))));
  }
  for (int i = 0; i < opt.spam_keywords; ++i) {
    SynthKeyword kw;
    const GlyphCode kg = fresh_glyph();
    const PronCode kp = fresh_pron();
    kw.keyword = add(kg, kp, 800 + static_cast<long>(rng.below(400)));

    PronCode hp = kp;
    hp.tone = 1 + (kp.tone % 4);  // another tone, same syllable
    kw.homophone = add(fresh_glyph(), hp, 80 + static_cast<long>(rng.below(60)));

    GlyphCode gg = kg;
    const auto slot = rng.below(5);
    gg.corners[slot] = static_cast<std::uint8_t>((gg.corners[slot] + 1 + rng.below(9)) % 10);
    gg.strokes = kg.strokes + 1;
    PronCode gp = normal_pron[static_cast<std::size_t>(i)];
    gp.tone = 1 + (gp.tone % 4);
    kw.homoglyph = add(gg, gp, 150 + static_cast<long>(rng.below(100)));
    sc.keywords.push_back(kw);
  }
  for (int i = 0; i < opt.padding_chars; ++i) add(fresh_glyph(), fresh_pron(), 5 + static_cast<long>(rng.below(30)));

  // Zipf-like weights over fillers so some are much more common.
  auto zipf_pick = [&](const std::vector<char32_t>& pool) {
    double total = 0.0;
    for (std::size_t r = 0; r < pool.size(); ++r) total += 1.0 / static_cast<double>(r + 1);
    double u = rng.uniform() * total;
    for (std::size_t r = 0; r < pool.size(); ++r) {
      u -= 1.0 / static_cast<double>(r + 1);
      if (u <= 0.0) return pool[r];
    }
    return pool.back();
  };
  auto sentence = [&](bool spam, bool drifted) {
    const int len = opt.min_length + static_cast<int>(rng.below(static_cast<std::size_t>(opt.max_length - opt.min_length + 1)));
    std::u32string s;
    for (int i = 0; i < len; ++i) {
      if (!rng.bernoulli(opt.topic_rate)) {
        s.push_back(zipf_pick(sc.filler_chars));
      } else if (!spam) {
        s.push_back(sc.normal_chars[rng.below(sc.normal_chars.size())]);
      } else {
        const auto& kw = sc.keywords[rng.below(sc.keywords.size())];
        char32_t c = kw.keyword;
        if (drifted) {
          if (rng.bernoulli(opt.drift_obfuscation)) c = rng.bernoulli(opt.drift_homoglyph) ? kw.homoglyph : kw.homophone;
        } else if (rng.bernoulli(opt.train_obfuscation)) {
          c = kw.homophone;
        }
        s.push_back(c);
      }
    }
    return s;
  };

  const int n_train = static_cast<int>(opt.sentences * opt.train_share);
  const int n_val = static_cast<int>(opt.sentences * opt.val_share);
  for (int i = 0; i < opt.sentences; ++i) {
    const bool spam = (i % 2) == 1;
    const bool drifted = i >= n_train;
    LabeledSample s{sentence(spam, drifted), spam ? 1 : 0};
    if (i < n_train) sc.train.push_back(std::move(s));
    else if (i < n_train + n_val) sc.val.push_back(std::move(s));
    else sc.test.push_back(std::move(s));
  }
  rng.shuffle(sc.train);
  rng.shuffle(sc.val);
  rng.shuffle(sc.test);
  return sc;
}

}  // namespace gccspam
