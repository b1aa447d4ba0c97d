#pragma once

// Character similarity network over a dictionary of Chinese characters.
//
// Each character carries a glyph code (structure category, five four-corner
// digits, stroke count) and a pronunciation code (pinyin initial, final,
// tone). Pairwise similarity is the larger of the glyph and pronunciation
// scores, and the network keeps, for every character, the neighbours whose
// similarity strictly exceeds the threshold rho.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gccspam/error.hpp"
#include "gccspam/utf8.hpp"

namespace gccspam {

enum class Structure : std::uint8_t {
  single,
  left_right,
  up_down,
  left_middle_right,
  up_middle_down,
  full_enclosure,
  half_enclosure,
  overlay,
};

inline constexpr std::array<std::string_view, 8> kStructureNames = {
    "single",         "left-right",     "up-down", "left-middle-right",
    "up-middle-down", "full-enclosure", "half-enclosure", "overlay"};

inline std::string_view to_string(Structure s) {
  return kStructureNames[static_cast<std::size_t>(s)];
}

inline std::optional<Structure> parse_structure(std::string_view name) {
  for (std::size_t i = 0; i < kStructureNames.size(); ++i) {
    if (kStructureNames[i] == name) return static_cast<Structure>(i);
  }
  return std::nullopt;
}

struct GlyphCode {
  Structure structure = Structure::single;
  std::array<std::uint8_t, 5> corners{};  // four corners + supplementary digit
  int strokes = 1;

  bool operator==(const GlyphCode&) const = default;
};

struct PronCode {
  std::string initial;  // may be empty (zero initial)
  std::string final;
  int tone = 0;  // 0 = neutral

  bool operator==(const PronCode&) const = default;
};

inline void validate(const GlyphCode& g) {
  for (auto d : g.corners) {
    if (d > 9) throw Error(Errc::invalid_argument, "four-corner digit out of range");
  }
  if (g.strokes < 1) throw Error(Errc::invalid_argument, "stroke count must be >= 1");
}

inline void validate(const PronCode& p) {
  if (p.final.empty()) throw Error(Errc::invalid_argument, "pinyin final is empty");
  if (p.tone < 0 || p.tone > 4) throw Error(Errc::invalid_argument, "tone must be in 0..4");
}

namespace detail {

inline constexpr std::array<std::string_view, 23> kInitials = {
    "zh", "ch", "sh", "b", "p", "m", "f", "d", "t", "n", "l", "g",
    "k",  "h",  "j",  "q", "x", "r", "z", "c", "s", "y", "w"};

inline bool is_pinyin_letter(std::string_view s) {
  // ASCII letters plus u-umlaut (U+00FC, UTF-8 C3 BC).
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (c >= 'a' && c <= 'z') continue;
    if (static_cast<unsigned char>(c) == 0xC3 && i + 1 < s.size() &&
        static_cast<unsigned char>(s[i + 1]) == 0xBC) {
      ++i;
      continue;
    }
    return false;
  }
  return true;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline double parse_double(std::string_view s, std::size_t line, const char* what) {
  std::string tmp(s);
  try {
    std::size_t used = 0;
    const double v = std::stod(tmp, &used);
    if (used != tmp.size()) throw std::invalid_argument(tmp);
    return v;
  } catch (const std::exception&) {
    throw Error(Errc::parse_error,
                "line " + std::to_string(line) + ": bad " + what + " '" + tmp + "'", line);
  }
}

}  // namespace detail

// Parses one pinyin syllable with a trailing tone digit, e.g. "wei1",
// "zhong1", "lv4", "a1". A missing digit means the neutral tone.
inline PronCode parse_pinyin(std::string_view text) {
  if (text.empty()) throw Error(Errc::invalid_argument, "empty pinyin");
  PronCode p;
  std::string_view body = text;
  const char last = text.back();
  if (last >= '0' && last <= '9') {
    p.tone = last - '0';
    body.remove_suffix(1);
  }
  if (p.tone > 4) throw Error(Errc::invalid_argument, "tone must be in 0..4: " + std::string(text));
  if (body.empty() || !detail::is_pinyin_letter(body)) {
    throw Error(Errc::invalid_argument, "malformed pinyin: " + std::string(text));
  }
  for (auto init : detail::kInitials) {
    if (body.starts_with(init) && body.size() > init.size()) {
      p.initial = std::string(init);
      body.remove_prefix(init.size());
      break;
    }
  }
  p.final = std::string(body);
  validate(p);
  return p;
}

inline std::string to_pinyin(const PronCode& p) {
  return p.initial + p.final + std::to_string(p.tone);
}

struct CharRecord {
  char32_t ch = 0;
  std::optional<GlyphCode> glyph;
  std::optional<PronCode> pron;
  double freq = 0.0;

  bool is_chinese() const { return glyph.has_value() || pron.has_value(); }
};

// Component weights for the glyph comparison.
inline constexpr double kStructureWeight = 0.2;
inline constexpr double kCornerWeight = 0.6;
inline constexpr double kStrokeWeight = 0.2;
// Component weights for the pronunciation comparison.
inline constexpr double kInitialWeight = 0.4;
inline constexpr double kFinalWeight = 0.4;
inline constexpr double kToneWeight = 0.2;

inline double glyph_similarity(const GlyphCode& a, const GlyphCode& b) {
  int matching = 0;
  for (std::size_t k = 0; k < a.corners.size(); ++k) matching += a.corners[k] == b.corners[k];
  const double stroke_gap = std::abs(a.strokes - b.strokes);
  const double stroke_score =
      std::clamp(1.0 - stroke_gap / std::max(a.strokes, b.strokes), 0.0, 1.0);
  const double score = kStructureWeight * (a.structure == b.structure) +
                       kCornerWeight * (matching / 5.0) + kStrokeWeight * stroke_score;
  return std::clamp(score, 0.0, 1.0);
}

inline double pron_similarity(const PronCode& a, const PronCode& b) {
  const double score = kInitialWeight * (a.initial == b.initial) +
                       kFinalWeight * (a.final == b.final) + kToneWeight * (a.tone == b.tone);
  return std::clamp(score, 0.0, 1.0);
}

// max(sim_g, sim_p); a feature family missing on either side contributes 0.
inline double record_similarity(const CharRecord& a, const CharRecord& b) {
  const double g = (a.glyph && b.glyph) ? glyph_similarity(*a.glyph, *b.glyph) : 0.0;
  const double p = (a.pron && b.pron) ? pron_similarity(*a.pron, *b.pron) : 0.0;
  return std::max(g, p);
}

class SimilarityNetwork {
 public:
  struct Neighbor {
    char32_t ch;
    double sim;
    bool operator==(const Neighbor&) const = default;
  };

  SimilarityNetwork() = default;

  double threshold() const { return rho_; }
  std::size_t size() const { return records_.size(); }
  const std::vector<CharRecord>& records() const { return records_; }

  const CharRecord* find(char32_t c) const {
    const auto it = index_.find(c);
    return it == index_.end() ? nullptr : &records_[it->second];
  }

  const CharRecord& record(char32_t c) const {
    if (const auto* r = find(c)) return *r;
    throw Error(Errc::unknown_character, "unknown character '" + utf8::encode(c) + "'");
  }

  bool contains(char32_t c) const { return index_.contains(c); }

  // Characters outside the dictionary are treated as non-Chinese.
  bool is_chinese(char32_t c) const {
    const auto* r = find(c);
    return r != nullptr && r->is_chinese();
  }

  // N(c). Empty for unknown and non-Chinese characters.
  std::span<const Neighbor> neighbors(char32_t c) const {
    const auto it = index_.find(c);
    if (it == index_.end()) return {};
    return neighbors_[it->second];
  }

  double similarity(char32_t a, char32_t b) const {
    return record_similarity(record(a), record(b));
  }

  // Similarity with unknown characters scored as 0.
  double similarity_or_zero(char32_t a, char32_t b) const {
    const auto* ra = find(a);
    const auto* rb = find(b);
    if (ra == nullptr || rb == nullptr) return 0.0;
    return record_similarity(*ra, *rb);
  }

  bool operator==(const SimilarityNetwork& other) const {
    if (rho_ != other.rho_ || records_.size() != other.records_.size()) return false;
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const auto& a = records_[i];
      const auto& b = other.records_[i];
      if (a.ch != b.ch || a.glyph != b.glyph || a.pron != b.pron || a.freq != b.freq) return false;
    }
    return neighbors_ == other.neighbors_;
  }

 private:
  friend SimilarityNetwork build_network(std::vector<CharRecord> records, double rho);
  friend SimilarityNetwork load_network(std::istream& in);

  void index_records() {
    index_.clear();
    for (std::size_t i = 0; i < records_.size(); ++i) {
      if (!index_.emplace(records_[i].ch, i).second) {
        throw Error(Errc::duplicate_character,
                    "duplicate character '" + utf8::encode(records_[i].ch) + "'");
      }
    }
  }

  std::vector<CharRecord> records_;
  std::unordered_map<char32_t, std::size_t> index_;
  std::vector<std::vector<Neighbor>> neighbors_;
  double rho_ = 0.7;
};

inline constexpr double kDefaultRho = 0.7;

// Neighbour lists are ordered by dictionary position, so the output is a
// pure function of the input order.
inline SimilarityNetwork build_network(std::vector<CharRecord> records, double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw Error(Errc::invalid_argument, "rho must be in [0,1], got " + detail::format_double(rho));
  }
  if (records.empty()) throw Error(Errc::empty_input, "empty character repository");
  for (const auto& r : records) {
    if (!(r.freq >= 0.0 && r.freq < 1.0)) {
      throw Error(Errc::invalid_argument, "frequency outside [0,1) for '" + utf8::encode(r.ch) + "'");
    }
    if (r.glyph) validate(*r.glyph);
    if (r.pron) validate(*r.pron);
  }
  SimilarityNetwork net;
  net.rho_ = rho;
  net.records_ = std::move(records);
  net.index_records();
  const std::size_t m = net.records_.size();
  net.neighbors_.assign(m, {});

  std::vector<std::size_t> chinese;
  for (std::size_t i = 0; i < m; ++i) {
    if (net.records_[i].is_chinese()) chinese.push_back(i);
  }
  // Upper triangle only; each accepted pair is pushed to both sides. Pushing
  // in (i, j) order with i ascending keeps every list sorted by position.
  std::vector<std::vector<std::pair<std::size_t, double>>> adj(m);
  for (std::size_t a = 0; a < chinese.size(); ++a) {
    const std::size_t i = chinese[a];
    for (std::size_t b = a; b < chinese.size(); ++b) {
      const std::size_t j = chinese[b];
      const double s = record_similarity(net.records_[i], net.records_[j]);
      if (s > rho) {
        adj[i].emplace_back(j, s);
        if (i != j) adj[j].emplace_back(i, s);
      }
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    auto& list = adj[i];
    std::sort(list.begin(), list.end());
    auto& out = net.neighbors_[i];
    out.reserve(list.size());
    for (const auto& [j, s] : list) out.push_back({net.records_[j].ch, s});
  }
  return net;
}

// Dictionary file: `char<TAB>structure<TAB>corners<TAB>strokes<TAB>pinyin<TAB>raw_count`.
// `#` starts a comment line. Glyph and pinyin fields may be `-` for
// non-Chinese rows. Frequencies are raw_count / (total + 1).
inline std::vector<CharRecord> parse_dictionary(std::istream& in) {
  struct Row {
    CharRecord rec;
    double raw;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw Error(Errc::parse_error, "line " + std::to_string(lineno) + ": " + msg, lineno);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto fields = detail::split(line, '\t');
    if (fields.size() != 6) fail("expected 6 tab-separated fields, got " + std::to_string(fields.size()));

    Row row{};
    std::u32string ch;
    try {
      ch = utf8::decode(fields[0]);
    } catch (const Error& e) {
      fail(e.what());
    }
    if (ch.size() != 1) fail("first field must be a single character");
    row.rec.ch = ch.front();

    const bool glyph_absent = fields[1] == "-";
    if (glyph_absent != (fields[2] == "-") || glyph_absent != (fields[3] == "-")) {
      fail("glyph fields must be all present or all '-'");
    }
    if (!glyph_absent) {
      GlyphCode g;
      const auto st = parse_structure(fields[1]);
      if (!st) fail("unknown structure '" + std::string(fields[1]) + "'");
      g.structure = *st;
      std::string digits;
      for (char c : fields[2]) {
        if (c == '.') continue;
        if (c < '0' || c > '9') fail("corner code must be digits");
        digits.push_back(c);
      }
      if (digits.size() != 5) fail("corner code must have exactly 5 digits");
      for (std::size_t k = 0; k < 5; ++k) g.corners[k] = static_cast<std::uint8_t>(digits[k] - '0');
      int strokes = 0;
      const auto sv = fields[3];
      const auto res = std::from_chars(sv.data(), sv.data() + sv.size(), strokes);
      if (res.ec != std::errc{} || res.ptr != sv.data() + sv.size() || strokes < 1) {
        fail("stroke count must be a positive integer");
      }
      g.strokes = strokes;
      row.rec.glyph = g;
    }
    if (fields[4] != "-") {
      // Polyphonic characters: the first listed reading wins.
      std::string_view first = fields[4];
      const auto cut = first.find_first_of(",;/ ");
      if (cut != std::string_view::npos) first = first.substr(0, cut);
      try {
        row.rec.pron = parse_pinyin(first);
      } catch (const Error& e) {
        fail(e.what());
      }
    }
    row.raw = detail::parse_double(fields[5], lineno, "raw count");
    if (!(row.raw >= 0.0) || !std::isfinite(row.raw)) fail("raw count must be non-negative");
    rows.push_back(std::move(row));
  }
  double total = 0.0;
  for (const auto& r : rows) total += r.raw;
  std::vector<CharRecord> out;
  out.reserve(rows.size());
  for (auto& r : rows) {
    r.rec.freq = r.raw / (total + 1.0);
    out.push_back(std::move(r.rec));
  }
  return out;
}

inline std::vector<CharRecord> load_dictionary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open dictionary '" + path.string() + "'");
  return parse_dictionary(in);
}

inline constexpr std::string_view kSimnetMagic = "gccspam-simnet";

// Network artifact: records with normalized frequencies followed by the
// neighbour lists, all values at full double precision.
inline void save_network(const SimilarityNetwork& net, std::ostream& out) {
  out << kSimnetMagic << "\t1\n";
  out << "rho\t" << detail::format_double(net.threshold()) << '\n';
  for (const auto& r : net.records()) {
    out << "record\t" << utf8::encode(r.ch) << '\t';
    if (r.glyph) {
      out << to_string(r.glyph->structure) << '\t';
      for (auto d : r.glyph->corners) out << static_cast<int>(d);
      out << '\t' << r.glyph->strokes << '\t';
    } else {
      out << "-\t-\t-\t";
    }
    out << (r.pron ? to_pinyin(*r.pron) : std::string("-")) << '\t'
        << detail::format_double(r.freq) << '\n';
  }
  for (const auto& r : net.records()) {
    const auto nb = net.neighbors(r.ch);
    if (nb.empty()) continue;
    out << "neighbors\t" << utf8::encode(r.ch);
    for (const auto& n : nb) out << '\t' << utf8::encode(n.ch) << '\t' << detail::format_double(n.sim);
    out << '\n';
  }
}

inline SimilarityNetwork load_network(std::istream& in) {
  SimilarityNetwork net;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw Error(Errc::parse_error, "simnet line " + std::to_string(lineno) + ": " + msg, lineno);
  };
  auto one_char = [&](std::string_view s) {
    std::u32string c;
    try {
      c = utf8::decode(s);
    } catch (const Error& e) {
      fail(e.what());
    }
    if (c.size() != 1) fail("expected a single character");
    return c.front();
  };
  std::vector<std::pair<char32_t, std::vector<SimilarityNetwork::Neighbor>>> pending;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split(line, '\t');
    if (!header) {
      if (f.size() != 2 || f[0] != kSimnetMagic || f[1] != "1") fail("not a simnet artifact");
      header = true;
    } else if (f[0] == "rho" && f.size() == 2) {
      net.rho_ = detail::parse_double(f[1], lineno, "rho");
    } else if (f[0] == "record" && f.size() == 7) {
      // Reuse the dictionary parser for the code fields.
      std::string dict_line(f[1]);
      for (std::size_t k = 2; k <= 5; ++k) dict_line += "\t" + std::string(f[k]);
      dict_line += "\t0";
      std::istringstream one(dict_line);
      auto recs = parse_dictionary(one);
      if (recs.size() != 1) fail("bad record");
      recs[0].freq = detail::parse_double(f[6], lineno, "freq");
      net.records_.push_back(std::move(recs[0]));
    } else if (f[0] == "neighbors" && f.size() >= 2 && f.size() % 2 == 0) {
      std::vector<SimilarityNetwork::Neighbor> list;
      for (std::size_t k = 2; k < f.size(); k += 2) {
        list.push_back({one_char(f[k]), detail::parse_double(f[k + 1], lineno, "similarity")});
      }
      pending.emplace_back(one_char(f[1]), std::move(list));
    } else {
      fail("unrecognized line");
    }
  }
  if (!header) throw Error(Errc::parse_error, "empty simnet artifact");
  net.index_records();
  net.neighbors_.assign(net.records_.size(), {});
  for (auto& [c, list] : pending) {
    const auto it = net.index_.find(c);
    if (it == net.index_.end()) throw Error(Errc::parse_error, "neighbors for unknown character");
    net.neighbors_[it->second] = std::move(list);
  }
  return net;
}

}  // namespace gccspam
