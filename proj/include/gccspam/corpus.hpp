#pragma once

// Labelled corpus files: one `label<TAB>text` line per sample, label 0
// (normal) or 1 (spam), UTF-8.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gccspam/discriminator.hpp"
#include "gccspam/error.hpp"
#include "gccspam/utf8.hpp"

namespace gccspam {

inline std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

inline std::vector<LabeledSample> parse_corpus(std::istream& in) {
  std::vector<LabeledSample> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = strip_cr(std::move(line));
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(Errc::parse_error, "line " + std::to_string(n) + ": missing tab", n);
    const std::string label = line.substr(0, tab);
    if (label != "0" && label != "1") {
      throw Error(Errc::parse_error, "line " + std::to_string(n) + ": label must be 0 or 1", n);
    }
    LabeledSample s;
    s.label = label == "1" ? 1 : 0;
    try {
      s.text = utf8::decode(std::string_view(line).substr(tab + 1));
    } catch (const Error& e) {
      throw Error(Errc::parse_error, "line " + std::to_string(n) + ": " + e.what(), n);
    }
    if (s.text.empty()) throw Error(Errc::parse_error, "line " + std::to_string(n) + ": empty text", n);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<LabeledSample> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  try {
    return parse_corpus(in);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what(), e.line());
  }
}

inline void write_corpus(std::span<const LabeledSample> samples, std::ostream& out) {
  for (const auto& s : samples) {
    for (char32_t c : s.text) {
      if (c == U'\n' || c == U'\r') throw Error(Errc::invalid_argument, "sample text contains a line break");
    }
    out << s.label << '\t' << utf8::encode(s.text) << '\n';
  }
}

inline void write_corpus(std::span<const LabeledSample> samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  write_corpus(samples, out);
}

// Plain UTF-8 lines, e.g. input to detection or attack.
inline std::vector<std::u32string> read_lines(std::istream& in) {
  std::vector<std::u32string> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = strip_cr(std::move(line));
    try {
      out.push_back(utf8::decode(line));
    } catch (const Error& e) {
      throw Error(Errc::parse_error, "line " + std::to_string(n) + ": " + e.what(), n);
    }
  }
  return out;
}

inline std::vector<std::u32string> texts_of(std::span<const LabeledSample> samples, int label) {
  std::vector<std::u32string> out;
  for (const auto& s : samples) {
    if (s.label == label) out.push_back(s.text);
  }
  return out;
}

// FNV-1a over the serialized form; used to show a split is untouched.
inline std::uint64_t corpus_checksum(std::span<const LabeledSample> samples) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](unsigned char b) { h = (h ^ b) * 1099511628211ULL; };
  for (const auto& s : samples) {
    mix(static_cast<unsigned char>('0' + s.label));
    for (char c : utf8::encode(s.text)) mix(static_cast<unsigned char>(c));
    mix('\n');
  }
  return h;
}

}  // namespace gccspam
