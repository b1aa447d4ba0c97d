#pragma once

// Shared helpers for the unit suites: fixture paths, random dictionaries for
// property tests and independently written reference formulas.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gccspam/charsim.hpp"
#include "gccspam/rng.hpp"

namespace testing_support {

inline std::filesystem::path data_path(const std::string& name) {
  return std::filesystem::path(GCCSPAM_TEST_DATA) / name;
}

inline std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("gccspam_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Reference similarity written straight from the component-match rule,
// without sharing code with the library.
inline double oracle_glyph(const gccspam::GlyphCode& a, const gccspam::GlyphCode& b) {
  double corners = 0;
  for (int k = 0; k < 5; ++k) corners += (a.corners[k] == b.corners[k]) ? 1.0 : 0.0;
  const double hi = std::max(a.strokes, b.strokes);
  double stroke = 1.0 - std::fabs(double(a.strokes) - double(b.strokes)) / hi;
  if (stroke < 0) stroke = 0;
  return (a.structure == b.structure ? 0.2 : 0.0) + 0.6 * corners / 5.0 + 0.2 * stroke;
}

inline double oracle_pron(const gccspam::PronCode& a, const gccspam::PronCode& b) {
  return (a.initial == b.initial ? 0.4 : 0.0) + (a.final == b.final ? 0.4 : 0.0) +
         (a.tone == b.tone ? 0.2 : 0.0);
}

inline double oracle_sim(const gccspam::CharRecord& a, const gccspam::CharRecord& b) {
  double g = 0, p = 0;
  if (a.glyph && b.glyph) g = oracle_glyph(*a.glyph, *b.glyph);
  if (a.pron && b.pron) p = oracle_pron(*a.pron, *b.pron);
  return g > p ? g : p;
}

// Random dictionary with deliberate near-duplicates so that neighbour sets
// are non-trivial.
inline std::vector<gccspam::CharRecord> random_dictionary(std::size_t m, std::uint64_t seed,
                                                          double non_chinese_rate = 0.05) {
  static const char* initials[] = {"", "b", "p", "m", "zh", "sh", "x", "q", "j", "w", "y"};
  static const char* finals[] = {"a", "ei", "an", "ing", "ao", "ian", "u", "i"};
  gccspam::Rng rng(seed);
  std::vector<gccspam::CharRecord> out;
  for (std::size_t i = 0; i < m; ++i) {
    gccspam::CharRecord r;
    r.ch = static_cast<char32_t>(0x4E00 + i);
    r.freq = rng.uniform() * 0.01;
    if (rng.uniform() < non_chinese_rate) {
      out.push_back(r);
      continue;
    }
    const bool copy = !out.empty() && rng.uniform() < 0.4;
    const gccspam::CharRecord* src = copy ? &out[rng.below(out.size())] : nullptr;
    if (rng.uniform() < 0.9) {
      gccspam::GlyphCode g;
      if (src && src->glyph) {
        g = *src->glyph;
        g.corners[rng.below(5)] = static_cast<std::uint8_t>(rng.below(10));
        g.strokes = std::max(1, g.strokes + static_cast<int>(rng.below(3)) - 1);
      } else {
        g.structure = static_cast<gccspam::Structure>(rng.below(8));
        for (auto& d : g.corners) d = static_cast<std::uint8_t>(rng.below(10));
        g.strokes = 1 + static_cast<int>(rng.below(20));
      }
      r.glyph = g;
    }
    if (rng.uniform() < 0.9 || !r.glyph) {
      gccspam::PronCode p;
      if (src && src->pron && rng.uniform() < 0.7) {
        p = *src->pron;
        p.tone = static_cast<int>(rng.below(5));
      } else {
        p.initial = initials[rng.below(11)];
        p.final = finals[rng.below(8)];
        p.tone = static_cast<int>(rng.below(5));
      }
      r.pron = p;
    }
    out.push_back(r);
  }
  return out;
}

// Central finite-difference gradient of f at x.
inline Eigen::MatrixXd numeric_gradient(const std::function<double(const Eigen::MatrixXd&)>& f,
                                        Eigen::MatrixXd x, double h = 1e-5) {
  Eigen::MatrixXd g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x(i);
    x(i) = keep + h;
    const double up = f(x);
    x(i) = keep - h;
    const double down = f(x);
    x(i) = keep;
    g(i) = (up - down) / (2 * h);
  }
  return g;
}

inline double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

// Supervised contrastive loss written as the textbook double loop.
inline double oracle_info_nce(const Eigen::MatrixXd& z, const std::vector<int>& y, double tau) {
  const auto n = z.rows();
  auto cos = [&](Eigen::Index i, Eigen::Index j) { return z.row(i).dot(z.row(j)) / (z.row(i).norm() * z.row(j).norm()); };
  double total = 0;
  int anchors = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double denom = 0;
    for (Eigen::Index a = 0; a < n; ++a) {
      if (a != i) denom += std::exp(cos(i, a) / tau);
    }
    double sum = 0;
    int pos = 0;
    for (Eigen::Index p = 0; p < n; ++p) {
      if (p == i || y[p] != y[i]) continue;
      sum += std::log(std::exp(cos(i, p) / tau) / denom);
      ++pos;
    }
    if (pos == 0) continue;
    total += -sum / pos;
    ++anchors;
  }
  return total / anchors;
}

// Self-attention context rows with plain loops, no shared code with the library.
inline Eigen::MatrixXd oracle_attention(const Eigen::MatrixXd& x) {
  const auto n = x.rows();
  const auto d = x.cols();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> w(static_cast<std::size_t>(n));
    double z = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      double dot = 0;
      for (Eigen::Index k = 0; k < d; ++k) dot += x(i, k) * x(j, k);
      w[j] = std::exp(dot / std::sqrt(double(d)));
      z += w[j];
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index k = 0; k < d; ++k) out(i, k) += w[j] / z * x(j, k);
    }
  }
  return out;
}

inline Eigen::VectorXd oracle_sentence(const Eigen::MatrixXd& x) {
  return oracle_attention(x).colwise().mean().transpose();
}

// Log-probability of a perturbation trace rebuilt from its stored parts.
template <typename Trace>
double recompute_logprob(const Trace& tr) {
  double lp = 0.0;
  for (std::size_t i = 0; i < tr.original.size(); ++i) {
    if (tr.mask_probs[i] == 0.0 && tr.masks[i] == 0) continue;
    lp += std::log(tr.masks[i] ? tr.mask_probs[i] : 1.0 - tr.mask_probs[i]);
    if (tr.masks[i]) lp += std::log(tr.policy[i](tr.replacements[i]));
  }
  return lp;
}

}  // namespace testing_support
