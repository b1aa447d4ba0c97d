#pragma once

// Binary classification metrics laid out like a classification report:
// per-class rows for 0 (normal) and 1 (spam), accuracy, macro and weighted
// averages.

#include <array>
#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gccspam/discriminator.hpp"
#include "gccspam/error.hpp"
#include "gccspam/log.hpp"

namespace gccspam {

struct ConfusionCounts {
  long tp = 0;
  long fp = 0;
  long tn = 0;
  long fn = 0;

  long total() const { return tp + fp + tn + fn; }
  long support(int cls) const { return cls == 1 ? tp + fn : tn + fp; }
  bool operator==(const ConfusionCounts&) const = default;
};

inline ConfusionCounts confusion(std::span<const int> labels, std::span<const int> predictions) {
  if (labels.size() != predictions.size()) throw Error(Errc::length_mismatch, "confusion: length mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    const int p = predictions[i];
    if ((y != 0 && y != 1) || (p != 0 && p != 1)) throw Error(Errc::invalid_argument, "confusion: non-binary value");
    if (y == 1) {
      (p == 1 ? c.tp : c.fn) += 1;
    } else {
      (p == 1 ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;
};

struct MetricsReport {
  std::array<ClassMetrics, 2> classes;
  double accuracy = 0.0;
  ClassMetrics macro;
  ClassMetrics weighted;
  long total_support = 0;
  ConfusionCounts counts;

  double macro_f1() const { return macro.f1; }
};

inline double safe_ratio(double num, double den, const char* what) {
  if (den == 0.0) {
    log::warn(what, " is 0/0, reported as 0");
    return 0.0;
  }
  return num / den;
}

inline double harmonic_mean(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

// Unweighted and support-weighted means of per-class rows.
inline std::pair<ClassMetrics, ClassMetrics> average_rows(std::span<const ClassMetrics> rows) {
  ClassMetrics macro, weighted;
  long total = 0;
  for (const auto& r : rows) total += r.support;
  for (const auto& r : rows) {
    const double n = static_cast<double>(rows.size());
    macro.precision += r.precision / n;
    macro.recall += r.recall / n;
    macro.f1 += r.f1 / n;
    const double w = total > 0 ? static_cast<double>(r.support) / static_cast<double>(total) : 0.0;
    weighted.precision += w * r.precision;
    weighted.recall += w * r.recall;
    weighted.f1 += w * r.f1;
  }
  macro.support = weighted.support = total;
  return {macro, weighted};
}

inline MetricsReport metrics(const ConfusionCounts& c) {
  if (c.total() <= 0) throw Error(Errc::empty_input, "metrics: no samples");
  MetricsReport m;
  m.counts = c;
  m.total_support = c.total();
  auto& neg = m.classes[0];
  auto& pos = m.classes[1];
  pos.precision = safe_ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp), "class 1 precision");
  pos.recall = safe_ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn), "class 1 recall");
  neg.precision = safe_ratio(static_cast<double>(c.tn), static_cast<double>(c.tn + c.fn), "class 0 precision");
  neg.recall = safe_ratio(static_cast<double>(c.tn), static_cast<double>(c.tn + c.fp), "class 0 recall");
  pos.f1 = harmonic_mean(pos.precision, pos.recall);
  neg.f1 = harmonic_mean(neg.precision, neg.recall);
  pos.support = c.support(1);
  neg.support = c.support(0);
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  std::tie(m.macro, m.weighted) = average_rows(m.classes);
  return m;
}

inline MetricsReport report(const Discriminator& d, std::span<const LabeledSample> test, double threshold) {
  if (test.empty()) throw Error(Errc::empty_input, "report: empty test set");
  std::vector<int> labels, preds;
  labels.reserve(test.size());
  preds.reserve(test.size());
  for (const auto& s : test) {
    labels.push_back(s.label);
    preds.push_back(d.predict(s.text) >= threshold ? 1 : 0);
  }
  return metrics(confusion(labels, preds));
}

// Rounds half away from zero to `places` decimals. Binary doubles rarely
// hit a decimal tie exactly, so values within a relative 1e-9 of one count
// as the tie.
inline std::string format_fixed(double x, int places = 4) {
  const double scale = std::pow(10.0, places);
  const double v = x * scale;
  const double r = std::round(v + std::copysign(1e-9 * std::max(1.0, std::fabs(v)), v)) / scale;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", places, r == 0.0 ? 0.0 : r);
  return buf;
}

inline std::string format_table(const MetricsReport& m) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%12s %10s %10s %10s %10s\n\n", "", "precision", "recall", "f1-score", "support");
  out += line;
  auto row = [&](const char* name, const ClassMetrics& r) {
    std::snprintf(line, sizeof line, "%12s %10s %10s %10s %10ld\n", name, format_fixed(r.precision).c_str(),
                  format_fixed(r.recall).c_str(), format_fixed(r.f1).c_str(), r.support);
    out += line;
  };
  row("0", m.classes[0]);
  row("1", m.classes[1]);
  out += '\n';
  std::snprintf(line, sizeof line, "%12s %10s %10s %10s %10ld\n", "accuracy", "", "", format_fixed(m.accuracy).c_str(),
                m.total_support);
  out += line;
  row("macro avg", m.macro);
  row("weighted avg", m.weighted);
  return out;
}

inline nlohmann::ordered_json to_json(const ClassMetrics& r) {
  return {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}, {"support", r.support}};
}

// Key names: classes."0"/"1", accuracy, macro_avg, weighted_avg,
// total_support, confusion{tp,fp,tn,fn}.
inline nlohmann::ordered_json to_json(const MetricsReport& m) {
  nlohmann::ordered_json j;
  j["classes"]["0"] = to_json(m.classes[0]);
  j["classes"]["1"] = to_json(m.classes[1]);
  j["accuracy"] = m.accuracy;
  j["macro_avg"] = to_json(m.macro);
  j["weighted_avg"] = to_json(m.weighted);
  j["total_support"] = m.total_support;
  j["confusion"] = {{"tp", m.counts.tp}, {"fp", m.counts.fp}, {"tn", m.counts.tn}, {"fn", m.counts.fn}};
  return j;
}

}  // namespace gccspam
