#pragma once

// Character embeddings: skip-gram base vectors and the similarity-weighted
// aggregation over each character's neighbour set.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "gccspam/autograd.hpp"
#include "gccspam/charsim.hpp"
#include "gccspam/error.hpp"
#include "gccspam/rng.hpp"
#include "gccspam/utf8.hpp"

namespace gccspam {

// Stands in for any character the table has never seen. Its vector is zero.
inline constexpr char32_t kUnknownChar = U'\uFFFD';

using CharVectors = std::map<char32_t, Eigen::VectorXd>;

struct SkipGramOptions {
  int dim = 64;
  int window = 5;
  int negatives = 5;
  int epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 42;
};

struct SkipGramResult {
  CharVectors vectors;
  std::vector<double> epoch_loss;  // mean SGNS loss per (center, context) pair
};

// Skip-gram with negative sampling over characters. Windows never cross
// sentence boundaries. The result holds a vector for every corpus character
// plus the unknown-character vector.
inline SkipGramResult train_base_vectors(const std::vector<std::u32string>& corpus,
                                         const SkipGramOptions& opt) {
  if (opt.dim < 2) throw Error(Errc::invalid_argument, "embedding dimension must be >= 2");
  if (opt.window < 1 || opt.negatives < 0 || opt.epochs < 1) {
    throw Error(Errc::invalid_argument, "invalid skip-gram options");
  }
  std::map<char32_t, long> counts;
  long tokens = 0;
  for (const auto& s : corpus) {
    for (char32_t c : s) {
      ++counts[c];
      ++tokens;
    }
  }
  if (tokens == 0) throw Error(Errc::empty_input, "empty corpus");

  std::vector<char32_t> vocab;
  std::unordered_map<char32_t, int> index;
  for (const auto& [c, n] : counts) {
    index[c] = static_cast<int>(vocab.size());
    vocab.push_back(c);
  }
  const int v = static_cast<int>(vocab.size());
  const int d = opt.dim;

  // Unigram^0.75 noise distribution as a cumulative table.
  std::vector<double> cumulative(v);
  double acc = 0.0;
  for (int i = 0; i < v; ++i) {
    acc += std::pow(static_cast<double>(counts[vocab[i]]), 0.75);
    cumulative[i] = acc;
  }
  for (auto& x : cumulative) x /= acc;

  Rng rng(opt.seed);
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMat input(v, d);
  for (int i = 0; i < v; ++i) {
    for (int k = 0; k < d; ++k) input(i, k) = (rng.uniform() - 0.5) / d;
  }
  RowMat output = RowMat::Zero(v, d);

  std::vector<std::vector<int>> encoded;
  encoded.reserve(corpus.size());
  for (const auto& s : corpus) {
    std::vector<int> ids;
    ids.reserve(s.size());
    for (char32_t c : s) ids.push_back(index[c]);
    encoded.push_back(std::move(ids));
  }

  auto sigmoid = [](double x) { return ag::stable_sigmoid(x); };
  const double total_work = static_cast<double>(opt.epochs) * static_cast<double>(tokens);
  double done = 0.0;
  Eigen::RowVectorXd grad_in(d);

  SkipGramResult result;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    double loss = 0.0;
    long pairs = 0;
    for (const auto& ids : encoded) {
      const int n = static_cast<int>(ids.size());
      for (int i = 0; i < n; ++i, done += 1.0) {
        const double lr = opt.learning_rate * std::max(1e-4, 1.0 - done / total_work);
        const int reach = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(opt.window)));
        const int center = ids[i];
        for (int j = std::max(0, i - reach); j <= std::min(n - 1, i + reach); ++j) {
          if (j == i) continue;
          const int target = ids[j];
          grad_in.setZero();
          for (int k = 0; k <= opt.negatives; ++k) {
            int word = target;
            double label = 1.0;
            if (k > 0) {
              const double u = rng.uniform();
              word = static_cast<int>(std::lower_bound(cumulative.begin(), cumulative.end(), u) -
                                      cumulative.begin());
              word = std::min(word, v - 1);
              if (word == target) continue;
              label = 0.0;
            }
            const double f = input.row(center).dot(output.row(word));
            const double p = sigmoid(f);
            loss -= label > 0 ? ag::log_sigmoid(f) : ag::log_sigmoid(-f);
            const double g = lr * (label - p);
            grad_in += g * output.row(word);
            output.row(word) += g * input.row(center);
          }
          input.row(center) += grad_in;
          ++pairs;
        }
      }
    }
    result.epoch_loss.push_back(pairs > 0 ? loss / static_cast<double>(pairs) : 0.0);
  }
  for (int i = 0; i < v; ++i) result.vectors[vocab[i]] = input.row(i).transpose();
  result.vectors[kUnknownChar] = Eigen::VectorXd::Zero(d);
  return result;
}

// emb(c) = sum_{k in N(c)} freq(k) * base(k) / sum_{k in N(c)} freq(k).
// Strict form: every neighbour must have a base vector and the frequency
// mass must be positive.
inline Eigen::VectorXd aggregate(char32_t c, const SimilarityNetwork& net, const CharVectors& base) {
  net.record(c);
  const auto nb = net.neighbors(c);
  Eigen::VectorXd sum;
  double total = 0.0;
  for (const auto& n : nb) {
    const auto it = base.find(n.ch);
    if (it == base.end()) {
      throw Error(Errc::missing_vector, "no base vector for neighbour '" + utf8::encode(n.ch) + "'");
    }
    const double f = net.record(n.ch).freq;
    if (sum.size() == 0) sum = Eigen::VectorXd::Zero(it->second.size());
    sum += f * it->second;
    total += f;
  }
  if (!(total > 0.0)) {
    throw Error(Errc::zero_frequency, "neighbour frequencies of '" + utf8::encode(c) + "' sum to zero");
  }
  return sum / total;
}

// Vocabulary plus base and aggregated vectors. The aggregated matrix is a
// fixed sparse row-stochastic combination of base rows, so updating the base
// matrix and calling refresh() keeps every aggregated vector inside the
// convex hull of its neighbours' base vectors.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  int dim() const { return dim_; }
  std::size_t size() const { return chars_.size(); }
  const std::vector<char32_t>& chars() const { return chars_; }

  bool contains(char32_t c) const { return index_.contains(c); }

  // Row index of c; unknown characters map to the unknown row.
  int id(char32_t c) const {
    const auto it = index_.find(c);
    return it == index_.end() ? unknown_id() : it->second;
  }
  int unknown_id() const { return index_.at(kUnknownChar); }

  std::vector<int> ids(std::u32string_view s) const {
    std::vector<int> out;
    out.reserve(s.size());
    for (char32_t c : s) out.push_back(id(c));
    return out;
  }

  const Eigen::MatrixXd& base() const { return base_; }
  Eigen::MatrixXd& mutable_base() { return base_; }
  const Eigen::MatrixXd& aggregated() const { return aggregated_; }
  const std::vector<ag::SparseRow>& weights() const { return weights_; }

  Eigen::VectorXd base_vector(char32_t c) const { return base_.row(id(c)).transpose(); }
  Eigen::VectorXd aggregated_vector(char32_t c) const { return aggregated_.row(id(c)).transpose(); }

  // n x d matrix of aggregated embeddings for a character sequence.
  Eigen::MatrixXd lookup(std::u32string_view s) const {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(s.size()), dim_);
    for (std::size_t i = 0; i < s.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = aggregated_.row(id(s[i]));
    return x;
  }

  std::vector<ag::SparseRow> weight_rows(std::u32string_view s) const {
    std::vector<ag::SparseRow> rows;
    rows.reserve(s.size());
    for (char32_t c : s) rows.push_back(weights_[id(c)]);
    return rows;
  }

  void refresh() {
    aggregated_ = Eigen::MatrixXd::Zero(base_.rows(), base_.cols());
    for (std::size_t r = 0; r < weights_.size(); ++r) {
      for (const auto& [k, w] : weights_[r]) aggregated_.row(static_cast<Eigen::Index>(r)) += w * base_.row(k);
    }
  }

 private:
  friend EmbeddingTable build_table(const SimilarityNetwork&, const CharVectors&, int);
  friend EmbeddingTable load_table(std::istream&);

  void set_chars(std::vector<char32_t> chars) {
    chars_ = std::move(chars);
    index_.clear();
    for (std::size_t i = 0; i < chars_.size(); ++i) index_[chars_[i]] = static_cast<int>(i);
  }

  int dim_ = 0;
  std::vector<char32_t> chars_;
  std::unordered_map<char32_t, int> index_;
  Eigen::MatrixXd base_;
  std::vector<ag::SparseRow> weights_;
  Eigen::MatrixXd aggregated_;
};

// Aggregated vectors for every repository character and every character
// with a base vector. Repository characters without a base vector start
// from a zero base row, which still takes part in aggregation and can be
// trained later. Zero-frequency neighbours carry no weight; when nothing
// remains (or N(c) is empty, or c is non-Chinese) the character keeps its
// own base row.
inline EmbeddingTable build_table(const SimilarityNetwork& net, const CharVectors& base, int d) {
  if (d < 1) throw Error(Errc::invalid_argument, "embedding dimension must be positive");
  for (const auto& [c, vec] : base) {
    if (vec.size() != d) {
      throw Error(Errc::invalid_argument, "base vector for '" + utf8::encode(c) + "' has wrong length");
    }
  }
  std::set<char32_t> all{kUnknownChar};
  for (const auto& r : net.records()) all.insert(r.ch);
  for (const auto& [c, vec] : base) all.insert(c);

  EmbeddingTable table;
  table.dim_ = d;
  std::vector<char32_t> chars{kUnknownChar};
  for (char32_t c : all) {
    if (c != kUnknownChar) chars.push_back(c);
  }
  table.set_chars(std::move(chars));

  const auto v = static_cast<Eigen::Index>(table.chars_.size());
  table.base_ = Eigen::MatrixXd::Zero(v, d);
  table.weights_.assign(table.chars_.size(), {});
  for (std::size_t i = 0; i < table.chars_.size(); ++i) {
    const char32_t c = table.chars_[i];
    const auto it = base.find(c);
    if (it != base.end() && c != kUnknownChar) table.base_.row(static_cast<Eigen::Index>(i)) = it->second.transpose();
  }
  for (std::size_t i = 0; i < table.chars_.size(); ++i) {
    const char32_t c = table.chars_[i];
    if (c == kUnknownChar) continue;
    auto& row = table.weights_[i];
    double total = 0.0;
    if (net.is_chinese(c)) {
      for (const auto& n : net.neighbors(c)) {
        const double f = net.record(n.ch).freq;
        if (f <= 0.0) continue;
        row.emplace_back(table.id(n.ch), f);
        total += f;
      }
    }
    if (total > 0.0) {
      for (auto& [k, w] : row) w /= total;
    } else {
      row.clear();
      row.emplace_back(static_cast<int>(i), 1.0);
    }
  }
  table.refresh();
  return table;
}

// Persisted form: `d=<int>` then `char<TAB>v1 v2 ... vd`, 6 significant
// digits. Only aggregated vectors are stored.
inline void save_table(const EmbeddingTable& table, std::ostream& out) {
  out << "d=" << table.dim() << '\n';
  std::ostringstream row;
  row << std::setprecision(6);
  for (std::size_t i = 0; i < table.size(); ++i) {
    row.str("");
    row << utf8::encode(table.chars()[i]) << '\t';
    for (int k = 0; k < table.dim(); ++k) {
      if (k > 0) row << ' ';
      row << table.aggregated()(static_cast<Eigen::Index>(i), k);
    }
    out << row.str() << '\n';
  }
}

// Loads a persisted table. The stored vectors become both base and
// aggregated rows, joined by identity weights.
inline EmbeddingTable load_table(std::istream& in) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || !line.starts_with("d=")) {
    throw Error(Errc::parse_error, "embedding table: missing d=<int> header", 1);
  }
  int d = 0;
  try {
    d = std::stoi(line.substr(2));
  } catch (const std::exception&) {
    throw Error(Errc::parse_error, "embedding table: bad dimension", 1);
  }
  if (d < 1) throw Error(Errc::parse_error, "embedding table: bad dimension", 1);
  std::vector<char32_t> chars;
  std::vector<Eigen::VectorXd> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(Errc::parse_error, "embedding table line " + std::to_string(lineno) + ": missing tab", lineno);
    std::u32string c = utf8::decode(std::string_view(line).substr(0, tab));
    if (c.size() != 1) throw Error(Errc::parse_error, "embedding table line " + std::to_string(lineno) + ": expected one character", lineno);
    std::istringstream vs(line.substr(tab + 1));
    Eigen::VectorXd vec(d);
    for (int k = 0; k < d; ++k) {
      if (!(vs >> vec(k))) throw Error(Errc::parse_error, "embedding table line " + std::to_string(lineno) + ": expected " + std::to_string(d) + " values", lineno);
    }
    double extra;
    if (vs >> extra) throw Error(Errc::parse_error, "embedding table line " + std::to_string(lineno) + ": too many values", lineno);
    chars.push_back(c.front());
    rows.push_back(std::move(vec));
  }
  if (std::find(chars.begin(), chars.end(), kUnknownChar) == chars.end()) {
    chars.insert(chars.begin(), kUnknownChar);
    rows.insert(rows.begin(), Eigen::VectorXd::Zero(d));
  }
  EmbeddingTable table;
  table.dim_ = d;
  table.set_chars(chars);
  if (table.index_.size() != chars.size()) throw Error(Errc::parse_error, "embedding table: duplicate character");
  table.base_.resize(static_cast<Eigen::Index>(chars.size()), d);
  table.weights_.assign(chars.size(), {});
  for (std::size_t i = 0; i < chars.size(); ++i) {
    table.base_.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    table.weights_[i] = {{static_cast<int>(i), 1.0}};
  }
  table.refresh();
  return table;
}

}  // namespace gccspam
