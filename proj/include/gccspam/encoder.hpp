#pragma once

// Sentence embedding by single-head scaled dot-product self-attention over
// the aggregated character embeddings, followed by mean pooling. There are
// no learned projections and no positional signal, so the sentence vector is
// invariant to character order.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <string_view>

#include "gccspam/autograd.hpp"
#include "gccspam/embeddings.hpp"
#include "gccspam/error.hpp"
#include "gccspam/log.hpp"

namespace gccspam {

inline constexpr std::size_t kMaxSequenceLength = 512;

struct Attention {
  Eigen::MatrixXd weights;  // n x n, row-stochastic
  Eigen::MatrixXd context;  // n x d, weights * X
};

struct SentenceEmbedding {
  Eigen::VectorXd vector;
  std::size_t length = 0;
};

inline Attention attend(const Eigen::MatrixXd& x) {
  if (x.rows() < 1 || x.cols() < 1) throw Error(Errc::invalid_argument, "attend: empty input");
  if (!x.allFinite()) throw Error(Errc::non_finite, "attend: non-finite input");
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  Attention out;
  out.weights = ag::softmax_rows((x * x.transpose()) * scale);
  out.context = out.weights * x;
  return out;
}

inline std::u32string_view clip_sequence(std::u32string_view s) {
  if (s.size() > kMaxSequenceLength) {
    log::warn("sequence of length ", s.size(), " truncated to ", kMaxSequenceLength);
    return s.substr(0, kMaxSequenceLength);
  }
  return s;
}

inline SentenceEmbedding encode(std::u32string_view s, const EmbeddingTable& table) {
  s = clip_sequence(s);
  if (s.empty()) throw Error(Errc::empty_input, "cannot encode an empty sentence");
  const Attention a = attend(table.lookup(s));
  return {a.context.colwise().mean().transpose(), s.size()};
}

// Differentiable counterpart of attend + mean pooling: x is n x d, the
// result is 1 x d.
inline ag::Var encode_var(ag::Tape& t, ag::Var x) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(t.value(x).cols()));
  ag::Var logits = ag::scale(t, ag::matmul(t, x, ag::transpose(t, x)), scale);
  ag::Var weights = ag::softmax_rows(t, logits);
  return ag::mean_rows(t, ag::matmul(t, weights, x));
}

}  // namespace gccspam
