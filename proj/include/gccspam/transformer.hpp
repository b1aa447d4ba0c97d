#pragma once

// Small pre-LN transformer encoder used by the generator. Sequences of a
// batch are stacked row-wise; attention never crosses segment boundaries.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "gccspam/autograd.hpp"
#include "gccspam/optim.hpp"
#include "gccspam/rng.hpp"

namespace gccspam {

struct TransformerOptions {
  int vocab = 0;
  int model_dim = 64;
  int heads = 2;
  int layers = 2;
  int ffn_dim = 128;
};

namespace ops {

// softmax(Q K^T * scale) V computed independently per row segment.
inline ag::Var segment_attention(ag::Tape& t, ag::Var q, ag::Var k, ag::Var v,
                                 std::vector<std::pair<int, int>> segments, double scale) {
  const ag::Mat& qv = t.value(q);
  const ag::Mat& kv = t.value(k);
  const ag::Mat& vv = t.value(v);
  ag::Mat out(qv.rows(), vv.cols());
  std::vector<ag::Mat> probs;
  probs.reserve(segments.size());
  for (const auto& [start, len] : segments) {
    ag::Mat a = ag::softmax_rows(qv.middleRows(start, len) * kv.middleRows(start, len).transpose() * scale);
    out.middleRows(start, len) = a * vv.middleRows(start, len);
    probs.push_back(std::move(a));
  }
  return t.record(std::move(out), {q, k, v},
                  [q, k, v, segments = std::move(segments), probs = std::move(probs), scale](ag::Tape& t, const ag::Mat& g) {
                    const ag::Mat& qv = t.value(q);
                    const ag::Mat& kv = t.value(k);
                    const ag::Mat& vv = t.value(v);
                    ag::Mat gq = ag::Mat::Zero(qv.rows(), qv.cols());
                    ag::Mat gk = ag::Mat::Zero(kv.rows(), kv.cols());
                    ag::Mat gv = ag::Mat::Zero(vv.rows(), vv.cols());
                    for (std::size_t s = 0; s < segments.size(); ++s) {
                      const auto [start, len] = segments[s];
                      const ag::Mat& a = probs[s];
                      const auto go = g.middleRows(start, len);
                      gv.middleRows(start, len) = a.transpose() * go;
                      const ag::Mat ga = go * vv.middleRows(start, len).transpose();
                      const Eigen::VectorXd dot = ga.cwiseProduct(a).rowwise().sum();
                      const ag::Mat gs = a.cwiseProduct(ga - dot.replicate(1, len)) * scale;
                      gq.middleRows(start, len) = gs * kv.middleRows(start, len);
                      gk.middleRows(start, len) = gs.transpose() * qv.middleRows(start, len);
                    }
                    t.accumulate(q, gq);
                    t.accumulate(k, gk);
                    t.accumulate(v, gv);
                  });
}

}  // namespace ops

inline ag::Mat sinusoidal_positions(int length, int dim) {
  ag::Mat pe(length, dim);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  }
  return pe;
}

class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(const TransformerOptions& opt, Rng& rng) : opt_(opt) {
    if (opt.vocab < 1 || opt.model_dim < 1 || opt.heads < 1 || opt.layers < 0 || opt.ffn_dim < 1 ||
        opt.model_dim % opt.heads != 0) {
      throw Error(Errc::invalid_argument, "invalid transformer shape");
    }
    const int d = opt.model_dim;
    params_.emplace_back("embed", random(opt.vocab, d, 1.0, rng));
    for (int l = 0; l < opt.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      params_.emplace_back(p + "ln1.gain", ag::Mat::Ones(1, d));
      params_.emplace_back(p + "ln1.bias", ag::Mat::Zero(1, d));
      params_.emplace_back(p + "wq", random(d, d, 1.0 / std::sqrt(d), rng));
      params_.emplace_back(p + "wk", random(d, d, 1.0 / std::sqrt(d), rng));
      params_.emplace_back(p + "wv", random(d, d, 1.0 / std::sqrt(d), rng));
      params_.emplace_back(p + "wo", random(d, d, 1.0 / std::sqrt(d), rng));
      params_.emplace_back(p + "ln2.gain", ag::Mat::Ones(1, d));
      params_.emplace_back(p + "ln2.bias", ag::Mat::Zero(1, d));
      params_.emplace_back(p + "w1", random(d, opt.ffn_dim, 1.0 / std::sqrt(d), rng));
      params_.emplace_back(p + "b1", ag::Mat::Zero(1, opt.ffn_dim));
      params_.emplace_back(p + "w2", random(opt.ffn_dim, d, 1.0 / std::sqrt(opt.ffn_dim), rng));
      params_.emplace_back(p + "b2", ag::Mat::Zero(1, d));
    }
    params_.emplace_back("final.gain", ag::Mat::Ones(1, d));
    params_.emplace_back("final.bias", ag::Mat::Zero(1, d));
  }

  const TransformerOptions& options() const { return opt_; }
  std::vector<ag::Parameter>& parameters() { return params_; }
  const std::vector<ag::Parameter>& parameters() const { return params_; }

  // Token ids of all sequences, stacked; segments give (start, length).
  // Returns the per-position states, rows aligned with ids.
  ag::Var forward(ag::Tape& t, const std::vector<int>& ids, const std::vector<std::pair<int, int>>& segments) {
    const int d = opt_.model_dim;
    int longest = 0;
    for (const auto& s : segments) longest = std::max(longest, s.second);
    const ag::Mat pe = sinusoidal_positions(longest, d);
    ag::Mat pos(static_cast<Eigen::Index>(ids.size()), d);
    for (const auto& [start, len] : segments) pos.middleRows(start, len) = pe.topRows(len);

    std::size_t k = 0;
    auto next = [&]() { return t.param(params_[k++]); };
    ag::Var x = ag::add(t, ag::gather_rows(t, next(), ids), t.constant(std::move(pos)));
    const int head_dim = d / opt_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (int l = 0; l < opt_.layers; ++l) {
      ag::Var g1 = next(), b1 = next();
      ag::Var wq = next(), wk = next(), wv = next(), wo = next();
      ag::Var h = ag::layer_norm_rows(t, x, g1, b1);
      ag::Var q = ag::matmul(t, h, wq);
      ag::Var kk = ag::matmul(t, h, wk);
      ag::Var v = ag::matmul(t, h, wv);
      std::vector<ag::Var> heads;
      for (int hd = 0; hd < opt_.heads; ++hd) {
        heads.push_back(ops::segment_attention(t, ag::slice_cols(t, q, hd * head_dim, head_dim),
                                               ag::slice_cols(t, kk, hd * head_dim, head_dim),
                                               ag::slice_cols(t, v, hd * head_dim, head_dim), segments, scale));
      }
      ag::Var att = opt_.heads == 1 ? heads.front() : ag::concat_cols(t, heads);
      x = ag::add(t, x, ag::matmul(t, att, wo));

      ag::Var g2 = next(), b2 = next();
      ag::Var w1 = next(), c1 = next(), w2 = next(), c2 = next();
      ag::Var f = ag::relu(t, ag::add_row(t, ag::matmul(t, ag::layer_norm_rows(t, x, g2, b2), w1), c1));
      x = ag::add(t, x, ag::add_row(t, ag::matmul(t, f, w2), c2));
    }
    ag::Var gf = next(), bf = next();
    return ag::layer_norm_rows(t, x, gf, bf);
  }

 private:
  static ag::Mat random(int r, int c, double stddev, Rng& rng) {
    ag::Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal() * stddev;
    return m;
  }

  TransformerOptions opt_;
  std::vector<ag::Parameter> params_;
};

}  // namespace gccspam
