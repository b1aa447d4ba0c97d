#pragma once

// Minimal reverse-mode differentiation over dense Eigen matrices.
//
// A Tape records every operation in creation order; backward() walks the
// records in reverse and accumulates gradients into parent nodes and finally
// into the gradient buffers of parameter leaves. Tapes are single-use.

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gccspam/error.hpp"

namespace gccspam::ag {

using Mat = Eigen::MatrixXd;

struct Var {
  std::size_t id = 0;
};

// A trainable tensor with its gradient buffer.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  Parameter() = default;
  Parameter(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {
    grad = Mat::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// One sparse row of a row-combination: output = sum_k weight_k * input[index_k].
using SparseRow = std::vector<std::pair<int, double>>;

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat& grad)>;

  Var constant(Mat value) { return push(std::move(value), false, nullptr); }

  // Leaf bound to external storage; backward() adds into `grad`.
  Var param(Mat& value, Mat& grad) {
    Var v = push(value, true, nullptr);
    nodes_[v.id].param_grad = &grad;
    return v;
  }
  Var param(Parameter& p) { return param(p.value, p.grad); }

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  Var record(Mat value, std::initializer_list<Var> parents, Backward backward) {
    bool rg = false;
    for (Var p : parents) rg = rg || nodes_[p.id].requires_grad;
    return push(std::move(value), rg, rg ? std::move(backward) : Backward{});
  }
  Var record(Mat value, std::span<const Var> parents, Backward backward) {
    bool rg = false;
    for (Var p : parents) rg = rg || nodes_[p.id].requires_grad;
    return push(std::move(value), rg, rg ? std::move(backward) : Backward{});
  }

  void accumulate(Var v, const Mat& g) {
    auto& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
  void backward(Var root) {
    const auto& r = nodes_[root.id];
    if (r.value.rows() != 1 || r.value.cols() != 1) {
      throw Error(Errc::invalid_argument, "backward() needs a scalar root");
    }
    accumulate(root, Mat::Ones(1, 1));
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.param_grad != nullptr) {
        *n.param_grad += n.grad;
      } else if (n.backward) {
        Mat g = std::move(n.grad);
        n.backward(*this, g);
      }
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Backward backward;
    Mat* param_grad = nullptr;
  };

  Var push(Mat value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Mat(), requires_grad, std::move(backward), nullptr});
    return Var{nodes_.size() - 1};
  }

  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Elementary operations.

inline Var matmul(Tape& t, Var a, Var b) {
  Mat out = t.value(a) * t.value(b);
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

inline Var transpose(Tape& t, Var a) {
  Mat out = t.value(a).transpose();
  return t.record(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    t.accumulate(a, g.transpose());
  });
}

inline Var add(Tape& t, Var a, Var b) {
  Mat out = t.value(a) + t.value(b);
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  Mat out = t.value(a) - t.value(b);
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

// Elementwise product.
inline Var mul(Tape& t, Var a, Var b) {
  Mat out = t.value(a).cwiseProduct(t.value(b));
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

inline Var scale(Tape& t, Var a, double s) {
  Mat out = t.value(a) * s;
  return t.record(std::move(out), {a}, [a, s](Tape& t, const Mat& g) { t.accumulate(a, g * s); });
}

// a (n x c) + row (1 x c) broadcast over rows.
inline Var add_row(Tape& t, Var a, Var row) {
  Mat out = t.value(a).rowwise() + t.value(row).row(0);
  return t.record(std::move(out), {a, row}, [a, row](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

inline Var relu(Tape& t, Var a) {
  Mat out = t.value(a).cwiseMax(0.0);
  return t.record(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    const Mat& x = t.value(a);
    t.accumulate(a, g.cwiseProduct((x.array() > 0.0).cast<double>().matrix()));
  });
}

inline Var tanh(Tape& t, Var a) {
  Mat out = t.value(a).array().tanh().matrix();
  Var res = t.constant(out);
  return t.record(std::move(out), {a}, [a, res](Tape& t, const Mat& g) {
    const Mat& y = t.value(res);
    t.accumulate(a, g.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(sigmoid(x)) = -softplus(-x), stable on both tails.
inline double log_sigmoid(double x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

inline Var sigmoid(Tape& t, Var a) {
  Mat out = t.value(a).unaryExpr([](double x) { return stable_sigmoid(x); });
  return t.record(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    const Mat s = t.value(a).unaryExpr([](double x) { return stable_sigmoid(x); });
    t.accumulate(a, g.cwiseProduct((s.array() * (1.0 - s.array())).matrix()));
  });
}

inline Var log_sigmoid(Tape& t, Var a) {
  Mat out = t.value(a).unaryExpr([](double x) { return log_sigmoid(x); });
  return t.record(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    // d/dx log sigmoid(x) = 1 - sigmoid(x) = sigmoid(-x)
    const Mat s = t.value(a).unaryExpr([](double x) { return stable_sigmoid(-x); });
    t.accumulate(a, g.cwiseProduct(s));
  });
}

inline Mat softmax_rows(const Mat& x) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    if (mx == std::numeric_limits<double>::infinity()) {
      // Mass is shared by the +inf entries.
      out.row(i) = (x.row(i).array() == mx).cast<double>();
      out.row(i) /= out.row(i).sum();
      continue;
    }
    out.row(i) = (x.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

inline Mat log_softmax_rows(const Mat& x) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    const double lse = mx + std::log((x.row(i).array() - mx).exp().sum());
    out.row(i) = x.row(i).array() - lse;
  }
  return out;
}

inline Var softmax_rows(Tape& t, Var a) {
  Mat y = softmax_rows(t.value(a));
  Var out = t.constant(y);
  // y is kept in a constant node so the closure stays small.
  return t.record(std::move(y), {a}, [a, out](Tape& t, const Mat& g) {
    const Mat& y = t.value(out);
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    t.accumulate(a, y.cwiseProduct(g - dot.replicate(1, g.cols())));
  });
}

inline Var log_softmax_rows(Tape& t, Var a) {
  Mat y = log_softmax_rows(t.value(a));
  return t.record(std::move(y), {a}, [a](Tape& t, const Mat& g) {
    const Mat p = softmax_rows(t.value(a));
    const Eigen::VectorXd total = g.rowwise().sum();
    t.accumulate(a, g - p.cwiseProduct(total.replicate(1, g.cols())));
  });
}

// Row-wise layer normalisation with learned gain and bias (both 1 x c).
inline Var layer_norm_rows(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5) {
  const Mat& xv = t.value(x);
  const Eigen::Index n = xv.rows();
  const Eigen::Index c = xv.cols();
  Mat xhat(n, c);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = xv.row(i).mean();
    const double var = (xv.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mean) * inv_std(i);
  }
  Mat out = (xhat.array().rowwise() * t.value(gain).row(0).array()).rowwise() +
            t.value(bias).row(0).array();
  Var xhat_node = t.constant(xhat);
  Mat inv(inv_std);
  Var inv_node = t.constant(inv);
  return t.record(std::move(out), {x, gain, bias},
                  [x, gain, bias, xhat_node, inv_node](Tape& t, const Mat& g) {
                    const Mat& xh = t.value(xhat_node);
                    const Mat& is = t.value(inv_node);
                    if (t.requires_grad(gain)) t.accumulate(gain, g.cwiseProduct(xh).colwise().sum());
                    if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
                    if (!t.requires_grad(x)) return;
                    const Mat gh = g.array().rowwise() * t.value(gain).row(0).array();
                    const double c = static_cast<double>(g.cols());
                    Mat gx(g.rows(), g.cols());
                    for (Eigen::Index i = 0; i < g.rows(); ++i) {
                      const double m1 = gh.row(i).sum();
                      const double m2 = gh.row(i).dot(xh.row(i));
                      gx.row(i) = (is(i, 0) / c) *
                                  (c * gh.row(i).array() - m1 - xh.row(i).array() * m2);
                    }
                    t.accumulate(x, gx);
                  });
}

inline Var mean_rows(Tape& t, Var a) {
  Mat out = t.value(a).colwise().mean();
  return t.record(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    const Eigen::Index n = t.value(a).rows();
    t.accumulate(a, g.replicate(n, 1) / static_cast<double>(n));
  });
}

inline Var sum(Tape& t, Var a) {
  Mat out(1, 1);
  out(0, 0) = t.value(a).sum();
  return t.record(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    const Mat& x = t.value(a);
    t.accumulate(a, Mat::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

// out.row(r) = sum_k w_k * a.row(idx_k) for each sparse row. A row with no
// entries yields zeros.
inline Var combine_rows(Tape& t, Var a, std::vector<SparseRow> rows) {
  const Mat& x = t.value(a);
  Mat out = Mat::Zero(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (const auto& [idx, w] : rows[r]) out.row(static_cast<Eigen::Index>(r)) += w * x.row(idx);
  }
  return t.record(std::move(out), {a}, [a, rows = std::move(rows)](Tape& t, const Mat& g) {
    const Mat& x = t.value(a);
    Mat ga = Mat::Zero(x.rows(), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (const auto& [idx, w] : rows[r]) ga.row(idx) += w * g.row(static_cast<Eigen::Index>(r));
    }
    t.accumulate(a, ga);
  });
}

inline Var gather_rows(Tape& t, Var a, const std::vector<int>& ids) {
  std::vector<SparseRow> rows;
  rows.reserve(ids.size());
  for (int id : ids) rows.push_back({{id, 1.0}});
  return combine_rows(t, a, std::move(rows));
}

inline Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  Eigen::Index n = 0;
  const Eigen::Index c = t.value(parts.front()).cols();
  for (Var p : parts) n += t.value(p).rows();
  Mat out(n, c);
  Eigen::Index r = 0;
  for (Var p : parts) {
    out.middleRows(r, t.value(p).rows()) = t.value(p);
    r += t.value(p).rows();
  }
  return t.record(std::move(out), std::span<const Var>(parts), [parts](Tape& t, const Mat& g) {
    Eigen::Index r = 0;
    for (Var p : parts) {
      const Eigen::Index k = t.value(p).rows();
      if (t.requires_grad(p)) t.accumulate(p, g.middleRows(r, k));
      r += k;
    }
  });
}

inline Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  const Eigen::Index n = t.value(parts.front()).rows();
  Eigen::Index c = 0;
  for (Var p : parts) c += t.value(p).cols();
  Mat out(n, c);
  Eigen::Index k = 0;
  for (Var p : parts) {
    out.middleCols(k, t.value(p).cols()) = t.value(p);
    k += t.value(p).cols();
  }
  return t.record(std::move(out), std::span<const Var>(parts), [parts](Tape& t, const Mat& g) {
    Eigen::Index k = 0;
    for (Var p : parts) {
      const Eigen::Index w = t.value(p).cols();
      if (t.requires_grad(p)) t.accumulate(p, g.middleCols(k, w));
      k += w;
    }
  });
}

inline Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index count) {
  Mat out = t.value(a).middleCols(start, count);
  return t.record(std::move(out), {a}, [a, start, count](Tape& t, const Mat& g) {
    const Mat& x = t.value(a);
    Mat ga = Mat::Zero(x.rows(), x.cols());
    ga.middleCols(start, count) = g;
    t.accumulate(a, ga);
  });
}

// Picks entries (row, col) into a k x 1 column.
inline Var pick(Tape& t, Var a, std::vector<std::pair<int, int>> cells) {
  const Mat& x = t.value(a);
  Mat out(static_cast<Eigen::Index>(cells.size()), 1);
  for (std::size_t k = 0; k < cells.size(); ++k) out(static_cast<Eigen::Index>(k), 0) = x(cells[k].first, cells[k].second);
  return t.record(std::move(out), {a}, [a, cells = std::move(cells)](Tape& t, const Mat& g) {
    const Mat& x = t.value(a);
    Mat ga = Mat::Zero(x.rows(), x.cols());
    for (std::size_t k = 0; k < cells.size(); ++k) ga(cells[k].first, cells[k].second) += g(static_cast<Eigen::Index>(k), 0);
    t.accumulate(a, ga);
  });
}

}  // namespace gccspam::ag
