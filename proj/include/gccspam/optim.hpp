#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gccspam/error.hpp"

namespace gccspam {

// A view of one trainable tensor and its accumulated gradient.
struct ParamSlot {
  Eigen::MatrixXd* value;
  Eigen::MatrixXd* grad;
};

inline double global_grad_norm(const std::vector<ParamSlot>& slots) {
  double sq = 0.0;
  for (const auto& s : slots) sq += s.grad->squaredNorm();
  return std::sqrt(sq);
}

// Adam with optional global-norm clipping. Moment buffers are allocated on
// the first step and keyed by slot position, so callers must pass the slots
// in a fixed order.
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.0;  // 0 disables clipping
  };

  Adam() = default;
  explicit Adam(Options opt) : opt_(opt) {}

  const Options& options() const { return opt_; }
  void set_learning_rate(double lr) { opt_.learning_rate = lr; }
  long steps() const { return t_; }

  void step(const std::vector<ParamSlot>& slots) {
    const double norm = global_grad_norm(slots);
    if (!std::isfinite(norm)) throw Error(Errc::non_finite, "non-finite gradient");
    if (m_.empty()) {
      for (const auto& s : slots) {
        m_.push_back(Eigen::MatrixXd::Zero(s.value->rows(), s.value->cols()));
        v_.push_back(Eigen::MatrixXd::Zero(s.value->rows(), s.value->cols()));
      }
    }
    if (m_.size() != slots.size()) throw Error(Errc::invalid_argument, "Adam slot count changed");
    const double clip = (opt_.clip_norm > 0.0 && norm > opt_.clip_norm) ? opt_.clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < slots.size(); ++k) {
      const Eigen::MatrixXd g = *slots[k].grad * clip;
      m_[k] = opt_.beta1 * m_[k] + (1.0 - opt_.beta1) * g;
      v_[k] = opt_.beta2 * v_[k] + (1.0 - opt_.beta2) * g.cwiseProduct(g);
      if (opt_.learning_rate == 0.0) continue;
      *slots[k].value -= (opt_.learning_rate *
                          ((m_[k].array() / bc1) / ((v_[k].array() / bc2).sqrt() + opt_.eps)))
                             .matrix();
    }
  }

 private:
  Options opt_;
  long t_ = 0;
  std::vector<Eigen::MatrixXd> m_;
  std::vector<Eigen::MatrixXd> v_;
};

}  // namespace gccspam
