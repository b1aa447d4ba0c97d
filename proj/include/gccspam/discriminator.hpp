#pragma once

// Spam discriminator: logistic head over attention-pooled sentence
// embeddings, trained on cross-entropy plus a supervised InfoNCE term.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gccspam/autograd.hpp"
#include "gccspam/embeddings.hpp"
#include "gccspam/encoder.hpp"
#include "gccspam/error.hpp"
#include "gccspam/optim.hpp"

namespace gccspam {

struct LabeledSample {
  std::u32string text;
  int label = 0;  // 1 = spam

  bool operator==(const LabeledSample&) const = default;
};

inline constexpr double kProbClip = 1e-7;

struct DiscriminatorOptions {
  double tau = 0.07;
  double lambda_cl = 0.1;
  double learning_rate = 1e-3;
  bool train_embeddings = true;
  double threshold = 0.5;
  double clip_norm = 5.0;
};

// Mean binary cross-entropy with probabilities clipped to [eps, 1 - eps].
inline double ce_loss(std::span<const double> probs, std::span<const int> labels) {
  if (probs.size() != labels.size()) throw Error(Errc::length_mismatch, "ce_loss: length mismatch");
  if (probs.empty()) throw Error(Errc::empty_input, "ce_loss: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kProbClip, 1.0 - kProbClip);
    total -= labels[i] == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(probs.size());
}

namespace detail {

inline void check_labels(std::span<const int> labels) {
  for (int y : labels) {
    if (y != 0 && y != 1) throw Error(Errc::invalid_argument, "labels must be 0 or 1");
  }
}

// Row-normalised copy; throws on zero rows.
inline Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& z, Eigen::VectorXd& norms) {
  norms = z.rowwise().norm();
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    if (!(norms(i) > 0.0)) throw Error(Errc::zero_vector, "info_nce: zero-norm embedding at row " + std::to_string(i));
  }
  return norms.cwiseInverse().asDiagonal() * z;
}

struct InfoNceParts {
  double value = 0.0;
  int valid = 0;
  Eigen::MatrixXd grad_logits;  // dL/dS where S = cos/tau, zero diagonal
};

// Supervised InfoNCE on an N x N logit matrix S = cos/tau. Anchors with no
// positive are left out and the average runs over the remaining anchors.
inline InfoNceParts info_nce_core(const Eigen::MatrixXd& s, std::span<const int> labels, bool want_grad) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  InfoNceParts out;
  if (want_grad) out.grad_logits = Eigen::MatrixXd::Zero(n, n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    int positives = 0;
    for (Eigen::Index p = 0; p < n; ++p) positives += (p != i && labels[p] == labels[i]);
    if (positives == 0) continue;
    ++out.valid;
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < n; ++a) {
      if (a != i) mx = std::max(mx, s(i, a));
    }
    double denom = 0.0;
    for (Eigen::Index a = 0; a < n; ++a) {
      if (a != i) denom += std::exp(s(i, a) - mx);
    }
    const double lse = mx + std::log(denom);
    double pos_sum = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      if (p != i && labels[p] == labels[i]) pos_sum += s(i, p);
    }
    total += lse - pos_sum / positives;
    if (want_grad) {
      for (Eigen::Index a = 0; a < n; ++a) {
        if (a == i) continue;
        out.grad_logits(i, a) = std::exp(s(i, a) - lse) - ((labels[a] == labels[i]) ? 1.0 / positives : 0.0);
      }
    }
  }
  if (out.valid == 0) return out;
  out.value = total / out.valid;
  if (want_grad) out.grad_logits /= out.valid;
  return out;
}

}  // namespace detail

// L_CL over a batch of embeddings Z (N x d) with labels y and temperature tau.
inline double info_nce(const Eigen::MatrixXd& z, std::span<const int> labels, double tau) {
  if (static_cast<std::size_t>(z.rows()) != labels.size()) throw Error(Errc::length_mismatch, "info_nce: length mismatch");
  if (z.rows() < 2) throw Error(Errc::invalid_argument, "info_nce needs at least two samples");
  if (!(tau > 0.0)) throw Error(Errc::invalid_argument, "tau must be positive");
  detail::check_labels(labels);
  Eigen::VectorXd norms;
  const Eigen::MatrixXd zn = detail::normalize_rows(z, norms);
  const auto parts = detail::info_nce_core((zn * zn.transpose()) / tau, labels, false);
  if (parts.valid == 0) throw Error(Errc::no_valid_anchors, "info_nce: no anchor has a positive");
  return parts.value;
}

namespace ops {

// Mean BCE of sigmoid(logits) against labels; logits is N x 1. Clipped
// probabilities pass no gradient.
inline ag::Var bce_with_logits(ag::Tape& t, ag::Var logits, std::vector<int> labels) {
  const ag::Mat& l = t.value(logits);
  const auto n = l.rows();
  ag::Mat out(1, 1);
  std::vector<double> probs(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) probs[static_cast<std::size_t>(i)] = ag::stable_sigmoid(l(i, 0));
  out(0, 0) = ce_loss(probs, labels);
  return t.record(std::move(out), {logits}, [logits, labels = std::move(labels)](ag::Tape& t, const ag::Mat& g) {
    const ag::Mat& l = t.value(logits);
    const auto n = l.rows();
    ag::Mat gl(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = ag::stable_sigmoid(l(i, 0));
      const bool clipped = p < kProbClip || p > 1.0 - kProbClip;
      gl(i, 0) = clipped ? 0.0 : g(0, 0) * (p - labels[static_cast<std::size_t>(i)]) / static_cast<double>(n);
    }
    t.accumulate(logits, gl);
  });
}

// InfoNCE as a differentiable op on Z (N x d). Returns 0 with no gradient
// when no anchor has a positive.
inline ag::Var info_nce(ag::Tape& t, ag::Var z, std::vector<int> labels, double tau) {
  Eigen::VectorXd norms;
  const Eigen::MatrixXd zn = detail::normalize_rows(t.value(z), norms);
  auto parts = detail::info_nce_core((zn * zn.transpose()) / tau, labels, true);
  ag::Mat out(1, 1);
  out(0, 0) = parts.value;
  if (parts.valid == 0) return t.constant(out);
  ag::Var zn_node = t.constant(zn);
  ag::Var norm_node = t.constant(ag::Mat(norms));
  ag::Var gs_node = t.constant(std::move(parts.grad_logits));
  return t.record(std::move(out), {z}, [z, zn_node, norm_node, gs_node, tau](ag::Tape& t, const ag::Mat& g) {
    const ag::Mat& zn = t.value(zn_node);
    const ag::Mat& gs = t.value(gs_node);
    const ag::Mat& norms = t.value(norm_node);
    // S = Zn Zn^T / tau  =>  dL/dZn = (G + G^T) Zn / tau
    const ag::Mat gzn = ((gs + gs.transpose()) * zn) * (g(0, 0) / tau);
    ag::Mat gz(zn.rows(), zn.cols());
    for (Eigen::Index i = 0; i < zn.rows(); ++i) {
      const double proj = gzn.row(i).dot(zn.row(i));
      gz.row(i) = (gzn.row(i) - proj * zn.row(i)) / norms(i, 0);
    }
    t.accumulate(z, gz);
  });
}

// Attention + mean pooling applied independently to consecutive row
// segments of x; returns one pooled row per segment.
inline ag::Var attention_pool_segments(ag::Tape& t, ag::Var x, std::vector<std::pair<int, int>> segments) {
  const ag::Mat& xv = t.value(x);
  const double scale = 1.0 / std::sqrt(static_cast<double>(xv.cols()));
  ag::Mat out(static_cast<Eigen::Index>(segments.size()), xv.cols());
  for (std::size_t k = 0; k < segments.size(); ++k) {
    const auto [start, len] = segments[k];
    const ag::Mat seg = xv.middleRows(start, len);
    const ag::Mat a = ag::softmax_rows((seg * seg.transpose()) * scale);
    out.row(static_cast<Eigen::Index>(k)) = (a * seg).colwise().mean();
  }
  return t.record(std::move(out), {x}, [x, segments = std::move(segments), scale](ag::Tape& t, const ag::Mat& g) {
    const ag::Mat& xv = t.value(x);
    ag::Mat gx = ag::Mat::Zero(xv.rows(), xv.cols());
    for (std::size_t k = 0; k < segments.size(); ++k) {
      const auto [start, len] = segments[k];
      const ag::Mat seg = xv.middleRows(start, len);
      const ag::Mat a = ag::softmax_rows((seg * seg.transpose()) * scale);
      const ag::Mat gm = g.row(static_cast<Eigen::Index>(k)).replicate(len, 1) / static_cast<double>(len);
      const ag::Mat ga = gm * seg.transpose();
      const Eigen::VectorXd dot = ga.cwiseProduct(a).rowwise().sum();
      const ag::Mat gl = a.cwiseProduct(ga - dot.replicate(1, len));
      gx.middleRows(start, len) += a.transpose() * gm + scale * (gl + gl.transpose()) * seg;
    }
    t.accumulate(x, gx);
  });
}

}  // namespace ops

class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(EmbeddingTable table, DiscriminatorOptions options)
      : table_(std::move(table)), options_(options) {
    if (!(options_.tau > 0.0)) throw Error(Errc::invalid_argument, "tau must be positive");
    if (options_.lambda_cl < 0.0) throw Error(Errc::invalid_argument, "lambda_cl must be >= 0");
    weights_ = ag::Mat::Zero(table_.dim(), 1);
    bias_ = ag::Mat::Zero(1, 1);
    reset_grads();
  }

  const EmbeddingTable& table() const { return table_; }
  EmbeddingTable& mutable_table() { return table_; }
  const DiscriminatorOptions& options() const { return options_; }
  DiscriminatorOptions& mutable_options() { return options_; }
  int dim() const { return table_.dim(); }

  const ag::Mat& weights() const { return weights_; }
  double bias() const { return bias_(0, 0); }
  void set_head(const Eigen::VectorXd& w, double b) {
    if (w.size() != dim()) throw Error(Errc::invalid_argument, "head weight length must equal d");
    weights_ = w;
    bias_(0, 0) = b;
  }

  Eigen::VectorXd embed(std::u32string_view s) const { return encode(s, table_).vector; }

  double logit(std::u32string_view s) const { return embed(s).dot(weights_.col(0)) + bias_(0, 0); }

  // Spam probability, kept strictly inside (0, 1).
  double predict(std::u32string_view s) const {
    constexpr double lo = std::numeric_limits<double>::min();
    constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
    return std::clamp(ag::stable_sigmoid(logit(s)), lo, hi);
  }

  int classify(std::u32string_view s) const { return predict(s) >= options_.threshold ? 1 : 0; }

  // Slots in a fixed order: head weights, bias, then (optionally) base table.
  std::vector<ParamSlot> slots() {
    std::vector<ParamSlot> s{{&weights_, &weights_grad_}, {&bias_, &bias_grad_}};
    if (options_.train_embeddings) s.push_back({&table_.mutable_base(), &base_grad_});
    return s;
  }

  void reset_grads() {
    weights_grad_ = ag::Mat::Zero(weights_.rows(), weights_.cols());
    bias_grad_ = ag::Mat::Zero(1, 1);
    base_grad_ = ag::Mat::Zero(table_.base().rows(), table_.base().cols());
  }

  struct Forward {
    ag::Var z;
    ag::Var logits;
    ag::Var ce;
    ag::Var cl;
    ag::Var total;
    bool has_contrastive = false;
  };

  // Records the batch loss L = CE + lambda_cl * InfoNCE on a tape.
  Forward forward(ag::Tape& t, std::span<const LabeledSample> batch) {
    if (batch.empty()) throw Error(Errc::empty_input, "empty batch");
    std::vector<ag::SparseRow> rows;
    std::vector<std::pair<int, int>> segments;
    std::vector<int> labels;
    for (const auto& s : batch) {
      const auto text = clip_sequence(s.text);
      if (text.empty()) throw Error(Errc::empty_input, "cannot encode an empty sentence");
      if (s.label != 0 && s.label != 1) throw Error(Errc::invalid_argument, "labels must be 0 or 1");
      segments.emplace_back(static_cast<int>(rows.size()), static_cast<int>(text.size()));
      auto w = table_.weight_rows(text);
      rows.insert(rows.end(), w.begin(), w.end());
      labels.push_back(s.label);
    }
    ag::Var base = options_.train_embeddings ? t.param(table_.mutable_base(), base_grad_)
                                             : t.constant(table_.base());
    Forward f;
    ag::Var x = ag::combine_rows(t, base, std::move(rows));
    f.z = ops::attention_pool_segments(t, x, std::move(segments));
    f.logits = ag::add_row(t, ag::matmul(t, f.z, t.param(weights_, weights_grad_)), t.param(bias_, bias_grad_));
    f.ce = ops::bce_with_logits(t, f.logits, labels);
    f.total = f.ce;
    if (options_.lambda_cl > 0.0 && batch.size() >= 2) {
      f.cl = ops::info_nce(t, f.z, labels, options_.tau);
      f.has_contrastive = true;
      f.total = ag::add(t, f.ce, ag::scale(t, f.cl, options_.lambda_cl));
    }
    return f;
  }

  std::uint64_t parameter_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mixin = [&h](const ag::Mat& m) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
      for (std::size_t i = 0; i < static_cast<std::size_t>(m.size()) * sizeof(double); ++i) {
        h = (h ^ bytes[i]) * 1099511628211ULL;
      }
    };
    mixin(weights_);
    mixin(bias_);
    mixin(table_.base());
    return h;
  }

 private:
  EmbeddingTable table_;
  DiscriminatorOptions options_;
  ag::Mat weights_;
  ag::Mat bias_;
  ag::Mat weights_grad_;
  ag::Mat bias_grad_;
  ag::Mat base_grad_;
};

// L = CE + lambda_cl * L_CL on a batch; the contrastive term is 0 when no
// anchor has a positive.
inline double total_loss(Discriminator& model, std::span<const LabeledSample> batch) {
  if (batch.size() < 2) throw Error(Errc::invalid_argument, "total_loss needs at least two samples");
  ag::Tape t;
  return t.value(model.forward(t, batch).total)(0, 0);
}

// One Adam step on total_loss. Returns the loss before the update.
inline double train_step(Discriminator& model, std::span<const LabeledSample> batch, Adam& optimizer) {
  model.reset_grads();
  ag::Tape t;
  const auto f = model.forward(t, batch);
  const double loss = t.value(f.total)(0, 0);
  if (!std::isfinite(loss)) throw Error(Errc::non_finite, "non-finite discriminator loss");
  t.backward(f.total);
  optimizer.step(model.slots());
  if (model.options().train_embeddings) model.mutable_table().refresh();
  return loss;
}

inline Adam make_discriminator_optimizer(const DiscriminatorOptions& opt) {
  Adam::Options a;
  a.learning_rate = opt.learning_rate;
  a.clip_norm = opt.clip_norm;
  return Adam(a);
}

// ---------------------------------------------------------------------------
// Checkpoint: one text archive with a metadata block, the head and the
// embedding table in its persisted form.

struct CheckpointMeta {
  int schema = 1;
  double rho = 0.7;
  std::uint64_t seed = 42;
};

inline constexpr std::string_view kDiscriminatorMagic = "gccspam-discriminator";

inline void save_discriminator(const Discriminator& d, const CheckpointMeta& meta, std::ostream& out) {
  out << kDiscriminatorMagic << '\t' << meta.schema << '\n';
  out << std::setprecision(17);
  out << "[meta]\n";
  out << "schema=" << meta.schema << '\n';
  out << "tau=" << d.options().tau << '\n';
  out << "lambda_cl=" << d.options().lambda_cl << '\n';
  out << "rho=" << meta.rho << '\n';
  out << "d=" << d.dim() << '\n';
  out << "seed=" << meta.seed << '\n';
  out << "threshold=" << d.options().threshold << '\n';
  out << "[head]\n";
  out << "bias=" << d.bias() << '\n';
  out << "w=";
  for (int k = 0; k < d.dim(); ++k) out << (k ? " " : "") << d.weights()(k, 0);
  out << '\n';
  out << "[embeddings]\n";
  save_table(d.table(), out);
}

struct LoadedDiscriminator {
  Discriminator model;
  CheckpointMeta meta;
};

inline LoadedDiscriminator load_discriminator(std::istream& in) {
  auto bad = [](const std::string& msg) { return Error(Errc::parse_error, "discriminator checkpoint: " + msg); };
  std::string line;
  if (!std::getline(in, line) || !line.starts_with(kDiscriminatorMagic)) throw bad("missing header");
  DiscriminatorOptions opt;
  CheckpointMeta meta;
  Eigen::VectorXd w;
  double bias = 0.0;
  int d = -1;
  bool have_w = false;
  bool have_bias = false;
  std::string section;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line;
      if (section == "[embeddings]") break;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw bad("malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    try {
      if (section == "[meta]") {
        if (key == "schema") meta.schema = std::stoi(val);
        else if (key == "tau") opt.tau = std::stod(val);
        else if (key == "lambda_cl") opt.lambda_cl = std::stod(val);
        else if (key == "rho") meta.rho = std::stod(val);
        else if (key == "d") d = std::stoi(val);
        else if (key == "seed") meta.seed = std::stoull(val);
        else if (key == "threshold") opt.threshold = std::stod(val);
      } else if (section == "[head]") {
        if (key == "bias") {
          bias = std::stod(val);
          have_bias = true;
        } else if (key == "w") {
          std::istringstream vs(val);
          std::vector<double> vals;
          double x;
          while (vs >> x) vals.push_back(x);
          w = Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
          have_w = true;
        }
      }
    } catch (const std::exception&) {
      throw bad("bad value for '" + key + "'");
    }
  }
  if (section != "[embeddings]") throw bad("missing [embeddings] section");
  if (!have_w || !have_bias) throw bad("missing head");
  if (meta.schema != 1) throw bad("unsupported schema " + std::to_string(meta.schema));
  EmbeddingTable table = load_table(in);
  if (table.dim() != d || w.size() != d) throw bad("dimension mismatch");
  opt.train_embeddings = false;
  LoadedDiscriminator out{Discriminator(std::move(table), opt), meta};
  out.model.set_head(w, bias);
  return out;
}

}  // namespace gccspam
