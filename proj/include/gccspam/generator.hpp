#pragma once

// Adversarial generator: a per-position Bernoulli mask policy decides which
// Chinese characters to replace, and a replacement head picks the new
// character with a straight-through Gumbel-Softmax sample. Trained by
// REINFORCE on R = 1 - D(s~) plus a similarity penalty.

#include <Eigen/Dense>

#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "gccspam/autograd.hpp"
#include "gccspam/charsim.hpp"
#include "gccspam/discriminator.hpp"
#include "gccspam/embeddings.hpp"
#include "gccspam/encoder.hpp"
#include "gccspam/error.hpp"
#include "gccspam/optim.hpp"
#include "gccspam/rng.hpp"
#include "gccspam/transformer.hpp"

namespace gccspam {

enum class CandidateMode { vocabulary, neighbors };

inline std::string_view to_string(CandidateMode m) { return m == CandidateMode::vocabulary ? "vocabulary" : "neighbors"; }

inline CandidateMode parse_candidate_mode(std::string_view s) {
  if (s == "vocabulary") return CandidateMode::vocabulary;
  if (s == "neighbors") return CandidateMode::neighbors;
  throw Error(Errc::invalid_argument, "unknown candidate mode '" + std::string(s) + "'");
}

struct GeneratorOptions {
  int model_dim = 64;
  int heads = 2;
  int layers = 2;
  int ffn_dim = 128;
  double lambda_sim = 1.0;
  double learning_rate = 1e-3;
  double temperature = 1.0;
  double baseline_decay = 0.9;
  double initial_mask_rate = 0.1;
  double clip_norm = 5.0;
  CandidateMode candidates = CandidateMode::vocabulary;
};

struct PerturbationTrace {
  std::u32string original;
  std::u32string perturbed;
  std::vector<int> masks;
  std::vector<int> replacements;  // vocabulary index, -1 where unmasked
  std::vector<double> mask_probs;
  std::vector<Eigen::VectorXd> policy;  // softmax policy at masked positions, empty elsewhere
  std::vector<Eigen::VectorXd> gumbel;  // noise drawn at masked positions, empty elsewhere
  std::vector<int> considered;          // positions in V
  double logprob = 0.0;

  int replaced() const {
    int n = 0;
    for (std::size_t i = 0; i < original.size(); ++i) n += original[i] != perturbed[i];
    return n;
  }
};

// Vocabulary index order is the discriminator table's character order.
class Generator {
 public:
  Generator() = default;

  Generator(std::vector<char32_t> vocab, SimilarityNetwork net, const GeneratorOptions& opt, std::uint64_t seed)
      : opt_(opt), vocab_(std::move(vocab)), net_(std::make_shared<const SimilarityNetwork>(std::move(net))) {
    if (!(opt.temperature > 0.0)) throw Error(Errc::invalid_argument, "temperature must be positive");
    if (opt.lambda_sim < 0.0) throw Error(Errc::invalid_argument, "lambda_sim must be >= 0");
    if (!(opt.initial_mask_rate > 0.0 && opt.initial_mask_rate < 1.0)) {
      throw Error(Errc::invalid_argument, "initial mask rate must be in (0, 1)");
    }
    index_vocab();
    Rng rng(seed);
    TransformerOptions t;
    t.vocab = static_cast<int>(vocab_.size());
    t.model_dim = opt.model_dim;
    t.heads = opt.heads;
    t.layers = opt.layers;
    t.ffn_dim = opt.ffn_dim;
    encoder_ = TransformerEncoder(t, rng);
    const int d = opt.model_dim;
    const int v = t.vocab;
    ag::Mat wm(d, 1), wr(d, v);
    for (Eigen::Index i = 0; i < wm.size(); ++i) wm(i) = rng.normal() * 0.01;
    for (Eigen::Index i = 0; i < wr.size(); ++i) wr(i) = rng.normal() / std::sqrt(d);
    heads_.emplace_back("mask.w", wm);
    heads_.emplace_back("mask.b", ag::Mat::Constant(1, 1, std::log(opt.initial_mask_rate / (1.0 - opt.initial_mask_rate))));
    heads_.emplace_back("replace.w", wr);
    heads_.emplace_back("replace.b", ag::Mat::Zero(1, v));
  }

  const GeneratorOptions& options() const { return opt_; }
  GeneratorOptions& mutable_options() { return opt_; }
  const std::vector<char32_t>& vocab() const { return vocab_; }
  const SimilarityNetwork& network() const { return *net_; }
  int vocab_size() const { return static_cast<int>(vocab_.size()); }

  int id(char32_t c) const {
    const auto it = index_.find(c);
    return it == index_.end() ? unknown_ : it->second;
  }

  // Positions eligible for masking.
  bool maskable(char32_t c) const { return net_->is_chinese(c); }

  void set_temperature(double t) {
    if (!(t > 0.0)) throw Error(Errc::invalid_argument, "temperature must be positive");
    opt_.temperature = t;
  }

  std::vector<ag::Parameter*> parameters() {
    std::vector<ag::Parameter*> out;
    for (auto& p : encoder_.parameters()) out.push_back(&p);
    for (auto& p : heads_) out.push_back(&p);
    return out;
  }
  std::vector<const ag::Parameter*> parameters() const {
    std::vector<const ag::Parameter*> out;
    for (const auto& p : encoder_.parameters()) out.push_back(&p);
    for (const auto& p : heads_) out.push_back(&p);
    return out;
  }

  std::vector<ParamSlot> slots() {
    std::vector<ParamSlot> s;
    for (auto* p : parameters()) s.push_back({&p->value, &p->grad});
    return s;
  }

  void zero_grads() {
    for (auto* p : parameters()) p->zero_grad();
  }

  std::uint64_t parameter_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto* p : parameters()) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
      for (std::size_t i = 0; i < static_cast<std::size_t>(p->value.size()) * sizeof(double); ++i) {
        h = (h ^ bytes[i]) * 1099511628211ULL;
      }
    }
    return h;
  }

  // Additive candidate mask for a replacement at a position holding c:
  // 0 for allowed indices, -inf elsewhere. Specials are never allowed.
  Eigen::RowVectorXd candidate_mask(char32_t c) const {
    const double ninf = -std::numeric_limits<double>::infinity();
    if (opt_.candidates == CandidateMode::vocabulary) {
      Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(vocab_size());
      m(unknown_) = ninf;
      return m;
    }
    Eigen::RowVectorXd m = Eigen::RowVectorXd::Constant(vocab_size(), ninf);
    for (const auto& n : net_->neighbors(c)) {
      const auto it = index_.find(n.ch);
      if (it != index_.end()) m(it->second) = 0.0;
    }
    const auto self = index_.find(c);
    if (self != index_.end()) m(self->second) = 0.0;
    return m;
  }

  // sim(c, vocab[j]) for every j; characters outside the dictionary score 0.
  const Eigen::RowVectorXd& similarity_row(char32_t c) const {
    auto it = sim_cache_.find(c);
    if (it != sim_cache_.end()) return it->second;
    Eigen::RowVectorXd row(vocab_size());
    for (int j = 0; j < vocab_size(); ++j) row(j) = net_->similarity_or_zero(c, vocab_[j]);
    return sim_cache_.emplace(c, std::move(row)).first->second;
  }

  struct Batch {
    std::vector<std::u32string> texts;
    std::vector<int> ids;
    std::vector<std::pair<int, int>> segments;
  };

  Batch make_batch(std::span<const std::u32string> texts) const {
    Batch b;
    for (const auto& s : texts) {
      const auto clipped = clip_sequence(s);
      if (clipped.empty()) throw Error(Errc::empty_input, "cannot perturb an empty sentence");
      b.segments.emplace_back(static_cast<int>(b.ids.size()), static_cast<int>(clipped.size()));
      for (char32_t c : clipped) b.ids.push_back(id(c));
      b.texts.emplace_back(clipped);
    }
    return b;
  }

  // Per-position states (tracked parameters).
  ag::Var states(ag::Tape& t, const Batch& b) { return encoder_.forward(t, b.ids, b.segments); }

  ag::Var mask_logits(ag::Tape& t, ag::Var h) {
    return ag::add_row(t, ag::matmul(t, h, t.param(heads_[0])), t.param(heads_[1]));
  }

  ag::Var replacement_logits(ag::Tape& t, ag::Var h) {
    return ag::add_row(t, ag::matmul(t, h, t.param(heads_[2])), t.param(heads_[3]));
  }

  // Mask probabilities and replacement logits for one sentence (values only;
  // non-maskable positions get p = 0).
  std::pair<Eigen::VectorXd, Eigen::MatrixXd> policy(std::u32string_view s) {
    const std::u32string text(s);
    const Batch b = make_batch(std::span(&text, 1));
    ag::Tape t;
    const ag::Var h = states(t, b);
    Eigen::VectorXd p = t.value(mask_logits(t, h)).col(0).unaryExpr([](double x) { return ag::stable_sigmoid(x); });
    for (std::size_t i = 0; i < b.texts[0].size(); ++i) {
      if (!maskable(b.texts[0][i])) p(static_cast<Eigen::Index>(i)) = 0.0;
    }
    return {p, t.value(replacement_logits(t, h))};
  }

 private:
  friend void save_generator(const Generator&, std::ostream&);
  friend Generator load_generator(std::istream&);

  void index_vocab() {
    index_.clear();
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
      if (!index_.emplace(vocab_[i], static_cast<int>(i)).second) {
        throw Error(Errc::duplicate_character, "duplicate vocabulary character");
      }
    }
    const auto it = index_.find(kUnknownChar);
    if (it == index_.end()) throw Error(Errc::invalid_argument, "vocabulary lacks the unknown symbol");
    unknown_ = it->second;
    sim_cache_.clear();
  }

  GeneratorOptions opt_;
  std::vector<char32_t> vocab_;
  std::unordered_map<char32_t, int> index_;
  int unknown_ = 0;
  std::shared_ptr<const SimilarityNetwork> net_;
  TransformerEncoder encoder_;
  std::vector<ag::Parameter> heads_;
  mutable std::unordered_map<char32_t, Eigen::RowVectorXd> sim_cache_;
};

// Samples a trace given mask probabilities and replacement logits for each
// position of s. Masks are drawn first for every position, then Gumbel noise
// for each masked position in order.
inline PerturbationTrace sample_trace(const Generator& g, std::u32string_view s, const Eigen::VectorXd& p,
                                      const Eigen::MatrixXd& logits, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(s.size());
  if (n == 0) throw Error(Errc::empty_input, "cannot perturb an empty sentence");
  if (p.size() != n || logits.rows() != n || logits.cols() != g.vocab_size()) {
    throw Error(Errc::length_mismatch, "policy shape does not match the sentence");
  }
  PerturbationTrace tr;
  tr.original = std::u32string(s);
  tr.perturbed = tr.original;
  tr.masks.assign(s.size(), 0);
  tr.replacements.assign(s.size(), -1);
  tr.mask_probs.assign(s.size(), 0.0);
  tr.policy.assign(s.size(), {});
  tr.gumbel.assign(s.size(), {});
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!g.maskable(s[i])) continue;
    const double pi = std::clamp(p(i), 0.0, 1.0);
    tr.mask_probs[i] = pi;
    tr.masks[i] = rng.bernoulli(pi) ? 1 : 0;
    tr.logprob += std::log(tr.masks[i] ? pi : 1.0 - pi);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!tr.masks[i]) continue;
    const Eigen::RowVectorXd r = logits.row(i) + g.candidate_mask(s[i]);
    Eigen::VectorXd noise(r.size());
    for (Eigen::Index j = 0; j < r.size(); ++j) noise(j) = rng.gumbel();
    Eigen::Index best = 0;
    (r.transpose() + noise).maxCoeff(&best);
    tr.policy[i] = ag::softmax_rows(ag::Mat(r)).row(0).transpose();
    tr.gumbel[i] = std::move(noise);
    tr.replacements[i] = static_cast<int>(best);
    tr.perturbed[i] = g.vocab()[static_cast<std::size_t>(best)];
    tr.considered.push_back(static_cast<int>(i));
    tr.logprob += std::log(tr.policy[i](best));
  }
  return tr;
}

inline PerturbationTrace perturb(Generator& g, std::u32string_view s, std::uint64_t seed) {
  if (s.empty()) throw Error(Errc::empty_input, "cannot perturb an empty sentence");
  const auto clipped = clip_sequence(s);
  const auto [p, logits] = g.policy(clipped);
  Rng rng(seed);
  return sample_trace(g, clipped, p, logits, rng);
}

inline double reward(double d_prob) {
  if (!(d_prob > 0.0 && d_prob < 1.0)) throw Error(Errc::out_of_range, "discriminator probability must be in (0, 1)");
  return 1.0 - d_prob;
}

inline double rl_loss(std::span<const PerturbationTrace> traces, std::span<const double> rewards, double baseline) {
  if (traces.size() != rewards.size()) throw Error(Errc::length_mismatch, "rl_loss: length mismatch");
  if (traces.empty()) throw Error(Errc::empty_input, "rl_loss: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (!std::isfinite(rewards[i])) throw Error(Errc::non_finite, "rl_loss: non-finite reward");
    total += traces[i].logprob * (rewards[i] - baseline);
  }
  return -total / static_cast<double>(traces.size());
}

inline double sim_loss(const PerturbationTrace& tr, const SimilarityNetwork& net) {
  if (tr.considered.empty()) return 0.0;
  double total = 0.0;
  for (int i : tr.considered) total += 1.0 - net.similarity_or_zero(tr.original[i], tr.perturbed[i]);
  return total / static_cast<double>(tr.considered.size());
}

inline double generator_loss(double rl, double sim, double lambda_sim) {
  if (!std::isfinite(rl) || !std::isfinite(sim)) throw Error(Errc::non_finite, "generator_loss: non-finite input");
  if (lambda_sim < 0.0) throw Error(Errc::invalid_argument, "lambda_sim must be >= 0");
  return rl + lambda_sim * sim;
}

// ---------------------------------------------------------------------------
// Training.

// Everything drawn while sampling a batch, kept so the objective can be
// rebuilt on a tape for any parameter values.
struct SampledBatch {
  Generator::Batch batch;
  std::vector<PerturbationTrace> traces;
  std::vector<int> masked_rows;   // global row index into the stacked batch
  std::vector<int> masked_trace;  // trace index for each masked row
  Eigen::MatrixXd gumbel;         // |masked| x vocab
  Eigen::MatrixXd candidates;     // additive candidate mask, |masked| x vocab
};

inline SampledBatch sample_batch(Generator& g, const Generator::Batch& b, const Eigen::VectorXd& mask_logits,
                                 const std::function<Eigen::MatrixXd(const std::vector<int>&)>& logits_for_rows,
                                 Rng& rng) {
  SampledBatch sb;
  sb.batch = b;
  for (std::size_t k = 0; k < b.segments.size(); ++k) {
    const auto [start, len] = b.segments[k];
    const auto& s = b.texts[k];
    PerturbationTrace tr;
    tr.original = s;
    tr.perturbed = s;
    tr.masks.assign(s.size(), 0);
    tr.replacements.assign(s.size(), -1);
    tr.mask_probs.assign(s.size(), 0.0);
    tr.policy.assign(s.size(), {});
    tr.gumbel.assign(s.size(), {});
    for (int i = 0; i < len; ++i) {
      if (!g.maskable(s[i])) continue;
      const double pi = ag::stable_sigmoid(mask_logits(start + i));
      tr.mask_probs[i] = pi;
      tr.masks[i] = rng.bernoulli(pi) ? 1 : 0;
      tr.logprob += std::log(tr.masks[i] ? pi : 1.0 - pi);
      if (tr.masks[i]) {
        sb.masked_rows.push_back(start + i);
        sb.masked_trace.push_back(static_cast<int>(k));
      }
    }
    sb.traces.push_back(std::move(tr));
  }
  const auto m = static_cast<Eigen::Index>(sb.masked_rows.size());
  sb.gumbel.resize(m, g.vocab_size());
  sb.candidates.resize(m, g.vocab_size());
  if (m == 0) return sb;
  const Eigen::MatrixXd logits = logits_for_rows(sb.masked_rows);
  for (Eigen::Index r = 0; r < m; ++r) {
    auto& tr = sb.traces[sb.masked_trace[r]];
    const int pos = sb.masked_rows[r] - b.segments[sb.masked_trace[r]].first;
    sb.candidates.row(r) = g.candidate_mask(tr.original[pos]);
    for (Eigen::Index j = 0; j < sb.gumbel.cols(); ++j) sb.gumbel(r, j) = rng.gumbel();
    const Eigen::RowVectorXd masked = logits.row(r) + sb.candidates.row(r);
    Eigen::Index best = 0;
    (masked + sb.gumbel.row(r)).maxCoeff(&best);
    tr.policy[pos] = ag::softmax_rows(ag::Mat(masked)).row(0).transpose();
    tr.gumbel[pos] = sb.gumbel.row(r).transpose();
    tr.replacements[pos] = static_cast<int>(best);
    tr.perturbed[pos] = g.vocab()[static_cast<std::size_t>(best)];
    tr.considered.push_back(pos);
    tr.logprob += std::log(tr.policy[pos](best));
  }
  return sb;
}

struct GeneratorObjective {
  ag::Var rl;
  ag::Var sim;
  ag::Var total;
};

// L_G surrogate on a tape for fixed samples. The RL part is
// -mean_b[(R_b - baseline) * log pi(s~_b)], differentiable through the mask
// and replacement probabilities. The similarity part uses the relaxed sample
// softmax((r + g) / T); with straight_through its value is replaced by the
// hard-sample L_sim while the gradient stays that of the relaxed sample.
inline GeneratorObjective generator_objective(ag::Tape& t, Generator& g, ag::Var h, const SampledBatch& sb,
                                              std::span<const double> advantages, double lambda_sim,
                                              double temperature, bool straight_through) {
  const auto batch = static_cast<double>(sb.traces.size());
  const ag::Var ml = g.mask_logits(t, h);
  const auto rows = t.value(ml).rows();
  ag::Mat w_pos = ag::Mat::Zero(rows, 1);
  ag::Mat w_neg = ag::Mat::Zero(rows, 1);
  for (std::size_t k = 0; k < sb.traces.size(); ++k) {
    const auto& tr = sb.traces[k];
    const int start = sb.batch.segments[k].first;
    const double a = advantages[k];
    for (std::size_t i = 0; i < tr.original.size(); ++i) {
      if (!g.maskable(tr.original[i])) continue;
      (tr.masks[i] ? w_pos : w_neg)(start + static_cast<Eigen::Index>(i), 0) = a;
    }
  }
  ag::Var lp_mask = ag::add(t, ag::sum(t, ag::mul(t, ag::log_sigmoid(t, ml), t.constant(w_pos))),
                            ag::sum(t, ag::mul(t, ag::log_sigmoid(t, ag::scale(t, ml, -1.0)), t.constant(w_neg))));
  ag::Var weighted_lp = lp_mask;
  ag::Var sim;
  const auto m = static_cast<Eigen::Index>(sb.masked_rows.size());
  if (m > 0) {
    const ag::Var logits = ag::add(t, g.replacement_logits(t, ag::gather_rows(t, h, sb.masked_rows)),
                                   t.constant(sb.candidates));
    std::vector<std::pair<int, int>> cells;
    ag::Mat w_rep(m, 1);
    ag::Mat sim_rows(m, g.vocab_size());
    ag::Mat w_sim(m, 1);
    double hard = 0.0;
    for (Eigen::Index r = 0; r < m; ++r) {
      const int k = sb.masked_trace[r];
      const auto& tr = sb.traces[k];
      const int pos = sb.masked_rows[r] - sb.batch.segments[k].first;
      cells.emplace_back(static_cast<int>(r), tr.replacements[pos]);
      w_rep(r, 0) = advantages[k];
      sim_rows.row(r) = g.similarity_row(tr.original[pos]);
      w_sim(r, 0) = 1.0 / (static_cast<double>(tr.considered.size()) * batch);
      hard += w_sim(r, 0) * (1.0 - sim_rows(r, tr.replacements[pos]));
    }
    const ag::Var lp_rep = ag::pick(t, ag::log_softmax_rows(t, logits), std::move(cells));
    weighted_lp = ag::add(t, weighted_lp, ag::sum(t, ag::mul(t, lp_rep, t.constant(w_rep))));

    ag::Var relaxed = ag::softmax_rows(t, ag::scale(t, ag::add(t, logits, t.constant(sb.gumbel)), 1.0 / temperature));
    ag::Var expected = ag::sum(t, ag::mul(t, ag::mul(t, relaxed, t.constant(sim_rows)),
                                          t.constant(w_sim.replicate(1, g.vocab_size()))));
    // sum_r w_r (1 - <sim_r, y_r>) = sum(w) - expected
    ag::Mat total_w(1, 1);
    total_w(0, 0) = w_sim.sum();
    sim = ag::sub(t, t.constant(total_w), expected);
    if (straight_through) {
      ag::Mat shift(1, 1);
      shift(0, 0) = hard - t.value(sim)(0, 0);
      sim = ag::add(t, sim, t.constant(shift));
    }
  } else {
    sim = t.constant(ag::Mat::Zero(1, 1));
  }
  GeneratorObjective out;
  out.rl = ag::scale(t, weighted_lp, -1.0 / batch);
  out.sim = sim;
  out.total = ag::add(t, out.rl, ag::scale(t, sim, lambda_sim));
  return out;
}

struct GeneratorDiagnostics {
  double mean_reward = 0.0;
  double mask_rate = 0.0;  // masked / maskable positions
  double rl = 0.0;
  double sim = 0.0;
  double loss = 0.0;
  double baseline = 0.0;
};

// Moving-average reward baseline; starts at the first batch mean.
struct RewardBaseline {
  double value = 0.0;
  bool initialized = false;
  double decay = 0.9;

  void update(double batch_mean) {
    value = initialized ? decay * value + (1.0 - decay) * batch_mean : batch_mean;
    initialized = true;
  }
};

inline Adam make_generator_optimizer(const GeneratorOptions& opt) {
  Adam::Options a;
  a.learning_rate = opt.learning_rate;
  a.clip_norm = opt.clip_norm;
  return Adam(a);
}

struct GeneratorStepResult {
  GeneratorDiagnostics diagnostics;
  std::vector<PerturbationTrace> traces;
};

// One policy-gradient step against a frozen discriminator.
inline GeneratorStepResult generator_step(Generator& g, std::span<const std::u32string> spam, const Discriminator& d,
                                          Adam& optimizer, RewardBaseline& baseline, Rng& rng) {
  if (spam.empty()) throw Error(Errc::empty_input, "generator_step: empty batch");
  const auto b = g.make_batch(spam);
  g.zero_grads();
  ag::Tape t;
  const ag::Var h = g.states(t, b);
  const Eigen::VectorXd ml = t.value(g.mask_logits(t, h)).col(0);
  auto logits_for = [&](const std::vector<int>& rows) {
    ag::Tape scratch;
    return scratch.value(g.replacement_logits(scratch, scratch.constant(t.value(h)(rows, Eigen::all))));
  };
  SampledBatch sb = sample_batch(g, b, ml, logits_for, rng);

  GeneratorStepResult res;
  std::vector<double> rewards;
  double mean_reward = 0.0;
  for (const auto& tr : sb.traces) {
    rewards.push_back(reward(d.predict(tr.perturbed)));
    mean_reward += rewards.back();
  }
  mean_reward /= static_cast<double>(rewards.size());
  if (!baseline.initialized) baseline.update(mean_reward);
  std::vector<double> adv;
  for (double r : rewards) adv.push_back(r - baseline.value);

  const auto obj = generator_objective(t, g, h, sb, adv, g.options().lambda_sim, g.options().temperature, true);
  const double loss = t.value(obj.total)(0, 0);
  if (!std::isfinite(loss)) throw Error(Errc::non_finite, "non-finite generator loss");
  t.backward(obj.total);
  optimizer.step(g.slots());

  auto& diag = res.diagnostics;
  diag.mean_reward = mean_reward;
  diag.rl = t.value(obj.rl)(0, 0);
  diag.sim = t.value(obj.sim)(0, 0);
  diag.loss = loss;
  diag.baseline = baseline.value;
  long maskable = 0;
  for (const auto& tr : sb.traces) {
    for (char32_t c : tr.original) maskable += g.maskable(c);
  }
  diag.mask_rate = maskable > 0 ? static_cast<double>(sb.masked_rows.size()) / static_cast<double>(maskable) : 0.0;
  baseline.update(mean_reward);
  res.traces = std::move(sb.traces);
  return res;
}

// Gumbel-Softmax temperature on an exponential schedule from `start` at
// progress 0 to `end` at progress 1.
inline double temperature_at(double progress, double start = 1.0, double end = 0.3) {
  progress = std::clamp(progress, 0.0, 1.0);
  return start * std::pow(end / start, progress);
}

// ---------------------------------------------------------------------------
// Checkpoint: options, vocabulary, parameters, then the similarity network.

inline constexpr std::string_view kGeneratorMagic = "gccspam-generator";

inline void save_generator(const Generator& g, std::ostream& out) {
  const auto& o = g.options();
  out << kGeneratorMagic << "\t1\n" << std::setprecision(17);
  out << "[meta]\n";
  out << "model_dim=" << o.model_dim << "\nheads=" << o.heads << "\nlayers=" << o.layers << "\nffn_dim=" << o.ffn_dim
      << "\nlambda_sim=" << o.lambda_sim << "\nlearning_rate=" << o.learning_rate << "\ntemperature=" << o.temperature
      << "\nbaseline_decay=" << o.baseline_decay << "\ninitial_mask_rate=" << o.initial_mask_rate
      << "\nclip_norm=" << o.clip_norm << "\ncandidates=" << to_string(o.candidates) << '\n';
  out << "[vocab]\n";
  for (char32_t c : g.vocab_) out << utf8::encode(c) << '\n';
  out << "[params]\n";
  for (const auto* p : g.parameters()) {
    out << p->name << ' ' << p->value.rows() << ' ' << p->value.cols();
    for (Eigen::Index i = 0; i < p->value.size(); ++i) out << ' ' << p->value(i);
    out << '\n';
  }
  out << "[simnet]\n";
  save_network(*g.net_, out);
}

inline Generator load_generator(std::istream& in) {
  auto bad = [](const std::string& msg) { return Error(Errc::parse_error, "generator checkpoint: " + msg); };
  std::string line;
  if (!std::getline(in, line) || !line.starts_with(kGeneratorMagic)) throw bad("missing header");
  GeneratorOptions opt;
  std::vector<char32_t> vocab;
  std::vector<std::pair<std::string, ag::Mat>> params;
  std::string section;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = line;
      if (section == "[simnet]") break;
      continue;
    }
    if (section == "[meta]") {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw bad("malformed line '" + line + "'");
      const std::string key = line.substr(0, eq);
      const std::string val = line.substr(eq + 1);
      try {
        if (key == "model_dim") opt.model_dim = std::stoi(val);
        else if (key == "heads") opt.heads = std::stoi(val);
        else if (key == "layers") opt.layers = std::stoi(val);
        else if (key == "ffn_dim") opt.ffn_dim = std::stoi(val);
        else if (key == "lambda_sim") opt.lambda_sim = std::stod(val);
        else if (key == "learning_rate") opt.learning_rate = std::stod(val);
        else if (key == "temperature") opt.temperature = std::stod(val);
        else if (key == "baseline_decay") opt.baseline_decay = std::stod(val);
        else if (key == "initial_mask_rate") opt.initial_mask_rate = std::stod(val);
        else if (key == "clip_norm") opt.clip_norm = std::stod(val);
        else if (key == "candidates") opt.candidates = parse_candidate_mode(val);
      } catch (const Error&) {
        throw;
      } catch (const std::exception&) {
        throw bad("bad value for '" + key + "'");
      }
    } else if (section == "[vocab]") {
      const auto c = utf8::decode(line);
      if (c.size() != 1) throw bad("vocabulary line must hold one character");
      vocab.push_back(c.front());
    } else if (section == "[params]") {
      std::istringstream ls(line);
      std::string name;
      Eigen::Index r = 0, c = 0;
      if (!(ls >> name >> r >> c) || r < 0 || c < 0) throw bad("malformed parameter line");
      ag::Mat m(r, c);
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        if (!(ls >> m(i))) throw bad("parameter '" + name + "' is truncated");
      }
      params.emplace_back(name, std::move(m));
    }
  }
  if (section != "[simnet]") throw bad("missing [simnet] section");
  SimilarityNetwork net = load_network(in);
  Generator g(std::move(vocab), std::move(net), opt, 0);
  auto slots = g.parameters();
  if (slots.size() != params.size()) throw bad("parameter count mismatch");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i]->name != params[i].first || slots[i]->value.rows() != params[i].second.rows() ||
        slots[i]->value.cols() != params[i].second.cols()) {
      throw bad("parameter '" + params[i].first + "' does not match the model shape");
    }
    slots[i]->value = std::move(params[i].second);
  }
  return g;
}

}  // namespace gccspam
