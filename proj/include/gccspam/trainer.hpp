#pragma once

// Joint training of the discriminator and the generator, plus the three
// comparison arms (plain discriminator, static and dynamic augmentation).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gccspam/augment.hpp"
#include "gccspam/charsim.hpp"
#include "gccspam/corpus.hpp"
#include "gccspam/discriminator.hpp"
#include "gccspam/embeddings.hpp"
#include "gccspam/error.hpp"
#include "gccspam/evaluate.hpp"
#include "gccspam/generator.hpp"
#include "gccspam/log.hpp"
#include "gccspam/rng.hpp"

namespace gccspam {

enum class AugmentMode { none, static_mix, dynamic_mix };

inline std::string_view to_string(AugmentMode m) {
  switch (m) {
    case AugmentMode::static_mix:
      return "static";
    case AugmentMode::dynamic_mix:
      return "dynamic";
    default:
      return "none";
  }
}

inline AugmentMode parse_augment_mode(std::string_view s) {
  if (s == "none") return AugmentMode::none;
  if (s == "static") return AugmentMode::static_mix;
  if (s == "dynamic") return AugmentMode::dynamic_mix;
  throw Error(Errc::invalid_argument, "unknown augmentation mode '" + std::string(s) + "'");
}

struct TrainConfig {
  std::string mode = "gcc";
  int epochs = 10;
  int batch_size = 64;
  int dim = 64;
  double rho = kDefaultRho;
  double tau = 0.07;
  double lambda_cl = 0.1;
  double lambda_sim = 1.0;
  double generator_lr = 1e-3;
  double discriminator_lr = 1e-3;
  double gamma = 0.3;
  int k_d = 1;
  int k_g = 1;
  std::uint64_t seed = 42;
  AugmentMode augmentation = AugmentMode::none;
  int warmup_epochs = 1;
  int patience = 3;
  bool train_embeddings = true;
  double threshold = 0.5;
  double clip_norm = 5.0;

  int generator_batch = 0;  // 0: half the batch size
  int generator_dim = 64;
  int generator_heads = 2;
  int generator_layers = 2;
  int generator_ffn = 128;
  CandidateMode candidates = CandidateMode::vocabulary;
  double initial_mask_rate = 0.1;
  double temperature_start = 1.0;
  double temperature_end = 0.3;

  int sg_window = 5;
  int sg_negatives = 5;
  int sg_epochs = 5;
  double sg_learning_rate = 0.025;

  double augment_fraction = 0.25;
  int augment_static_count = 500;
  int augment_per_epoch = 500;
  int augment_exemplars = 100;
  std::string augment_client = "mock";
  std::string augment_endpoint;
  std::string augment_command;
  double augment_timeout = 60.0;

  bool operator==(const TrainConfig&) const = default;
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  if (!(in >> out) || !(in >> std::ws).eof()) {
    throw Error(Errc::invalid_argument, "config key '" + key + "': bad value '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error(Errc::invalid_argument, "config key '" + key + "': expected true or false");
}

inline std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

struct Field {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Field number_field(T TrainConfig::* m) {
  return {[m](TrainConfig& c, const std::string& v) { c.*m = parse_number<T>("", v); },
          [m](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_number(c.*m);
            else return std::to_string(c.*m);
          }};
}

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = [] {
    std::map<std::string, Field> m;
    m["mode"] = {[](TrainConfig& c, const std::string& v) { c.mode = v; },
                 [](const TrainConfig& c) { return c.mode; }};
    m["epochs"] = number_field(&TrainConfig::epochs);
    m["batch_size"] = number_field(&TrainConfig::batch_size);
    m["d"] = number_field(&TrainConfig::dim);
    m["rho"] = number_field(&TrainConfig::rho);
    m["tau"] = number_field(&TrainConfig::tau);
    m["lambda_cl"] = number_field(&TrainConfig::lambda_cl);
    m["lambda_sim"] = number_field(&TrainConfig::lambda_sim);
    m["generator_lr"] = number_field(&TrainConfig::generator_lr);
    m["discriminator_lr"] = number_field(&TrainConfig::discriminator_lr);
    m["gamma"] = number_field(&TrainConfig::gamma);
    m["k_d"] = number_field(&TrainConfig::k_d);
    m["k_g"] = number_field(&TrainConfig::k_g);
    m["seed"] = number_field(&TrainConfig::seed);
    m["augmentation"] = {[](TrainConfig& c, const std::string& v) { c.augmentation = parse_augment_mode(v); },
                         [](const TrainConfig& c) { return std::string(to_string(c.augmentation)); }};
    m["warmup_epochs"] = number_field(&TrainConfig::warmup_epochs);
    m["patience"] = number_field(&TrainConfig::patience);
    m["train_embeddings"] = {
        [](TrainConfig& c, const std::string& v) { c.train_embeddings = parse_bool("train_embeddings", v); },
        [](const TrainConfig& c) { return std::string(c.train_embeddings ? "true" : "false"); }};
    m["threshold"] = number_field(&TrainConfig::threshold);
    m["clip_norm"] = number_field(&TrainConfig::clip_norm);
    m["generator.batch"] = number_field(&TrainConfig::generator_batch);
    m["generator.d"] = number_field(&TrainConfig::generator_dim);
    m["generator.heads"] = number_field(&TrainConfig::generator_heads);
    m["generator.layers"] = number_field(&TrainConfig::generator_layers);
    m["generator.ffn"] = number_field(&TrainConfig::generator_ffn);
    m["generator.candidates"] = {
        [](TrainConfig& c, const std::string& v) { c.candidates = parse_candidate_mode(v); },
        [](const TrainConfig& c) { return std::string(to_string(c.candidates)); }};
    m["generator.initial_mask_rate"] = number_field(&TrainConfig::initial_mask_rate);
    m["generator.temperature_start"] = number_field(&TrainConfig::temperature_start);
    m["generator.temperature_end"] = number_field(&TrainConfig::temperature_end);
    m["skipgram.window"] = number_field(&TrainConfig::sg_window);
    m["skipgram.negatives"] = number_field(&TrainConfig::sg_negatives);
    m["skipgram.epochs"] = number_field(&TrainConfig::sg_epochs);
    m["skipgram.learning_rate"] = number_field(&TrainConfig::sg_learning_rate);
    m["augment.fraction"] = number_field(&TrainConfig::augment_fraction);
    m["augment.static_count"] = number_field(&TrainConfig::augment_static_count);
    m["augment.per_epoch"] = number_field(&TrainConfig::augment_per_epoch);
    m["augment.exemplars"] = number_field(&TrainConfig::augment_exemplars);
    m["augment.client"] = {[](TrainConfig& c, const std::string& v) { c.augment_client = v; },
                           [](const TrainConfig& c) { return c.augment_client; }};
    m["augment.endpoint"] = {[](TrainConfig& c, const std::string& v) { c.augment_endpoint = v; },
                             [](const TrainConfig& c) { return c.augment_endpoint; }};
    m["augment.command"] = {[](TrainConfig& c, const std::string& v) { c.augment_command = v; },
                            [](const TrainConfig& c) { return c.augment_command; }};
    m["augment.timeout"] = number_field(&TrainConfig::augment_timeout);
    return m;
  }();
  return f;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : detail::fields()) keys.push_back(k);
  return keys;
}

inline void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  const auto it = detail::fields().find(key);
  if (it == detail::fields().end()) throw Error(Errc::invalid_argument, "unknown config key '" + key + "'");
  try {
    it->second.set(c, value);
  } catch (const Error& e) {
    throw Error(Errc::invalid_argument, "config key '" + key + "': bad value '" + value + "'");
  }
}

inline std::string get_config_value(const TrainConfig& c, const std::string& key) {
  const auto it = detail::fields().find(key);
  if (it == detail::fields().end()) throw Error(Errc::invalid_argument, "unknown config key '" + key + "'");
  return it->second.get(c);
}

// `key = value` lines; `#` starts a comment. Later lines win.
inline std::map<std::string, std::string> parse_config_text(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(Errc::parse_error, "config line " + std::to_string(n) + ": expected key = value", n);
    }
    const std::string key = detail::trim(line.substr(0, eq));
    if (!detail::fields().contains(key)) {
      throw Error(Errc::parse_error, "config line " + std::to_string(n) + ": unknown key '" + key + "'", n);
    }
    kv[key] = detail::trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::map<std::string, std::string> load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open config " + path.string());
  return parse_config_text(in);
}

// Mode presets for the four experimental arms.
inline void apply_mode(TrainConfig& c, const std::string& mode) {
  const TrainConfig defaults;
  c.mode = mode;
  if (mode == "gcc") {
    c.gamma = defaults.gamma;
    c.lambda_cl = defaults.lambda_cl;
    c.augmentation = AugmentMode::none;
  } else if (mode == "baseline" || mode == "static" || mode == "dynamic") {
    c.gamma = 0.0;
    c.lambda_cl = 0.0;
    c.augmentation = mode == "static"    ? AugmentMode::static_mix
                     : mode == "dynamic" ? AugmentMode::dynamic_mix
                                         : AugmentMode::none;
  } else {
    throw Error(Errc::invalid_argument, "unknown mode '" + mode + "' (baseline, gcc, static, dynamic)");
  }
}

inline void validate(const TrainConfig& c) {
  auto fail = [](const std::string& m) { throw Error(Errc::invalid_argument, "config: " + m); };
  if (c.epochs < 1) fail("epochs must be >= 1");
  if (c.batch_size < 2 || c.batch_size % 2 != 0) fail("batch_size must be an even number >= 2");
  if (c.dim < 1) fail("d must be >= 1");
  if (!(c.rho >= 0.0 && c.rho <= 1.0)) fail("rho must be in [0, 1]");
  if (!(c.tau > 0.0)) fail("tau must be > 0");
  if (!(c.lambda_cl >= 0.0)) fail("lambda_cl must be >= 0");
  if (!(c.lambda_sim >= 0.0)) fail("lambda_sim must be >= 0");
  if (!(c.generator_lr > 0.0) || !(c.discriminator_lr > 0.0)) fail("learning rates must be > 0");
  if (!(c.gamma >= 0.0 && c.gamma <= 1.0)) fail("gamma must be in [0, 1]");
  if (c.k_d < 1 || c.k_g < 1) fail("k_d and k_g must be >= 1");
  if (c.warmup_epochs < 0) fail("warmup_epochs must be >= 0");
  if (c.patience < 1) fail("patience must be >= 1");
  if (!(c.threshold > 0.0 && c.threshold < 1.0)) fail("threshold must be in (0, 1)");
  if (!(c.clip_norm > 0.0)) fail("clip_norm must be > 0");
  if (c.generator_batch < 0) fail("generator.batch must be >= 0");
  if (!(c.initial_mask_rate > 0.0 && c.initial_mask_rate < 1.0)) fail("generator.initial_mask_rate must be in (0, 1)");
  if (!(c.temperature_start > 0.0) || !(c.temperature_end > 0.0)) fail("temperatures must be > 0");
  if (!(c.augment_fraction >= 0.0 && c.augment_fraction <= 1.0)) fail("augment.fraction must be in [0, 1]");
  if (c.augment_static_count < 0 || c.augment_per_epoch < 2) fail("augmentation counts out of range");
  if (c.augment_exemplars < 1 || c.augment_exemplars > static_cast<int>(kMaxExemplars)) {
    fail("augment.exemplars must be in [1, 100]");
  }
  if (!(c.augment_timeout > 0.0)) fail("augment.timeout must be > 0");
}

// Defaults, then the mode preset, then the file, then command-line values.
inline TrainConfig resolve_config(const std::map<std::string, std::string>& file,
                                  const std::map<std::string, std::string>& cli) {
  TrainConfig c;
  std::string mode = c.mode;
  if (auto it = file.find("mode"); it != file.end()) mode = it->second;
  if (auto it = cli.find("mode"); it != cli.end()) mode = it->second;
  apply_mode(c, mode);
  for (const auto* layer : {&file, &cli}) {
    for (const auto& [k, v] : *layer) {
      if (k != "mode") set_config_value(c, k, v);
    }
  }
  validate(c);
  return c;
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  for (const auto& k : config_keys()) j[k] = get_config_value(c, k);
  return j;
}

// ---------------------------------------------------------------------------
// Batches.

struct DiscriminatorBatch {
  std::vector<LabeledSample> samples;
  std::vector<bool> perturbed;
};

// Replaces floor(gamma * #spam) spam items, in batch order, with the
// generator's perturbation of them. Perturbed items keep label 1.
inline DiscriminatorBatch make_discriminator_batch(std::span<const LabeledSample> real, Generator* generator,
                                                   double gamma, std::uint64_t seed) {
  if (real.empty()) throw Error(Errc::empty_input, "make_discriminator_batch: empty pool");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error(Errc::invalid_argument, "gamma must be in [0, 1]");
  DiscriminatorBatch b;
  b.samples.assign(real.begin(), real.end());
  b.perturbed.assign(real.size(), false);
  const auto spam = std::count_if(real.begin(), real.end(), [](const LabeledSample& s) { return s.label == 1; });
  auto quota = static_cast<long>(std::floor(gamma * static_cast<double>(spam) + 1e-9));
  if (quota > 0 && generator == nullptr) throw Error(Errc::invalid_argument, "gamma > 0 needs a generator");
  Rng rng(seed);
  for (std::size_t i = 0; i < b.samples.size() && quota > 0; ++i) {
    if (b.samples[i].label != 1) continue;
    b.samples[i].text = perturb(*generator, b.samples[i].text, rng.next()).perturbed;
    b.perturbed[i] = true;
    --quota;
  }
  return b;
}

// Endless shuffled pass over one class; reshuffles on wrap.
class ClassCursor {
 public:
  ClassCursor() = default;
  ClassCursor(std::vector<const LabeledSample*> items, Rng rng) : items_(std::move(items)), rng_(rng) {
    if (items_.empty()) throw Error(Errc::single_class, "training data lacks a class");
    rng_.shuffle(items_);
  }
  const LabeledSample& next() {
    if (pos_ == items_.size()) {
      rng_.shuffle(items_);
      pos_ = 0;
    }
    return *items_[pos_++];
  }

 private:
  std::vector<const LabeledSample*> items_;
  Rng rng_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Reports and results.

struct EpochReport {
  int epoch = 0;
  double discriminator_loss = 0.0;
  double generator_loss = 0.0;
  double mean_reward = 0.0;
  double mask_rate = 0.0;
  int generator_steps = 0;
  int augmented_pool = 0;
  MetricsReport validation;

  bool operator==(const EpochReport& o) const {
    return epoch == o.epoch && discriminator_loss == o.discriminator_loss && generator_loss == o.generator_loss &&
           mean_reward == o.mean_reward && mask_rate == o.mask_rate && generator_steps == o.generator_steps &&
           augmented_pool == o.augmented_pool && validation.counts == o.validation.counts;
  }
};

inline nlohmann::ordered_json to_json(const EpochReport& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["discriminator_loss"] = r.discriminator_loss;
  j["generator_loss"] = r.generator_loss;
  j["mean_reward"] = r.mean_reward;
  j["mask_rate"] = r.mask_rate;
  j["generator_steps"] = r.generator_steps;
  j["augmented_pool"] = r.augmented_pool;
  j["validation"] = to_json(r.validation);
  return j;
}

struct TrainResult {
  Discriminator discriminator;  // best validation epoch, as checkpointed
  Generator generator;          // state after the last epoch
  Discriminator warmup_discriminator;
  std::vector<EpochReport> reports;
  int best_epoch = 0;
  bool stopped_early = false;
};

struct TrainHooks {
  std::optional<std::filesystem::path> out_dir;
  AugmentClient* client = nullptr;  // required for the augmentation arms
  // Called after each epoch's report is final.
  std::function<void(const EpochReport&)> on_epoch;
};

// Skip-gram base vectors on the training texts, then the aggregated table.
inline EmbeddingTable prepare_table(const TrainConfig& c, const SimilarityNetwork& net,
                                    std::span<const LabeledSample> train) {
  SkipGramOptions sg;
  sg.dim = c.dim;
  sg.window = c.sg_window;
  sg.negatives = c.sg_negatives;
  sg.epochs = c.sg_epochs;
  sg.learning_rate = c.sg_learning_rate;
  sg.seed = mix_seed(c.seed, 0x5C);
  std::vector<std::u32string> texts;
  texts.reserve(train.size());
  for (const auto& s : train) texts.push_back(s.text);
  return build_table(net, train_base_vectors(texts, sg).vectors, c.dim);
}

inline std::string checkpoint_text(const Discriminator& d, const TrainConfig& c) {
  std::ostringstream os;
  save_discriminator(d, CheckpointMeta{1, c.rho, c.seed}, os);
  return os.str();
}

inline Discriminator reload_discriminator(const std::string& text) {
  std::istringstream is(text);
  return load_discriminator(is).model;
}

inline std::string generator_text(const Generator& g) {
  std::ostringstream os;
  save_generator(g, os);
  return os.str();
}

inline Generator reload_generator(const std::string& text) {
  std::istringstream is(text);
  return load_generator(is);
}

namespace detail {

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + p.string());
  out << text;
}

}  // namespace detail

// Runs the configured arm. Validation metrics for each epoch are computed
// on the discriminator as reloaded from that epoch's checkpoint, so they can
// be reproduced from the file alone.
inline TrainResult train(const TrainConfig& config, const SimilarityNetwork& net, EmbeddingTable table,
                         std::vector<LabeledSample> train_set, std::span<const LabeledSample> val,
                         const TrainHooks& hooks = {}) {
  validate(config);
  if (val.empty()) throw Error(Errc::empty_input, "validation set is empty");
  const auto has = [&](int label) {
    return std::any_of(train_set.begin(), train_set.end(), [&](const LabeledSample& s) { return s.label == label; });
  };
  if (!has(0) || !has(1)) throw Error(Errc::single_class, "training corpus must contain both classes");
  const bool augmenting = config.augmentation != AugmentMode::none;
  if (augmenting && hooks.client == nullptr) throw Error(Errc::invalid_argument, "augmentation needs a client");
  if (hooks.out_dir) std::filesystem::create_directories(*hooks.out_dir);

  Rng root(config.seed);
  Rng batch_rng = root.fork("batches");
  Rng gen_rng = root.fork("generator");
  Rng perturb_rng = root.fork("perturb");
  Rng mix_rng = root.fork("augment-mix");

  AugmentOptions aug;
  aug.exemplars = static_cast<std::size_t>(config.augment_exemplars);
  aug.seed = mix_seed(config.seed, 0xA6);
  if (config.augmentation == AugmentMode::static_mix && config.augment_static_count > 0) {
    aug.per_request = std::min(config.augment_static_count, 500);
    const std::size_t target = train_set.size() + static_cast<std::size_t>(config.augment_static_count);
    train_set = static_augment(std::move(train_set), *hooks.client, target, aug);
  }
  aug.per_request = config.augment_per_epoch;

  DiscriminatorOptions dopt;
  dopt.tau = config.tau;
  dopt.lambda_cl = config.lambda_cl;
  dopt.learning_rate = config.discriminator_lr;
  dopt.train_embeddings = config.train_embeddings;
  dopt.threshold = config.threshold;
  dopt.clip_norm = config.clip_norm;
  Discriminator d(std::move(table), dopt);
  Adam d_opt = make_discriminator_optimizer(dopt);

  GeneratorOptions gopt;
  gopt.model_dim = config.generator_dim;
  gopt.heads = config.generator_heads;
  gopt.layers = config.generator_layers;
  gopt.ffn_dim = config.generator_ffn;
  gopt.lambda_sim = config.lambda_sim;
  gopt.learning_rate = config.generator_lr;
  gopt.temperature = config.temperature_start;
  gopt.initial_mask_rate = config.initial_mask_rate;
  gopt.clip_norm = config.clip_norm;
  gopt.candidates = config.candidates;
  Generator g(d.table().chars(), net, gopt, mix_seed(config.seed, 0x6E));
  Adam g_opt = make_generator_optimizer(gopt);
  RewardBaseline baseline;
  baseline.decay = gopt.baseline_decay;

  std::vector<const LabeledSample*> spam_items, normal_items;
  std::vector<std::u32string> spam_texts;
  for (const auto& s : train_set) {
    (s.label == 1 ? spam_items : normal_items).push_back(&s);
    if (s.label == 1) spam_texts.push_back(s.text);
  }
  ClassCursor spam_cur(spam_items, batch_rng.fork("spam"));
  ClassCursor normal_cur(normal_items, batch_rng.fork("normal"));
  std::vector<const LabeledSample*> gen_items = spam_items;
  ClassCursor gen_cur(gen_items, gen_rng.fork("cursor"));

  AugmentAccumulator acc;
  const int half = config.batch_size / 2;
  const int gen_batch = config.generator_batch > 0 ? config.generator_batch : half;
  const int steps = static_cast<int>((train_set.size() + config.batch_size - 1) / config.batch_size);
  const bool adversarial_arm = config.gamma > 0.0;
  const int adversarial_epochs = std::max(0, config.epochs - config.warmup_epochs);
  const long total_gen_steps =
      static_cast<long>(adversarial_epochs) * ((steps + config.k_d - 1) / config.k_d) * config.k_g;
  long gen_step_index = 0;

  TrainResult result;
  std::string best_disc, last_good;
  double best_f1 = -1.0;
  int since_best = 0;
  result.warmup_discriminator = reload_discriminator(checkpoint_text(d, config));

  auto disc_batch = [&](bool adversarial) {
    std::vector<LabeledSample> real;
    real.reserve(config.batch_size);
    int n_aug = 0;
    if (config.augmentation == AugmentMode::dynamic_mix && !acc.empty()) {
      n_aug = static_cast<int>(std::floor(config.augment_fraction * config.batch_size + 1e-9));
    }
    const int n_real = config.batch_size - n_aug;
    const int real_spam = n_real - n_real / 2;
    for (int k = 0; k < n_real / 2; ++k) {
      real.push_back(spam_cur.next());
      real.push_back(normal_cur.next());
    }
    if (real_spam > n_real / 2) real.push_back(spam_cur.next());
    for (int k = 0; k < n_aug; ++k) real.push_back(acc.pool()[mix_rng.below(acc.pool().size())]);
    if (!adversarial) return real;
    return make_discriminator_batch(real, &g, config.gamma, perturb_rng.next()).samples;
  };

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const bool adversarial = adversarial_arm && epoch > config.warmup_epochs;
    EpochReport rep;
    rep.epoch = epoch;
    double d_sum = 0.0, g_sum = 0.0, r_sum = 0.0, m_sum = 0.0;
    int d_steps = 0;
    try {
      while (d_steps < steps) {
        for (int k = 0; k < config.k_d && d_steps < steps; ++k, ++d_steps) {
          const auto batch = disc_batch(adversarial);
          d_sum += train_step(d, batch, d_opt);
        }
        if (!adversarial) continue;
        for (int k = 0; k < config.k_g; ++k) {
          std::vector<std::u32string> texts;
          for (int i = 0; i < gen_batch; ++i) texts.push_back(gen_cur.next().text);
          const double progress =
              total_gen_steps > 1 ? static_cast<double>(gen_step_index) / static_cast<double>(total_gen_steps - 1) : 0.0;
          g.set_temperature(temperature_at(progress, config.temperature_start, config.temperature_end));
          const auto res = generator_step(g, texts, d, g_opt, baseline, gen_rng);
          ++gen_step_index;
          ++rep.generator_steps;
          g_sum += res.diagnostics.loss;
          r_sum += res.diagnostics.mean_reward;
          m_sum += res.diagnostics.mask_rate;
        }
      }
    } catch (const Error& e) {
      if (e.code() != Errc::non_finite) throw;
      std::string where = "no checkpoint written yet";
      if (hooks.out_dir && !last_good.empty()) where = "last good checkpoint " + last_good;
      throw Error(Errc::training_aborted, std::string("training aborted in epoch ") + std::to_string(epoch) + ": " +
                                              e.what() + " (" + where + ")");
    }
    rep.discriminator_loss = d_sum / std::max(1, d_steps);
    if (rep.generator_steps > 0) {
      rep.generator_loss = g_sum / rep.generator_steps;
      rep.mean_reward = r_sum / rep.generator_steps;
      rep.mask_rate = m_sum / rep.generator_steps;
    }

    const std::string disc_ckpt = checkpoint_text(d, config);
    const std::string gen_ckpt = generator_text(g);
    const Discriminator snapshot = reload_discriminator(disc_ckpt);
    rep.validation = report(snapshot, val, config.threshold);
    if (hooks.out_dir) {
      const auto name = "disc_epoch_" + std::to_string(epoch) + ".ckpt";
      detail::write_file(*hooks.out_dir / name, disc_ckpt);
      detail::write_file(*hooks.out_dir / ("gen_epoch_" + std::to_string(epoch) + ".ckpt"), gen_ckpt);
      last_good = (*hooks.out_dir / name).string();
    }
    if (epoch == config.warmup_epochs) result.warmup_discriminator = snapshot;

    if (config.augmentation == AugmentMode::dynamic_mix) {
      if (dynamic_augment_epoch_hook(epoch, d, train_set, *hooks.client, acc, aug) && hooks.out_dir) {
        save_augmented(acc.sets().back(), *hooks.out_dir);
      }
    }
    rep.augmented_pool = static_cast<int>(acc.pool().size());

    log::info("epoch ", epoch, " d_loss=", rep.discriminator_loss, " g_loss=", rep.generator_loss,
              " reward=", rep.mean_reward, " val_macro_f1=", rep.validation.macro_f1());
    result.reports.push_back(rep);
    if (hooks.on_epoch) hooks.on_epoch(rep);

    if (rep.validation.macro_f1() > best_f1) {
      best_f1 = rep.validation.macro_f1();
      result.best_epoch = epoch;
      best_disc = disc_ckpt;
      since_best = 0;
      if (hooks.out_dir) detail::write_file(*hooks.out_dir / "disc_best.ckpt", disc_ckpt);
    } else if (++since_best >= config.patience) {
      log::info("early stop after epoch ", epoch, " (best epoch ", result.best_epoch, ")");
      result.stopped_early = true;
      break;
    }
  }
  result.discriminator = reload_discriminator(best_disc);
  result.generator = std::move(g);
  if (hooks.out_dir) detail::write_file(*hooks.out_dir / "gen_final.ckpt", generator_text(result.generator));
  return result;
}

}  // namespace gccspam
