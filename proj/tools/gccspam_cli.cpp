// gccspam: command-line entry point for the detection pipeline.
//
// Exit codes: 0 success, 2 usage or input error, 3 runtime abort.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "gccspam/augment.hpp"
#include "gccspam/clients.hpp"
#include "gccspam/corpus.hpp"
#include "gccspam/evaluate.hpp"
#include "gccspam/synth.hpp"
#include "gccspam/trainer.hpp"

namespace fs = std::filesystem;
using namespace gccspam;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitAbort = 3;

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string file_checksum(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot read " + p.string() + " for checksum");
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 14];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) h = (h ^ static_cast<unsigned char>(buf[i])) * 1099511628211ULL;
  }
  std::ostringstream os;
  os << "fnv1a64:" << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw Error(Errc::io_error, "cannot write '" + p.string() + "'");
}

// One manifest per invocation, named after the subcommand.
struct Manifest {
  std::string subcommand;
  std::vector<std::string> argv;
  std::uint64_t seed = 42;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::vector<fs::path> inputs, outputs;
  std::string started = now_utc();

  void write(const fs::path& dir) const {
    nlohmann::ordered_json j;
    j["subcommand"] = subcommand;
    j["argv"] = argv;
    j["seed"] = seed;
    j["config"] = config;
    auto files = [](const std::vector<fs::path>& paths) {
      nlohmann::ordered_json a = nlohmann::ordered_json::array();
      for (const auto& p : paths) a.push_back({{"path", fs::absolute(p).string()}, {"checksum", file_checksum(p)}});
      return a;
    };
    j["inputs"] = files(inputs);
    j["outputs"] = files(outputs);
    j["started"] = started;
    j["finished"] = now_utc();
    write_text(dir / ("manifest_" + subcommand + ".json"), j.dump(2) + "\n");
  }
};

struct Globals {
  std::string config_path;
  std::uint64_t seed = 42;
  bool seed_given = false;
  fs::path out_dir = ".";
  std::string log_level = "info";
  std::vector<std::string> argv;
};

// Config file, then --set overrides, then --seed.
TrainConfig resolve(const Globals& g, const std::vector<std::string>& sets, const std::string& mode = "") {
  std::map<std::string, std::string> file;
  if (!g.config_path.empty()) file = load_config_file(g.config_path);
  std::map<std::string, std::string> cli;
  if (!mode.empty()) cli["mode"] = mode;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error(Errc::invalid_argument, "--set expects key=value, got '" + s + "'");
    cli[detail::trim(s.substr(0, eq))] = detail::trim(s.substr(eq + 1));
  }
  if (g.seed_given) cli["seed"] = std::to_string(g.seed);
  return resolve_config(file, cli);
}

SimilarityNetwork load_simnet(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(Errc::io_error, "cannot open similarity network '" + p.string() + "'");
  return load_network(in);
}

LoadedDiscriminator load_disc(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(Errc::io_error, "cannot open checkpoint '" + p.string() + "'");
  return load_discriminator(in);
}

Generator load_gen(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(Errc::io_error, "cannot open generator checkpoint '" + p.string() + "'");
  return load_generator(in);
}

std::vector<std::u32string> lines_from(const std::string& path) {
  if (path == "-") return read_lines(std::cin);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open '" + path + "'");
  return read_lines(in);
}

std::unique_ptr<AugmentClient> client_for(const TrainConfig& c, const SimilarityNetwork& net) {
  ClientSettings s;
  s.kind = c.augment_client;
  s.endpoint = c.augment_endpoint;
  s.command = c.augment_command;
  s.timeout = c.augment_timeout;
  s.seed = mix_seed(c.seed, 0x3C);
  return make_client(s, std::make_shared<const SimilarityNetwork>(net));
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  Globals g;
  g.argv.assign(argv, argv + argc);

  CLI::App app{"Spam detection with similarity-aware embeddings and adversarial training"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", g.config_path, "Training config file (key = value lines)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for all randomness");
  app.add_option("--out-dir", g.out_dir, "Directory for artifacts and the run manifest");
  app.add_option("--log-level", g.log_level, "debug, info, warn or off")
      ->check(CLI::IsMember({"debug", "info", "warn", "off"}));

  // build-simnet
  auto* simnet_cmd = app.add_subcommand("build-simnet", "Build the character similarity network from a dictionary");
  std::string dict_path;
  double rho = kDefaultRho;
  simnet_cmd->add_option("--dict", dict_path, "Dictionary file")->required();
  simnet_cmd->add_option("--rho", rho, "Similarity threshold in [0, 1]");

  // train-embeddings
  auto* emb_cmd = app.add_subcommand("train-embeddings", "Train base vectors and write the aggregated table");
  std::string simnet_path, corpus_path;
  std::vector<std::string> sets;
  emb_cmd->add_option("--simnet", simnet_path, "Similarity network artifact")->required();
  emb_cmd->add_option("--corpus", corpus_path, "Labelled corpus (label<TAB>text)")->required();
  emb_cmd->add_option("--set", sets, "Config override key=value (repeatable)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the detector (baseline, gcc, static or dynamic)");
  std::string train_path, val_path, embeddings_path, mode;
  train_cmd->add_option("--simnet", simnet_path, "Similarity network artifact")->required();
  train_cmd->add_option("--train", train_path, "Training corpus")->required();
  train_cmd->add_option("--val", val_path, "Validation corpus")->required();
  train_cmd->add_option("--embeddings", embeddings_path, "Pre-trained embedding table (skips skip-gram)");
  train_cmd->add_option("--mode", mode, "baseline, gcc, static or dynamic");
  train_cmd->add_option("--set", sets, "Config override key=value (repeatable)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a discriminator checkpoint on a labelled test set");
  std::string ckpt_path, test_path;
  double threshold = -1.0;
  eval_cmd->add_option("--checkpoint", ckpt_path, "Discriminator checkpoint")->required();
  eval_cmd->add_option("--test", test_path, "Test corpus")->required();
  eval_cmd->add_option("--threshold", threshold, "Decision threshold (default: from checkpoint)");

  // detect
  auto* detect_cmd = app.add_subcommand("detect", "Score one text per line: p<TAB>label<TAB>text");
  std::string input_path = "-", output_path;
  detect_cmd->add_option("--checkpoint", ckpt_path, "Discriminator checkpoint")->required();
  detect_cmd->add_option("--input", input_path, "Input lines ('-' for stdin)");
  detect_cmd->add_option("--output", output_path, "Output file (default stdout)");
  detect_cmd->add_option("--threshold", threshold, "Decision threshold (default: from checkpoint)");

  // attack
  auto* attack_cmd = app.add_subcommand("attack", "Perturb spam lines with a generator and audit the result");
  std::string gen_path;
  attack_cmd->add_option("--generator", gen_path, "Generator checkpoint")->required();
  attack_cmd->add_option("--discriminator", ckpt_path, "Discriminator checkpoint")->required();
  attack_cmd->add_option("--input", input_path, "Spam lines ('-' for stdin)");
  attack_cmd->add_option("--output", output_path, "Audit file (default <out-dir>/attack.tsv)");

  // augment
  auto* augment_cmd = app.add_subcommand("augment", "Grow a corpus with externally generated samples");
  int target = 0;
  augment_cmd->add_option("--simnet", simnet_path, "Similarity network artifact (mock client)")->required();
  augment_cmd->add_option("--corpus", corpus_path, "Labelled corpus")->required();
  augment_cmd->add_option("--target", target, "Target corpus size")->required()->check(CLI::NonNegativeNumber);
  augment_cmd->add_option("--set", sets, "Config override key=value (repeatable)");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic dictionary and obfuscated two-topic corpus");
  int sentences = 2400;
  synth_cmd->add_option("--sentences", sentences, "Number of sentences")->check(CLI::Range(10, 10000000));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitInput;
  }
  g.seed_given = app.count("--seed") > 0;
  log::set_level(g.log_level == "debug" ? log::Level::debug
                 : g.log_level == "warn" ? log::Level::warn
                 : g.log_level == "off"  ? log::Level::off
                                         : log::Level::info);

  try {
    fs::create_directories(g.out_dir);
    Manifest m;
    m.argv = g.argv;
    m.seed = g.seed;
    const auto out = [&](const std::string& name) {
      m.outputs.push_back(g.out_dir / name);
      return g.out_dir / name;
    };

    if (*simnet_cmd) {
      m.subcommand = "build-simnet";
      m.inputs = {dict_path};
      m.config = {{"rho", rho}};
      const auto net = build_network(load_dictionary(dict_path), rho);
      std::ostringstream os;
      save_network(net, os);
      write_text(out("simnet.txt"), os.str());
      log::info("similarity network: ", net.size(), " characters");
    } else if (*emb_cmd) {
      m.subcommand = "train-embeddings";
      const auto cfg = resolve(g, sets);
      m.seed = cfg.seed;
      m.config = to_json(cfg);
      m.inputs = {simnet_path, corpus_path};
      const auto net = load_simnet(simnet_path);
      const auto corpus = read_corpus(corpus_path);
      if (corpus.empty()) throw Error(Errc::empty_input, "corpus '" + corpus_path + "' is empty");
      std::ostringstream os;
      save_table(prepare_table(cfg, net, corpus), os);
      write_text(out("embeddings.txt"), os.str());
    } else if (*train_cmd) {
      m.subcommand = "train";
      const auto cfg = resolve(g, sets, mode);
      m.seed = cfg.seed;
      m.config = to_json(cfg);
      m.inputs = {simnet_path, train_path, val_path};
      const auto net = load_simnet(simnet_path);
      const auto train_set = read_corpus(train_path);
      const auto val_set = read_corpus(val_path);
      if (val_set.empty()) throw Error(Errc::empty_input, "validation corpus '" + val_path + "' is empty");
      EmbeddingTable table;
      if (!embeddings_path.empty()) {
        m.inputs.push_back(embeddings_path);
        std::ifstream in(embeddings_path);
        if (!in) throw Error(Errc::io_error, "cannot open embeddings '" + embeddings_path + "'");
        table = load_table(in);
        if (table.dim() != cfg.dim) throw Error(Errc::invalid_argument, "embedding dimension does not match d");
      } else {
        table = prepare_table(cfg, net, train_set);
      }
      std::unique_ptr<AugmentClient> client;
      if (cfg.augmentation != AugmentMode::none) client = client_for(cfg, net);

      std::ofstream cfg_out(out("config.txt"));
      for (const auto& k : config_keys()) cfg_out << k << " = " << get_config_value(cfg, k) << '\n';
      cfg_out.close();
      const auto reports_path = out("reports.jsonl");
      std::ofstream reports(reports_path);
      TrainHooks hooks;
      hooks.out_dir = g.out_dir;
      hooks.client = client.get();
      hooks.on_epoch = [&](const EpochReport& r) {
        reports << to_json(r).dump() << '\n';
        reports.flush();
        log::info("epoch ", r.epoch, ": loss_D ", fmt(r.discriminator_loss), " val macro-F1 ",
                  fmt(r.validation.macro_f1()));
      };
      const auto res = train(cfg, net, std::move(table), train_set, val_set, hooks);
      reports.close();
      for (const auto& r : res.reports) {
        const auto e = std::to_string(r.epoch);
        m.outputs.push_back(g.out_dir / ("disc_epoch_" + e + ".ckpt"));
        m.outputs.push_back(g.out_dir / ("gen_epoch_" + e + ".ckpt"));
        if (fs::exists(augmented_file(g.out_dir, r.epoch))) m.outputs.push_back(augmented_file(g.out_dir, r.epoch));
      }
      m.outputs.push_back(g.out_dir / "disc_best.ckpt");
      m.outputs.push_back(g.out_dir / "gen_final.ckpt");
      std::cout << "best epoch " << res.best_epoch << ", validation macro-F1 "
                << fmt(res.reports[static_cast<std::size_t>(res.best_epoch - 1)].validation.macro_f1()) << '\n';
    } else if (*eval_cmd) {
      m.subcommand = "eval";
      m.inputs = {ckpt_path, test_path};
      const auto loaded = load_disc(ckpt_path);
      const auto test = read_corpus(test_path);
      if (test.empty()) throw Error(Errc::empty_input, "test corpus '" + test_path + "' is empty");
      const double t = threshold >= 0.0 ? threshold : loaded.model.options().threshold;
      const auto rep = report(loaded.model, test, t);
      write_text(out("metrics.json"), to_json(rep).dump(2) + "\n");
      write_text(out("metrics.txt"), format_table(rep));
      std::cout << format_table(rep);
    } else if (*detect_cmd) {
      m.subcommand = "detect";
      m.inputs = {ckpt_path};
      if (input_path != "-") m.inputs.push_back(input_path);
      const auto loaded = load_disc(ckpt_path);
      const double t = threshold >= 0.0 ? threshold : loaded.model.options().threshold;
      const auto lines = lines_from(input_path);
      std::ostringstream os;
      os << std::setprecision(6) << std::fixed;
      for (const auto& line : lines) {
        if (line.empty()) {
          os << "-\t-\t\n";  // nothing to score, keeps line alignment
          continue;
        }
        const double p = loaded.model.predict(line);
        os << p << '\t' << (p >= t ? 1 : 0) << '\t' << utf8::encode(line) << '\n';
      }
      if (output_path.empty()) {
        std::cout << os.str();
      } else {
        write_text(output_path, os.str());
        m.outputs.push_back(output_path);
      }
    } else if (*attack_cmd) {
      m.subcommand = "attack";
      m.inputs = {gen_path, ckpt_path};
      if (input_path != "-") m.inputs.push_back(input_path);
      auto gen = load_gen(gen_path);
      const auto loaded = load_disc(ckpt_path);
      if (gen.vocab() != loaded.model.table().chars()) {
        throw Error(Errc::checkpoint_mismatch, "generator and discriminator checkpoints have different vocabularies");
      }
      const auto lines = lines_from(input_path);
      std::ostringstream os;
      os << std::setprecision(6) << std::fixed;
      std::uint64_t index = 0;
      for (const auto& line : lines) {
        ++index;
        if (line.empty()) continue;
        const auto tr = perturb(gen, line, mix_seed(g.seed, index));
        double sim = 0.0;
        const int n = tr.replaced();
        for (std::size_t i = 0; i < tr.original.size(); ++i) {
          if (tr.original[i] != tr.perturbed[i]) sim += gen.network().similarity_or_zero(tr.original[i], tr.perturbed[i]);
        }
        os << utf8::encode(tr.original) << '\t' << utf8::encode(tr.perturbed) << '\t' << n << '\t'
           << (n > 0 ? sim / n : 1.0) << '\t' << loaded.model.predict(tr.original) << '\t'
           << loaded.model.predict(tr.perturbed) << '\n';
      }
      const fs::path dest = output_path.empty() ? g.out_dir / "attack.tsv" : fs::path(output_path);
      write_text(dest, os.str());
      m.outputs.push_back(dest);
    } else if (*augment_cmd) {
      m.subcommand = "augment";
      const auto cfg = resolve(g, sets);
      m.seed = cfg.seed;
      m.config = to_json(cfg);
      m.inputs = {simnet_path, corpus_path};
      const auto net = load_simnet(simnet_path);
      const auto corpus = read_corpus(corpus_path);
      const auto client = client_for(cfg, net);
      AugmentOptions opt;
      opt.per_request = cfg.augment_per_epoch;
      opt.exemplars = static_cast<std::size_t>(cfg.augment_exemplars);
      opt.seed = mix_seed(cfg.seed, 0xA6);
      const auto grown = static_augment(corpus, *client, static_cast<std::size_t>(target), opt);
      write_corpus(grown, out("augmented.tsv"));
      log::info("corpus ", corpus.size(), " -> ", grown.size(), " samples via ", client->name());
    } else if (*synth_cmd) {
      m.subcommand = "synth";
      SynthOptions so;
      so.seed = g.seed;
      so.sentences = sentences;
      m.config = {{"sentences", sentences}};
      const auto sc = make_synthetic_corpus(so);
      std::ostringstream dict;
      write_dictionary(sc.dictionary, dict);
      write_text(out("dictionary.tsv"), dict.str());
      write_corpus(sc.train, out("train.tsv"));
      write_corpus(sc.val, out("val.tsv"));
      write_corpus(sc.test, out("test.tsv"));
    }
    m.write(g.out_dir);
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return is_input_error(e.code()) ? kExitInput : kExitAbort;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitAbort;
  }
}
