#include "cli.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include "clvq/activation_store.hpp"
#include "clvq/baselines.hpp"
#include "clvq/binary_io.hpp"
#include "clvq/concept_export.hpp"
#include "clvq/error.hpp"
#include "clvq/kv_text.hpp"
#include "clvq/probe_eval.hpp"
#include "clvq/synth.hpp"
#include "clvq/trainer.hpp"

namespace clvq::cli {
namespace {

namespace fs = std::filesystem;

spdlog::logger& log() {
  static std::shared_ptr<spdlog::logger> logger = [] {
    auto l = spdlog::stderr_logger_mt("clvq");
    l->set_pattern("[%l] %v");
    return l;
  }();
  return *logger;
}

void configure_log_level() {
  const char* env = std::getenv("CLVQ_LOG");
  auto level = spdlog::level::info;
  if (env && *env) {
    level = spdlog::level::from_str(env);
    if (level == spdlog::level::off && std::string(env) != "off") {
      level = spdlog::level::info;
      log().set_level(level);
      log().warn("unknown CLVQ_LOG level '{}', using info", env);
    }
  }
  log().set_level(level);
}

/// Keys of the run configuration shared by train, eval and export.
std::vector<std::string> run_keys() {
  std::vector<std::string> keys = TrainConfig::config_keys();
  for (const char* k : {"dataset", "out", "models", "checkpoint", "method", "saliency",
                        "bootstrap", "sentences", "probe_hidden", "probe_epochs", "probe_dropout",
                        "probe_lr", "sae_hidden", "sae_l1", "sae_epochs"}) {
    keys.emplace_back(k);
  }
  return keys;
}

/// String-valued flags that override config-file keys of the same meaning.
class FlagSet {
 public:
  void add(CLI::App* app, const std::string& flag, const std::string& key,
           const std::string& help) {
    bound_.emplace_back(key, app->add_option(flag, values_[key], help));
  }
  void apply(KvText& kv) const {
    for (const auto& [key, opt] : bound_) {
      if (opt->count() > 0) kv.set(key, values_.at(key));
    }
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::pair<std::string, CLI::Option*>> bound_;
};

struct Command {
  std::string config_path;
  FlagSet flags;
};

/// Malformed configuration text is a usage problem, whatever layer detects it.
template <class F>
auto as_usage(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const IoError&) {
    throw;
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
}

KvText load_config(const Command& cmd, const std::vector<std::string>& allowed) {
  KvText kv;
  if (!cmd.config_path.empty()) {
    if (!fs::exists(cmd.config_path)) throw IoError("config file not found: " + cmd.config_path);
    kv = as_usage([&] { return KvText::load(cmd.config_path); });
    kv.reject_unknown(allowed);
  }
  cmd.flags.apply(kv);
  return kv;
}

std::string require(const KvText& kv, const std::string& key, const std::string& flag) {
  auto v = kv.find(key);
  if (!v || v->empty()) throw UsageError("missing " + key + " (set --" + flag + " or '" + key +
                                         " = ...' in the config file)");
  return *v;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

std::string check_method(const std::string& tag) {
  const auto& tags = method_tags();
  if (std::find(tags.begin(), tags.end(), tag) == tags.end()) {
    throw UsageError("unknown method '" + tag + "' (valid: " + join(tags, ", ") + ")");
  }
  return tag;
}

std::vector<std::string> parse_methods(const std::string& text, bool allow_all) {
  if (text == "all") {
    if (!allow_all) throw UsageError("method 'all' is not valid here");
    return method_tags();
  }
  std::vector<std::string> out;
  for (auto& part : split(text, ',')) {
    if (part.empty()) continue;
    out.push_back(check_method(part));
  }
  if (out.empty()) throw UsageError("no method given");
  return out;
}

ActivationDataset load_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir);
  return read_dataset(dir);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir);
}

void print_config(std::ostream& out, const std::string& command, const KvText& kv) {
  out << "# clvq " << command << " resolved configuration\n" << kv.serialize() << std::flush;
}

void write_text(const std::string& path, const std::string& text) {
  write_file(path, {text.data(), text.size()});
}

int get_int_or(const KvText& kv, const std::string& key, int fallback) {
  auto v = kv.find(key);
  return v ? static_cast<int>(as_usage([&] { return parse_int(*v, key); })) : fallback;
}

double get_double_or(const KvText& kv, const std::string& key, double fallback) {
  auto v = kv.find(key);
  return v ? as_usage([&] { return parse_double(*v, key); }) : fallback;
}

ProbeConfig probe_config(const KvText& kv, std::uint64_t seed) {
  ProbeConfig p;
  p.hidden = get_int_or(kv, "probe_hidden", p.hidden);
  p.epochs = get_int_or(kv, "probe_epochs", p.epochs);
  p.dropout = get_double_or(kv, "probe_dropout", p.dropout);
  p.lr = get_double_or(kv, "probe_lr", p.lr);
  p.seed = seed;
  return p;
}

ProbeParams shared_probe(const ActivationDataset& ds, const ProbeConfig& cfg) {
  const auto train = ds.indices(Split::kTrain);
  if (train.empty()) throw DataError("dataset has no training split for the probe");
  log().info("training probe on {} sentence embeddings", train.size());
  return train_probe(sentence_embeddings(ds, train), sentence_labels(ds, train),
                     static_cast<int>(ds.manifest.label_names.size()), cfg);
}

// ---- synth -----------------------------------------------------------------

int cmd_synth(const Command& cmd, std::ostream& out) {
  std::vector<std::string> allowed = SynthConfig::config_keys();
  allowed.emplace_back("out");
  const KvText kv = load_config(cmd, allowed);
  const SynthConfig cfg = as_usage([&] { return SynthConfig::from_kv(kv); });
  cfg.validate();
  const std::string dir = require(kv, "out", "out");

  KvText resolved;
  cfg.to_kv(resolved);
  resolved.set("out", dir);
  print_config(out, "synth", resolved);

  ensure_dir(dir);
  const SynthOutput data = generate_planted(cfg);
  write_dataset(data.dataset, dir);
  log().info("wrote {} sentences to {}", data.dataset.records.size(), dir);
  out << "dataset: " << dir << "\n";
  return kSuccess;
}

// ---- train -----------------------------------------------------------------

int cmd_train(const Command& cmd, std::ostream& out) {
  const KvText kv = load_config(cmd, run_keys());
  TrainConfig config = as_usage([&] { return TrainConfig::from_kv(kv); });
  const std::string dataset_dir = require(kv, "dataset", "dataset");
  const std::string out_dir = require(kv, "out", "out");
  const auto methods = parse_methods(kv.find("method").value_or("clvqvae"), true);
  config.validate();

  SaeConfig sae;
  sae.hidden = get_int_or(kv, "sae_hidden", sae.hidden);
  sae.l1_weight = get_double_or(kv, "sae_l1", sae.l1_weight);
  sae.epochs = get_int_or(kv, "sae_epochs", config.epochs);
  sae.batch_size = config.batch_size;
  sae.lr = config.lr;
  sae.weight_decay = config.weight_decay;
  sae.seed = config.seed;

  KvText resolved;
  config.to_kv(resolved);
  resolved.set("dataset", dataset_dir);
  resolved.set("out", out_dir);
  resolved.set("method", join(methods, ","));
  resolved.set("sae_hidden", std::to_string(sae.hidden));
  resolved.set("sae_l1", format_double(sae.l1_weight));
  resolved.set("sae_epochs", std::to_string(sae.epochs));
  print_config(out, "train", resolved);

  const ActivationDataset ds = load_dataset(dataset_dir);
  ensure_dir(out_dir);
  const auto train = ds.indices(Split::kTrain);
  if (train.empty()) throw DataError(dataset_dir + ": training split is empty");

  for (const auto& method : methods) {
    const std::string ckpt = (fs::path(out_dir) / (method + ".ckpt")).string();
    if (method == "clvqvae" || method == "single_layer") {
      TrainConfig c = config;
      c.mode = method == "single_layer" ? TrainMode::kSingleLayer : TrainMode::kCrossLayer;
      const std::string log_path = (fs::path(out_dir) / (method + "_train_log.txt")).string();
      std::string log_text;
      const FitResult r = fit(c, ds, [&](const EpochLog& l) {
        const std::string line = format_epoch_log(l);
        log().info("{}: {}", method, line);
        log_text += line + "\n";
      });
      write_text(log_path, log_text);
      save_checkpoint(r.best, ckpt);
      out << method << ": best epoch " << r.best.epoch << ", val_loss "
          << format_double(r.best.best_val_loss) << ", log " << log_path << "\n";
    } else if (method == "clustering") {
      const ClusterModel m = fit_clustering(stack_tokens(ds, train), config.codebook_size,
                                            config.seed, config.kmeans_max_iters,
                                            config.kmeans_tol);
      save_clustering(m, ckpt);
      out << method << ": " << m.centroids.rows() << " centroids\n";
    } else {
      const SaeParams p = fit_sae(stack_tokens(ds, train), stack_tokens(ds, train, true), sae);
      const SaeLoss l = sae_loss(p, stack_tokens(ds, train), stack_tokens(ds, train, true));
      save_sae(p, ckpt);
      out << method << ": reconstruction " << format_double(l.reconstruction)
          << ", mean active " << format_double(l.mean_active) << "\n";
    }
    log().info("saved {}", ckpt);
    out << "checkpoint: " << ckpt << "\n";
  }
  return kSuccess;
}

// ---- eval ------------------------------------------------------------------

int cmd_eval(const Command& cmd, std::ostream& out) {
  const KvText kv = load_config(cmd, run_keys());
  const std::string dataset_dir = require(kv, "dataset", "dataset");
  const std::string models = require(kv, "models", "models");
  const std::string out_dir = kv.find("out").value_or(models);
  const auto methods = parse_methods(kv.find("method").value_or("all"), true);
  const Saliency saliency = parse_saliency(kv.find("saliency").value_or("gradient"));
  const auto seed = static_cast<std::uint64_t>(get_int_or(kv, "seed", 42));
  const int bootstrap = get_int_or(kv, "bootstrap", 10);
  const ProbeConfig probe_cfg = probe_config(kv, seed);

  std::vector<std::string> paths;
  for (const auto& m : methods) {
    paths.push_back((fs::path(models) / (m + ".ckpt")).string());
    if (!fs::exists(paths.back())) throw IoError("checkpoint not found: " + paths.back());
  }

  KvText resolved;
  resolved.set("dataset", dataset_dir);
  resolved.set("models", models);
  resolved.set("out", out_dir);
  resolved.set("method", join(methods, ","));
  resolved.set("saliency", to_string(saliency));
  resolved.set("seed", std::to_string(seed));
  resolved.set("bootstrap", std::to_string(bootstrap));
  resolved.set("probe_hidden", std::to_string(probe_cfg.hidden));
  resolved.set("probe_epochs", std::to_string(probe_cfg.epochs));
  resolved.set("probe_dropout", format_double(probe_cfg.dropout));
  resolved.set("probe_lr", format_double(probe_cfg.lr));
  print_config(out, "eval", resolved);

  const ActivationDataset ds = load_dataset(dataset_dir);
  ensure_dir(out_dir);
  const auto test = ds.indices(Split::kTest);
  if (test.empty()) throw DataError(dataset_dir + ": test split is empty");
  const ProbeParams probe = shared_probe(ds, probe_cfg);

  std::vector<FaithfulnessReport> reports;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const auto model = load_concept_model(paths[i]);
    if (model->method() != methods[i]) {
      throw DataError(paths[i] + ": holds method '" + model->method() + "', expected '" +
                      methods[i] + "'");
    }
    log().info("evaluating {} on {} test sentences", methods[i], test.size());
    reports.push_back(evaluate_faithfulness(ds, test, *model, probe,
                                            {saliency, bootstrap, seed}));
  }
  const std::string table = format_report_table(reports);
  const std::string md_path = (fs::path(out_dir) / "report.md").string();
  const std::string json_path = (fs::path(out_dir) / "report.json").string();
  write_text(md_path, table + "\nSaliency criterion: " + to_string(saliency) +
                          ". One probe is shared by every method.\n");
  write_text(json_path, reports_to_json(reports));
  out << table << "report: " << md_path << "\nreport: " << json_path << "\n";
  return kSuccess;
}

// ---- export ----------------------------------------------------------------

int cmd_export(const Command& cmd, std::ostream& out) {
  const KvText kv = load_config(cmd, run_keys());
  const std::string dataset_dir = require(kv, "dataset", "dataset");
  const std::string checkpoint = require(kv, "checkpoint", "checkpoint");
  const std::string out_dir = require(kv, "out", "out");
  const Saliency saliency = parse_saliency(kv.find("saliency").value_or("gradient"));
  const auto seed = static_cast<std::uint64_t>(get_int_or(kv, "seed", 42));
  std::vector<std::size_t> sentences;
  for (const auto& part : split(kv.find("sentences").value_or(""), ',')) {
    if (part.empty()) continue;
    const long long id = as_usage([&] { return parse_int(part, "sentence id"); });
    if (id < 0) throw UsageError("sentence id " + part + " is negative");
    sentences.push_back(static_cast<std::size_t>(id));
  }
  if (!fs::exists(checkpoint)) throw IoError("checkpoint not found: " + checkpoint);

  KvText resolved;
  resolved.set("dataset", dataset_dir);
  resolved.set("checkpoint", checkpoint);
  resolved.set("out", out_dir);
  std::vector<std::string> ids;
  for (auto s : sentences) ids.push_back(std::to_string(s));
  resolved.set("sentences", join(ids, ","));
  resolved.set("saliency", to_string(saliency));
  resolved.set("seed", std::to_string(seed));
  print_config(out, "export", resolved);

  const ActivationDataset ds = load_dataset(dataset_dir);
  for (auto s : sentences) {
    if (s >= ds.records.size()) {
      throw UsageError("sentence id " + std::to_string(s) + " is out of range (dataset has " +
                       std::to_string(ds.records.size()) + " sentences)");
    }
  }
  const auto model = load_concept_model(checkpoint);
  const auto train = ds.indices(Split::kTrain);
  const auto assignments = assign_tokens(ds, train, *model);

  std::vector<WordcloudRequest> requests;
  if (sentences.empty()) {
    for (int id = 0; id < model->num_concepts(); ++id) requests.push_back({id, std::nullopt});
  } else {
    const ProbeParams probe = shared_probe(ds, probe_config(kv, seed));
    for (auto s : sentences) {
      const SalientChoice c = select_salient(ds.records[s], *model, probe, saliency);
      requests.push_back({c.concept_id, s});
    }
  }
  ensure_dir(out_dir);
  const std::string path = (fs::path(out_dir) / "concepts.jsonl").string();
  export_wordcloud_data(assignments, model->num_concepts(), requests, model->method(), path);
  out << "concepts: " << path << " (" << requests.size() << " records)\n";
  return kSuccess;
}

}  // namespace

const std::vector<std::string>& method_tags() {
  static const std::vector<std::string> tags{"clvqvae", "clustering", "single_layer", "sae"};
  return tags;
}

int run(const std::vector<std::string>& args, std::ostream& out) {
  configure_log_level();
  CLI::App app{"Cross-layer VQ transcoder toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "clvq 0.1.0");

  Command synth, train, eval, exp;
  auto* s = app.add_subcommand("synth", "Generate a planted-concept activation dataset");
  s->add_option("--config", synth.config_path, "Generator config (key = value)");
  synth.flags.add(s, "--seed", "seed", "Random seed");
  synth.flags.add(s, "--out", "out", "Output dataset directory");
  synth.flags.add(s, "--sentences", "sentences", "Number of sentences");

  auto* t = app.add_subcommand("train", "Train a transcoder or baseline");
  t->add_option("--config", train.config_path, "Run config (key = value)");
  train.flags.add(t, "--dataset", "dataset", "Activation dataset directory");
  train.flags.add(t, "--out", "out", "Output directory for checkpoints and logs");
  train.flags.add(t, "--method", "method", "clvqvae|clustering|single_layer|sae|all");
  train.flags.add(t, "--seed", "seed", "Random seed");
  train.flags.add(t, "--init", "init", "spherical|kmeanspp|random");
  train.flags.add(t, "--top-k", "top_k", "Sampling candidates");
  train.flags.add(t, "--tau", "tau", "Sampling temperature");
  train.flags.add(t, "--codebook-size", "codebook_size", "Number of codebook vectors");
  train.flags.add(t, "--beta", "beta", "Commitment weight");
  train.flags.add(t, "--alpha-mode", "alpha_mode",
                  "adaptive_limited|adaptive_complete|fixed(<alpha>)");
  train.flags.add(t, "--epochs", "epochs", "Maximum epochs");

  auto* e = app.add_subcommand("eval", "Faithfulness evaluation of trained models");
  e->add_option("--config", eval.config_path, "Run config (key = value)");
  eval.flags.add(e, "--dataset", "dataset", "Activation dataset directory");
  eval.flags.add(e, "--models", "models", "Directory holding <method>.ckpt files");
  eval.flags.add(e, "--out", "out", "Report directory (defaults to --models)");
  eval.flags.add(e, "--method", "method", "Comma-separated method tags or all");
  eval.flags.add(e, "--saliency", "saliency", "gradient|projection");
  eval.flags.add(e, "--seed", "seed", "Random seed");
  eval.flags.add(e, "--bootstrap", "bootstrap", "Bootstrap resamples");

  auto* x = app.add_subcommand("export", "Export concept token histograms");
  x->add_option("--config", exp.config_path, "Run config (key = value)");
  exp.flags.add(x, "--dataset", "dataset", "Activation dataset directory");
  exp.flags.add(x, "--checkpoint", "checkpoint", "Model checkpoint");
  exp.flags.add(x, "--out", "out", "Export directory");
  exp.flags.add(x, "--sentences", "sentences", "Comma-separated sentence ids (empty: all concepts)");
  exp.flags.add(x, "--saliency", "saliency", "gradient|projection");
  exp.flags.add(x, "--seed", "seed", "Random seed");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& err) {
    std::ostringstream msg;
    const int code = app.exit(err, out, msg);
    if (!msg.str().empty()) log().error("{}", msg.str());
    return code == 0 ? kSuccess : kUsage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, out);
    if (t->parsed()) return cmd_train(train, out);
    if (e->parsed()) return cmd_eval(eval, out);
    return cmd_export(exp, out);
  } catch (const UsageError& err) {
    log().error("{}", err.what());
    return kUsage;
  } catch (const NumericError& err) {
    log().error("numeric failure: {}", err.what());
    return kNumeric;
  } catch (const DataError& err) {
    log().error("{}", err.what());
    return kData;
  } catch (const std::exception& err) {
    log().error("{}", err.what());
    return kUsage;
  }
}

}  // namespace clvq::cli
