#include "convqa/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "convqa/checkpoint.hpp"
#include "convqa/corpus.hpp"
#include "convqa/errors.hpp"
#include "convqa/fingerprint.hpp"
#include "convqa/infer.hpp"
#include "convqa/metrics.hpp"
#include "convqa/trainer.hpp"

namespace convqa {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what(), e.byte);
  }
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// Explicit --out wins, then the environment, then the fallback.
fs::path output_dir(const std::string& flag, const fs::path& fallback) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return fallback;
}

std::string absolute_string(const fs::path& p) {
  return p.empty() ? std::string() : fs::absolute(p).lexically_normal().string();
}

// Seed recorded by the synthetic generator, if the corpus came from it.
json data_gen_seed(const fs::path& corpus_path) {
  const json j = read_json(corpus_path);
  if (j.contains("generator") && j["generator"].contains("seed")) return j["generator"]["seed"];
  return nullptr;
}

json stats_json(const std::vector<EpochStats>& stats) {
  json arr = json::array();
  for (const auto& s : stats) {
    arr.push_back({{"epoch", s.epoch},
                   {"mean_loss", s.mean_loss},
                   {"dev_f1", s.dev_f1},
                   {"gold_fraction", s.gold_fraction_observed}});
  }
  return arr;
}

// --- synth -----------------------------------------------------------------------------

struct SynthArgs {
  SyntheticConfig cfg;
  std::uint64_t seed = 0;
  std::string out;
};

void cmd_synth(const SynthArgs& a, std::ostream& out) {
  const fs::path path =
      a.out.empty() ? output_dir("", ".") / ("synth-" + std::to_string(a.seed) + ".json")
                    : fs::path(a.out);
  const auto convs = gen_synthetic(a.cfg, a.seed);
  json gen{{"name", "chain-dependency"},
           {"seed", a.seed},
           {"n_convs", a.cfg.n_convs},
           {"rounds_per_conv", a.cfg.rounds_per_conv},
           {"entity_pool_size", a.cfg.entity_pool_size},
           {"dependency_prob", a.cfg.dependency_prob},
           {"vague_prob", a.cfg.vague_prob}};
  json extra{{"generator", gen}};
  save_coqa(convs, path, extra.dump());
  out << "wrote " << convs.size() << " conversations to " << path.string() << "\n";
}

// --- train -----------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string manifest;
  std::string train;
  std::string dev;
  std::string pretrained;
  std::string out;
  std::string regime;
  int epochs = 0;
  std::int64_t seed = -1;
  int hidden = 0;
  int embed = 0;
  double lr = 0.0;
  int window = -1;
  bool quiet = false;
};

void cmd_train(TrainArgs a, std::ostream& out) {
  ExperimentConfig cfg;
  if (!a.manifest.empty()) {
    const json m = read_json(a.manifest);
    if (m.value("command", "") != "train") throw InputError(a.manifest + " is not a train manifest");
    if (m.value("manifest_version", 0) != kManifestVersion) {
      throw InputError("unsupported manifest version in " + a.manifest);
    }
    cfg = parse_config(m.at("config").dump());
    const auto& in = m.at("inputs");
    if (a.train.empty()) a.train = in.at("train").get<std::string>();
    if (a.dev.empty()) a.dev = in.at("dev").get<std::string>();
    if (a.pretrained.empty() && in.contains("pretrained") && in["pretrained"].is_string()) {
      a.pretrained = in["pretrained"].get<std::string>();
    }
    const auto train_fp = corpus_fingerprint(load_coqa(a.train));
    const auto dev_fp = corpus_fingerprint(load_coqa(a.dev));
    const auto& fp = m.at("corpus_fingerprint");
    if (fp.at("train").get<std::string>() != train_fp || fp.at("dev").get<std::string>() != dev_fp) {
      throw InputError("corpus contents differ from the manifest fingerprints");
    }
  } else {
    if (a.config.empty()) throw UsageError("train needs --config or --manifest");
    cfg = parse_config(read_file(a.config));
  }
  if (a.train.empty() || a.dev.empty()) throw UsageError("train needs --train and --dev corpora");

  // Flags override config keys.
  if (!a.regime.empty()) {
    const RegimeSpec preset =
        regime_preset(a.regime, a.epochs > 0 ? a.epochs : cfg.regime.total_epochs);
    const int window = cfg.regime.history_window;
    cfg.regime = preset;
    cfg.regime.history_window = window;
  } else if (a.epochs > 0) {
    cfg.regime.total_epochs = a.epochs;
    cfg.regime.schedule.N = a.epochs;
  }
  if (a.window >= 0) cfg.regime.history_window = a.window;
  if (a.seed >= 0) cfg.seeds = derive_seeds(static_cast<std::uint64_t>(a.seed));
  if (a.hidden > 0) cfg.hyper.hidden_dim = a.hidden;
  if (a.embed > 0) cfg.hyper.embed_dim = a.embed;
  if (a.lr > 0.0) cfg.hyper.adam.lr = a.lr;
  if (!a.pretrained.empty()) cfg.pretrain_checkpoint = a.pretrained;
  validate_regime(cfg.regime);

  std::optional<Checkpoint> pretrained;
  if (cfg.regime.from_best_model) {
    if (cfg.pretrain_checkpoint.empty()) {
      throw RegimeError("regime '" + cfg.regime.name + "' needs a pretraining checkpoint");
    }
    cfg.pretrain_checkpoint = absolute_string(cfg.pretrain_checkpoint);
    pretrained = load_checkpoint(cfg.pretrain_checkpoint);
  } else {
    cfg.pretrain_checkpoint.clear();
  }

  const auto train = load_coqa(a.train);
  const auto dev = load_coqa(a.dev);
  const fs::path dir = output_dir(a.out, "convqa-train");
  fs::create_directories(dir);

  const std::string started = utc_now();
  RegimeHooks hooks;
  if (!a.quiet) {
    hooks.on_epoch = [&out](const EpochStats& s) {
      out << "epoch " << s.epoch << "  loss " << std::fixed << std::setprecision(4)
          << s.mean_loss << "  dev MP F1 " << std::setprecision(2) << s.dev_f1
          << "  gold fraction " << std::setprecision(3) << s.gold_fraction_observed << "\n";
      out.unsetf(std::ios::floatfield);
    };
  }
  const auto result = run_regime(cfg.regime, train, dev, cfg.seeds, cfg.hyper, pretrained, hooks);

  const fs::path ckpt = dir / "best.ckpt.json";
  const fs::path stats = dir / "stats.csv";
  const fs::path cache = dir / "cache.jsonl";
  save_checkpoint(result.best, ckpt);
  write_file(stats, stats_to_csv(result.stats));
  save_cache(result.final_cache, cache);

  json m;
  m["manifest_version"] = kManifestVersion;
  m["command"] = "train";
  m["config"] = json::parse(config_to_json(cfg));
  m["inputs"] = {{"train", absolute_string(a.train)},
                 {"dev", absolute_string(a.dev)},
                 {"pretrained", cfg.pretrain_checkpoint.empty()
                                    ? json(nullptr)
                                    : json(cfg.pretrain_checkpoint)}};
  m["corpus_fingerprint"] = {{"train", corpus_fingerprint(train)},
                             {"dev", corpus_fingerprint(dev)}};
  m["seeds"] = {{"init", cfg.seeds.init},
                {"sampling", cfg.seeds.sampling},
                {"shuffle", cfg.seeds.shuffle},
                {"data_gen", {{"train", data_gen_seed(a.train)}, {"dev", data_gen_seed(a.dev)}}}};
  m["started_at"] = started;
  m["finished_at"] = utc_now();
  m["best_epoch"] = result.best_epoch;
  m["epochs"] = stats_json(result.stats);
  m["outputs"] = {{"checkpoint", ckpt.filename().string()},
                  {"stats", stats.filename().string()},
                  {"cache", cache.filename().string()}};
  write_file(dir / "manifest.json", m.dump(2) + "\n");
  out << "best epoch " << result.best_epoch << "; wrote " << ckpt.string() << "\n";
}

// --- eval ------------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string corpus;
  std::string manifest;
  std::string mode = "mp";
  std::string scheme = "loo";
  std::string out;
  int window = 2;
};

void cmd_eval(EvalArgs a, std::ostream& out) {
  if (!a.manifest.empty()) {
    const json m = read_json(a.manifest);
    if (m.value("command", "") != "eval") throw InputError(a.manifest + " is not an eval manifest");
    const auto& in = m.at("inputs");
    a.checkpoint = in.at("checkpoint").get<std::string>();
    a.corpus = in.at("corpus").get<std::string>();
    a.mode = m.at("mode").get<std::string>();
    a.scheme = m.at("scheme").get<std::string>();
    a.window = m.at("K").get<int>();
    if (file_sha256(a.checkpoint) != m.at("checkpoint_sha256").get<std::string>()) {
      throw InputError("checkpoint contents differ from the manifest");
    }
  }
  if (a.checkpoint.empty() || a.corpus.empty()) {
    throw UsageError("eval needs --checkpoint and --corpus");
  }
  const auto mode = mode_from_string(a.mode);
  if (!mode) throw UsageError("--mode must be sm or mp");
  const auto scheme = scheme_from_string(a.scheme);
  if (!scheme) throw UsageError("--scheme must be max or loo");
  if (a.window < 0) throw UsageError("--window must be >= 0");

  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const auto corpus = load_coqa(a.corpus);
  const fs::path dir = output_dir(a.out, "convqa-eval");
  fs::create_directories(dir);

  const std::string started = utc_now();
  const auto ev = evaluate(ckpt.params, ckpt.vocab, corpus, *mode, a.window,
                           ckpt.params.dims.max_span_len, *scheme);
  const std::string fingerprint = corpus_fingerprint(corpus);
  write_predictions(ev.results, dir / "predictions.json");
  write_file(dir / "report.json", report_to_json(ev.report, fingerprint, to_string(*mode)));
  write_file(dir / "report.csv", report_to_csv(ev.report));

  json m;
  m["manifest_version"] = kManifestVersion;
  m["command"] = "eval";
  m["inputs"] = {{"checkpoint", absolute_string(a.checkpoint)},
                 {"corpus", absolute_string(a.corpus)}};
  m["checkpoint_sha256"] = file_sha256(a.checkpoint);
  m["corpus_fingerprint"] = fingerprint;
  m["mode"] = std::string(to_string(*mode));
  m["scheme"] = std::string(to_string(*scheme));
  m["K"] = a.window;
  m["started_at"] = started;
  m["finished_at"] = utc_now();
  m["outputs"] = {{"predictions", "predictions.json"},
                  {"report_json", "report.json"},
                  {"report_csv", "report.csv"}};
  write_file(dir / "manifest.json", m.dump(2) + "\n");
  out << std::string(to_string(*mode)) << " F1 " << std::fixed << std::setprecision(2)
      << ev.report.overall.f1 << "  EM " << ev.report.overall.em << "  over "
      << ev.report.total_turns << " turns\n";
  out.unsetf(std::ios::floatfield);
}

// --- compare ---------------------------------------------------------------------------

void flatten_cells(const json& node, const std::string& prefix,
                   std::vector<std::pair<std::string, double>>& cells) {
  const bool leaf = node.is_null() || (node.is_object() && node.contains("f1"));
  if (leaf) {
    cells.emplace_back(prefix, node.is_null() ? std::nan("") : node["f1"].get<double>());
    return;
  }
  if (!node.is_object()) throw FormatError("unexpected report cell at " + prefix, 0);
  for (const auto& [key, child] : node.items()) {
    flatten_cells(child, prefix.empty() ? key : prefix + "/" + key, cells);
  }
}

std::string fmt_f1(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

// --- validate --------------------------------------------------------------------------

void cmd_validate(const std::string& path, std::ostream& out) {
  const auto convs = load_coqa(path);
  std::array<int, kNumAnswerTypes> types{};
  int turns = 0;
  for (const auto& c : convs) {
    for (const auto& t : c.turns) {
      ++turns;
      ++types[static_cast<int>(t.answer_type)];
    }
  }
  out << path << ": ok, " << convs.size() << " conversations, " << turns << " turns";
  for (int i = 0; i < kNumAnswerTypes; ++i) {
    out << ", " << to_string(static_cast<AnswerType>(i)) << " " << types[i];
  }
  out << "\n";
}

}  // namespace

Comparison compare_reports(const std::vector<fs::path>& reports) {
  if (reports.size() < 2) throw UsageError("compare needs at least two reports");
  Comparison cmp;
  std::string fingerprint, scheme;
  std::vector<std::string> keys;
  std::map<std::string, int> label_uses;
  for (std::size_t r = 0; r < reports.size(); ++r) {
    const json j = read_json(reports[r]);
    if (!j.contains("corpus_fingerprint") || !j.contains("overall")) {
      throw FormatError(reports[r].string() + " is not an evaluation report", 0);
    }
    const auto fp = j["corpus_fingerprint"].get<std::string>();
    const auto sc = j.value("scheme", "");
    if (r == 0) {
      fingerprint = fp;
      scheme = sc;
    } else if (fp != fingerprint) {
      throw Error("refusing to compare: " + reports[r].string() +
                  " was computed on a different corpus (fingerprint " + fp.substr(0, 12) +
                  " vs " + fingerprint.substr(0, 12) + ")");
    } else if (sc != scheme) {
      throw Error("refusing to compare: " + reports[r].string() + " uses scoring scheme " + sc +
                  " but the first report uses " + scheme);
    }
    std::vector<std::pair<std::string, double>> cells;
    for (const char* part :
         {"overall", "by_domain", "by_answer_type", "by_conv_length", "by_question_length"}) {
      flatten_cells(j.at(part), part, cells);
    }
    std::vector<std::string> these;
    for (const auto& c : cells) these.push_back(c.first);
    if (r == 0) {
      keys = these;
      cmp.cells = these;
      cmp.f1.assign(these.size(), {});
    } else if (these != keys) {
      throw Error("refusing to compare: " + reports[r].string() +
                  " has a different partition layout than " + reports[0].string());
    }
    for (std::size_t i = 0; i < cells.size(); ++i) cmp.f1[i].push_back(cells[i].second);

    fs::path p = fs::absolute(reports[r]).lexically_normal();
    std::string label = p.has_parent_path() && p.parent_path().has_filename()
                            ? p.parent_path().filename().string()
                            : p.stem().string();
    if (label_uses[label]++ > 0) label += "#" + std::to_string(label_uses[label]);
    std::string mode = j.value("mode", "");
    cmp.labels.push_back(mode.empty() ? label : label + "(" + mode + ")");
  }
  return cmp;
}

std::string comparison_to_csv(const Comparison& cmp) {
  std::ostringstream os;
  os << "cell";
  for (const auto& l : cmp.labels) os << ",f1:" << l;
  for (std::size_t r = 1; r < cmp.labels.size(); ++r) {
    os << ",delta:" << cmp.labels[0] << "-" << cmp.labels[r];
  }
  os << "\n";
  for (std::size_t i = 0; i < cmp.cells.size(); ++i) {
    os << cmp.cells[i];
    for (double v : cmp.f1[i]) os << ',' << fmt_f1(v);
    for (std::size_t r = 1; r < cmp.labels.size(); ++r) {
      os << ',' << fmt_f1(cmp.f1[i][0] - cmp.f1[i][r]);
    }
    os << "\n";
  }
  return os.str();
}

std::string comparison_to_text(const Comparison& cmp) {
  std::vector<std::string> header{"cell"};
  for (const auto& l : cmp.labels) header.push_back(l);
  for (std::size_t r = 1; r < cmp.labels.size(); ++r) header.push_back("d(1-" + std::to_string(r + 1) + ")");
  std::vector<std::vector<std::string>> rows{header};
  for (std::size_t i = 0; i < cmp.cells.size(); ++i) {
    std::vector<std::string> row{cmp.cells[i]};
    for (double v : cmp.f1[i]) row.push_back(std::isnan(v) ? "-" : fmt_f1(v));
    for (std::size_t r = 1; r < cmp.labels.size(); ++r) {
      const double d = cmp.f1[i][0] - cmp.f1[i][r];
      row.push_back(std::isnan(d) ? "-" : fmt_f1(d));
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream os;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        os << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      } else {
        os << "  " << std::right << std::setw(static_cast<int>(width[c])) << row[c];
      }
    }
    os << "\n";
  }
  return os.str();
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conversational QA with scheduled sampling over dialogue history", "convqa"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic chain-dependency corpus");
  s->add_option("--convs", synth.cfg.n_convs, "number of conversations")->required();
  s->add_option("--rounds", synth.cfg.rounds_per_conv, "rounds per conversation")->required();
  s->add_option("--seed", synth.seed, "generator seed")->required();
  s->add_option("--dep-prob", synth.cfg.dependency_prob, "probability a turn refers back");
  s->add_option("--pool", synth.cfg.entity_pool_size, "entity pool size");
  s->add_option("--vague-prob", synth.cfg.vague_prob, "share of questions without a relation");
  s->add_option("--out", synth.out, "output corpus file");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train a reader under a regime");
  t->add_option("--config", train.config, "JSON experiment config");
  t->add_option("--manifest", train.manifest, "rerun from a train manifest");
  t->add_option("--train", train.train, "training corpus");
  t->add_option("--dev", train.dev, "dev corpus");
  t->add_option("--pretrained", train.pretrained, "teacher-forced checkpoint for BM regimes");
  t->add_option("--out", train.out, "output directory");
  t->add_option("--regime", train.regime, "regime preset");
  t->add_option("--epochs", train.epochs, "total epochs")->check(CLI::PositiveNumber);
  t->add_option("--seed", train.seed, "run seed")->check(CLI::NonNegativeNumber);
  t->add_option("--hidden", train.hidden, "hidden size")->check(CLI::PositiveNumber);
  t->add_option("--embed", train.embed, "embedding size")->check(CLI::PositiveNumber);
  t->add_option("--lr", train.lr, "learning rate")->check(CLI::PositiveNumber);
  t->add_option("-K,--window", train.window, "history window")->check(CLI::NonNegativeNumber);
  t->add_flag("--quiet", train.quiet, "no per-epoch progress");
  t->get_option("--config")->excludes("--manifest");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "answer a corpus and score it");
  e->add_option("--checkpoint", eval.checkpoint, "model checkpoint");
  e->add_option("--corpus", eval.corpus, "CoQA-format corpus");
  e->add_option("--manifest", eval.manifest, "rerun from an eval manifest");
  e->add_option("--mode", eval.mode, "sm or mp")->check(CLI::IsMember({"sm", "mp"}));
  e->add_option("--scheme", eval.scheme, "max or loo")->check(CLI::IsMember({"max", "loo"}));
  e->add_option("--out", eval.out, "output directory");
  e->add_option("-K,--window", eval.window, "history window")->check(CLI::NonNegativeNumber);
  e->get_option("--manifest")->excludes("--checkpoint")->excludes("--corpus");

  std::vector<std::string> compare_paths;
  std::string compare_out;
  auto* c = app.add_subcommand("compare", "side-by-side comparison of reports");
  c->add_option("reports", compare_paths, "report.json files")->required()->expected(2, -1);
  c->add_option("--out", compare_out, "CSV output file");

  std::string validate_path;
  auto* v = app.add_subcommand("validate", "check a corpus for integrity");
  v->add_option("corpus", validate_path, "CoQA-format corpus")->required();

  // CLI11 parses the reversed argument list.
  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*s) {
      cmd_synth(synth, out);
    } else if (*t) {
      cmd_train(train, out);
    } else if (*e) {
      cmd_eval(eval, out);
    } else if (*c) {
      std::vector<fs::path> paths(compare_paths.begin(), compare_paths.end());
      const auto cmp = compare_reports(paths);
      out << comparison_to_text(cmp);
      if (!compare_out.empty()) write_file(compare_out, comparison_to_csv(cmp));
    } else if (*v) {
      cmd_validate(validate_path, out);
    }
  } catch (const UsageError& ue) {
    err << "usage error: " << ue.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace convqa
