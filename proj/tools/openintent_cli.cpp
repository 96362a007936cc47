#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "openintent/config.hpp"
#include "openintent/errors.hpp"
#include "openintent/evaluation.hpp"
#include "openintent/serialization.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace openintent;

namespace {

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("-c,--config", opts.config, "JSON config file");
  cmd->add_option("--set", opts.overrides, "Override a config value, e.g. train.max_epochs=30")
      ->allow_extra_args(false);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join_numbers(const std::vector<double>& v) {
  json j = v;
  return j.dump();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

void write_config(const fs::path& dir, const RunConfig& cfg) {
  write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");
}

fs::path prepare_output(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw ValidationError("cannot create output directory " + cfg.output_dir.string() + ": " + ec.message());
  return cfg.output_dir;
}

struct LoadedData {
  Corpus corpus;
  EmbeddingTable table;
};

LoadedData load_data(const RunConfig& cfg, const DatasetConfig& ds) {
  LoadedData d;
  d.corpus = load_corpus(ds.path, ds.format, cfg.max_len);
  d.table = build_embeddings(d.corpus, cfg.embedding_path, cfg.embedding_dim, cfg.oov_seed);
  return d;
}

// Reads a config next to a checkpoint when none was given explicitly.
RunConfig config_for_checkpoint(const CommonOptions& opts, const fs::path& checkpoint) {
  fs::path file = opts.config;
  if (file.empty()) {
    const fs::path sibling = checkpoint.parent_path() / "config.json";
    if (fs::exists(sibling)) file = sibling;
  }
  return load_config(file, opts.overrides);
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  CommonOptions common;
  std::string dataset;
  std::string loss;
  std::string known_classes;
  double fraction = 0.0;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int cmd_train(const TrainOptions& o) {
  std::vector<std::string> overrides = o.common.overrides;
  if (!o.loss.empty()) overrides.push_back("train.loss=\"" + o.loss + "\"");
  if (o.seed_given) overrides.push_back("train.seed=" + std::to_string(o.seed));
  const RunConfig cfg = load_config(o.common.config, overrides);
  const DatasetConfig& ds = cfg.dataset(o.dataset);
  const LoadedData data = load_data(cfg, ds);

  SplitPlan plan;
  if (!o.known_classes.empty()) {
    if (o.fraction > 0.0) throw ConfigError("use either --known-classes or --fraction, not both");
    plan = make_split_plan(data.corpus, ds.name, split_list(o.known_classes), cfg.train.seed);
  } else if (o.fraction > 0.0) {
    plan = make_split_plan(data.corpus, ds.name, o.fraction, cfg.train.seed);
  } else {
    plan = make_split_plan(data.corpus, ds.name, data.corpus.classes(), cfg.train.seed);
  }
  check_no_leakage(data.corpus, plan);

  const fs::path out = prepare_output(cfg);
  write_config(out, cfg);
  std::ofstream log(out / "train_log.jsonl", std::ios::binary);
  if (!log) throw Error("cannot open " + (out / "train_log.jsonl").string());

  std::cerr << "training " << head_mode_name(cfg.train.loss_mode) << " encoder on " << ds.name << ": "
            << plan.known_classes.size() << " known classes, " << plan.train.size() << " train / "
            << plan.validation.size() << " validation utterances\n";
  auto on_epoch = [&](const EpochRecord& r) {
    log << to_json(r).dump() << "\n";
    log.flush();
  };

  TrainResult result;
  try {
    result = train(data.corpus, plan.train, plan.validation, plan.known_classes.size(), data.table,
                   cfg.train, on_epoch);
  } catch (const DivergenceError& e) {
    Checkpoint last{e.last_good(), plan.known_classes, data.corpus.max_len(), data.table.dim(), cfg.train.lmcl};
    save_checkpoint(out / "last_good.ckpt", last);
    throw;
  }

  const Checkpoint ckpt{result.params, plan.known_classes, data.corpus.max_len(), data.table.dim(),
                        cfg.train.lmcl};
  save_checkpoint(out / "model.ckpt", ckpt);

  const FeatureMatrix feats = extract_features(result.params, data.corpus, plan.train.ids, data.table);
  const Eigen::MatrixXd scores = class_scores(result.params, feats);
  DetectorFile det;
  det.config = cfg.detect;
  det.vocab_hash = data.table.vocab_hash();
  if (result.params.mode != HeadMode::kLmcl) {
    det.doc_thresholds = doc_fit(result.params.mode == HeadMode::kSigmoid ? sigmoid(scores) : softmax(scores),
                                 plan.train.labels, cfg.detect.doc_risk_factor);
  }
  bool have_detector = true;
  try {
    det.lof = FittedLof::fit(feats.values, cfg.detect.lof_k);
  } catch (const Error& e) {
    std::cerr << "warning: no LOF detector written: " << e.what() << "\n";
    have_detector = false;
  }
  if (have_detector) save_detector(out / "detector.cbor", det);

  json run = {{"dataset", ds.name},
              {"known_classes", plan.known_classes},
              {"fraction", o.fraction > 0.0 ? json(o.fraction) : json(nullptr)},
              {"seed", cfg.train.seed},
              {"epochs_run", result.report.epochs_run},
              {"best_epoch", result.report.best_epoch},
              {"best_validation_accuracy", result.report.best_validation_accuracy},
              {"stopped_early", result.report.stopped_early},
              {"checkpoint", "model.ckpt"},
              {"detector", have_detector ? json("detector.cbor") : json(nullptr)}};
  write_text(out / "run.json", run.dump(2) + "\n");
  std::cout << "best validation accuracy " << result.report.best_validation_accuracy << " at epoch "
            << result.report.best_epoch << " of " << result.report.epochs_run << "\n"
            << "wrote " << (out / "model.ckpt").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct DetectOptions {
  CommonOptions common;
  std::string checkpoint;
  std::string detector;
  std::string input;
  std::string method = "lof";
  std::string out;
  std::string dataset;
};

int cmd_detect(const DetectOptions& o) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const RunConfig cfg = config_for_checkpoint(o.common, o.checkpoint);
  const LoadedData data = load_data(cfg, cfg.dataset(o.dataset));
  if (data.table.vocab_hash() != ckpt.params.vocab_hash) {
    throw CompatibilityError("checkpoint vocabulary does not match the configured dataset and embeddings");
  }
  if (o.method != "lof" && o.method != "msp" && o.method != "doc") {
    throw ConfigError("unknown detection method '" + o.method + "' (expected lof, msp or doc)");
  }

  DetectorFile det;
  det.config = cfg.detect;
  const bool need_detector = o.method != "msp";
  if (need_detector) {
    fs::path path = o.detector;
    if (path.empty()) path = fs::path(o.checkpoint).parent_path() / "detector.cbor";
    det = load_detector(path);
    if (det.vocab_hash != ckpt.params.vocab_hash) {
      throw CompatibilityError("detector and checkpoint were built from different vocabularies");
    }
  }
  if (o.method == "msp" && ckpt.params.mode != HeadMode::kSoftmax) {
    throw ConfigError("msp needs a softmax checkpoint");
  }
  if (o.method == "doc" && det.doc_thresholds.empty()) {
    throw ConfigError("doc needs a softmax or sigmoid checkpoint with fitted thresholds");
  }

  std::ifstream in(o.input);
  if (!in) throw ValidationError("cannot read input " + o.input);
  std::vector<std::string> texts;
  std::vector<std::vector<std::string>> tokens;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string text = line.substr(0, line.find('\t'));
    auto t = tokenize(text);
    if (t.empty()) continue;
    texts.push_back(text);
    tokens.push_back(std::move(t));
  }

  std::ofstream file;
  if (!o.out.empty()) {
    file.open(o.out, std::ios::binary);
    if (!file) throw Error("cannot open " + o.out + " for writing");
  }
  std::ostream& out = o.out.empty() ? std::cout : file;

  const FeatureMatrix feats =
      extract_features(ckpt.params, encode_tokens(tokens, data.table, ckpt.max_len), data.table);
  const Eigen::MatrixXd scores = class_scores(ckpt.params, feats);
  Eigen::MatrixXd probs;
  if (ckpt.params.mode == HeadMode::kSoftmax) probs = softmax(scores);
  if (ckpt.params.mode == HeadMode::kSigmoid) probs = sigmoid(scores);

  for (Eigen::Index i = 0; i < feats.values.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(scores.cols()));
    for (Eigen::Index j = 0; j < scores.cols(); ++j) row[static_cast<std::size_t>(j)] = scores(i, j);
    Decision d;
    json rec = {{"index", i}, {"text", texts[static_cast<std::size_t>(i)]}, {"method", o.method}};
    if (o.method == "lof") {
      d = decide_lof(det.lof, row, feats.values.row(i).transpose(), det.config);
      rec["lof"] = d.score;
    } else {
      std::vector<double> p(static_cast<std::size_t>(probs.cols()));
      for (Eigen::Index j = 0; j < probs.cols(); ++j) p[static_cast<std::size_t>(j)] = probs(i, j);
      d = o.method == "msp" ? decide_msp(p, det.config) : decide_doc(p, det.doc_thresholds);
      rec["probabilities"] = p;
    }
    rec["scores"] = row;
    rec["unknown"] = d.unknown();
    rec["prediction"] = d.unknown() ? "UNKNOWN" : ckpt.classes.at(static_cast<std::size_t>(d.predicted));
    out << rec.dump() << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateOptions {
  CommonOptions common;
  std::string methods;
  std::string fractions;
  std::size_t runs = 0;
  std::size_t jobs = 0;
};

int cmd_evaluate(const EvaluateOptions& o) {
  std::vector<std::string> overrides = o.common.overrides;
  if (!o.methods.empty()) {
    json list = split_list(o.methods);
    overrides.push_back("experiment.methods=" + list.dump());
  }
  if (!o.fractions.empty()) {
    std::vector<double> f;
    for (const auto& s : split_list(o.fractions)) {
      try {
        f.push_back(std::stod(s));
      } catch (const std::exception&) {
        throw ConfigError("bad fraction '" + s + "'");
      }
    }
    overrides.push_back("experiment.fractions=" + join_numbers(f));
  }
  if (o.runs > 0) overrides.push_back("experiment.runs=" + std::to_string(o.runs));
  if (o.jobs > 0) overrides.push_back("experiment.jobs=" + std::to_string(o.jobs));
  const RunConfig cfg = load_config(o.common.config, overrides);
  if (cfg.datasets.empty()) throw ConfigError("no datasets configured");

  std::vector<ExperimentDataset> datasets;
  std::vector<std::string> names;
  for (const auto& ds : cfg.datasets) {
    LoadedData d = load_data(cfg, ds);
    std::cerr << ds.name << ": " << d.corpus.classes().size() << " classes, "
              << d.corpus.count(Split::kTrain) << "/" << d.corpus.count(Split::kValidation) << "/"
              << d.corpus.count(Split::kTest) << " train/valid/test, " << d.table.size()
              << " vocabulary entries\n";
    datasets.push_back({ds.name, std::move(d.corpus), std::move(d.table)});
    names.push_back(ds.name);
  }
  const fs::path out = prepare_output(cfg);
  write_config(out, cfg);
  const ExperimentSettings settings = cfg.experiment();
  const ExperimentReport report =
      run_experiment(datasets, settings, [](const std::string& line) { std::cerr << line << "\n"; });

  std::ostringstream jsonl;
  for (const auto& r : report.runs) jsonl << to_json(r).dump() << "\n";
  for (const auto& c : report.aggregates) jsonl << to_json(c).dump() << "\n";
  write_text(out / "report.jsonl", jsonl.str());

  std::ostringstream settings_note;
  settings_note << "LOF k = " << cfg.detect.lof_k << ", LOF threshold = " << cfg.detect.lof_threshold
                << ", MSP threshold = " << cfg.detect.msp_threshold
                << ", DOC alpha = " << cfg.detect.doc_risk_factor << "\n"
                << "* = some runs failed; n/a = no completed runs\n";
  const std::string table = render_table(report, names, settings, ReportMetric::kUnknownF1) + "\n" +
                            render_table(report, names, settings, ReportMetric::kMacroF1All) + "\n" +
                            settings_note.str();
  write_text(out / "table.txt", table);
  std::cout << table;
  return report.completed_cells() > 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct ExportOptions {
  CommonOptions common;
  std::string checkpoint;
  std::string split = "test";
  std::string out;
  std::string dataset;
};

int cmd_export(const ExportOptions& o) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const RunConfig cfg = config_for_checkpoint(o.common, o.checkpoint);
  const LoadedData data = load_data(cfg, cfg.dataset(o.dataset));
  export_features(ckpt.params, data.corpus, data.corpus.ids(parse_split(o.split)), data.table, o.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct ScoreOptions {
  std::string detector;
  std::string features;
  std::string out;
};

int cmd_score(const ScoreOptions& o) {
  const DetectorFile det = load_detector(o.detector);
  std::ifstream in(o.features);
  if (!in) throw ValidationError("cannot read features " + o.features);
  std::ofstream file;
  if (!o.out.empty()) {
    file.open(o.out, std::ios::binary);
    if (!file) throw Error("cannot open " + o.out + " for writing");
  }
  std::ostream& out = o.out.empty() ? std::cout : file;

  std::string line;
  std::size_t line_no = 0;
  std::size_t first_feature = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, '\t');) cols.push_back(c);
    if (line_no == 1 && cols.size() > 0 && cols[0] == "id") {
      first_feature = cols.size() > 1 && cols[1] == "label" ? 2 : 1;
      continue;
    }
    if (line_no == 1) first_feature = cols.size() - static_cast<std::size_t>(det.lof.dim());
    if (cols.size() != first_feature + static_cast<std::size_t>(det.lof.dim())) {
      throw ParseError(o.features + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(first_feature + static_cast<std::size_t>(det.lof.dim())) + " columns, got " +
                       std::to_string(cols.size()));
    }
    Eigen::VectorXd x(det.lof.dim());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      const std::string& s = cols[first_feature + static_cast<std::size_t>(j)];
      char* end = nullptr;
      x[j] = std::strtod(s.c_str(), &end);
      if (end == s.c_str() || *end != '\0') {
        throw ParseError(o.features + ":" + std::to_string(line_no) + ": bad number '" + s + "'");
      }
    }
    const double lof = det.lof.score(x);
    json rec = {{"id", first_feature > 0 ? json(cols[0]) : json(line_no)},
                {"lof", lof},
                {"decision", lof > det.config.lof_threshold ? "unknown" : "known"}};
    out << rec.dump() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unknown intent detection: BiLSTM encoders with LMCL or softmax, LOF and baseline detectors"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "openintent 1.0.0");

  TrainOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "Train one encoder on a known-class subset");
  add_common(train_cmd, train_opts.common);
  train_cmd->add_option("--dataset", train_opts.dataset, "Dataset name from the config (default: first)");
  train_cmd->add_option("--loss", train_opts.loss, "softmax, lmcl or sigmoid")
      ->check(CLI::IsMember({"softmax", "lmcl", "sigmoid"}));
  auto* known_opt = train_cmd->add_option("--known-classes", train_opts.known_classes,
                                          "Comma-separated known classes");
  auto* fraction_opt = train_cmd->add_option("--fraction", train_opts.fraction,
                                             "Known-class fraction, sampled by training counts");
  known_opt->excludes(fraction_opt);
  train_cmd->add_option("--seed", train_opts.seed, "Seed for class sampling and training")
      ->each([&](const std::string&) { train_opts.seed_given = true; });

  DetectOptions detect_opts;
  auto* detect_cmd = app.add_subcommand("detect", "Classify raw utterances, rejecting unknown intents");
  add_common(detect_cmd, detect_opts.common);
  detect_cmd->add_option("--checkpoint", detect_opts.checkpoint, "Trained checkpoint")->required();
  detect_cmd->add_option("--detector", detect_opts.detector,
                         "Fitted detector (default: detector.cbor next to the checkpoint)");
  detect_cmd->add_option("--input", detect_opts.input, "One utterance per line")->required();
  detect_cmd->add_option("--method", detect_opts.method, "lof, msp or doc");
  detect_cmd->add_option("--out", detect_opts.out, "Output JSON-lines file (default: stdout)");
  detect_cmd->add_option("--dataset", detect_opts.dataset, "Dataset the checkpoint was trained on");

  EvaluateOptions eval_opts;
  auto* eval_cmd = app.add_subcommand("evaluate", "Run the experiment grid and print the result table");
  add_common(eval_cmd, eval_opts.common);
  eval_cmd->add_option("--methods", eval_opts.methods, "Comma-separated: msp,doc,doc-softmax,lof-softmax,lof-lmcl");
  eval_cmd->add_option("--fractions", eval_opts.fractions, "Comma-separated known-class fractions");
  eval_cmd->add_option("--runs", eval_opts.runs, "Runs per cell");
  eval_cmd->add_option("--jobs", eval_opts.jobs, "Parallel runs");

  ExportOptions export_opts;
  auto* export_cmd = app.add_subcommand("export-features", "Write encoder features of one split as TSV");
  add_common(export_cmd, export_opts.common);
  export_cmd->add_option("--checkpoint", export_opts.checkpoint, "Trained checkpoint")->required();
  export_cmd->add_option("--split", export_opts.split, "train, valid or test");
  export_cmd->add_option("--out", export_opts.out, "Output file")->required();
  export_cmd->add_option("--dataset", export_opts.dataset, "Dataset name from the config");

  ScoreOptions score_opts;
  auto* score_cmd = app.add_subcommand("score", "LOF scores for a feature file");
  score_cmd->add_option("--detector", score_opts.detector, "Fitted detector")->required();
  score_cmd->add_option("--features", score_opts.features, "TSV from export-features")->required();
  score_cmd->add_option("--out", score_opts.out, "Output JSON-lines file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train_cmd) return cmd_train(train_opts);
    if (*detect_cmd) return cmd_detect(detect_opts);
    if (*eval_cmd) return cmd_evaluate(eval_opts);
    if (*export_cmd) return cmd_export(export_opts);
    if (*score_cmd) return cmd_score(score_opts);
  } catch (const DivergenceError& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
