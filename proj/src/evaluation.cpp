#include "openintent/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "openintent/errors.hpp"
#include "openintent/objective.hpp"

namespace openintent {

std::string_view method_id(Method method) {
  switch (method) {
    case Method::kMsp:
      return "msp";
    case Method::kDoc:
      return "doc";
    case Method::kDocSoftmax:
      return "doc-softmax";
    case Method::kLofSoftmax:
      return "lof-softmax";
    case Method::kLofLmcl:
      return "lof-lmcl";
  }
  return "unknown";
}

std::string_view method_label(Method method) {
  switch (method) {
    case Method::kMsp:
      return "MSP";
    case Method::kDoc:
      return "DOC";
    case Method::kDocSoftmax:
      return "DOC (Softmax)";
    case Method::kLofSoftmax:
      return "LOF (Softmax)";
    case Method::kLofLmcl:
      return "LOF (LMCL)";
  }
  return "unknown";
}

Method parse_method(std::string_view id) {
  for (Method m : kAllMethods) {
    if (method_id(m) == id) return m;
  }
  throw ConfigError("unknown method '" + std::string(id) +
                    "' (expected msp|doc|doc-softmax|lof-softmax|lof-lmcl)");
}

HeadMode method_head(Method method) {
  switch (method) {
    case Method::kDoc:
      return HeadMode::kSigmoid;
    case Method::kLofLmcl:
      return HeadMode::kLmcl;
    default:
      return HeadMode::kSoftmax;
  }
}

// ---------------------------------------------------------------------------
// Known-class sampling

std::size_t known_class_count(std::size_t total, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError("known-class fraction must lie in (0, 1)");
  }
  if (total < 2) {
    throw ConfigError("need at least 2 classes to select known classes, have " +
                      std::to_string(total));
  }
  const auto rounded =
      static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total) + 0.5));
  return std::min(total, std::max<std::size_t>(2, rounded));
}

std::vector<std::string> weighted_sample_without_replacement(
    const std::map<std::string, std::size_t>& counts, std::size_t count, std::uint64_t seed) {
  if (count > counts.size()) {
    throw ConfigError("cannot draw " + std::to_string(count) + " of " +
                      std::to_string(counts.size()) + " classes");
  }
  std::vector<std::pair<std::string, double>> pool;
  for (const auto& [name, n] : counts) pool.emplace_back(name, static_cast<double>(n));
  std::mt19937_64 rng(seed);
  std::vector<std::string> chosen;
  while (chosen.size() < count) {
    double total = 0.0;
    for (const auto& entry : pool) total += entry.second;
    std::size_t pick = 0;
    if (total > 0.0) {
      const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      double acc = 0.0;
      pick = pool.size() - 1;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        acc += pool[i].second;
        if (u < acc) {
          pick = i;
          break;
        }
      }
      while (pool[pick].second == 0.0) --pick;  // u landed on the upper edge
    } else {
      pick = std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng);
    }
    chosen.push_back(pool[pick].first);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<std::string> sample_known_classes(const std::map<std::string, std::size_t>& counts,
                                              double fraction, std::uint64_t seed) {
  return weighted_sample_without_replacement(counts, known_class_count(counts.size(), fraction),
                                             seed);
}

SplitPlan make_split_plan(const Corpus& corpus, std::string dataset,
                          std::vector<std::string> known_classes, std::uint64_t seed) {
  std::sort(known_classes.begin(), known_classes.end());
  known_classes.erase(std::unique(known_classes.begin(), known_classes.end()), known_classes.end());
  if (known_classes.size() < 2) throw ConfigError("need at least 2 known classes");
  for (const auto& c : known_classes) {
    if (corpus.class_index(c) < 0) throw ConfigError("unknown class '" + c + "'");
  }
  SplitPlan plan;
  plan.dataset = std::move(dataset);
  plan.seed = seed;
  plan.known_classes = std::move(known_classes);
  plan.known_fraction = static_cast<double>(plan.known_classes.size()) /
                        static_cast<double>(corpus.classes().size());
  auto known_index = [&](const std::string& label) {
    auto it = std::lower_bound(plan.known_classes.begin(), plan.known_classes.end(), label);
    return it != plan.known_classes.end() && *it == label
               ? static_cast<int>(it - plan.known_classes.begin())
               : kUnknown;
  };
  for (std::size_t id = 0; id < corpus.size(); ++id) {
    const auto& u = corpus.at(id);
    const int label = known_index(u.label);
    switch (u.split) {
      case Split::kTrain:
        if (label != kUnknown) {
          plan.train.ids.push_back(id);
          plan.train.labels.push_back(label);
        }
        break;
      case Split::kValidation:
        if (label != kUnknown) {
          plan.validation.ids.push_back(id);
          plan.validation.labels.push_back(label);
        }
        break;
      case Split::kTest:
        plan.test_ids.push_back(id);
        plan.test_gold.push_back(label);
        break;
    }
  }
  return plan;
}

SplitPlan make_split_plan(const Corpus& corpus, std::string dataset, double fraction,
                          std::uint64_t seed) {
  auto known = sample_known_classes(corpus.train_class_counts(), fraction, seed);
  SplitPlan plan = make_split_plan(corpus, std::move(dataset), std::move(known), seed);
  plan.known_fraction = fraction;
  return plan;
}

void check_no_leakage(const Corpus& corpus, const SplitPlan& plan) {
  const std::set<std::string> known(plan.known_classes.begin(), plan.known_classes.end());
  for (const auto* set : {&plan.train, &plan.validation}) {
    for (std::size_t i = 0; i < set->size(); ++i) {
      const auto& u = corpus.at(set->ids[i]);
      if (!known.count(u.label) || u.split == Split::kTest ||
          plan.known_classes[static_cast<std::size_t>(set->labels[i])] != u.label) {
        throw ValidationError("utterance " + std::to_string(set->ids[i]) + " (" + u.label +
                              ") leaks into the training data");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Metrics

double LabelCounts::f1() const {
  const double precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  const double recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

std::vector<LabelCounts> label_counts(const std::vector<int>& predicted, const std::vector<int>& gold,
                                      const std::vector<int>& scope) {
  if (predicted.size() != gold.size()) {
    throw ContractError("predictions and gold labels differ in length");
  }
  std::vector<LabelCounts> out;
  out.reserve(scope.size());
  for (int label : scope) {
    LabelCounts c;
    c.label = label;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const bool p = predicted[i] == label;
      const bool g = gold[i] == label;
      c.tp += p && g;
      c.fp += p && !g;
      c.fn += !p && g;
    }
    out.push_back(c);
  }
  return out;
}

double macro_f1(const std::vector<int>& predicted, const std::vector<int>& gold,
                const std::vector<int>& scope) {
  if (scope.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& c : label_counts(predicted, gold, scope)) sum += c.f1();
  return sum / static_cast<double>(scope.size());
}

F1Summary f1_summary(const std::vector<int>& predicted, const std::vector<int>& gold,
                     std::size_t num_known) {
  std::vector<int> scope;
  for (std::size_t j = 0; j < num_known; ++j) scope.push_back(static_cast<int>(j));
  scope.push_back(kUnknown);
  F1Summary s;
  s.counts = label_counts(predicted, gold, scope);
  double sum = 0.0;
  for (const auto& c : s.counts) sum += c.f1();
  s.macro_f1_all = sum / static_cast<double>(scope.size());
  s.f1_unknown = s.counts.back().f1();
  return s;
}

// ---------------------------------------------------------------------------
// Experiment

namespace {

struct TrainedHead {
  EncoderParams params;
  FeatureMatrix train_features;
  FeatureMatrix test_features;
  Eigen::MatrixXd train_scores;
  Eigen::MatrixXd test_scores;
};

std::vector<double> to_vector(const Eigen::MatrixXd& m, Eigen::Index i) {
  std::vector<double> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(j)] = m(i, j);
  return out;
}

std::vector<int> decide_all(Method method, const TrainedHead& head, const SplitPlan& plan,
                            const DetectionConfig& cfg) {
  const Eigen::Index n = head.test_scores.rows();
  std::vector<int> predicted(static_cast<std::size_t>(n));
  switch (method) {
    case Method::kMsp: {
      const Eigen::MatrixXd probs = softmax(head.test_scores);
      for (Eigen::Index i = 0; i < n; ++i) {
        predicted[static_cast<std::size_t>(i)] = decide_msp(to_vector(probs, i), cfg).predicted;
      }
      break;
    }
    case Method::kDoc:
    case Method::kDocSoftmax: {
      auto probabilities = [&](const Eigen::MatrixXd& s) {
        return method == Method::kDoc ? sigmoid(s) : softmax(s);
      };
      const auto thresholds =
          doc_fit(probabilities(head.train_scores), plan.train.labels, cfg.doc_risk_factor);
      const Eigen::MatrixXd probs = probabilities(head.test_scores);
      for (Eigen::Index i = 0; i < n; ++i) {
        predicted[static_cast<std::size_t>(i)] = decide_doc(to_vector(probs, i), thresholds).predicted;
      }
      break;
    }
    case Method::kLofSoftmax:
    case Method::kLofLmcl: {
      const FittedLof lof = FittedLof::fit(head.train_features.values, cfg.lof_k);
      const Eigen::VectorXd scores = lof.score_rows(head.test_features.values);
      for (Eigen::Index i = 0; i < n; ++i) {
        predicted[static_cast<std::size_t>(i)] =
            decide_lof(scores[i], to_vector(head.test_scores, i), cfg).predicted;
      }
      break;
    }
  }
  return predicted;
}

}  // namespace

std::vector<RunRecord> evaluate_plan(const ExperimentDataset& data, const SplitPlan& plan,
                                     const std::vector<Method>& methods,
                                     const ExperimentSettings& settings) {
  check_no_leakage(data.corpus, plan);
  settings.detect.validate();
  const std::size_t num_known = plan.known_classes.size();

  std::map<HeadMode, TrainedHead> heads;
  std::map<HeadMode, std::string> head_errors;
  for (Method m : methods) {
    const HeadMode mode = method_head(m);
    if (heads.count(mode) || head_errors.count(mode)) continue;
    TrainConfig cfg = settings.train;
    cfg.loss_mode = mode;
    cfg.seed = plan.seed;
    try {
      TrainedHead head;
      head.params = train(data.corpus, plan.train, plan.validation, num_known, data.table, cfg).params;
      head.train_features = extract_features(head.params, data.corpus, plan.train.ids, data.table);
      head.test_features = extract_features(head.params, data.corpus, plan.test_ids, data.table);
      head.train_scores = class_scores(head.params, head.train_features);
      head.test_scores = class_scores(head.params, head.test_features);
      heads.emplace(mode, std::move(head));
    } catch (const Error& e) {
      head_errors[mode] = std::string(head_mode_name(mode)) + " training failed: " + e.what();
    }
  }

  std::vector<RunRecord> records;
  for (Method m : methods) {
    RunRecord r;
    r.dataset = plan.dataset;
    r.fraction = plan.known_fraction;
    r.method = m;
    r.seed = plan.seed;
    r.known_classes = plan.known_classes;
    const HeadMode mode = method_head(m);
    if (auto err = head_errors.find(mode); err != head_errors.end()) {
      r.error = err->second;
    } else {
      try {
        r.predicted = decide_all(m, heads.at(mode), plan, settings.detect);
        const F1Summary s = f1_summary(r.predicted, plan.test_gold, num_known);
        r.macro_f1_all = s.macro_f1_all;
        r.f1_unknown = s.f1_unknown;
        r.counts = s.counts;
        r.ok = true;
      } catch (const Error& e) {
        r.predicted.clear();
        r.error = e.what();
      }
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::size_t ExperimentReport::completed_cells() const {
  return static_cast<std::size_t>(std::count_if(aggregates.begin(), aggregates.end(),
                                                [](const AggregateCell& c) { return c.runs_completed > 0; }));
}

std::vector<AggregateCell> aggregate(const std::vector<RunRecord>& runs,
                                     const std::vector<std::string>& datasets,
                                     const ExperimentSettings& settings) {
  std::vector<AggregateCell> cells;
  for (const auto& dataset : datasets) {
    for (double fraction : settings.fractions) {
      for (Method method : settings.methods) {
        AggregateCell cell;
        cell.dataset = dataset;
        cell.fraction = fraction;
        cell.method = method;
        cell.runs_expected = settings.runs;
        for (const auto& r : runs) {
          if (!r.ok || r.dataset != dataset || r.fraction != fraction || r.method != method) continue;
          ++cell.runs_completed;
          cell.macro_f1_all += r.macro_f1_all;
          cell.f1_unknown += r.f1_unknown;
        }
        if (cell.runs_completed > 0) {
          cell.macro_f1_all /= static_cast<double>(cell.runs_completed);
          cell.f1_unknown /= static_cast<double>(cell.runs_completed);
        }
        cells.push_back(cell);
      }
    }
  }
  return cells;
}

ExperimentReport run_experiment(const std::vector<ExperimentDataset>& datasets,
                                const ExperimentSettings& settings, const ProgressFn& progress) {
  if (settings.runs == 0) throw ConfigError("runs must be positive");
  if (settings.methods.empty()) throw ConfigError("no methods selected");
  struct Unit {
    std::size_t dataset;
    double fraction;
    std::uint64_t seed;
  };
  std::vector<Unit> units;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    for (double fraction : settings.fractions) {
      for (std::size_t i = 0; i < settings.runs; ++i) {
        units.push_back({d, fraction, settings.base_seed + i});
      }
    }
  }

  std::vector<std::vector<RunRecord>> results(units.size());
  std::mutex progress_mutex;
  auto run_unit = [&](std::size_t u) {
    const Unit& unit = units[u];
    const auto& data = datasets[unit.dataset];
    try {
      const SplitPlan plan = make_split_plan(data.corpus, data.name, unit.fraction, unit.seed);
      results[u] = evaluate_plan(data, plan, settings.methods, settings);
    } catch (const Error& e) {
      for (Method m : settings.methods) {
        RunRecord r;
        r.dataset = data.name;
        r.fraction = unit.fraction;
        r.method = m;
        r.seed = unit.seed;
        r.error = e.what();
        results[u].push_back(std::move(r));
      }
    }
    if (progress) {
      std::ostringstream msg;
      msg << data.name << " " << unit.fraction << " seed " << unit.seed << ":";
      for (const auto& r : results[u]) {
        msg << " " << method_id(r.method) << "=";
        if (r.ok) {
          msg << std::fixed << std::setprecision(1) << 100.0 * r.f1_unknown << "/"
              << 100.0 * r.macro_f1_all;
        } else {
          msg << "FAILED(" << r.error << ")";
        }
      }
      std::lock_guard lock(progress_mutex);
      progress(msg.str());
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(settings.jobs, units.size()));
  if (jobs == 1) {
    for (std::size_t u = 0; u < units.size(); ++u) run_unit(u);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t u = next++; u < units.size(); u = next++) run_unit(u);
      });
    }
    for (auto& t : workers) t.join();
  }

  ExperimentReport report;
  for (auto& part : results) {
    for (auto& r : part) report.runs.push_back(std::move(r));
  }
  std::vector<std::string> names;
  for (const auto& d : datasets) names.push_back(d.name);
  report.aggregates = aggregate(report.runs, names, settings);
  return report;
}

std::string render_table(const ExperimentReport& report, const std::vector<std::string>& datasets,
                         const ExperimentSettings& settings, ReportMetric metric) {
  constexpr int kLabelWidth = 16;
  constexpr int kCellWidth = 8;
  std::ostringstream out;
  out << (metric == ReportMetric::kUnknownF1 ? "Unknown-class F1 (%)" : "Macro F1 over all classes (%)")
      << ", mean over " << settings.runs << " runs\n";
  out << std::left << std::setw(kLabelWidth) << "";
  for (const auto& d : datasets) {
    out << std::left << std::setw(kCellWidth * static_cast<int>(settings.fractions.size())) << d;
  }
  out << "\n" << std::left << std::setw(kLabelWidth) << "% known";
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    for (double f : settings.fractions) {
      std::ostringstream pct;
      pct << std::lround(100.0 * f) << "%";
      out << std::left << std::setw(kCellWidth) << pct.str();
    }
  }
  out << "\n";
  for (Method m : settings.methods) {
    out << std::left << std::setw(kLabelWidth) << method_label(m);
    for (const auto& d : datasets) {
      for (double f : settings.fractions) {
        auto it = std::find_if(report.aggregates.begin(), report.aggregates.end(),
                               [&](const AggregateCell& c) {
                                 return c.dataset == d && c.fraction == f && c.method == m;
                               });
        std::ostringstream cell;
        if (it == report.aggregates.end() || it->runs_completed == 0) {
          cell << "n/a";
        } else {
          const double v = metric == ReportMetric::kUnknownF1 ? it->f1_unknown : it->macro_f1_all;
          cell << std::fixed << std::setprecision(1) << 100.0 * v << (it->complete() ? "" : "*");
        }
        out << std::left << std::setw(kCellWidth) << cell.str();
      }
    }
    out << "\n";
  }
  return out.str();
}

void export_features(const EncoderParams& params, const Corpus& corpus,
                     const std::vector<std::size_t>& ids, const EmbeddingTable& table,
                     const std::filesystem::path& out) {
  const FeatureMatrix feats = extract_features(params, corpus, ids, table);
  std::ofstream file(out, std::ios::binary);
  if (!file) throw Error("cannot open " + out.string() + " for writing");
  file << "id\tlabel";
  for (Eigen::Index j = 0; j < params.feature_dim(); ++j) file << "\tf" << j;
  file << "\n";
  char buf[32];
  for (Eigen::Index i = 0; i < feats.rows(); ++i) {
    const auto id = feats.row_ids[static_cast<std::size_t>(i)];
    file << id << "\t" << corpus.at(id).label;
    for (Eigen::Index j = 0; j < feats.values.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", feats.values(i, j));
      file << "\t" << buf;
    }
    file << "\n";
  }
  if (!file) throw Error("write failed: " + out.string());
}

}  // namespace openintent
