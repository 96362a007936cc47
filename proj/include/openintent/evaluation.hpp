#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "openintent/corpus.hpp"
#include "openintent/detector.hpp"
#include "openintent/encoder.hpp"
#include "openintent/trainer.hpp"

namespace openintent {

enum class Method { kMsp, kDoc, kDocSoftmax, kLofSoftmax, kLofLmcl };

inline constexpr Method kAllMethods[] = {Method::kMsp, Method::kDoc, Method::kDocSoftmax,
                                         Method::kLofSoftmax, Method::kLofLmcl};

std::string_view method_id(Method method);     // "lof-lmcl"
std::string_view method_label(Method method);  // "LOF (LMCL)"
Method parse_method(std::string_view id);

// Head the method's encoder is trained with.
HeadMode method_head(Method method);

// round-half-up(fraction * total), at least 2.
std::size_t known_class_count(std::size_t total, double fraction);

// Draws `count` classes one at a time, each with probability proportional to
// its count among the classes not drawn yet. Result is sorted.
std::vector<std::string> weighted_sample_without_replacement(
    const std::map<std::string, std::size_t>& counts, std::size_t count, std::uint64_t seed);

std::vector<std::string> sample_known_classes(const std::map<std::string, std::size_t>& counts,
                                              double fraction, std::uint64_t seed);

struct SplitPlan {
  std::string dataset;
  double known_fraction = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> known_classes;  // sorted; index = known-class label
  LabeledSet train;
  LabeledSet validation;
  // Every test utterance; gold is a known-class index or kUnknown.
  std::vector<std::size_t> test_ids;
  std::vector<int> test_gold;
};

SplitPlan make_split_plan(const Corpus& corpus, std::string dataset, double fraction,
                          std::uint64_t seed);

// Same, with an explicit known-class list.
SplitPlan make_split_plan(const Corpus& corpus, std::string dataset,
                          std::vector<std::string> known_classes, std::uint64_t seed);

// Throws ValidationError if any train / validation utterance is not a known class.
void check_no_leakage(const Corpus& corpus, const SplitPlan& plan);

struct LabelCounts {
  int label = 0;  // known-class index or kUnknown
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  double f1() const;
};

// Per-label counts for each label in scope.
std::vector<LabelCounts> label_counts(const std::vector<int>& predicted, const std::vector<int>& gold,
                                      const std::vector<int>& scope);

// Unweighted mean of per-label F1 over the scope; F1 = 0 when P + R = 0.
double macro_f1(const std::vector<int>& predicted, const std::vector<int>& gold,
                const std::vector<int>& scope);

struct F1Summary {
  double macro_f1_all = 0.0;  // known classes + UNKNOWN
  double f1_unknown = 0.0;
  std::vector<LabelCounts> counts;
};

F1Summary f1_summary(const std::vector<int>& predicted, const std::vector<int>& gold,
                     std::size_t num_known);

struct ExperimentDataset {
  std::string name;
  Corpus corpus;
  EmbeddingTable table;
};

struct ExperimentSettings {
  TrainConfig train;
  DetectionConfig detect;
  std::vector<double> fractions{0.25, 0.50, 0.75};
  std::vector<Method> methods{std::begin(kAllMethods), std::end(kAllMethods)};
  std::size_t runs = 10;
  std::uint64_t base_seed = 0;
  std::size_t jobs = 1;
};

struct RunRecord {
  std::string dataset;
  double fraction = 0.0;
  Method method = Method::kLofLmcl;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<std::string> known_classes;
  double macro_f1_all = 0.0;
  double f1_unknown = 0.0;
  std::vector<LabelCounts> counts;
  std::vector<int> predicted;
};

struct AggregateCell {
  std::string dataset;
  double fraction = 0.0;
  Method method = Method::kLofLmcl;
  std::size_t runs_completed = 0;
  std::size_t runs_expected = 0;
  double macro_f1_all = 0.0;
  double f1_unknown = 0.0;

  bool complete() const { return runs_completed == runs_expected; }
};

struct ExperimentReport {
  std::vector<RunRecord> runs;
  std::vector<AggregateCell> aggregates;

  std::size_t completed_cells() const;
};

// Trains the encoders the requested methods need (one per head) on the plan's
// known classes and records one result per method.
std::vector<RunRecord> evaluate_plan(const ExperimentDataset& data, const SplitPlan& plan,
                                     const std::vector<Method>& methods,
                                     const ExperimentSettings& settings);

using ProgressFn = std::function<void(const std::string&)>;

// Grid over datasets x fractions x runs; seed of run i is base_seed + i.
ExperimentReport run_experiment(const std::vector<ExperimentDataset>& datasets,
                                const ExperimentSettings& settings,
                                const ProgressFn& progress = {});

// Arithmetic means of completed runs per (dataset, fraction, method).
std::vector<AggregateCell> aggregate(const std::vector<RunRecord>& runs,
                                     const std::vector<std::string>& datasets,
                                     const ExperimentSettings& settings);

enum class ReportMetric { kUnknownF1, kMacroF1All };

// Rows = methods, columns = dataset x fraction, values in percent.
std::string render_table(const ExperimentReport& report, const std::vector<std::string>& datasets,
                         const ExperimentSettings& settings, ReportMetric metric);

// Tab-separated: id, label, f0..f{d-1}. Doubles are written round-trip exact.
void export_features(const EncoderParams& params, const Corpus& corpus,
                     const std::vector<std::size_t>& ids, const EmbeddingTable& table,
                     const std::filesystem::path& out);

}  // namespace openintent
