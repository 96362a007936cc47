#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "openintent/corpus.hpp"
#include "openintent/encoder.hpp"
#include "openintent/errors.hpp"
#include "openintent/objective.hpp"

namespace openintent {

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  HeadMode loss_mode = HeadMode::kLmcl;
  std::size_t hidden_size = 64;
  bool trainable_embeddings = false;
  LmclConfig lmcl;

  void validate() const;
};

// Utterance ids with class indices into a known-class list.
struct LabeledSet {
  std::vector<std::size_t> ids;
  std::vector<int> labels;

  std::size_t size() const { return ids.size(); }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainReport {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_validation_accuracy = 0.0;
  bool stopped_early = false;
  std::vector<EpochRecord> curve;
  std::string checkpoint_path;
};

struct TrainResult {
  EncoderParams params;
  TrainReport report;
};

// Non-finite training loss. Carries the parameters of the best epoch so far.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, EncoderParams last_good, TrainReport report)
      : NumericError(what), last_good_(std::move(last_good)), report_(std::move(report)) {}

  const EncoderParams& last_good() const { return last_good_; }
  const TrainReport& report() const { return report_; }

 private:
  EncoderParams last_good_;
  TrainReport report_;
};

class Adam {
 public:
  Adam(const TrainConfig& cfg, EncoderParams& params);

  void step(EncoderParams& params, EncoderParams& grads);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Eigen::VectorXd> first_;
  std::vector<Eigen::VectorXd> second_;
};

// Scales grads so their global L2 norm is at most max_norm. Returns the pre-clip norm.
double clip_global_norm(EncoderParams& grads, double max_norm);

// Loss value and full parameter gradients for one mini-batch.
double loss_and_gradients(const EncoderParams& params, const IndexBatch& batch,
                          const std::vector<int>& labels, const EmbeddingTable& table,
                          const LmclConfig& lmcl_cfg, EncoderParams* grads);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mini-batch Adam training with validation-accuracy early stopping. Returns the
// parameters of the best validation epoch. An empty validation set falls back
// to training accuracy.
TrainResult train(const Corpus& corpus, const LabeledSet& train_set,
                  const LabeledSet& validation_set, std::size_t num_classes,
                  const EmbeddingTable& table, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// Argmax accuracy of the classification head (raw cosines in lmcl mode).
double accuracy(const EncoderParams& params, const Corpus& corpus, const LabeledSet& set,
                const EmbeddingTable& table);

// Features for the given utterances in order; L2-normalized rows in lmcl mode.
FeatureMatrix extract_features(const EncoderParams& params, const Corpus& corpus,
                               const std::vector<std::size_t>& ids, const EmbeddingTable& table);

// Same for already-encoded batches (inference on raw text).
FeatureMatrix extract_features(const EncoderParams& params, const IndexBatch& batch,
                               const EmbeddingTable& table);

}  // namespace openintent
