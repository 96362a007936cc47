#include "openintent/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace openintent {

namespace {

constexpr std::size_t kInferenceChunk = 512;

std::vector<std::size_t> slice(const std::vector<std::size_t>& v, std::size_t begin,
                               std::size_t end) {
  return {v.begin() + static_cast<std::ptrdiff_t>(begin),
          v.begin() + static_cast<std::ptrdiff_t>(end)};
}

int argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  Eigen::Index best = 0;
  row.maxCoeff(&best);
  return static_cast<int>(best);
}

void check_vocab(const EncoderParams& params, const EmbeddingTable& table) {
  if (params.vocab_hash != table.vocab_hash()) {
    throw CompatibilityError("checkpoint vocabulary hash does not match the embedding table");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (patience == 0) throw ConfigError("patience must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (hidden_size == 0) throw ConfigError("hidden_size must be positive");
  lmcl.validate();
}

Adam::Adam(const TrainConfig& cfg, EncoderParams& params)
    : lr_(cfg.learning_rate), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_epsilon) {
  for (const auto& view : tensors(params)) {
    first_.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(view.size)));
    second_.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(view.size)));
  }
}

void Adam::step(EncoderParams& params, EncoderParams& grads) {
  auto p = tensors(params);
  auto g = tensors(grads);
  if (p.size() != first_.size() || g.size() != p.size()) {
    throw ContractError("optimizer state does not match parameter layout");
  }
  ++t_;
  const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < p.size(); ++k) {
    const auto n = static_cast<Eigen::Index>(p[k].size);
    Eigen::Map<Eigen::VectorXd> param(p[k].data, n);
    Eigen::Map<const Eigen::VectorXd> grad(g[k].data, n);
    first_[k] = beta1_ * first_[k] + (1.0 - beta1_) * grad;
    second_[k] = beta2_ * second_[k] + (1.0 - beta2_) * grad.cwiseAbs2();
    param.array() -= lr_ * (first_[k].array() / correction1) /
                     ((second_[k].array() / correction2).sqrt() + eps_);
  }
}

double clip_global_norm(EncoderParams& grads, double max_norm) {
  double squared = 0.0;
  for (const auto& view : tensors(grads)) {
    squared += Eigen::Map<const Eigen::VectorXd>(view.data, static_cast<Eigen::Index>(view.size))
                   .squaredNorm();
  }
  const double norm = std::sqrt(squared);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& view : tensors(grads)) {
      Eigen::Map<Eigen::VectorXd>(view.data, static_cast<Eigen::Index>(view.size)) *= factor;
    }
  }
  return norm;
}

double loss_and_gradients(const EncoderParams& params, const IndexBatch& batch,
                          const std::vector<int>& labels, const EmbeddingTable& table,
                          const LmclConfig& lmcl_cfg, EncoderParams* grads) {
  ForwardCache cache;
  const FeatureMatrix feats = forward(params, batch, table, grads ? &cache : nullptr);
  const Eigen::MatrixXd scores = class_scores(params, feats);
  LossOutput loss;
  switch (params.mode) {
    case HeadMode::kSoftmax:
      loss = softmax_ce(scores, labels);
      break;
    case HeadMode::kLmcl:
      loss = lmcl(scores, labels, lmcl_cfg);
      break;
    case HeadMode::kSigmoid:
      loss = sigmoid_bce(scores, labels);
      break;
  }
  if (grads) {
    const HeadGradients head = head_backward(params, feats, loss.score_gradients);
    *grads = backward(params, batch, table, cache, head.features);
    grads->head_weights = head.weights;
    grads->head_bias = head.bias;
  }
  return loss.value;
}

double accuracy(const EncoderParams& params, const Corpus& corpus, const LabeledSet& set,
                const EmbeddingTable& table) {
  if (set.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < set.size(); begin += kInferenceChunk) {
    const std::size_t end = std::min(set.size(), begin + kInferenceChunk);
    const auto batch = encode_batch(corpus, table, slice(set.ids, begin, end));
    const Eigen::MatrixXd scores = class_scores(params, forward(params, batch, table));
    for (std::size_t i = begin; i < end; ++i) {
      if (argmax(scores.row(static_cast<Eigen::Index>(i - begin))) == set.labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

TrainResult train(const Corpus& corpus, const LabeledSet& train_set,
                  const LabeledSet& validation_set, std::size_t num_classes,
                  const EmbeddingTable& table, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.size() == 0) throw ValidationError("training set is empty");
  if (train_set.labels.size() != train_set.ids.size() ||
      validation_set.labels.size() != validation_set.ids.size()) {
    throw ContractError("labeled set ids and labels differ in length");
  }
  for (const auto* set : {&train_set, &validation_set}) {
    for (int label : set->labels) {
      if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
        throw ContractError("label " + std::to_string(label) + " outside the known classes");
      }
    }
  }

  EncoderShape shape;
  shape.embedding_dim = table.dim();
  shape.hidden_size = cfg.hidden_size;
  shape.num_classes = num_classes;
  shape.mode = cfg.loss_mode;
  shape.trainable_embeddings = cfg.trainable_embeddings;
  EncoderParams params = init_encoder(shape, table, cfg.seed);
  Adam optimizer(cfg, params);

  const LabeledSet& monitor = validation_set.size() > 0 ? validation_set : train_set;
  TrainResult result{params, {}};
  result.report.best_validation_accuracy = -1.0;
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 shuffle_rng(seq);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<std::size_t> ids;
      std::vector<int> labels;
      for (std::size_t k = begin; k < end; ++k) {
        ids.push_back(train_set.ids[order[k]]);
        labels.push_back(train_set.labels[order[k]]);
      }
      const auto batch = encode_batch(corpus, table, ids);
      EncoderParams grads;
      double loss = 0.0;
      std::string detail;
      try {
        loss = loss_and_gradients(params, batch, labels, table, cfg.lmcl, &grads);
      } catch (const NumericError& e) {
        loss = std::numeric_limits<double>::quiet_NaN();
        detail = std::string(": ") + e.what();
      }
      if (!std::isfinite(loss)) {
        result.report.epochs_run = epoch;
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + detail,
                              result.params, result.report);
      }
      loss_sum += loss * static_cast<double>(end - begin);
      clip_global_norm(grads, cfg.clip_norm);
      optimizer.step(params, grads);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(order.size());
    record.val_acc = accuracy(params, corpus, monitor, table);
    result.report.curve.push_back(record);
    result.report.epochs_run = epoch;
    if (on_epoch) on_epoch(record);

    if (record.val_acc > result.report.best_validation_accuracy) {
      result.report.best_validation_accuracy = record.val_acc;
      result.report.best_epoch = epoch;
      result.params = params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      result.report.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  return result;
}

FeatureMatrix extract_features(const EncoderParams& params, const IndexBatch& batch,
                               const EmbeddingTable& table) {
  check_vocab(params, table);
  FeatureMatrix feats = forward(params, batch, table);
  if (params.mode == HeadMode::kLmcl) feats.values = normalize_rows(feats.values);
  return feats;
}

FeatureMatrix extract_features(const EncoderParams& params, const Corpus& corpus,
                               const std::vector<std::size_t>& ids, const EmbeddingTable& table) {
  check_vocab(params, table);
  FeatureMatrix out;
  out.values.resize(static_cast<Eigen::Index>(ids.size()), params.feature_dim());
  out.row_ids = ids;
  for (std::size_t begin = 0; begin < ids.size(); begin += kInferenceChunk) {
    const std::size_t end = std::min(ids.size(), begin + kInferenceChunk);
    const auto part = extract_features(params, encode_batch(corpus, table, slice(ids, begin, end)),
                                       table);
    out.values.middleRows(static_cast<Eigen::Index>(begin),
                          static_cast<Eigen::Index>(end - begin)) = part.values;
  }
  return out;
}

}  // namespace openintent
