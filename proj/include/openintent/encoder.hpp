#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "openintent/corpus.hpp"

namespace openintent {

// Classification head variants.
//  kSoftmax: logits = x W + b, trained with softmax cross-entropy.
//  kLmcl:    scores = cosine(x, W_j), no bias, trained with large margin cosine loss.
//  kSigmoid: logits = x W + b, trained one-vs-rest with binary cross-entropy (DOC).
enum class HeadMode { kSoftmax, kLmcl, kSigmoid };

std::string_view head_mode_name(HeadMode mode);
HeadMode parse_head_mode(std::string_view name);

// Gate blocks are stacked in the order input, forget, cell, output.
struct LstmCellParams {
  Eigen::MatrixXd input_weights;   // 4h x m
  Eigen::MatrixXd hidden_weights;  // 4h x h
  Eigen::VectorXd bias;            // 4h

  Eigen::Index hidden_size() const { return hidden_weights.cols(); }
  Eigen::Index input_size() const { return input_weights.cols(); }
};

struct EncoderShape {
  std::size_t embedding_dim = 300;
  std::size_t hidden_size = 64;
  std::size_t num_classes = 2;
  HeadMode mode = HeadMode::kLmcl;
  bool trainable_embeddings = false;
};

struct EncoderParams {
  LstmCellParams forward_cell;
  LstmCellParams backward_cell;
  Eigen::MatrixXd head_weights;  // d x C, d = 2h
  Eigen::VectorXd head_bias;     // C; stays zero in lmcl mode
  HeadMode mode = HeadMode::kLmcl;
  // Present only when embeddings are trained; overrides the table's vectors.
  std::optional<Eigen::MatrixXd> embeddings;
  // Hash of the vocabulary the parameters were trained against.
  std::uint64_t vocab_hash = 0;

  Eigen::Index hidden_size() const { return forward_cell.hidden_size(); }
  Eigen::Index feature_dim() const { return 2 * hidden_size(); }
  Eigen::Index num_classes() const { return head_weights.cols(); }
};

// Same layout as the parameters, all zero.
EncoderParams zeros_like(const EncoderParams& params);

// Named flat view over one parameter tensor, for optimizers and gradient checks.
struct TensorView {
  std::string name;
  double* data = nullptr;
  std::size_t size = 0;
};

std::vector<TensorView> tensors(EncoderParams& params);

// Glorot-uniform input and head weights, orthogonal recurrent weights,
// forget-gate bias 1, all other biases 0. Embeddings are copied from the table
// when trainable.
EncoderParams init_encoder(const EncoderShape& shape, const EmbeddingTable& table,
                           std::uint64_t seed);

struct FeatureMatrix {
  Eigen::MatrixXd values;  // n x d
  std::vector<std::size_t> row_ids;

  Eigen::Index rows() const { return values.rows(); }
};

// Per-direction activations kept for back-propagation.
struct DirectionCache {
  Eigen::MatrixXd inputs;  // m x L in processing order
  Eigen::MatrixXd gates;   // 4h x L, post-activation
  Eigen::MatrixXd cells;   // h x L
  Eigen::MatrixXd hidden;  // h x L
};

struct ForwardCache {
  std::vector<DirectionCache> forward;
  std::vector<DirectionCache> backward;
};

// Sentence features x = [h_fwd(len) ; h_bwd(1)] for every row of the batch.
// The backward LSTM runs over the unpadded tokens len..1 only.
FeatureMatrix forward(const EncoderParams& params, const IndexBatch& batch,
                      const EmbeddingTable& table, ForwardCache* cache = nullptr);

// Gradients of all encoder parameters given dL/dx. Head gradients are left zero.
EncoderParams backward(const EncoderParams& params, const IndexBatch& batch,
                       const EmbeddingTable& table, const ForwardCache& cache,
                       const Eigen::MatrixXd& upstream);

// Recomputes the forward pass first.
EncoderParams backward(const EncoderParams& params, const IndexBatch& batch,
                       const EmbeddingTable& table, const Eigen::MatrixXd& upstream);

// Norm with the zero-division guard used by the cosine head.
inline constexpr double kNormEpsilon = 1e-12;
double guarded_norm(const Eigen::Ref<const Eigen::VectorXd>& v);

// Rows scaled to unit (guarded) norm.
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m);

// n x C scores: raw logits (softmax / sigmoid heads) or cosines (lmcl head).
Eigen::MatrixXd class_scores(const EncoderParams& params, const FeatureMatrix& feats);

struct HeadGradients {
  Eigen::MatrixXd features;  // n x d
  Eigen::MatrixXd weights;   // d x C
  Eigen::VectorXd bias;      // C
};

HeadGradients head_backward(const EncoderParams& params, const FeatureMatrix& feats,
                            const Eigen::MatrixXd& score_gradients);

}  // namespace openintent
