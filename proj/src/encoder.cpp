#include "openintent/encoder.hpp"

#include <cmath>
#include <random>

#include "openintent/errors.hpp"

namespace openintent {

std::string_view head_mode_name(HeadMode mode) {
  switch (mode) {
    case HeadMode::kSoftmax:
      return "softmax";
    case HeadMode::kLmcl:
      return "lmcl";
    case HeadMode::kSigmoid:
      return "sigmoid";
  }
  return "unknown";
}

HeadMode parse_head_mode(std::string_view name) {
  if (name == "softmax") return HeadMode::kSoftmax;
  if (name == "lmcl") return HeadMode::kLmcl;
  if (name == "sigmoid") return HeadMode::kSigmoid;
  throw ConfigError("unknown loss mode '" + std::string(name) + "' (expected softmax|lmcl|sigmoid)");
}

namespace {

LstmCellParams zero_cell(const LstmCellParams& like) {
  return {Eigen::MatrixXd::Zero(like.input_weights.rows(), like.input_weights.cols()),
          Eigen::MatrixXd::Zero(like.hidden_weights.rows(), like.hidden_weights.cols()),
          Eigen::VectorXd::Zero(like.bias.size())};
}

void add_view(std::vector<TensorView>& out, std::string name, Eigen::MatrixXd& m) {
  out.push_back({std::move(name), m.data(), static_cast<std::size_t>(m.size())});
}

void add_view(std::vector<TensorView>& out, std::string name, Eigen::VectorXd& v) {
  out.push_back({std::move(name), v.data(), static_cast<std::size_t>(v.size())});
}

Eigen::MatrixXd glorot_uniform(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> uniform(-limit, limit);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = uniform(rng);
  }
  return m;
}

Eigen::MatrixXd orthogonal(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) a(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }
  return q;
}

LstmCellParams init_cell(Eigen::Index m, Eigen::Index h, std::mt19937_64& rng) {
  LstmCellParams cell;
  cell.input_weights.resize(4 * h, m);
  cell.hidden_weights.resize(4 * h, h);
  for (Eigen::Index gate = 0; gate < 4; ++gate) {
    cell.input_weights.middleRows(gate * h, h) = glorot_uniform(h, m, rng);
  }
  for (Eigen::Index gate = 0; gate < 4; ++gate) {
    cell.hidden_weights.middleRows(gate * h, h) = orthogonal(h, rng);
  }
  cell.bias = Eigen::VectorXd::Zero(4 * h);
  cell.bias.segment(h, h).setConstant(1.0);
  return cell;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

const Eigen::MatrixXd& embedding_matrix(const EncoderParams& params, const EmbeddingTable& table) {
  return params.embeddings ? *params.embeddings : table.vectors();
}

DirectionCache run_direction(const LstmCellParams& cell, Eigen::MatrixXd inputs, std::size_t row,
                             bool reversed) {
  const Eigen::Index h = cell.hidden_size();
  const Eigen::Index steps = inputs.cols();
  DirectionCache cache;
  cache.gates.resize(4 * h, steps);
  cache.cells.resize(h, steps);
  cache.hidden.resize(h, steps);
  const Eigen::MatrixXd projected = (cell.input_weights * inputs).colwise() + cell.bias;
  Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(h);
  Eigen::VectorXd c_prev = Eigen::VectorXd::Zero(h);
  Eigen::VectorXd z(4 * h);
  for (Eigen::Index t = 0; t < steps; ++t) {
    z.noalias() = projected.col(t) + cell.hidden_weights * h_prev;
    auto gates = cache.gates.col(t);
    for (Eigen::Index k = 0; k < h; ++k) {
      gates(k) = sigmoid(z(k));
      gates(h + k) = sigmoid(z(h + k));
      gates(2 * h + k) = std::tanh(z(2 * h + k));
      gates(3 * h + k) = sigmoid(z(3 * h + k));
    }
    cache.cells.col(t) = gates.segment(h, h).cwiseProduct(c_prev) +
                         gates.segment(0, h).cwiseProduct(gates.segment(2 * h, h));
    cache.hidden.col(t) =
        gates.segment(3 * h, h).cwiseProduct(cache.cells.col(t).array().tanh().matrix());
    if (!cache.hidden.col(t).allFinite() || !cache.cells.col(t).allFinite()) {
      const Eigen::Index position = reversed ? steps - 1 - t : t;
      throw NumericError("non-finite LSTM activation at batch row " + std::to_string(row) +
                         ", time step " + std::to_string(position + 1) +
                         (reversed ? " (backward direction)" : " (forward direction)"));
    }
    h_prev = cache.hidden.col(t);
    c_prev = cache.cells.col(t);
  }
  cache.inputs = std::move(inputs);
  return cache;
}

// Back-propagates dL/dh at the final processed step; accumulates into grads and
// returns dL/dinputs (m x L, processing order).
Eigen::MatrixXd backprop_direction(const LstmCellParams& cell, const DirectionCache& cache,
                                   const Eigen::VectorXd& dh_last, LstmCellParams& grads) {
  const Eigen::Index h = cell.hidden_size();
  const Eigen::Index steps = cache.hidden.cols();
  Eigen::MatrixXd dz_all(4 * h, steps);
  Eigen::VectorXd dh = dh_last;
  Eigen::VectorXd dc = Eigen::VectorXd::Zero(h);
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    const auto gates = cache.gates.col(t);
    const Eigen::ArrayXd in = gates.segment(0, h).array();
    const Eigen::ArrayXd forget = gates.segment(h, h).array();
    const Eigen::ArrayXd cand = gates.segment(2 * h, h).array();
    const Eigen::ArrayXd out = gates.segment(3 * h, h).array();
    const Eigen::ArrayXd tc = cache.cells.col(t).array().tanh();
    const Eigen::ArrayXd c_prev =
        t > 0 ? Eigen::ArrayXd(cache.cells.col(t - 1).array()) : Eigen::ArrayXd::Zero(h);

    dc.array() += dh.array() * out * (1.0 - tc.square());
    auto dz = dz_all.col(t);
    dz.segment(0, h) = (dc.array() * cand * in * (1.0 - in)).matrix();
    dz.segment(h, h) = (dc.array() * c_prev * forget * (1.0 - forget)).matrix();
    dz.segment(2 * h, h) = (dc.array() * in * (1.0 - cand.square())).matrix();
    dz.segment(3 * h, h) = (dh.array() * tc * out * (1.0 - out)).matrix();
    dc.array() *= forget;
    dh.noalias() = cell.hidden_weights.transpose() * dz;
  }
  grads.input_weights.noalias() += dz_all * cache.inputs.transpose();
  if (steps > 1) {
    grads.hidden_weights.noalias() +=
        dz_all.rightCols(steps - 1) * cache.hidden.leftCols(steps - 1).transpose();
  }
  grads.bias += dz_all.rowwise().sum();
  return cell.input_weights.transpose() * dz_all;
}

void check_batch(const EncoderParams& params, const IndexBatch& batch, const EmbeddingTable& table) {
  const auto& emb = embedding_matrix(params, table);
  if (emb.cols() != params.forward_cell.input_size()) {
    throw ContractError("embedding dimension " + std::to_string(emb.cols()) +
                        " does not match encoder input size " +
                        std::to_string(params.forward_cell.input_size()));
  }
  if (batch.lengths.size() != batch.rows || batch.indices.size() != batch.rows * batch.max_len) {
    throw ContractError("malformed index batch");
  }
  for (std::size_t r = 0; r < batch.rows; ++r) {
    if (batch.lengths[r] == 0 || batch.lengths[r] > batch.max_len) {
      throw ContractError("batch row " + std::to_string(r) + " has invalid length " +
                          std::to_string(batch.lengths[r]));
    }
  }
}

Eigen::MatrixXd gather_inputs(const Eigen::MatrixXd& emb, const IndexBatch& batch, std::size_t row,
                              bool reversed) {
  const auto len = static_cast<Eigen::Index>(batch.lengths[row]);
  Eigen::MatrixXd inputs(emb.cols(), len);
  for (Eigen::Index s = 0; s < len; ++s) {
    const Eigen::Index t = reversed ? len - 1 - s : s;
    const int index = batch.at(row, static_cast<std::size_t>(t));
    if (index < 0 || index >= emb.rows()) {
      throw ContractError("vocabulary index " + std::to_string(index) + " out of range");
    }
    inputs.col(s) = emb.row(index).transpose();
  }
  return inputs;
}

}  // namespace

EncoderParams zeros_like(const EncoderParams& params) {
  EncoderParams z;
  z.forward_cell = zero_cell(params.forward_cell);
  z.backward_cell = zero_cell(params.backward_cell);
  z.head_weights = Eigen::MatrixXd::Zero(params.head_weights.rows(), params.head_weights.cols());
  z.head_bias = Eigen::VectorXd::Zero(params.head_bias.size());
  z.mode = params.mode;
  if (params.embeddings) {
    z.embeddings = Eigen::MatrixXd::Zero(params.embeddings->rows(), params.embeddings->cols());
  }
  z.vocab_hash = params.vocab_hash;
  return z;
}

std::vector<TensorView> tensors(EncoderParams& params) {
  std::vector<TensorView> out;
  add_view(out, "forward.input_weights", params.forward_cell.input_weights);
  add_view(out, "forward.hidden_weights", params.forward_cell.hidden_weights);
  add_view(out, "forward.bias", params.forward_cell.bias);
  add_view(out, "backward.input_weights", params.backward_cell.input_weights);
  add_view(out, "backward.hidden_weights", params.backward_cell.hidden_weights);
  add_view(out, "backward.bias", params.backward_cell.bias);
  add_view(out, "head.weights", params.head_weights);
  if (params.mode != HeadMode::kLmcl) add_view(out, "head.bias", params.head_bias);
  if (params.embeddings) add_view(out, "embeddings", *params.embeddings);
  return out;
}

EncoderParams init_encoder(const EncoderShape& shape, const EmbeddingTable& table,
                           std::uint64_t seed) {
  if (shape.hidden_size == 0 || shape.num_classes == 0 || shape.embedding_dim == 0) {
    throw ConfigError("encoder sizes must be positive");
  }
  if (shape.embedding_dim != table.dim()) {
    throw ConfigError("encoder embedding dim " + std::to_string(shape.embedding_dim) +
                      " differs from table dim " + std::to_string(table.dim()));
  }
  std::mt19937_64 rng(seed);
  const auto m = static_cast<Eigen::Index>(shape.embedding_dim);
  const auto h = static_cast<Eigen::Index>(shape.hidden_size);
  const auto c = static_cast<Eigen::Index>(shape.num_classes);
  EncoderParams p;
  p.mode = shape.mode;
  p.forward_cell = init_cell(m, h, rng);
  p.backward_cell = init_cell(m, h, rng);
  p.head_weights = glorot_uniform(2 * h, c, rng);
  p.head_bias = Eigen::VectorXd::Zero(c);
  if (shape.trainable_embeddings) p.embeddings = table.vectors();
  p.vocab_hash = table.vocab_hash();
  return p;
}

FeatureMatrix forward(const EncoderParams& params, const IndexBatch& batch,
                      const EmbeddingTable& table, ForwardCache* cache) {
  check_batch(params, batch, table);
  const auto& emb = embedding_matrix(params, table);
  const Eigen::Index h = params.hidden_size();
  FeatureMatrix feats;
  feats.values.resize(static_cast<Eigen::Index>(batch.rows), 2 * h);
  feats.row_ids.resize(batch.rows);
  if (cache) {
    cache->forward.clear();
    cache->backward.clear();
    cache->forward.reserve(batch.rows);
    cache->backward.reserve(batch.rows);
  }
  for (std::size_t r = 0; r < batch.rows; ++r) {
    auto fwd = run_direction(params.forward_cell, gather_inputs(emb, batch, r, false), r, false);
    auto bwd = run_direction(params.backward_cell, gather_inputs(emb, batch, r, true), r, true);
    const auto row = static_cast<Eigen::Index>(r);
    feats.values.row(row).head(h) = fwd.hidden.col(fwd.hidden.cols() - 1).transpose();
    feats.values.row(row).tail(h) = bwd.hidden.col(bwd.hidden.cols() - 1).transpose();
    feats.row_ids[r] = r;
    if (cache) {
      cache->forward.push_back(std::move(fwd));
      cache->backward.push_back(std::move(bwd));
    }
  }
  return feats;
}

EncoderParams backward(const EncoderParams& params, const IndexBatch& batch,
                       const EmbeddingTable& /*table*/, const ForwardCache& cache,
                       const Eigen::MatrixXd& upstream) {
  const Eigen::Index h = params.hidden_size();
  if (upstream.rows() != static_cast<Eigen::Index>(batch.rows) || upstream.cols() != 2 * h ||
      cache.forward.size() != batch.rows || cache.backward.size() != batch.rows) {
    throw ContractError("backward: upstream gradient / cache shape does not match batch");
  }
  EncoderParams grads = zeros_like(params);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    const Eigen::VectorXd dh_fwd = upstream.row(row).head(h).transpose();
    const Eigen::VectorXd dh_bwd = upstream.row(row).tail(h).transpose();
    const Eigen::MatrixXd d_in_fwd =
        backprop_direction(params.forward_cell, cache.forward[r], dh_fwd, grads.forward_cell);
    const Eigen::MatrixXd d_in_bwd =
        backprop_direction(params.backward_cell, cache.backward[r], dh_bwd, grads.backward_cell);
    if (grads.embeddings) {
      const auto len = static_cast<Eigen::Index>(batch.lengths[r]);
      for (Eigen::Index t = 0; t < len; ++t) {
        const int index = batch.at(r, static_cast<std::size_t>(t));
        grads.embeddings->row(index) += (d_in_fwd.col(t) + d_in_bwd.col(len - 1 - t)).transpose();
      }
    }
  }
  return grads;
}

EncoderParams backward(const EncoderParams& params, const IndexBatch& batch,
                       const EmbeddingTable& table, const Eigen::MatrixXd& upstream) {
  ForwardCache cache;
  forward(params, batch, table, &cache);
  return backward(params, batch, table, cache, upstream);
}

double guarded_norm(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return std::sqrt(v.squaredNorm() + kNormEpsilon);
}

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out.row(i) = m.row(i) / guarded_norm(m.row(i).transpose());
  }
  return out;
}

namespace {

Eigen::MatrixXd normalize_cols(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) out.col(j) = m.col(j) / guarded_norm(m.col(j));
  return out;
}

// d(v / |v|_guarded) back-propagated to v.
Eigen::VectorXd normalization_backward(const Eigen::VectorXd& v, const Eigen::VectorXd& d_unit) {
  const double r = guarded_norm(v);
  return d_unit / r - v * (v.dot(d_unit) / (r * r * r));
}

void check_features(const EncoderParams& params, const FeatureMatrix& feats) {
  if (feats.values.cols() != params.feature_dim()) {
    throw ContractError("feature width " + std::to_string(feats.values.cols()) +
                        " does not match encoder feature dim " +
                        std::to_string(params.feature_dim()));
  }
}

}  // namespace

Eigen::MatrixXd class_scores(const EncoderParams& params, const FeatureMatrix& feats) {
  check_features(params, feats);
  if (params.mode != HeadMode::kLmcl) {
    return (feats.values * params.head_weights).rowwise() + params.head_bias.transpose();
  }
  for (Eigen::Index i = 0; i < feats.values.rows(); ++i) {
    if (feats.values.row(i).squaredNorm() == 0.0) {
      throw NumericError("zero-norm feature row " + std::to_string(i) + " in cosine head");
    }
  }
  return normalize_rows(feats.values) * normalize_cols(params.head_weights);
}

HeadGradients head_backward(const EncoderParams& params, const FeatureMatrix& feats,
                            const Eigen::MatrixXd& score_gradients) {
  check_features(params, feats);
  if (score_gradients.rows() != feats.values.rows() ||
      score_gradients.cols() != params.num_classes()) {
    throw ContractError("head_backward: score gradient shape mismatch");
  }
  HeadGradients g;
  if (params.mode != HeadMode::kLmcl) {
    g.features = score_gradients * params.head_weights.transpose();
    g.weights = feats.values.transpose() * score_gradients;
    g.bias = score_gradients.colwise().sum().transpose();
    return g;
  }
  const Eigen::MatrixXd x_unit = normalize_rows(feats.values);
  const Eigen::MatrixXd w_unit = normalize_cols(params.head_weights);
  const Eigen::MatrixXd dx_unit = score_gradients * w_unit.transpose();
  const Eigen::MatrixXd dw_unit = x_unit.transpose() * score_gradients;
  g.features.resize(feats.values.rows(), feats.values.cols());
  for (Eigen::Index i = 0; i < feats.values.rows(); ++i) {
    g.features.row(i) =
        normalization_backward(feats.values.row(i).transpose(), dx_unit.row(i).transpose())
            .transpose();
  }
  g.weights.resize(params.head_weights.rows(), params.head_weights.cols());
  for (Eigen::Index j = 0; j < params.head_weights.cols(); ++j) {
    g.weights.col(j) = normalization_backward(params.head_weights.col(j), dw_unit.col(j));
  }
  g.bias = Eigen::VectorXd::Zero(params.num_classes());
  return g;
}

}  // namespace openintent
