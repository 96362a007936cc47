#include "openintent/objective.hpp"

#include <cmath>
#include <string>

#include "openintent/errors.hpp"

namespace openintent {

namespace {

void check_labels(const Eigen::MatrixXd& scores, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != scores.rows()) {
    throw ContractError("label count " + std::to_string(labels.size()) +
                        " does not match score rows " + std::to_string(scores.rows()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= scores.cols()) {
      throw ContractError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                          " outside [0, " + std::to_string(scores.cols()) + ")");
    }
  }
}

// Shared tail of softmax-style losses: value and (p - onehot)/n for logits z.
LossOutput cross_entropy(const Eigen::MatrixXd& z, const std::vector<int>& labels) {
  const Eigen::Index n = z.rows();
  LossOutput out;
  out.score_gradients = softmax(z);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double peak = z.row(i).maxCoeff();
    const double lse = peak + std::log((z.row(i).array() - peak).exp().sum());
    total += lse - z(i, labels[static_cast<std::size_t>(i)]);
    out.score_gradients(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  }
  if (n > 0) {
    out.value = total / static_cast<double>(n);
    out.score_gradients /= static_cast<double>(n);
  }
  return out;
}

}  // namespace

void LmclConfig::validate() const {
  if (!(scale > 0.0)) throw ConfigError("LMCL scale s must be positive");
  if (!(margin >= 0.0 && margin < 1.0)) throw ConfigError("LMCL margin m must lie in [0, 1)");
}

Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Eigen::ArrayXd e = (logits.row(i).array() - logits.row(i).maxCoeff()).exp().transpose();
    p.row(i) = (e / e.sum()).matrix().transpose();
  }
  return p;
}

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& logits) {
  return logits.unaryExpr([](double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  });
}

LossOutput softmax_ce(const Eigen::MatrixXd& logits, const std::vector<int>& labels) {
  check_labels(logits, labels);
  return cross_entropy(logits, labels);
}

LossOutput lmcl(const Eigen::MatrixXd& cosines, const std::vector<int>& labels,
                const LmclConfig& cfg) {
  cfg.validate();
  check_labels(cosines, labels);
  constexpr double kTolerance = 1e-6;
  if (cosines.size() > 0 &&
      (!cosines.allFinite() || cosines.maxCoeff() > 1.0 + kTolerance ||
       cosines.minCoeff() < -1.0 - kTolerance)) {
    throw ContractError("cosine score outside [-1, 1]; features or weights are not normalized");
  }
  Eigen::MatrixXd z = cfg.scale * cosines;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    z(static_cast<Eigen::Index>(i), labels[i]) -= cfg.scale * cfg.margin;
  }
  LossOutput out = cross_entropy(z, labels);
  out.score_gradients *= cfg.scale;
  return out;
}

LossOutput sigmoid_bce(const Eigen::MatrixXd& logits, const std::vector<int>& labels) {
  check_labels(logits, labels);
  const Eigen::Index n = logits.rows();
  LossOutput out;
  out.score_gradients = sigmoid(logits);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double z = logits(i, j);
      const double target = labels[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0;
      // log(1 + e^z) - target * z, stable for both signs of z
      total += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - target * z;
      out.score_gradients(i, j) -= target;
    }
  }
  if (n > 0) {
    out.value = total / static_cast<double>(n);
    out.score_gradients /= static_cast<double>(n);
  }
  return out;
}

}  // namespace openintent
