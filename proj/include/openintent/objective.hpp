#pragma once

#include <vector>

#include <Eigen/Dense>

namespace openintent {

struct LmclConfig {
  double scale = 30.0;   // s
  double margin = 0.35;  // m, subtracted from the true-class cosine only

  void validate() const;
};

struct LossOutput {
  double value = 0.0;                // mean over the batch
  Eigen::MatrixXd score_gradients;   // dL/dscores, n x C
};

// Mean softmax cross-entropy; gradients are (softmax - onehot) / n.
LossOutput softmax_ce(const Eigen::MatrixXd& logits, const std::vector<int>& labels);

// Large margin cosine loss over an n x C cosine matrix. Gradients are w.r.t.
// the cosines. Cosines outside [-1 - 1e-6, 1 + 1e-6] raise ContractError.
LossOutput lmcl(const Eigen::MatrixXd& cosines, const std::vector<int>& labels,
                const LmclConfig& cfg);

// One-vs-rest binary cross-entropy on logits, summed over classes and averaged
// over the batch. Used to train the sigmoid head for DOC.
LossOutput sigmoid_bce(const Eigen::MatrixXd& logits, const std::vector<int>& labels);

// Row-wise softmax with max subtraction.
Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits);

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& logits);

}  // namespace openintent
