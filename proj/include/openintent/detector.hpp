#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace openintent {

inline constexpr int kUnknown = -1;

struct DetectionConfig {
  std::size_t lof_k = 20;
  double lof_threshold = 1.5;
  double msp_threshold = 0.5;
  double doc_risk_factor = 3.0;  // alpha

  void validate() const;
};

struct Decision {
  int predicted = kUnknown;  // known-class index or kUnknown
  double score = 0.0;        // LOF score, max probability, ... depending on the rule
  std::vector<double> class_scores;

  bool unknown() const { return predicted == kUnknown; }
};

// Floor applied to reachability distances so duplicate points keep a finite density.
inline constexpr double kReachEpsilon = 1e-12;

// Local outlier factor fitted on a reference set, scored in novelty mode.
// Neighborhoods include every point tied with the k-th nearest distance.
class FittedLof {
 public:
  FittedLof() = default;

  // Throws ConfigError if k >= rows, NumericError on non-finite or all-identical rows.
  static FittedLof fit(Eigen::MatrixXd reference, std::size_t k);

  // Rebuilds a model from stored state (no recomputation).
  static FittedLof from_state(Eigen::MatrixXd reference, std::size_t k, Eigen::VectorXd kdist,
                              Eigen::VectorXd lrd, std::vector<std::vector<std::size_t>> neighbors);

  std::size_t k() const { return k_; }
  std::size_t size() const { return static_cast<std::size_t>(reference_.rows()); }
  Eigen::Index dim() const { return reference_.cols(); }
  const Eigen::MatrixXd& reference() const { return reference_; }
  const Eigen::VectorXd& kdist() const { return kdist_; }
  const Eigen::VectorXd& lrd() const { return lrd_; }
  const std::vector<std::vector<std::size_t>>& neighbors() const { return neighbors_; }

  // LOF of a reference point against the rest of the reference set.
  double reference_score(std::size_t index) const;

  // Novelty score of an unseen point; neighbors come from the reference set only.
  double score(const Eigen::Ref<const Eigen::VectorXd>& query) const;

  // One score per query row.
  Eigen::VectorXd score_rows(const Eigen::MatrixXd& queries) const;

 private:
  Eigen::MatrixXd reference_;
  std::size_t k_ = 0;
  Eigen::VectorXd kdist_;
  Eigen::VectorXd lrd_;
  std::vector<std::vector<std::size_t>> neighbors_;
};

inline FittedLof lof_fit(const Eigen::MatrixXd& reference, std::size_t k) {
  return FittedLof::fit(reference, k);
}

inline double lof_score(const FittedLof& model, const Eigen::Ref<const Eigen::VectorXd>& query) {
  return model.score(query);
}

// UNKNOWN when the LOF score exceeds the threshold, else argmax of the classifier scores.
Decision decide_lof(const FittedLof& model, const std::vector<double>& classifier_scores,
                    const Eigen::Ref<const Eigen::VectorXd>& query, const DetectionConfig& cfg);

// Same rule with a precomputed LOF score.
Decision decide_lof(double lof, const std::vector<double>& classifier_scores,
                    const DetectionConfig& cfg);

// UNKNOWN when the maximum probability is strictly below the threshold.
Decision decide_msp(const std::vector<double>& probabilities, const DetectionConfig& cfg);

// Per-class thresholds t_j = max(0.5, 1 - alpha * sigma_j), sigma_j the std of
// the class's probabilities mirrored about 1. Classes with < 2 examples get 0.5.
std::vector<double> doc_fit(const Eigen::MatrixXd& probabilities, const std::vector<int>& labels,
                            double risk_factor);

// UNKNOWN iff every p_j < t_j; otherwise argmax over classes passing their threshold.
Decision decide_doc(const std::vector<double>& probabilities, const std::vector<double>& thresholds);

}  // namespace openintent
