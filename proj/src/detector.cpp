#include "openintent/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "openintent/errors.hpp"

namespace openintent {

void DetectionConfig::validate() const {
  if (lof_k == 0) throw ConfigError("lof_k must be positive");
  if (!(lof_threshold > 0.0)) throw ConfigError("lof_threshold must be positive");
  if (!(msp_threshold > 0.0)) throw ConfigError("msp_threshold must be positive");
  if (!(doc_risk_factor > 0.0)) throw ConfigError("doc_risk_factor must be positive");
}

namespace {

Eigen::VectorXd distances(const Eigen::MatrixXd& reference,
                          const Eigen::Ref<const Eigen::VectorXd>& query) {
  return (reference.rowwise() - query.transpose()).rowwise().norm();
}

// k-th smallest entry, skipping `exclude` (pass size() to skip nothing).
double kth_smallest(const Eigen::VectorXd& d, std::size_t k, std::size_t exclude) {
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(d.size()));
  for (Eigen::Index j = 0; j < d.size(); ++j) {
    if (static_cast<std::size_t>(j) != exclude) values.push_back(d[j]);
  }
  auto nth = values.begin() + static_cast<std::ptrdiff_t>(k - 1);
  std::nth_element(values.begin(), nth, values.end());
  return *nth;
}

std::vector<std::size_t> within(const Eigen::VectorXd& d, double radius, std::size_t exclude) {
  std::vector<std::size_t> out;
  for (Eigen::Index j = 0; j < d.size(); ++j) {
    if (static_cast<std::size_t>(j) != exclude && d[j] <= radius) {
      out.push_back(static_cast<std::size_t>(j));
    }
  }
  return out;
}

// neighbor_dist[i] is the distance to neighbors[i].
double local_density(const std::vector<std::size_t>& neighbors,
                     const std::vector<double>& neighbor_dist, const Eigen::VectorXd& kdist) {
  double reach_sum = 0.0;
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    reach_sum += std::max({kdist[static_cast<Eigen::Index>(neighbors[i])], neighbor_dist[i],
                           kReachEpsilon});
  }
  return static_cast<double>(neighbors.size()) / reach_sum;
}

std::vector<double> gather(const Eigen::VectorXd& d, const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t j : idx) out.push_back(d[static_cast<Eigen::Index>(j)]);
  return out;
}

double mean_density_ratio(const std::vector<std::size_t>& neighbors, const Eigen::VectorXd& lrd,
                          double own_lrd) {
  double sum = 0.0;
  for (std::size_t b : neighbors) sum += lrd[static_cast<Eigen::Index>(b)] / own_lrd;
  return sum / static_cast<double>(neighbors.size());
}

int first_argmax(const std::vector<double>& v) {
  if (v.empty()) throw ContractError("decision requires at least one class score");
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

FittedLof FittedLof::fit(Eigen::MatrixXd reference, std::size_t k) {
  const auto n = static_cast<std::size_t>(reference.rows());
  if (k == 0 || k >= n) {
    throw ConfigError("LOF needs 0 < k < reference size (k=" + std::to_string(k) +
                      ", n=" + std::to_string(n) + ")");
  }
  if (!reference.allFinite()) throw NumericError("LOF reference contains non-finite values");
  bool identical = true;
  for (Eigen::Index i = 1; i < reference.rows() && identical; ++i) {
    identical = reference.row(i) == reference.row(0);
  }
  if (identical) throw NumericError("LOF reference points are all identical; density undefined");

  FittedLof model;
  model.k_ = k;
  model.kdist_.resize(static_cast<Eigen::Index>(n));
  model.neighbors_.resize(n);
  std::vector<std::vector<double>> neighbor_dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd d = distances(reference, reference.row(static_cast<Eigen::Index>(i)).transpose());
    const double kd = kth_smallest(d, k, i);
    model.kdist_[static_cast<Eigen::Index>(i)] = kd;
    model.neighbors_[i] = within(d, kd, i);
    neighbor_dist[i] = gather(d, model.neighbors_[i]);
  }
  model.lrd_.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    model.lrd_[static_cast<Eigen::Index>(i)] =
        local_density(model.neighbors_[i], neighbor_dist[i], model.kdist_);
  }
  model.reference_ = std::move(reference);
  return model;
}

FittedLof FittedLof::from_state(Eigen::MatrixXd reference, std::size_t k, Eigen::VectorXd kdist,
                                Eigen::VectorXd lrd,
                                std::vector<std::vector<std::size_t>> neighbors) {
  const auto n = reference.rows();
  if (kdist.size() != n || lrd.size() != n || static_cast<Eigen::Index>(neighbors.size()) != n ||
      k == 0 || static_cast<Eigen::Index>(k) >= n) {
    throw CompatibilityError("inconsistent LOF state");
  }
  if (!(lrd.array() > 0.0).all() || !lrd.allFinite()) {
    throw CompatibilityError("LOF state has non-positive or non-finite densities");
  }
  FittedLof model;
  model.reference_ = std::move(reference);
  model.k_ = k;
  model.kdist_ = std::move(kdist);
  model.lrd_ = std::move(lrd);
  model.neighbors_ = std::move(neighbors);
  return model;
}

double FittedLof::reference_score(std::size_t index) const {
  return mean_density_ratio(neighbors_.at(index), lrd_, lrd_[static_cast<Eigen::Index>(index)]);
}

double FittedLof::score(const Eigen::Ref<const Eigen::VectorXd>& query) const {
  if (query.size() != reference_.cols()) {
    throw ContractError("query dimension " + std::to_string(query.size()) +
                        " does not match reference dimension " +
                        std::to_string(reference_.cols()));
  }
  if (!query.allFinite()) throw ContractError("LOF query contains non-finite values");
  const Eigen::VectorXd d = distances(reference_, query);
  const std::size_t none = size();
  const double kd = kth_smallest(d, k_, none);
  const auto neighbors = within(d, kd, none);
  return mean_density_ratio(neighbors, lrd_,
                            local_density(neighbors, gather(d, neighbors), kdist_));
}

Eigen::VectorXd FittedLof::score_rows(const Eigen::MatrixXd& queries) const {
  Eigen::VectorXd out(queries.rows());
  for (Eigen::Index i = 0; i < queries.rows(); ++i) out[i] = score(queries.row(i).transpose());
  return out;
}

Decision decide_lof(double lof, const std::vector<double>& classifier_scores,
                    const DetectionConfig& cfg) {
  Decision d;
  d.class_scores = classifier_scores;
  d.score = lof;
  const int best = first_argmax(classifier_scores);
  d.predicted = lof > cfg.lof_threshold ? kUnknown : best;
  return d;
}

Decision decide_lof(const FittedLof& model, const std::vector<double>& classifier_scores,
                    const Eigen::Ref<const Eigen::VectorXd>& query, const DetectionConfig& cfg) {
  return decide_lof(model.score(query), classifier_scores, cfg);
}

Decision decide_msp(const std::vector<double>& probabilities, const DetectionConfig& cfg) {
  double total = 0.0;
  for (double p : probabilities) total += p;
  if (std::abs(total - 1.0) > 1e-6) {
    throw ContractError("MSP input is not a probability vector (sum " + std::to_string(total) + ")");
  }
  Decision d;
  d.class_scores = probabilities;
  const int best = first_argmax(probabilities);
  d.score = probabilities[static_cast<std::size_t>(best)];
  d.predicted = d.score < cfg.msp_threshold ? kUnknown : best;
  return d;
}

std::vector<double> doc_fit(const Eigen::MatrixXd& probabilities, const std::vector<int>& labels,
                            double risk_factor) {
  if (static_cast<Eigen::Index>(labels.size()) != probabilities.rows()) {
    throw ContractError("doc_fit: label count does not match probability rows");
  }
  const auto classes = static_cast<std::size_t>(probabilities.cols());
  std::vector<double> sum_sq(classes, 0.0);
  std::vector<std::size_t> count(classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int j = labels[i];
    if (j < 0 || static_cast<std::size_t>(j) >= classes) {
      throw ContractError("doc_fit: label out of range");
    }
    // Mirroring p about 1 gives a zero-mean (about 1) symmetric sample, so its
    // standard deviation is the root mean square of 1 - p.
    const double gap = 1.0 - probabilities(static_cast<Eigen::Index>(i), j);
    sum_sq[static_cast<std::size_t>(j)] += gap * gap;
    ++count[static_cast<std::size_t>(j)];
  }
  std::vector<double> thresholds(classes, 0.5);
  for (std::size_t j = 0; j < classes; ++j) {
    if (count[j] < 2) continue;
    const double sigma = std::sqrt(sum_sq[j] / static_cast<double>(count[j]));
    thresholds[j] = std::max(0.5, 1.0 - risk_factor * sigma);
  }
  return thresholds;
}

Decision decide_doc(const std::vector<double>& probabilities,
                    const std::vector<double>& thresholds) {
  if (probabilities.size() != thresholds.size() || probabilities.empty()) {
    throw ContractError("decide_doc: probabilities and thresholds differ in length");
  }
  Decision d;
  d.class_scores = probabilities;
  d.predicted = kUnknown;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < probabilities.size(); ++j) {
    if (probabilities[j] >= thresholds[j] && probabilities[j] > best) {
      best = probabilities[j];
      d.predicted = static_cast<int>(j);
    }
  }
  d.score = *std::max_element(probabilities.begin(), probabilities.end());
  return d;
}

}  // namespace openintent
