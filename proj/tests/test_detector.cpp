#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "openintent/detector.hpp"
#include "openintent/errors.hpp"
#include "openintent/objective.hpp"
#include "oracles.hpp"

using namespace openintent;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

Eigen::MatrixXd gaussian(Eigen::Index n, Eigen::Index d, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  return Eigen::MatrixXd(n, d).unaryExpr([&](double) { return g(rng); });
}

// Integer lattice coordinates: many exactly tied distances.
Eigen::MatrixXd lattice(Eigen::Index n, Eigen::Index d, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, 4);
  return Eigen::MatrixXd(n, d).unaryExpr([&](double) { return static_cast<double>(u(rng)); });
}

}  // namespace

TEST_CASE("3x3 grid") {
  Eigen::MatrixXd grid(9, 2);
  for (int i = 0; i < 9; ++i) grid.row(i) << i % 3, i / 3;
  const auto model = lof_fit(grid, 3);
  const auto brute = oracle::brute_lof(grid, 3);
  for (std::size_t i = 0; i < 9; ++i) {
    CAPTURE(i);
    CHECK(rel(model.reference_score(i), brute.lof[i]) <= 1e-9);
  }
  // Closed forms from the three symmetry orbits (centre, edge midpoints, corners).
  const double lrd_centre = 1.0;
  const double lrd_edge = 3.0 / (1.0 + 2.0 * std::sqrt(2.0));
  const double lrd_corner = 3.0 / (2.0 + std::sqrt(2.0));
  const double lof_centre = lrd_edge / lrd_centre;
  const double lof_edge = (lrd_centre + 2.0 * lrd_corner) / 3.0 / lrd_edge;
  const double lof_corner = (2.0 * lrd_edge + lrd_centre) / 3.0 / lrd_corner;
  CHECK(rel(model.reference_score(4), lof_centre) <= 1e-12);
  for (std::size_t i : {1, 3, 5, 7}) CHECK(rel(model.reference_score(i), lof_edge) <= 1e-12);
  for (std::size_t i : {0, 2, 6, 8}) CHECK(rel(model.reference_score(i), lof_corner) <= 1e-12);
  // Every point on the boundary ring lies in [0.8, 1.2]; the centre sits just
  // below at 3 / (1 + 2 sqrt 2) ~ 0.784 because it is denser than its neighbours.
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 7, 8}) {
    CAPTURE(i);
    CHECK(model.reference_score(i) >= 0.8);
    CHECK(model.reference_score(i) <= 1.2);
  }
  CHECK(lof_centre == doctest::Approx(0.7836).epsilon(1e-4));
  // Ties: the centre has four neighbours at distance 1.
  CHECK(model.neighbors()[4].size() == 4);
}

TEST_CASE("duplicate points stay finite") {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd base = gaussian(10, 3, rng);
  Eigen::MatrixXd twice(20, 3);
  twice << base, base;
  const auto model = lof_fit(twice, 1);
  CHECK(model.lrd().allFinite());
  CHECK((model.lrd().array() > 0.0).all());
  CHECK(model.kdist().isZero(0.0));
  const auto brute = oracle::brute_lof(twice, 1);
  for (std::size_t i = 0; i < 20; ++i) CHECK(rel(model.reference_score(i), brute.lof[i]) <= 1e-9);
}

TEST_CASE("fit and score agree with the brute-force transcription") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> n_dist(6, 200);
  std::uniform_int_distribution<int> d_dist(1, 16);
  for (int instance = 0; instance < 60; ++instance) {
    const int n = n_dist(rng);
    const int d = d_dist(rng);
    std::uniform_int_distribution<int> k_dist(1, std::min(20, n - 1));
    const auto k = static_cast<std::size_t>(k_dist(rng));
    const bool tied = instance % 3 == 0;
    const Eigen::MatrixXd ref = tied ? lattice(n, d, rng) : gaussian(n, d, rng);
    const Eigen::MatrixXd queries = tied ? lattice(10, d, rng) : gaussian(10, d, rng, 1.5);
    CAPTURE(instance);
    CAPTURE(n);
    CAPTURE(d);
    CAPTURE(k);
    FittedLof model;
    try {
      model = lof_fit(ref, k);
    } catch (const NumericError&) {
      continue;  // a lattice draw can collapse to a single point
    }
    const auto brute = oracle::brute_lof(ref, k);
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      worst = std::max({worst, rel(model.kdist()[i], brute.kdist[ui]), rel(model.lrd()[i], brute.lrd[ui]),
                        rel(model.reference_score(ui), brute.lof[ui])});
    }
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
      worst = std::max(worst, rel(model.score(queries.row(q).transpose()),
                                  oracle::brute_query_lof(ref, brute, k, queries, q)));
    }
    CHECK(worst <= 1e-9);
  }
}

TEST_CASE("50-point reference, 10 queries, k=5") {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd ref = gaussian(50, 4, rng);
  const Eigen::MatrixXd q = gaussian(10, 4, rng, 2.0);
  const auto model = lof_fit(ref, 5);
  const auto brute = oracle::brute_lof(ref, 5);
  const Eigen::VectorXd scores = model.score_rows(q);
  for (Eigen::Index i = 0; i < 10; ++i) {
    CHECK(rel(scores[i], oracle::brute_query_lof(ref, brute, 5, q, i)) <= 1e-9);
    CHECK(scores[i] == lof_score(model, q.row(i).transpose()));
  }
}

TEST_CASE("inlier and outlier limits") {
  std::mt19937_64 rng(6);
  Eigen::MatrixXd ref = gaussian(60, 5, rng);
  for (int r = 0; r < 30; ++r) ref.row(r) = ref.row(0);  // dense duplicated point
  const auto model = lof_fit(ref, 10);
  CHECK(model.score(ref.row(0).transpose()) == doctest::Approx(1.0).epsilon(1e-6));

  const Eigen::MatrixXd cluster = gaussian(100, 5, rng);
  const auto cm = lof_fit(cluster, 20);
  Eigen::VectorXd far = Eigen::VectorXd::Zero(5);
  far[0] = 100.0;
  CHECK(cm.score(far) > 20.0);
}

TEST_CASE("rigid transforms leave scores unchanged") {
  std::mt19937_64 rng(7);
  const int d = 6;
  const Eigen::MatrixXd ref = gaussian(80, d, rng);
  const Eigen::MatrixXd q = gaussian(15, d, rng, 2.0);
  const Eigen::MatrixXd rotation = Eigen::HouseholderQR<Eigen::MatrixXd>(gaussian(d, d, rng)).householderQ();
  const Eigen::RowVectorXd shift = gaussian(1, d, rng, 10.0);
  auto move = [&](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
    return (x * rotation).rowwise() + shift;
  };
  const auto a = lof_fit(ref, 8);
  const auto b = lof_fit(move(ref), 8);
  for (std::size_t i = 0; i < 80; ++i) CHECK(rel(b.reference_score(i), a.reference_score(i)) <= 1e-9);
  const Eigen::VectorXd sa = a.score_rows(q);
  const Eigen::VectorXd sb = b.score_rows(move(q));
  for (Eigen::Index i = 0; i < 15; ++i) CHECK(rel(sb[i], sa[i]) <= 1e-9);
}

TEST_CASE("uniform hypercube rarely exceeds the default threshold") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int d : {2, 5, 10}) {
    const Eigen::MatrixXd x = Eigen::MatrixXd(1000, d).unaryExpr([&](double) { return u(rng); });
    const auto model = lof_fit(x, 20);
    std::size_t above = 0;
    for (std::size_t i = 0; i < 1000; ++i) above += model.reference_score(i) > 1.5;
    CAPTURE(d);
    CHECK(static_cast<double>(above) / 1000.0 < 0.05);
  }
}

TEST_CASE("LOF input checks") {
  std::mt19937_64 rng(9);
  const Eigen::MatrixXd ref = gaussian(5, 2, rng);
  CHECK_THROWS_AS(lof_fit(ref, 5), ConfigError);
  CHECK_THROWS_AS(lof_fit(ref, 0), ConfigError);
  CHECK_THROWS_AS(lof_fit(Eigen::MatrixXd::Ones(6, 2), 2), NumericError);
  Eigen::MatrixXd nan_ref = ref;
  nan_ref(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(lof_fit(nan_ref, 2), NumericError);
  const auto model = lof_fit(ref, 2);
  CHECK_THROWS_AS(model.score(Eigen::VectorXd::Zero(3)), ContractError);
  Eigen::VectorXd inf = Eigen::VectorXd::Zero(2);
  inf[1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(model.score(inf), ContractError);
}

TEST_CASE("stored state reproduces the fitted model") {
  std::mt19937_64 rng(10);
  const Eigen::MatrixXd ref = gaussian(40, 3, rng);
  const auto a = lof_fit(ref, 4);
  const auto b = FittedLof::from_state(a.reference(), a.k(), a.kdist(), a.lrd(), a.neighbors());
  const Eigen::MatrixXd q = gaussian(5, 3, rng);
  CHECK(a.score_rows(q) == b.score_rows(q));
  Eigen::VectorXd bad_lrd = a.lrd();
  bad_lrd[0] = 0.0;
  CHECK_THROWS_AS(FittedLof::from_state(a.reference(), a.k(), a.kdist(), bad_lrd, a.neighbors()),
                  CompatibilityError);
}

TEST_CASE("LOF decisions") {
  const DetectionConfig cfg;
  CHECK(decide_lof(1.0, {0.1, 0.7, 0.2}, cfg).predicted == 1);
  CHECK(decide_lof(2.0, {0.1, 0.7, 0.2}, cfg).unknown());
  CHECK(decide_lof(1.5, {0.1, 0.7, 0.2}, cfg).predicted == 1);  // strictly greater rejects

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.5, 3.0);
  for (int trial = 0; trial < 500; ++trial) {
    const double score = u(rng);
    DetectionConfig low;
    low.lof_threshold = u(rng);
    DetectionConfig high = low;
    high.lof_threshold += u(rng);
    if (!decide_lof(score, {0.3, 0.2}, low).unknown()) {
      CHECK_FALSE(decide_lof(score, {0.3, 0.2}, high).unknown());
    }
  }

  const Eigen::MatrixXd ref = (Eigen::MatrixXd(4, 1) << 0.0, 1.0, 2.0, 3.0).finished();
  const auto model = lof_fit(ref, 2);
  const Eigen::VectorXd q = Eigen::VectorXd::Constant(1, 1.5);
  const auto d = decide_lof(model, {0.2, 0.8}, q, cfg);
  CHECK(d.score == model.score(q));
  CHECK(d.predicted == 1);
  CHECK(d.class_scores == std::vector<double>{0.2, 0.8});
}

TEST_CASE("MSP decisions") {
  const DetectionConfig cfg;
  CHECK(decide_msp({0.9, 0.1}, cfg).predicted == 0);
  CHECK(decide_msp(std::vector<double>(7, 1.0 / 7.0), cfg).unknown());
  const auto tie = decide_msp({0.5, 0.5}, cfg);
  CHECK(tie.predicted == 0);
  CHECK(tie.score == 0.5);
  CHECK_THROWS_AS(decide_msp({0.6, 0.6}, cfg), ContractError);

  // The rule sees probabilities, so logit shifts that preserve them change nothing.
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::MatrixXd logits(1, 4);
    for (int j = 0; j < 4; ++j) logits(0, j) = g(rng);
    const Eigen::MatrixXd shifted = logits.array() + g(rng) * 10.0;
    auto decide = [&](const Eigen::MatrixXd& z) {
      const Eigen::MatrixXd p = softmax(z);
      return decide_msp(std::vector<double>(p.data(), p.data() + 4), cfg);
    };
    CHECK(decide(logits).predicted == decide(shifted).predicted);
  }
}

TEST_CASE("DOC thresholds") {
  SUBCASE("zero variance") {
    Eigen::MatrixXd p = Eigen::MatrixXd::Ones(5, 2);
    p.col(1).setConstant(0.2);
    const auto t = doc_fit(p, {0, 0, 0, 0, 0}, 3.0);
    CHECK(t[0] == 1.0);
    CHECK(t[1] == 0.5);  // no examples of class 1
  }
  SUBCASE("floor") {
    // Mirrored deviations of +-0.3 give sigma 0.3 exactly.
    Eigen::MatrixXd p(2, 1);
    p << 0.7, 0.7;
    const auto t = doc_fit(p, {0, 0}, 3.0);
    CHECK(t[0] == 0.5);
  }
  SUBCASE("single example falls back to 0.5") {
    Eigen::MatrixXd p(3, 2);
    p << 1.0, 0.0, 0.99, 0.0, 0.0, 1.0;
    const auto t = doc_fit(p, {0, 0, 1}, 3.0);
    CHECK(t[1] == 0.5);
    CHECK(t[0] == doctest::Approx(1.0 - 3.0 * std::sqrt(0.0001 / 2.0)));
  }
  SUBCASE("Monte-Carlo half-Gaussian fit") {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> g(0.0, 0.05);
    for (int rep = 0; rep < 20; ++rep) {
      Eigen::MatrixXd p(2000, 1);
      for (Eigen::Index i = 0; i < p.rows(); ++i) p(i, 0) = 1.0 - std::abs(g(rng));
      const auto t = doc_fit(p, std::vector<int>(2000, 0), 3.0);
      CHECK(std::abs(t[0] - 0.85) <= 0.02);
    }
  }
}

TEST_CASE("DOC decisions") {
  CHECK(decide_doc({0.9, 0.2}, {0.5, 0.5}).predicted == 0);
  CHECK(decide_doc({0.4, 0.3}, {0.5, 0.5}).unknown());
  CHECK(decide_doc({0.6, 0.7}, {0.5, 0.9}).predicted == 0);
  CHECK(decide_doc({0.5, 0.5}, {0.5, 0.5}).predicted == 0);
  CHECK_THROWS_AS(decide_doc({0.5}, {0.5, 0.5}), ContractError);
}

TEST_CASE("every rule returns exactly one outcome") {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const DetectionConfig cfg;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> p(5);
    double sum = 0.0;
    for (auto& v : p) sum += v = u(rng);
    std::vector<double> probs = p;
    for (auto& v : probs) v /= sum;
    std::vector<double> t(5);
    for (auto& v : t) v = 0.5 + 0.5 * u(rng);
    for (const Decision& d : {decide_msp(probs, cfg), decide_doc(p, t), decide_lof(3.0 * u(rng), p, cfg)}) {
      CHECK((d.unknown() || (d.predicted >= 0 && d.predicted < 5)));
    }
  }
}

TEST_CASE("detection config validation") {
  DetectionConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.lof_k = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.lof_threshold = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
