#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numeric>

#include "openintent/errors.hpp"
#include "openintent/serialization.hpp"
#include "openintent/trainer.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace openintent;

namespace {

// Two classes, five utterances each, no shared words.
Corpus separable_toy() {
  std::vector<Utterance> u;
  const std::vector<std::vector<std::string>> a = {
      {"book", "flight"}, {"book", "ticket", "now"}, {"flight", "to", "paris"},
      {"reserve", "flight"}, {"ticket", "please"}};
  const std::vector<std::vector<std::string>> b = {
      {"play", "song"}, {"play", "jazz", "music"}, {"music", "loud"},
      {"song", "by", "queen"}, {"start", "music"}};
  for (const auto& t : a) u.push_back({t, "air", Split::kTrain});
  for (const auto& t : b) u.push_back({t, "music", Split::kTrain});
  return Corpus(std::move(u));
}

LabeledSet labeled(const Corpus& c, Split split) {
  LabeledSet s;
  for (std::size_t id : c.ids(split)) {
    s.ids.push_back(id);
    s.labels.push_back(c.class_index(c.at(id).label));
  }
  return s;
}

TrainConfig small_config(HeadMode mode) {
  TrainConfig cfg;
  cfg.hidden_size = 16;
  cfg.batch_size = 16;
  cfg.loss_mode = mode;
  cfg.seed = 3;
  return cfg;
}

double params_distance(const EncoderParams& a, const EncoderParams& b) {
  auto va = tensors(const_cast<EncoderParams&>(a));
  auto vb = tensors(const_cast<EncoderParams&>(b));
  double worst = 0.0;
  for (std::size_t t = 0; t < va.size(); ++t) {
    for (std::size_t i = 0; i < va[t].size; ++i) {
      worst = std::max(worst, std::abs(va[t].data[i] - vb[t].data[i]));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("separable toy corpus is learned within 50 epochs") {
  const Corpus c = separable_toy();
  const auto table = build_embeddings(c, {}, 20, 1);
  for (HeadMode mode : {HeadMode::kLmcl, HeadMode::kSoftmax, HeadMode::kSigmoid}) {
    CAPTURE(head_mode_name(mode));
    TrainConfig cfg = small_config(mode);
    cfg.max_epochs = 50;
    cfg.patience = 50;
    cfg.learning_rate = 1e-2;
    const auto set = labeled(c, Split::kTrain);
    const auto result = train(c, set, {}, 2, table, cfg);
    CHECK(result.report.best_validation_accuracy >= 0.99);
    CHECK(accuracy(result.params, c, set, table) >= 0.99);
  }
}

TEST_CASE("default optimizer settings also separate the toy corpus") {
  const Corpus c = separable_toy();
  const auto table = build_embeddings(c, {}, 50, 1);
  TrainConfig cfg;
  cfg.max_epochs = 50;
  cfg.hidden_size = 32;
  const auto result = train(c, labeled(c, Split::kTrain), {}, 2, table, cfg);
  CHECK(result.report.best_validation_accuracy >= 0.99);
}

TEST_CASE("training loss decreases") {
  const Corpus c = separable_toy();
  const auto table = build_embeddings(c, {}, 20, 1);
  TrainConfig cfg = small_config(HeadMode::kLmcl);
  cfg.max_epochs = 30;
  cfg.patience = 30;
  const auto r = train(c, labeled(c, Split::kTrain), {}, 2, table, cfg);
  REQUIRE(r.report.curve.size() == 30);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    first += r.report.curve[i].train_loss;
    last += r.report.curve[25 + i].train_loss;
  }
  CHECK(first > last);
}

TEST_CASE("early stopping contract") {
  oracle::SyntheticSpec spec;
  spec.classes = 3;
  spec.train_per_class = 10;
  const Corpus c = oracle::synthetic_corpus(spec);
  const auto table = build_embeddings(c, {}, 16, 2);
  TrainConfig cfg = small_config(HeadMode::kLmcl);
  cfg.learning_rate = 1e-2;
  cfg.patience = 3;
  std::vector<EpochRecord> seen;
  const auto r = train(c, labeled(c, Split::kTrain), labeled(c, Split::kValidation), 3, table, cfg,
                       [&](const EpochRecord& e) { seen.push_back(e); });
  REQUIRE(r.report.stopped_early);
  CHECK(r.report.epochs_run < cfg.max_epochs);
  CHECK(r.report.best_epoch < r.report.epochs_run);
  CHECK(r.report.epochs_run == r.report.best_epoch + cfg.patience);
  CHECK(seen.size() == r.report.epochs_run);
  // Best accuracy is the first occurrence of the maximum, and the returned
  // parameters reproduce it.
  double best = -1.0;
  std::size_t best_epoch = 0;
  for (const auto& e : r.report.curve) {
    if (e.val_acc > best) {
      best = e.val_acc;
      best_epoch = e.epoch;
    }
  }
  CHECK(best_epoch == r.report.best_epoch);
  CHECK(accuracy(r.params, c, labeled(c, Split::kValidation), table) == best);
}

TEST_CASE("training is deterministic given the seed") {
  const Corpus c = oracle::synthetic_corpus({});
  const auto table = build_embeddings(c, {}, 12, 2);
  TrainConfig cfg = small_config(HeadMode::kLmcl);
  cfg.max_epochs = 4;
  const auto a = train(c, labeled(c, Split::kTrain), labeled(c, Split::kValidation), 4, table, cfg);
  const auto b = train(c, labeled(c, Split::kTrain), labeled(c, Split::kValidation), 4, table, cfg);
  REQUIRE(a.report.curve.size() == b.report.curve.size());
  for (std::size_t i = 0; i < a.report.curve.size(); ++i) {
    CHECK(a.report.curve[i].train_loss == b.report.curve[i].train_loss);
    CHECK(a.report.curve[i].val_acc == b.report.curve[i].val_acc);
  }
  CHECK(params_distance(a.params, b.params) == 0.0);
  cfg.seed = 4;
  const auto d = train(c, labeled(c, Split::kTrain), labeled(c, Split::kValidation), 4, table, cfg);
  CHECK(d.report.curve[0].train_loss != a.report.curve[0].train_loss);
}

TEST_CASE("feature extraction") {
  const Corpus c = oracle::synthetic_corpus({});
  const auto table = build_embeddings(c, {}, 12, 2);
  TrainConfig cfg = small_config(HeadMode::kLmcl);
  cfg.max_epochs = 2;
  const auto r = train(c, labeled(c, Split::kTrain), {}, 4, table, cfg);
  const auto test_ids = c.ids(Split::kTest);

  SUBCASE("lmcl rows are unit length") {
    const auto f = extract_features(r.params, c, test_ids, table);
    CHECK(f.values.rows() == static_cast<Eigen::Index>(test_ids.size()));
    CHECK(f.row_ids == test_ids);
    CHECK((f.values.rowwise().norm().array() - 1.0).abs().maxCoeff() <= 1e-9);
  }
  SUBCASE("empty split") {
    const auto f = extract_features(r.params, c, {}, table);
    CHECK(f.values.rows() == 0);
    CHECK(f.values.cols() == 32);
  }
  SUBCASE("repeatable and chunk independent") {
    std::vector<std::size_t> many;
    for (int rep = 0; rep < 16; ++rep) many.insert(many.end(), test_ids.begin(), test_ids.end());
    const auto a = extract_features(r.params, c, many, table);
    const auto b = extract_features(r.params, c, many, table);
    CHECK(a.values == b.values);
    const auto single = extract_features(r.params, c, {many[600]}, table);
    CHECK(single.values.row(0) == a.values.row(600));
  }
  SUBCASE("softmax rows are left raw") {
    TrainConfig scfg = small_config(HeadMode::kSoftmax);
    scfg.max_epochs = 2;
    const auto s = train(c, labeled(c, Split::kTrain), {}, 4, table, scfg);
    const auto f = extract_features(s.params, c, test_ids, table);
    const auto raw = forward(s.params, encode_batch(c, table, test_ids), table);
    CHECK(f.values == raw.values);
  }
  SUBCASE("vocabulary mismatch") {
    Corpus other({{{"different", "words"}, "x", Split::kTrain}});
    const auto other_table = build_embeddings(other, {}, 12, 2);
    CHECK_THROWS_AS(extract_features(r.params, other, {0}, other_table), CompatibilityError);
  }
  SUBCASE("checkpoint round trip is bit-identical") {
    testutil::TempDir dir;
    Checkpoint ck{r.params, c.classes(), c.max_len(), table.dim(), cfg.lmcl};
    save_checkpoint(dir / "model.ckpt", ck);
    const Checkpoint back = load_checkpoint(dir / "model.ckpt");
    CHECK(back.classes == c.classes());
    CHECK(back.max_len == c.max_len());
    CHECK(back.params.mode == HeadMode::kLmcl);
    CHECK(back.params.vocab_hash == table.vocab_hash());
    CHECK(extract_features(back.params, c, test_ids, table).values ==
          extract_features(r.params, c, test_ids, table).values);
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  testutil::TempDir dir;
  testutil::write_file(dir / "bad.ckpt", "not cbor at all");
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), CompatibilityError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), ValidationError);
}

TEST_CASE("Adam first step moves each coordinate by about the learning rate") {
  const Corpus c = separable_toy();
  const auto table = build_embeddings(c, {}, 4, 1);
  TrainConfig cfg;
  cfg.hidden_size = 3;
  cfg.loss_mode = HeadMode::kSoftmax;
  EncoderParams p = init_encoder({4, 3, 2, HeadMode::kSoftmax, false}, table, 1);
  const EncoderParams before = p;
  EncoderParams g = zeros_like(p);
  g.head_bias << 0.3, -2.0;
  g.head_weights(0, 0) = 1e-3;
  Adam adam(cfg, p);
  adam.step(p, g);
  // Bias-corrected moments give m/sqrt(v) = sign(g) on the first step.
  CHECK(p.head_bias[0] - before.head_bias[0] == doctest::Approx(-1e-3 * 0.3 / (0.3 + 1e-8)));
  CHECK(p.head_bias[1] - before.head_bias[1] == doctest::Approx(1e-3 * 2.0 / (2.0 + 1e-8)));
  CHECK(p.head_weights(0, 0) - before.head_weights(0, 0) ==
        doctest::Approx(-1e-3 * 1e-3 / (1e-3 + 1e-8)));
  CHECK(p.head_weights(1, 0) == before.head_weights(1, 0));
}

TEST_CASE("global norm clipping") {
  const Corpus c = separable_toy();
  const auto table = build_embeddings(c, {}, 4, 1);
  EncoderParams g = zeros_like(init_encoder({4, 3, 2, HeadMode::kSoftmax, false}, table, 1));
  g.head_bias << 3.0, 4.0;
  g.head_weights(0, 0) = 12.0;
  CHECK(clip_global_norm(g, 5.0) == doctest::Approx(13.0));
  CHECK(g.head_bias[0] == doctest::Approx(3.0 * 5.0 / 13.0));
  CHECK(g.head_weights(0, 0) == doctest::Approx(12.0 * 5.0 / 13.0));
  EncoderParams small = g;
  CHECK(clip_global_norm(small, 100.0) == doctest::Approx(5.0));
  CHECK(small.head_bias == g.head_bias);
}

TEST_CASE("divergence carries the last good parameters") {
  const Corpus c = separable_toy();
  auto table = build_embeddings(c, {}, 8, 1);
  table.mutable_vectors().row(table.lookup("queen")).setConstant(std::numeric_limits<double>::infinity());
  TrainConfig cfg = small_config(HeadMode::kSoftmax);
  cfg.max_epochs = 3;
  try {
    train(c, labeled(c, Split::kTrain), {}, 2, table, cfg);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.report().epochs_run == 1);
    CHECK(e.last_good().feature_dim() == 32);
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("configuration and input checks") {
  const Corpus c = separable_toy();
  const auto table = build_embeddings(c, {}, 4, 1);
  TrainConfig cfg;
  CHECK_THROWS_AS(train(c, {}, {}, 2, table, cfg), ValidationError);
  LabeledSet bad{{0}, {5}};
  CHECK_THROWS_AS(train(c, bad, {}, 2, table, cfg), ContractError);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
