#pragma once

// Shared toy instances for gradient checks: h = 8, C = 3, batch of 5.

#include <random>

#include "openintent/encoder.hpp"
#include "openintent/objective.hpp"
#include "openintent/trainer.hpp"
#include "oracles.hpp"

namespace fixture {

using namespace openintent;

struct Toy {
  Corpus corpus;
  EmbeddingTable table;
  IndexBatch batch;
  std::vector<int> labels;
};

// 5 utterances of lengths 1..6 over a 12-word vocabulary, m = 4.
inline Toy make_toy() {
  std::vector<Utterance> u = {
      {{"w1"}, "a", Split::kTrain},
      {{"w2", "w3", "w4"}, "b", Split::kTrain},
      {{"w5", "w6", "w1", "w7", "w8", "w9"}, "c", Split::kTrain},
      {{"w10", "w2"}, "a", Split::kTrain},
      {{"w3", "w3", "w3", "w3"}, "b", Split::kTrain},
  };
  Toy toy{Corpus(std::move(u), 6), {}, {}, {0, 1, 2, 0, 1}};
  toy.table = build_embeddings(toy.corpus, {}, 4, 3);
  toy.batch = encode_batch(toy.corpus, toy.table, {0, 1, 2, 3, 4});
  return toy;
}

inline EncoderParams toy_params(const Toy& toy, HeadMode mode, std::uint64_t seed = 5) {
  EncoderShape shape;
  shape.embedding_dim = 4;
  shape.hidden_size = 8;
  shape.num_classes = 3;
  shape.mode = mode;
  shape.trainable_embeddings = true;
  EncoderParams p = init_encoder(shape, toy.table, seed);
  // Non-trivial biases so every gate path carries gradient.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto* b : {&p.forward_cell.bias, &p.backward_cell.bias, &p.head_bias}) {
    for (Eigen::Index i = 0; i < b->size(); ++i) (*b)[i] += u(rng);
  }
  if (mode == HeadMode::kLmcl) p.head_bias.setZero();
  return p;
}

// Worst relative error of the full encoder + loss gradient against central
// differences, over every parameter the loss reads.
inline double max_gradient_error(HeadMode mode, double step = 1e-4) {
  const Toy toy = make_toy();
  EncoderParams params = toy_params(toy, mode);
  const LmclConfig lmcl_cfg;
  EncoderParams grads;
  loss_and_gradients(params, toy.batch, toy.labels, toy.table, lmcl_cfg, &grads);
  auto loss = [&] {
    return loss_and_gradients(params, toy.batch, toy.labels, toy.table, lmcl_cfg, nullptr);
  };
  auto p_views = tensors(params);
  auto g_views = tensors(grads);
  double worst = 0.0;
  for (std::size_t t = 0; t < p_views.size(); ++t) {
    for (std::size_t i = 0; i < p_views[t].size; ++i) {
      if (p_views[t].name == "embeddings" && i % static_cast<std::size_t>(toy.table.size()) == 0) {
        continue;  // padding row: never read
      }
      const double numeric = oracle::central_difference(p_views[t].data + i, loss, step);
      worst = std::max(worst, oracle::relative_error(g_views[t].data[i], numeric));
    }
  }
  return worst;
}


// Class scores of the toy batch under the toy parameters.
inline Eigen::MatrixXd toy_scores(HeadMode mode) {
  const Toy toy = make_toy();
  const EncoderParams p = toy_params(toy, mode);
  return class_scores(p, forward(p, toy.batch, toy.table));
}

// Worst relative error of a loss's score gradient against central differences.
inline double max_loss_gradient_error(Eigen::MatrixXd scores,
                                      const std::function<LossOutput(const Eigen::MatrixXd&)>& loss,
                                      double step = 1e-4) {
  const Eigen::MatrixXd g = loss(scores).score_gradients;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const double numeric =
        oracle::central_difference(scores.data() + i, [&] { return loss(scores).value; }, step);
    worst = std::max(worst, oracle::relative_error(g.data()[i], numeric));
  }
  return worst;
}

}  // namespace fixture
