#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "openintent/corpus.hpp"
#include "openintent/detector.hpp"
#include "openintent/evaluation.hpp"
#include "openintent/trainer.hpp"

namespace openintent {

struct DatasetConfig {
  std::string name;
  std::filesystem::path path;
  DatasetFormat format = DatasetFormat::kSnips;
};

// Resolved settings for every subcommand. Serialized form:
//
//   datasets[]          {name, path, format: snips|atis}
//   embedding.*         path ("" = seeded random vectors), dim, oov_seed
//   encoder.*           hidden_size, max_len (0 = longest training utterance),
//                       trainable_embeddings
//   train.*             batch_size, max_epochs, patience, learning_rate, beta1,
//                       beta2, adam_epsilon, clip_norm, seed, loss
//   lmcl.*              s, m
//   detect.*            lof_k, lof_threshold, msp_threshold, doc_risk_factor
//   experiment.*        fractions, methods, runs, base_seed, jobs
//   output_dir
struct RunConfig {
  std::vector<DatasetConfig> datasets;
  std::filesystem::path embedding_path;
  std::size_t embedding_dim = 300;
  std::uint64_t oov_seed = 0;
  std::size_t max_len = 0;
  TrainConfig train;
  DetectionConfig detect;
  std::vector<double> fractions{0.25, 0.50, 0.75};
  std::vector<Method> methods{std::begin(kAllMethods), std::end(kAllMethods)};
  std::size_t runs = 10;
  std::uint64_t base_seed = 0;
  std::size_t jobs = 1;
  std::filesystem::path output_dir = "runs";

  ExperimentSettings experiment() const;
  const DatasetConfig& dataset(std::string_view name) const;
};

nlohmann::json default_config_json();

// `a.b.c=value`; value is parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::json& doc, std::string_view assignment);

// Validates keys against the defaults; relative paths resolve against base_dir.
RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});

nlohmann::json to_json(const RunConfig& cfg);

inline constexpr const char* kOutputDirEnv = "OPENINTENT_OUTPUT_DIR";

// Defaults <- config file (if any) <- overrides <- $OPENINTENT_OUTPUT_DIR.
RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

}  // namespace openintent
