#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "openintent/detector.hpp"
#include "openintent/encoder.hpp"
#include "openintent/evaluation.hpp"
#include "openintent/objective.hpp"
#include "openintent/trainer.hpp"

namespace openintent {

inline constexpr int kCheckpointVersion = 1;
inline constexpr int kDetectorVersion = 1;

// Everything needed to run a trained encoder on new text.
struct Checkpoint {
  EncoderParams params;
  std::vector<std::string> classes;  // known classes, index = head column
  std::size_t max_len = 0;
  std::size_t embedding_dim = 0;
  LmclConfig lmcl;
};

// CBOR document with named, shaped tensors (column-major data).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Fitted LOF state plus detection settings and optional DOC thresholds.
struct DetectorFile {
  FittedLof lof;
  DetectionConfig config;
  std::vector<double> doc_thresholds;
  std::uint64_t vocab_hash = 0;
};

void save_detector(const std::filesystem::path& path, const DetectorFile& detector);
DetectorFile load_detector(const std::filesystem::path& path);

nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const DetectionConfig& cfg);
nlohmann::json to_json(const EpochRecord& record);
nlohmann::json to_json(const RunRecord& record);
nlohmann::json to_json(const AggregateCell& cell);

}  // namespace openintent
