#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace openintent {

enum class Split { kTrain, kValidation, kTest };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct Utterance {
  std::vector<std::string> tokens;
  std::string label;
  Split split = Split::kTrain;
};

// On-disk dataset layouts.
//  kSnips: per-split `text<TAB>label` files, or per-split directories holding
//          one file per intent (file stem = label, one utterance per line).
//  kAtis:  per-split IOB files, `BOS w1 .. wn EOS<TAB>O .. O intent`.
enum class DatasetFormat { kSnips, kAtis };

DatasetFormat parse_dataset_format(std::string_view name);
std::string_view dataset_format_name(DatasetFormat format);

// Lowercases, splits on whitespace and splits punctuation into separate tokens.
std::vector<std::string> tokenize(std::string_view text);

class Corpus {
 public:
  Corpus() = default;
  // max_len == 0 selects the longest training utterance.
  Corpus(std::vector<Utterance> utterances, std::size_t max_len = 0);

  const std::vector<Utterance>& utterances() const { return utterances_; }
  const Utterance& at(std::size_t id) const { return utterances_.at(id); }
  std::size_t size() const { return utterances_.size(); }

  // Sorted union of labels over all splits.
  const std::vector<std::string>& classes() const { return classes_; }
  int class_index(std::string_view label) const;

  std::size_t max_len() const { return max_len_; }

  // Utterance ids of one split, in file order.
  std::vector<std::size_t> ids(Split split) const;
  std::size_t count(Split split) const;

  // Training-split utterance count per class.
  std::map<std::string, std::size_t> train_class_counts() const;

 private:
  std::vector<Utterance> utterances_;
  std::vector<std::string> classes_;
  std::size_t max_len_ = 0;
};

// Loads train / validation / test splits from a dataset directory.
Corpus load_corpus(const std::filesystem::path& path, DatasetFormat format,
                   std::size_t max_len = 0);

// Reads one split file in the given format.
std::vector<Utterance> read_split_file(const std::filesystem::path& file,
                                       DatasetFormat format, Split split);

inline constexpr int kPadIndex = 0;
inline constexpr int kUnkIndex = 1;
inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::vector<std::string> words, Eigen::MatrixXd vectors);

  std::size_t size() const { return words_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(vectors_.cols()); }

  // Index of a word, or kUnkIndex.
  int lookup(std::string_view word) const;
  const std::string& word(int index) const { return words_.at(static_cast<std::size_t>(index)); }
  const std::vector<std::string>& words() const { return words_; }

  // Row-per-word matrix; row kPadIndex is zero.
  const Eigen::MatrixXd& vectors() const { return vectors_; }
  Eigen::MatrixXd& mutable_vectors() { return vectors_; }

  // Number of corpus words found in the pretrained file.
  std::size_t pretrained_hits() const { return pretrained_hits_; }
  void set_pretrained_hits(std::size_t hits) { pretrained_hits_ = hits; }

  // FNV-1a over the vocabulary in index order and the dimension.
  std::uint64_t vocab_hash() const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
  Eigen::MatrixXd vectors_;
  std::size_t pretrained_hits_ = 0;
};

// Deterministic OOV vector, uniform in [-0.25, 0.25]^dim, seeded from the word.
Eigen::VectorXd oov_vector(std::string_view word, std::size_t dim, std::uint64_t seed = 0);

// Vocabulary covers every token of every split, in first-occurrence order,
// after the reserved padding and OOV entries. An empty pretrained path gives
// an all-OOV table.
EmbeddingTable build_embeddings(const Corpus& corpus,
                                const std::filesystem::path& pretrained_path,
                                std::size_t dim, std::uint64_t oov_seed = 0);

// Row-major |ids| x max_len matrix of vocabulary indices, right-padded.
struct IndexBatch {
  std::size_t rows = 0;
  std::size_t max_len = 0;
  std::vector<int> indices;
  std::vector<std::size_t> lengths;

  int at(std::size_t row, std::size_t t) const { return indices[row * max_len + t]; }
};

IndexBatch encode_batch(const Corpus& corpus, const EmbeddingTable& table,
                        const std::vector<std::size_t>& ids);

// Encodes raw token lists (for inference on text outside the corpus).
IndexBatch encode_tokens(const std::vector<std::vector<std::string>>& sentences,
                         const EmbeddingTable& table, std::size_t max_len);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 14695981039346656037ULL);

}  // namespace openintent
