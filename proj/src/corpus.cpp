#include "openintent/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "openintent/errors.hpp"

namespace openintent {

namespace fs = std::filesystem;

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kValidation:
      return "validation";
    case Split::kTest:
      return "test";
  }
  return "unknown";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "validation" || name == "valid" || name == "dev") return Split::kValidation;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

DatasetFormat parse_dataset_format(std::string_view name) {
  if (name == "snips") return DatasetFormat::kSnips;
  if (name == "atis") return DatasetFormat::kAtis;
  throw ConfigError("unknown dataset format '" + std::string(name) + "' (expected snips|atis)");
}

std::string_view dataset_format_name(DatasetFormat format) {
  return format == DatasetFormat::kSnips ? "snips" : "atis";
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  };
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      tokens.emplace_back(1, raw);
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return tokens;
}

// ---------------------------------------------------------------------------
// Corpus

Corpus::Corpus(std::vector<Utterance> utterances, std::size_t max_len)
    : utterances_(std::move(utterances)) {
  std::set<std::string> classes;
  std::size_t longest_train = 0;
  std::size_t longest_any = 0;
  for (std::size_t i = 0; i < utterances_.size(); ++i) {
    const auto& u = utterances_[i];
    if (u.tokens.empty()) {
      throw ValidationError("utterance " + std::to_string(i) + " has no tokens");
    }
    if (u.label.empty()) {
      throw ValidationError("utterance " + std::to_string(i) + " has an empty label");
    }
    classes.insert(u.label);
    longest_any = std::max(longest_any, u.tokens.size());
    if (u.split == Split::kTrain) longest_train = std::max(longest_train, u.tokens.size());
  }
  classes_.assign(classes.begin(), classes.end());
  if (max_len > 0) {
    max_len_ = max_len;
  } else {
    max_len_ = std::max<std::size_t>(1, longest_train > 0 ? longest_train : longest_any);
  }
}

int Corpus::class_index(std::string_view label) const {
  auto it = std::lower_bound(classes_.begin(), classes_.end(), label);
  if (it == classes_.end() || *it != label) return -1;
  return static_cast<int>(it - classes_.begin());
}

std::vector<std::size_t> Corpus::ids(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < utterances_.size(); ++i) {
    if (utterances_[i].split == split) out.push_back(i);
  }
  return out;
}

std::size_t Corpus::count(Split split) const {
  return static_cast<std::size_t>(std::count_if(
      utterances_.begin(), utterances_.end(), [&](const Utterance& u) { return u.split == split; }));
}

std::map<std::string, std::size_t> Corpus::train_class_counts() const {
  std::map<std::string, std::size_t> counts;
  for (const auto& c : classes_) counts[c] = 0;
  for (const auto& u : utterances_) {
    if (u.split == Split::kTrain) ++counts[u.label];
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Dataset files

namespace {

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string location(const fs::path& file, std::size_t line_no) {
  return file.string() + ":" + std::to_string(line_no);
}

std::ifstream open_or_throw(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ValidationError("cannot open " + file.string());
  return in;
}

void read_tab_separated(const fs::path& file, Split split, std::vector<Utterance>& out) {
  auto in = open_or_throw(file);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(std::move(line));
    if (is_blank(line)) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw ParseError(location(file, line_no) + ": expected text<TAB>label");
    }
    std::string text = trim(std::string_view(line).substr(0, tab));
    std::string label = trim(std::string_view(line).substr(tab + 1));
    if (line_no == 1 && text == "text" && label == "label") continue;
    auto tokens = tokenize(text);
    if (tokens.empty() || label.empty()) {
      throw ParseError(location(file, line_no) + ": empty text or label");
    }
    out.push_back({std::move(tokens), std::move(label), split});
  }
}

// One file per intent; the file stem is the label.
void read_intent_directory(const fs::path& dir, Split split, std::vector<Utterance>& out) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    const std::string label = file.stem().string();
    auto in = open_or_throw(file);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      line = strip_cr(std::move(line));
      if (is_blank(line)) continue;
      auto tokens = tokenize(line);
      if (tokens.empty()) throw ParseError(location(file, line_no) + ": empty utterance");
      out.push_back({std::move(tokens), label, split});
    }
  }
}

void read_atis(const fs::path& file, Split split, std::vector<Utterance>& out) {
  auto in = open_or_throw(file);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(std::move(line));
    if (is_blank(line)) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError(location(file, line_no) + ": expected words<TAB>slots intent");
    }
    std::istringstream words(line.substr(0, tab));
    std::vector<std::string> raw;
    for (std::string w; words >> w;) raw.push_back(w);
    if (!raw.empty() && raw.front() == "BOS") raw.erase(raw.begin());
    if (!raw.empty() && raw.back() == "EOS") raw.pop_back();
    std::string text;
    for (const auto& w : raw) {
      if (!text.empty()) text.push_back(' ');
      text += w;
    }
    std::istringstream tags(line.substr(tab + 1));
    std::string label;
    for (std::string t; tags >> t;) label = t;
    auto tokens = tokenize(text);
    if (tokens.empty() || label.empty()) {
      throw ParseError(location(file, line_no) + ": empty text or intent label");
    }
    out.push_back({std::move(tokens), std::move(label), split});
  }
}

bool name_matches_split(const std::string& filename, Split split) {
  std::vector<std::string> parts;
  std::string current;
  for (char c : filename) {
    if (c == '.' || c == '_' || c == '-') {
      parts.push_back(current);
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  parts.push_back(current);
  auto has = [&](std::string_view key) {
    return std::find(parts.begin(), parts.end(), key) != parts.end();
  };
  switch (split) {
    case Split::kTrain:
      return has("train");
    case Split::kValidation:
      return has("valid") || has("validation") || has("dev");
    case Split::kTest:
      return has("test");
  }
  return false;
}

fs::path find_split_entry(const fs::path& dir, Split split) {
  std::vector<fs::path> matches;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (name_matches_split(entry.path().filename().string(), split)) {
      matches.push_back(entry.path());
    }
  }
  if (matches.empty()) {
    throw ValidationError("no " + std::string(split_name(split)) + " split found in " +
                          dir.string());
  }
  if (matches.size() > 1) {
    std::sort(matches.begin(), matches.end());
    throw ValidationError("ambiguous " + std::string(split_name(split)) + " split in " +
                          dir.string() + ": " + matches[0].filename().string() + ", " +
                          matches[1].filename().string());
  }
  return matches.front();
}

}  // namespace

std::vector<Utterance> read_split_file(const fs::path& file, DatasetFormat format, Split split) {
  std::vector<Utterance> out;
  if (format == DatasetFormat::kAtis) {
    read_atis(file, split, out);
  } else if (fs::is_directory(file)) {
    read_intent_directory(file, split, out);
  } else {
    read_tab_separated(file, split, out);
  }
  return out;
}

Corpus load_corpus(const fs::path& path, DatasetFormat format, std::size_t max_len) {
  if (!fs::is_directory(path)) {
    throw ValidationError("dataset directory not found: " + path.string());
  }
  std::vector<Utterance> all;
  for (Split split : {Split::kTrain, Split::kValidation, Split::kTest}) {
    auto part = read_split_file(find_split_entry(path, split), format, split);
    if (part.empty()) {
      throw ValidationError("empty " + std::string(split_name(split)) + " split in " +
                            path.string());
    }
    all.insert(all.end(), std::make_move_iterator(part.begin()),
               std::make_move_iterator(part.end()));
  }
  return Corpus(std::move(all), max_len);
}

// ---------------------------------------------------------------------------
// Embeddings

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash) {
  for (char c : bytes) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 1099511628211ULL;
  }
  return hash;
}

EmbeddingTable::EmbeddingTable(std::vector<std::string> words, Eigen::MatrixXd vectors)
    : words_(std::move(words)), vectors_(std::move(vectors)) {
  if (static_cast<std::size_t>(vectors_.rows()) != words_.size()) {
    throw ValidationError("embedding rows do not match vocabulary size");
  }
  if (words_.size() < 2 || words_[kPadIndex] != kPadToken || words_[kUnkIndex] != kUnkToken) {
    throw ValidationError("vocabulary must start with the padding and OOV tokens");
  }
  if (!vectors_.row(kPadIndex).isZero(0.0)) {
    throw ValidationError("padding embedding must be all-zero");
  }
  index_.reserve(words_.size());
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], static_cast<int>(i)).second) {
      throw ValidationError("duplicate vocabulary entry '" + words_[i] + "'");
    }
  }
}

int EmbeddingTable::lookup(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnkIndex : it->second;
}

std::uint64_t EmbeddingTable::vocab_hash() const {
  std::uint64_t h = fnv1a(std::to_string(dim()));
  for (const auto& w : words_) {
    h = fnv1a(w, h);
    h = fnv1a("\n", h);
  }
  return h;
}

Eigen::VectorXd oov_vector(std::string_view word, std::size_t dim, std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(fnv1a(word)),
                    static_cast<std::uint32_t>(fnv1a(word) >> 32),
                    static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> uniform(-0.25, 0.25);
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = uniform(rng);
  return v;
}

EmbeddingTable build_embeddings(const Corpus& corpus, const fs::path& pretrained_path,
                                std::size_t dim, std::uint64_t oov_seed) {
  if (dim == 0) throw ConfigError("embedding dimension must be positive");
  std::vector<std::string> words{std::string(kPadToken), std::string(kUnkToken)};
  std::unordered_map<std::string, int> index{{words[0], 0}, {words[1], 1}};
  for (const auto& u : corpus.utterances()) {
    for (const auto& t : u.tokens) {
      if (index.emplace(t, static_cast<int>(words.size())).second) words.push_back(t);
    }
  }

  const auto d = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd vectors(static_cast<Eigen::Index>(words.size()), d);
  vectors.row(kPadIndex).setZero();
  for (std::size_t i = 1; i < words.size(); ++i) {
    vectors.row(static_cast<Eigen::Index>(i)) = oov_vector(words[i], dim, oov_seed).transpose();
  }

  std::size_t hits = 0;
  if (!pretrained_path.empty()) {
    std::ifstream in(pretrained_path);
    if (!in) throw ValidationError("embedding file not found: " + pretrained_path.string());
    std::vector<bool> seen(words.size(), false);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      line = strip_cr(std::move(line));
      if (is_blank(line)) continue;
      const auto space = line.find(' ');
      if (space == std::string::npos) {
        throw ParseError(location(pretrained_path, line_no) + ": expected word followed by floats");
      }
      const std::size_t fields = static_cast<std::size_t>(
          std::count(line.begin() + static_cast<std::ptrdiff_t>(space), line.end(), ' '));
      if (fields != dim) {
        throw ValidationError(location(pretrained_path, line_no) + ": expected " +
                              std::to_string(dim) + " values, found " + std::to_string(fields));
      }
      auto it = index.find(line.substr(0, space));
      if (it == index.end() || it->second == kPadIndex || seen[it->second]) continue;
      seen[it->second] = true;
      ++hits;
      const char* p = line.data() + space + 1;
      const char* end = line.data() + line.size();
      for (Eigen::Index j = 0; j < d; ++j) {
        double value = 0.0;
        auto [next, ec] = std::from_chars(p, end, value);
        if (ec != std::errc()) {
          throw ParseError(location(pretrained_path, line_no) + ": bad float in column " +
                           std::to_string(j + 1));
        }
        vectors(it->second, j) = value;
        p = next;
        if (p < end && *p == ' ') ++p;
      }
    }
  }
  EmbeddingTable table(std::move(words), std::move(vectors));
  table.set_pretrained_hits(hits);
  return table;
}

IndexBatch encode_tokens(const std::vector<std::vector<std::string>>& sentences,
                         const EmbeddingTable& table, std::size_t max_len) {
  IndexBatch batch;
  batch.rows = sentences.size();
  batch.max_len = max_len;
  batch.indices.assign(batch.rows * max_len, kPadIndex);
  batch.lengths.resize(batch.rows);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const auto& tokens = sentences[r];
    const std::size_t len = std::min(tokens.size(), max_len);
    batch.lengths[r] = len;
    for (std::size_t t = 0; t < len; ++t) {
      batch.indices[r * max_len + t] = table.lookup(tokens[t]);
    }
  }
  return batch;
}

IndexBatch encode_batch(const Corpus& corpus, const EmbeddingTable& table,
                        const std::vector<std::size_t>& ids) {
  IndexBatch batch;
  batch.rows = ids.size();
  batch.max_len = corpus.max_len();
  batch.indices.assign(batch.rows * batch.max_len, kPadIndex);
  batch.lengths.resize(batch.rows);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto& tokens = corpus.at(ids[r]).tokens;
    const std::size_t len = std::min(tokens.size(), batch.max_len);
    batch.lengths[r] = len;
    for (std::size_t t = 0; t < len; ++t) {
      batch.indices[r * batch.max_len + t] = table.lookup(tokens[t]);
    }
  }
  return batch;
}

}  // namespace openintent
