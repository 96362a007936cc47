#include "openintent/serialization.hpp"

#include <fstream>
#include <iterator>

#include "openintent/errors.hpp"

namespace openintent {

using nlohmann::json;

namespace {

json tensor_json(const Eigen::MatrixXd& m) {
  return {{"rows", m.rows()},
          {"cols", m.cols()},
          {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Eigen::MatrixXd tensor_from_json(const json& j, const std::string& name, Eigen::Index rows,
                                 Eigen::Index cols) {
  const auto r = j.at("rows").get<Eigen::Index>();
  const auto c = j.at("cols").get<Eigen::Index>();
  if ((rows >= 0 && r != rows) || (cols >= 0 && c != cols)) {
    throw CompatibilityError("tensor '" + name + "' has shape " + std::to_string(r) + "x" +
                             std::to_string(c) + ", expected " + std::to_string(rows) + "x" +
                             std::to_string(cols));
  }
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != r * c) {
    throw CompatibilityError("tensor '" + name + "' data length does not match its shape");
  }
  return Eigen::Map<const Eigen::MatrixXd>(data.data(), r, c);
}

void write_cbor(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  const auto bytes = json::to_cbor(doc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

json read_cbor(const std::filesystem::path& path, std::string_view format, int version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  json doc;
  try {
    doc = json::from_cbor(bytes);
  } catch (const json::exception& e) {
    throw CompatibilityError(path.string() + " is not a valid " + std::string(format) +
                             " file: " + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != format) {
    throw CompatibilityError(path.string() + " is not a " + std::string(format) + " file");
  }
  if (doc.value("version", 0) != version) {
    throw CompatibilityError(path.string() + ": unsupported version " +
                             std::to_string(doc.value("version", 0)));
  }
  return doc;
}

json cell_json(const LstmCellParams& cell) {
  return {{"input_weights", tensor_json(cell.input_weights)},
          {"hidden_weights", tensor_json(cell.hidden_weights)},
          {"bias", tensor_json(cell.bias)}};
}

LstmCellParams cell_from_json(const json& j, const std::string& prefix, Eigen::Index m,
                              Eigen::Index h) {
  LstmCellParams cell;
  cell.input_weights = tensor_from_json(j.at("input_weights"), prefix + ".input_weights", 4 * h, m);
  cell.hidden_weights =
      tensor_from_json(j.at("hidden_weights"), prefix + ".hidden_weights", 4 * h, h);
  cell.bias = tensor_from_json(j.at("bias"), prefix + ".bias", 4 * h, 1);
  return cell;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto& p = ckpt.params;
  json tensors_doc = {{"forward", cell_json(p.forward_cell)},
                      {"backward", cell_json(p.backward_cell)},
                      {"head_weights", tensor_json(p.head_weights)},
                      {"head_bias", tensor_json(p.head_bias)}};
  if (p.embeddings) tensors_doc["embeddings"] = tensor_json(*p.embeddings);
  json doc = {{"format", "openintent-checkpoint"},
              {"version", kCheckpointVersion},
              {"mode", head_mode_name(p.mode)},
              {"hidden_size", p.hidden_size()},
              {"embedding_dim", ckpt.embedding_dim},
              {"max_len", ckpt.max_len},
              {"num_classes", p.num_classes()},
              {"classes", ckpt.classes},
              {"vocab_hash", p.vocab_hash},
              {"lmcl", {{"s", ckpt.lmcl.scale}, {"m", ckpt.lmcl.margin}}},
              {"tensors", tensors_doc}};
  write_cbor(path, doc);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const json doc = read_cbor(path, "openintent-checkpoint", kCheckpointVersion);
  try {
    Checkpoint ckpt;
    const auto h = doc.at("hidden_size").get<Eigen::Index>();
    const auto m = doc.at("embedding_dim").get<Eigen::Index>();
    const auto c = doc.at("num_classes").get<Eigen::Index>();
    ckpt.embedding_dim = static_cast<std::size_t>(m);
    ckpt.max_len = doc.at("max_len").get<std::size_t>();
    ckpt.classes = doc.at("classes").get<std::vector<std::string>>();
    if (static_cast<Eigen::Index>(ckpt.classes.size()) != c) {
      throw CompatibilityError("class list length does not match num_classes");
    }
    ckpt.lmcl.scale = doc.at("lmcl").at("s").get<double>();
    ckpt.lmcl.margin = doc.at("lmcl").at("m").get<double>();
    auto& p = ckpt.params;
    p.mode = parse_head_mode(doc.at("mode").get<std::string>());
    p.vocab_hash = doc.at("vocab_hash").get<std::uint64_t>();
    const json& t = doc.at("tensors");
    p.forward_cell = cell_from_json(t.at("forward"), "forward", m, h);
    p.backward_cell = cell_from_json(t.at("backward"), "backward", m, h);
    p.head_weights = tensor_from_json(t.at("head_weights"), "head_weights", 2 * h, c);
    p.head_bias = tensor_from_json(t.at("head_bias"), "head_bias", c, 1);
    if (t.contains("embeddings")) {
      p.embeddings = tensor_from_json(t.at("embeddings"), "embeddings", -1, m);
    }
    return ckpt;
  } catch (const json::exception& e) {
    throw CompatibilityError(path.string() + ": malformed checkpoint: " + e.what());
  } catch (const ConfigError& e) {
    throw CompatibilityError(path.string() + ": " + e.what());
  }
}

void save_detector(const std::filesystem::path& path, const DetectorFile& detector) {
  const auto& lof = detector.lof;
  const Eigen::VectorXd& kdist = lof.kdist();
  const Eigen::VectorXd& lrd = lof.lrd();
  json doc = {{"format", "openintent-detector"},
              {"version", kDetectorVersion},
              {"k", lof.k()},
              {"reference", tensor_json(lof.reference())},
              {"kdist", std::vector<double>(kdist.data(), kdist.data() + kdist.size())},
              {"lrd", std::vector<double>(lrd.data(), lrd.data() + lrd.size())},
              {"neighbors", lof.neighbors()},
              {"config", to_json(detector.config)},
              {"doc_thresholds", detector.doc_thresholds},
              {"vocab_hash", detector.vocab_hash}};
  write_cbor(path, doc);
}

DetectorFile load_detector(const std::filesystem::path& path) {
  const json doc = read_cbor(path, "openintent-detector", kDetectorVersion);
  try {
    DetectorFile out;
    Eigen::MatrixXd reference = tensor_from_json(doc.at("reference"), "reference", -1, -1);
    const auto kdist = doc.at("kdist").get<std::vector<double>>();
    const auto lrd = doc.at("lrd").get<std::vector<double>>();
    out.lof = FittedLof::from_state(
        std::move(reference), doc.at("k").get<std::size_t>(),
        Eigen::Map<const Eigen::VectorXd>(kdist.data(), static_cast<Eigen::Index>(kdist.size())),
        Eigen::Map<const Eigen::VectorXd>(lrd.data(), static_cast<Eigen::Index>(lrd.size())),
        doc.at("neighbors").get<std::vector<std::vector<std::size_t>>>());
    const json& cfg = doc.at("config");
    out.config.lof_k = cfg.at("lof_k").get<std::size_t>();
    out.config.lof_threshold = cfg.at("lof_threshold").get<double>();
    out.config.msp_threshold = cfg.at("msp_threshold").get<double>();
    out.config.doc_risk_factor = cfg.at("doc_risk_factor").get<double>();
    out.doc_thresholds = doc.at("doc_thresholds").get<std::vector<double>>();
    out.vocab_hash = doc.at("vocab_hash").get<std::uint64_t>();
    return out;
  } catch (const json::exception& e) {
    throw CompatibilityError(path.string() + ": malformed detector file: " + e.what());
  }
}

json to_json(const TrainConfig& cfg) {
  return {{"batch_size", cfg.batch_size},
          {"max_epochs", cfg.max_epochs},
          {"patience", cfg.patience},
          {"learning_rate", cfg.learning_rate},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"adam_epsilon", cfg.adam_epsilon},
          {"clip_norm", cfg.clip_norm},
          {"seed", cfg.seed},
          {"loss", head_mode_name(cfg.loss_mode)},
          {"hidden_size", cfg.hidden_size},
          {"trainable_embeddings", cfg.trainable_embeddings},
          {"lmcl", {{"s", cfg.lmcl.scale}, {"m", cfg.lmcl.margin}}}};
}

json to_json(const DetectionConfig& cfg) {
  return {{"lof_k", cfg.lof_k},
          {"lof_threshold", cfg.lof_threshold},
          {"msp_threshold", cfg.msp_threshold},
          {"doc_risk_factor", cfg.doc_risk_factor},
          {"metric", "euclidean"}};
}

json to_json(const EpochRecord& record) {
  return {{"epoch", record.epoch}, {"train_loss", record.train_loss}, {"val_acc", record.val_acc}};
}

namespace {

std::string label_name(int label, const std::vector<std::string>& known) {
  return label == kUnknown ? std::string("UNKNOWN") : known.at(static_cast<std::size_t>(label));
}

}  // namespace

json to_json(const RunRecord& record) {
  json j = {{"dataset", record.dataset},
            {"fraction", record.fraction},
            {"method", method_id(record.method)},
            {"seed", record.seed},
            {"ok", record.ok}};
  if (!record.ok) {
    j["error"] = record.error;
    return j;
  }
  j["known_classes"] = record.known_classes;
  j["macro_f1_all"] = record.macro_f1_all;
  j["f1_unknown"] = record.f1_unknown;
  json counts = json::array();
  for (const auto& c : record.counts) {
    counts.push_back({{"label", label_name(c.label, record.known_classes)},
                      {"tp", c.tp},
                      {"fp", c.fp},
                      {"fn", c.fn},
                      {"f1", c.f1()}});
  }
  j["confusion"] = counts;
  return j;
}

json to_json(const AggregateCell& cell) {
  return {{"dataset", cell.dataset},
          {"fraction", cell.fraction},
          {"method", method_id(cell.method)},
          {"runs_completed", cell.runs_completed},
          {"runs_expected", cell.runs_expected},
          {"complete", cell.complete()},
          {"macro_f1_all", cell.macro_f1_all},
          {"f1_unknown", cell.f1_unknown}};
}

}  // namespace openintent
