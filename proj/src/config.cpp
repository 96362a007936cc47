#include "openintent/config.hpp"

#include <cstdlib>
#include <fstream>

#include "openintent/errors.hpp"
#include "openintent/serialization.hpp"

namespace openintent {

using nlohmann::json;

ExperimentSettings RunConfig::experiment() const {
  ExperimentSettings s;
  s.train = train;
  s.detect = detect;
  s.fractions = fractions;
  s.methods = methods;
  s.runs = runs;
  s.base_seed = base_seed;
  s.jobs = jobs;
  return s;
}

const DatasetConfig& RunConfig::dataset(std::string_view name) const {
  if (name.empty()) {
    if (datasets.empty()) throw ConfigError("no datasets configured");
    return datasets.front();
  }
  for (const auto& d : datasets) {
    if (d.name == name) return d;
  }
  throw ConfigError("dataset '" + std::string(name) + "' is not configured");
}

json default_config_json() {
  RunConfig defaults;
  return to_json(defaults);
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  std::string pointer;
  std::string_view key = assignment.substr(0, eq);
  while (!key.empty()) {
    const auto dot = key.find('.');
    pointer += "/" + std::string(key.substr(0, dot));
    key = dot == std::string_view::npos ? std::string_view() : key.substr(dot + 1);
  }
  const std::string raw(assignment.substr(eq + 1));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  try {
    doc[json::json_pointer(pointer)] = std::move(value);
  } catch (const json::exception& e) {
    throw ConfigError("cannot apply override '" + std::string(assignment) + "': " + e.what());
  }
}

namespace {

void check_keys(const json& doc, const json& schema, const std::string& where) {
  for (const auto& [key, value] : doc.items()) {
    if (!schema.contains(key)) throw ConfigError("unknown config key '" + where + key + "'");
    if (key != "datasets" && value.is_object()) check_keys(value, schema.at(key), where + key + ".");
  }
}

std::filesystem::path resolve(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

}  // namespace

RunConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
  json merged = default_config_json();
  check_keys(doc, merged, "");
  merged.merge_patch(doc);
  RunConfig cfg;
  try {
    for (const auto& d : merged.at("datasets")) {
      for (const auto& [key, _] : d.items()) {
        if (key != "name" && key != "path" && key != "format") {
          throw ConfigError("unknown dataset key '" + key + "'");
        }
      }
      DatasetConfig dc;
      dc.name = d.at("name").get<std::string>();
      dc.path = resolve(d.at("path").get<std::string>(), base_dir);
      dc.format = parse_dataset_format(d.value("format", "snips"));
      cfg.datasets.push_back(std::move(dc));
    }
    const json& emb = merged.at("embedding");
    cfg.embedding_path = resolve(emb.at("path").get<std::string>(), base_dir);
    cfg.embedding_dim = emb.at("dim").get<std::size_t>();
    cfg.oov_seed = emb.at("oov_seed").get<std::uint64_t>();

    const json& enc = merged.at("encoder");
    cfg.train.hidden_size = enc.at("hidden_size").get<std::size_t>();
    cfg.max_len = enc.at("max_len").get<std::size_t>();
    cfg.train.trainable_embeddings = enc.at("trainable_embeddings").get<bool>();

    const json& tr = merged.at("train");
    cfg.train.batch_size = tr.at("batch_size").get<std::size_t>();
    cfg.train.max_epochs = tr.at("max_epochs").get<std::size_t>();
    cfg.train.patience = tr.at("patience").get<std::size_t>();
    cfg.train.learning_rate = tr.at("learning_rate").get<double>();
    cfg.train.beta1 = tr.at("beta1").get<double>();
    cfg.train.beta2 = tr.at("beta2").get<double>();
    cfg.train.adam_epsilon = tr.at("adam_epsilon").get<double>();
    cfg.train.clip_norm = tr.at("clip_norm").get<double>();
    cfg.train.seed = tr.at("seed").get<std::uint64_t>();
    cfg.train.loss_mode = parse_head_mode(tr.at("loss").get<std::string>());

    cfg.train.lmcl.scale = merged.at("lmcl").at("s").get<double>();
    cfg.train.lmcl.margin = merged.at("lmcl").at("m").get<double>();

    const json& det = merged.at("detect");
    cfg.detect.lof_k = det.at("lof_k").get<std::size_t>();
    cfg.detect.lof_threshold = det.at("lof_threshold").get<double>();
    cfg.detect.msp_threshold = det.at("msp_threshold").get<double>();
    cfg.detect.doc_risk_factor = det.at("doc_risk_factor").get<double>();

    const json& ex = merged.at("experiment");
    cfg.fractions = ex.at("fractions").get<std::vector<double>>();
    cfg.methods.clear();
    for (const auto& m : ex.at("methods")) cfg.methods.push_back(parse_method(m.get<std::string>()));
    cfg.runs = ex.at("runs").get<std::size_t>();
    cfg.base_seed = ex.at("base_seed").get<std::uint64_t>();
    cfg.jobs = ex.at("jobs").get<std::size_t>();

    cfg.output_dir = merged.at("output_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  cfg.train.validate();
  cfg.detect.validate();
  if (cfg.embedding_dim == 0) throw ConfigError("embedding.dim must be positive");
  for (double f : cfg.fractions) known_class_count(2, f);  // range check
  return cfg;
}

json to_json(const RunConfig& cfg) {
  json datasets = json::array();
  for (const auto& d : cfg.datasets) {
    datasets.push_back(
        {{"name", d.name}, {"path", d.path.string()}, {"format", dataset_format_name(d.format)}});
  }
  json methods = json::array();
  for (Method m : cfg.methods) methods.push_back(method_id(m));
  const json train = to_json(cfg.train);
  json detect = to_json(cfg.detect);
  detect.erase("metric");
  return {{"datasets", datasets},
          {"embedding",
           {{"path", cfg.embedding_path.string()}, {"dim", cfg.embedding_dim}, {"oov_seed", cfg.oov_seed}}},
          {"encoder",
           {{"hidden_size", cfg.train.hidden_size},
            {"max_len", cfg.max_len},
            {"trainable_embeddings", cfg.train.trainable_embeddings}}},
          {"train",
           {{"batch_size", train["batch_size"]},
            {"max_epochs", train["max_epochs"]},
            {"patience", train["patience"]},
            {"learning_rate", train["learning_rate"]},
            {"beta1", train["beta1"]},
            {"beta2", train["beta2"]},
            {"adam_epsilon", train["adam_epsilon"]},
            {"clip_norm", train["clip_norm"]},
            {"seed", train["seed"]},
            {"loss", train["loss"]}}},
          {"lmcl", train["lmcl"]},
          {"detect", detect},
          {"experiment",
           {{"fractions", cfg.fractions},
            {"methods", methods},
            {"runs", cfg.runs},
            {"base_seed", cfg.base_seed},
            {"jobs", cfg.jobs}}},
          {"output_dir", cfg.output_dir.string()}};
}

RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  json doc = json::object();
  std::filesystem::path base;
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read config file " + file.string());
    doc = json::parse(in, nullptr, false, /*ignore_comments=*/true);
    if (doc.is_discarded() || !doc.is_object()) {
      throw ConfigError("config file " + file.string() + " is not a JSON object");
    }
    base = std::filesystem::absolute(file).parent_path();
  }
  for (const auto& o : overrides) apply_override(doc, o);
  if (const char* out = std::getenv(kOutputDirEnv); out && *out) doc["output_dir"] = out;
  return parse_config(doc, base);
}

}  // namespace openintent
