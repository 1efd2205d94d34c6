#pragma once

#include <poseval/core.hpp>

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace poseval {

struct ConfigError : Error {
  ConfigError(const std::string& key, int line, const std::string& what)
      : Error(ErrorClass::validation,
              "config: " + (key.empty() ? std::string() : "key '" + key + "' ") +
                  (line > 0 ? "(line " + std::to_string(line) + ") " : std::string()) + what),
        key(key),
        line(line) {}
  std::string key;
  int line;
};

enum class StatsSource { train_dataset, test_dataset };
enum class PredictionKind { file, oracle, external };

inline const std::vector<std::string>& supported_datasets() {
  static const std::vector<std::string> names{"h36m", "gpa", "3dpw", "surreal"};
  return names;
}

inline const std::vector<std::string>& supported_variants() {
  static const std::vector<std::string> names{"", "optimized", "unoptimized", "retrained", "reported"};
  return names;
}

struct PredictionSource {
  PredictionKind kind = PredictionKind::oracle;
  std::map<std::string, std::string> paths;  // file: one predictions archive per dataset
  double sigma_mm = 0.0;                     // oracle
  std::uint64_t seed = 0;                    // oracle
  std::vector<std::string> command;          // external: argv
  double timeout_s = 30.0;                   // external

  bool operator==(const PredictionSource&) const = default;
};

/// Every recognised key with its default. Paths are absolute after parsing.
struct EvalConfig {
  std::string model_type;
  std::string model_name;  // defaults to model_type
  std::string variant;
  int num_workers = 1;
  bool trained_on_normalized_data = false;
  std::string output_3d = "camera_mm";
  bool video_mode = false;
  int num_joints = 16;
  int num_frames = 1;
  std::map<std::string, std::string> datasets;
  PredictionSource prediction_source;
  bool with_scale = true;
  StatsSource stats_source = StatsSource::test_dataset;
  double sample_frames_threshold_mm = 40.0;
  int min_train = 5;
  int min_test = 5;
  bool normalize_2d = true;
  bool normalize_3d = true;
  std::string train_archive;
  std::string output_dir;

  bool operator==(const EvalConfig&) const = default;
};

namespace detail {

inline int line_of(const YAML::Node& n) { return n.Mark().line >= 0 ? n.Mark().line + 1 : 0; }

template <typename T>
T scalar(const YAML::Node& n, const std::string& key, const char* type_name) {
  if (!n.IsScalar()) throw ConfigError(key, line_of(n), std::string("expected ") + type_name);
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(key, line_of(n), std::string("expected ") + type_name + ", got '" + n.Scalar() + "'");
  }
}

inline bool boolean(const YAML::Node& n, const std::string& key) {
  if (!n.IsScalar()) throw ConfigError(key, line_of(n), "expected boolean");
  const std::string& s = n.Scalar();
  if (s == "true" || s == "True" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "False" || s == "off" || s == "no") return false;
  throw ConfigError(key, line_of(n), "expected boolean, got '" + s + "'");
}

inline int integer(const YAML::Node& n, const std::string& key) {
  if (!n.IsScalar() || !std::regex_match(n.Scalar(), std::regex("[-+]?[0-9]+")))
    throw ConfigError(key, line_of(n), "expected integer" + (n.IsScalar() ? ", got '" + n.Scalar() + "'" : std::string()));
  return scalar<int>(n, key, "integer");
}

inline std::string resolve(const std::string& path, const std::filesystem::path& base) {
  if (path.empty()) return path;
  std::filesystem::path p(path);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p.lexically_normal().string();
}

inline void reject_unknown(const YAML::Node& map, const std::set<std::string>& known, const std::string& prefix) {
  for (const auto& kv : map) {
    const auto key = kv.first.Scalar();
    if (!known.count(key)) throw ConfigError(prefix + key, line_of(kv.first), "unknown key");
  }
}

inline std::string to_string(StatsSource s) { return s == StatsSource::train_dataset ? "train_dataset" : "test_dataset"; }

inline std::string to_string(PredictionKind k) {
  switch (k) {
    case PredictionKind::file: return "file";
    case PredictionKind::oracle: return "oracle";
    case PredictionKind::external: return "external";
  }
  return "oracle";
}

inline PredictionSource parse_prediction_source(const YAML::Node& n, const std::filesystem::path& base) {
  const std::string key = "prediction_source";
  if (!n.IsMap()) throw ConfigError(key, line_of(n), "expected a mapping");
  reject_unknown(n, {"type", "paths", "sigma_mm", "seed", "command", "timeout_s"}, key + ".");
  if (!n["type"]) throw ConfigError(key + ".type", line_of(n), "missing required key");
  PredictionSource p;
  const auto type = scalar<std::string>(n["type"], key + ".type", "string");
  if (type == "file") p.kind = PredictionKind::file;
  else if (type == "oracle") p.kind = PredictionKind::oracle;
  else if (type == "external") p.kind = PredictionKind::external;
  else throw ConfigError(key + ".type", line_of(n["type"]), "must be file, oracle or external");

  if (const auto paths = n["paths"]) {
    if (!paths.IsMap()) throw ConfigError(key + ".paths", line_of(paths), "expected a mapping of dataset to path");
    for (const auto& kv : paths)
      p.paths[kv.first.Scalar()] = resolve(scalar<std::string>(kv.second, key + ".paths." + kv.first.Scalar(), "path"), base);
  }
  if (const auto s = n["sigma_mm"]) {
    p.sigma_mm = scalar<double>(s, key + ".sigma_mm", "number");
    if (!(p.sigma_mm >= 0.0)) throw ConfigError(key + ".sigma_mm", line_of(s), "must be >= 0");
  }
  if (const auto s = n["seed"]) p.seed = scalar<std::uint64_t>(s, key + ".seed", "unsigned integer");
  if (const auto c = n["command"]) {
    if (c.IsScalar()) {
      std::istringstream words(c.Scalar());
      for (std::string w; words >> w;) p.command.push_back(w);
    } else if (c.IsSequence()) {
      for (const auto& w : c) p.command.push_back(scalar<std::string>(w, key + ".command", "string"));
    } else {
      throw ConfigError(key + ".command", line_of(c), "expected a string or list of strings");
    }
  }
  if (const auto t = n["timeout_s"]) {
    p.timeout_s = scalar<double>(t, key + ".timeout_s", "number");
    if (!(p.timeout_s > 0.0)) throw ConfigError(key + ".timeout_s", line_of(t), "must be > 0");
  }

  if (p.kind == PredictionKind::file && p.paths.empty())
    throw ConfigError(key + ".paths", line_of(n), "required for type file");
  if (p.kind == PredictionKind::external && p.command.empty())
    throw ConfigError(key + ".command", line_of(n), "required for type external");
  return p;
}

}  // namespace detail

/// Parses YAML text. Relative paths resolve against `base_dir`.
inline EvalConfig parse_config_string(const std::string& text, const std::filesystem::path& base_dir = {}) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("", e.mark.line + 1, std::string("YAML syntax: ") + e.msg);
  }
  if (!root.IsMap()) throw ConfigError("", 0, "top level must be a mapping");

  using detail::boolean;
  using detail::integer;
  using detail::line_of;
  using detail::scalar;

  detail::reject_unknown(root,
                         {"model_type", "model_name", "variant", "num_workers", "trained_on_normalized_data", "output_3d",
                          "video_mode", "num_joints", "num_frames", "datasets", "prediction_source", "with_scale",
                          "stats_source", "sample_frames_threshold_mm", "min_train", "min_test", "normalize_2d",
                          "normalize_3d", "train_archive", "output_dir"},
                         "");

  EvalConfig c;
  for (const char* required : {"model_type", "datasets", "prediction_source"})
    if (!root[required]) throw ConfigError(required, 0, "missing required key");

  c.model_type = scalar<std::string>(root["model_type"], "model_type", "string");
  if (!std::regex_match(c.model_type, std::regex("[A-Za-z0-9_.+-]+")))
    throw ConfigError("model_type", line_of(root["model_type"]), "must be an identifier");
  c.model_name = root["model_name"] ? scalar<std::string>(root["model_name"], "model_name", "string") : c.model_type;
  if (const auto n = root["variant"]) {
    c.variant = scalar<std::string>(n, "variant", "string");
    const auto& ok = supported_variants();
    if (std::find(ok.begin(), ok.end(), c.variant) == ok.end())
      throw ConfigError("variant", line_of(n), "must be one of optimized, unoptimized, retrained, reported");
  }
  if (const auto n = root["num_workers"]) {
    c.num_workers = integer(n, "num_workers");
    if (c.num_workers < 1) throw ConfigError("num_workers", line_of(n), "must be a positive integer");
  }
  if (const auto n = root["trained_on_normalized_data"]) c.trained_on_normalized_data = boolean(n, "trained_on_normalized_data");
  if (const auto n = root["output_3d"]) {
    c.output_3d = scalar<std::string>(n, "output_3d", "string");
    if (c.output_3d != "camera_mm") throw ConfigError("output_3d", line_of(n), "only camera_mm is supported");
  }
  if (const auto n = root["video_mode"]) c.video_mode = boolean(n, "video_mode");
  if (const auto n = root["num_joints"]) {
    c.num_joints = integer(n, "num_joints");
    if (c.num_joints != 14 && c.num_joints != 16) throw ConfigError("num_joints", line_of(n), "must be 14 or 16");
  }
  if (const auto n = root["num_frames"]) {
    c.num_frames = integer(n, "num_frames");
    if (c.num_frames < 1) throw ConfigError("num_frames", line_of(n), "must be >= 1");
    if (c.num_frames > 1 && !c.video_mode) throw ConfigError("num_frames", line_of(n), "> 1 requires video_mode: true");
  }

  const auto ds = root["datasets"];
  if (!ds.IsMap() || ds.size() == 0) throw ConfigError("datasets", line_of(ds), "expected a non-empty mapping");
  const auto& known = supported_datasets();
  for (const auto& kv : ds) {
    const auto name = kv.first.Scalar();
    if (std::find(known.begin(), known.end(), name) == known.end())
      throw ConfigError("datasets." + name, line_of(kv.first), "unsupported dataset (h36m, gpa, 3dpw, surreal)");
    c.datasets[name] = detail::resolve(scalar<std::string>(kv.second, "datasets." + name, "path"), base_dir);
  }

  c.prediction_source = detail::parse_prediction_source(root["prediction_source"], base_dir);
  if (c.prediction_source.kind == PredictionKind::file)
    for (const auto& [name, _] : c.datasets)
      if (!c.prediction_source.paths.count(name))
        throw ConfigError("prediction_source.paths." + name, line_of(root["prediction_source"]),
                          "no prediction file for dataset");

  if (const auto n = root["with_scale"]) c.with_scale = boolean(n, "with_scale");
  if (const auto n = root["stats_source"]) {
    const auto s = scalar<std::string>(n, "stats_source", "string");
    if (s == "train_dataset") c.stats_source = StatsSource::train_dataset;
    else if (s == "test_dataset") c.stats_source = StatsSource::test_dataset;
    else throw ConfigError("stats_source", line_of(n), "must be train_dataset or test_dataset");
  }
  if (const auto n = root["sample_frames_threshold_mm"]) {
    c.sample_frames_threshold_mm = scalar<double>(n, "sample_frames_threshold_mm", "number");
    if (!(c.sample_frames_threshold_mm >= 0.0)) throw ConfigError("sample_frames_threshold_mm", line_of(n), "must be >= 0");
  }
  if (const auto n = root["min_train"]) {
    c.min_train = integer(n, "min_train");
    if (c.min_train < 0) throw ConfigError("min_train", line_of(n), "must be >= 0");
  }
  if (const auto n = root["min_test"]) {
    c.min_test = integer(n, "min_test");
    if (c.min_test < 0) throw ConfigError("min_test", line_of(n), "must be >= 0");
  }
  if (const auto n = root["normalize_2d"]) c.normalize_2d = boolean(n, "normalize_2d");
  if (const auto n = root["normalize_3d"]) c.normalize_3d = boolean(n, "normalize_3d");
  if (const auto n = root["train_archive"]) c.train_archive = detail::resolve(scalar<std::string>(n, "train_archive", "path"), base_dir);
  if (const auto n = root["output_dir"]) c.output_dir = detail::resolve(scalar<std::string>(n, "output_dir", "path"), base_dir);

  if (c.stats_source == StatsSource::train_dataset && c.trained_on_normalized_data && c.train_archive.empty())
    throw ConfigError("train_archive", 0, "required when stats_source is train_dataset");
  return c;
}

inline EvalConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", 0, "cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_string(ss.str(), std::filesystem::absolute(path).parent_path());
}

/// YAML form accepted back by parse_config_string.
inline std::string serialize_config(const EvalConfig& c) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "model_type" << YAML::Value << c.model_type;
  out << YAML::Key << "model_name" << YAML::Value << c.model_name;
  if (!c.variant.empty()) out << YAML::Key << "variant" << YAML::Value << c.variant;
  out << YAML::Key << "num_workers" << YAML::Value << c.num_workers;
  out << YAML::Key << "trained_on_normalized_data" << YAML::Value << c.trained_on_normalized_data;
  out << YAML::Key << "output_3d" << YAML::Value << c.output_3d;
  out << YAML::Key << "video_mode" << YAML::Value << c.video_mode;
  out << YAML::Key << "num_joints" << YAML::Value << c.num_joints;
  out << YAML::Key << "num_frames" << YAML::Value << c.num_frames;
  out << YAML::Key << "datasets" << YAML::Value << YAML::BeginMap;
  for (const auto& [k, v] : c.datasets) out << YAML::Key << k << YAML::Value << YAML::DoubleQuoted << v;
  out << YAML::EndMap;

  const auto& p = c.prediction_source;
  out << YAML::Key << "prediction_source" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "type" << YAML::Value << detail::to_string(p.kind);
  if (!p.paths.empty()) {
    out << YAML::Key << "paths" << YAML::Value << YAML::BeginMap;
    for (const auto& [k, v] : p.paths) out << YAML::Key << k << YAML::Value << YAML::DoubleQuoted << v;
    out << YAML::EndMap;
  }
  out << YAML::Key << "sigma_mm" << YAML::Value << YAML::Precision(17) << p.sigma_mm;
  out << YAML::Key << "seed" << YAML::Value << p.seed;
  if (!p.command.empty()) {
    out << YAML::Key << "command" << YAML::Value << YAML::BeginSeq;
    for (const auto& w : p.command) out << YAML::DoubleQuoted << w;
    out << YAML::EndSeq;
  }
  out << YAML::Key << "timeout_s" << YAML::Value << YAML::Precision(17) << p.timeout_s;
  out << YAML::EndMap;

  out << YAML::Key << "with_scale" << YAML::Value << c.with_scale;
  out << YAML::Key << "stats_source" << YAML::Value << detail::to_string(c.stats_source);
  out << YAML::Key << "sample_frames_threshold_mm" << YAML::Value << YAML::Precision(17) << c.sample_frames_threshold_mm;
  out << YAML::Key << "min_train" << YAML::Value << c.min_train;
  out << YAML::Key << "min_test" << YAML::Value << c.min_test;
  out << YAML::Key << "normalize_2d" << YAML::Value << c.normalize_2d;
  out << YAML::Key << "normalize_3d" << YAML::Value << c.normalize_3d;
  if (!c.train_archive.empty()) out << YAML::Key << "train_archive" << YAML::Value << YAML::DoubleQuoted << c.train_archive;
  if (!c.output_dir.empty()) out << YAML::Key << "output_dir" << YAML::Value << YAML::DoubleQuoted << c.output_dir;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace poseval
