#pragma once

#include <poseval/config.hpp>
#include <poseval/core.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace poseval {

enum class Protocol { mpjpe, pa_mpjpe };

inline std::string to_string(Protocol p) { return p == Protocol::mpjpe ? "mpjpe" : "pa_mpjpe"; }

inline Protocol protocol_from_string(const std::string& s) {
  if (s == "mpjpe" || s == "p1") return Protocol::mpjpe;
  if (s == "pa_mpjpe" || s == "p2") return Protocol::pa_mpjpe;
  throw Error(ErrorClass::validation, "unknown protocol '" + s + "' (mpjpe or pa_mpjpe)");
}

/// Display marker: optimized †, unoptimized ⋄, retrained •, reported ‡.
inline std::string variant_marker(const std::string& variant) {
  if (variant == "optimized") return "†";
  if (variant == "unoptimized") return "⋄";
  if (variant == "retrained") return "•";
  if (variant == "reported") return "‡";
  return "";
}

struct LeaderboardRow {
  std::string model_name;
  std::string variant;
  Protocol protocol = Protocol::mpjpe;
  std::map<std::string, double> per_dataset_mm;  // keys from supported_datasets()
  double average_mm = 0.0;

  std::string display_name() const {
    const auto m = variant_marker(variant);
    return m.empty() ? model_name : model_name + " " + m;
  }
};

/// Averages present datasets, then sorts by decreasing average; ties by name.
inline std::vector<LeaderboardRow> build_leaderboard(std::vector<LeaderboardRow> rows) {
  for (auto& r : rows) {
    if (r.per_dataset_mm.empty()) throw Error(ErrorClass::validation, "leaderboard row '" + r.model_name + "' has no values");
    double sum = 0.0;
    for (const auto& [name, v] : r.per_dataset_mm) {
      const auto& known = supported_datasets();
      if (std::find(known.begin(), known.end(), name) == known.end())
        throw Error(ErrorClass::validation, "leaderboard row '" + r.model_name + "': unknown dataset '" + name + "'");
      sum += v;
    }
    r.average_mm = sum / static_cast<double>(r.per_dataset_mm.size());
  }
  std::stable_sort(rows.begin(), rows.end(), [](const LeaderboardRow& a, const LeaderboardRow& b) {
    if (a.average_mm != b.average_mm) return a.average_mm > b.average_mm;
    if (a.model_name != b.model_name) return a.model_name < b.model_name;
    return a.variant < b.variant;
  });
  return rows;
}

enum class Direction { improved, degraded, unchanged };

struct Improvement {
  double percent = 0.0;  // 100 (baseline - value) / baseline; positive is better
  double display = 0.0;  // percent rounded half away from zero to 1 decimal
  Direction direction = Direction::unchanged;

  /// "↓ 5.6%", "↑ 26.4%" or "0.0%".
  std::string label() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", std::abs(display));
    if (direction == Direction::improved) return std::string("↓ ") + buf;
    if (direction == Direction::degraded) return std::string("↑ ") + buf;
    return buf;
  }
};

inline double round_half_away(double v, int decimals) {
  const double s = std::pow(10.0, decimals);
  return std::round(v * s) / s;
}

inline Improvement percent_improvement(double baseline_mm, double value_mm) {
  if (!(baseline_mm > 0.0) || !std::isfinite(baseline_mm))
    throw Error(ErrorClass::validation, "percent_improvement: baseline must be positive");
  Improvement r;
  r.percent = 100.0 * (baseline_mm - value_mm) / baseline_mm;
  r.display = round_half_away(r.percent, 1);
  if (r.display > 0.0) r.direction = Direction::improved;
  else if (r.display < 0.0) r.direction = Direction::degraded;
  else r.display = 0.0;
  return r;
}

/// Leaderboard rows from a results bundle ({model, variant, per_dataset}).
/// Datasets without a value for a protocol are omitted from that row, so
/// static rows carrying cited numbers for a subset of datasets are accepted.
inline std::vector<LeaderboardRow> rows_from_bundle(const nlohmann::json& bundle) {
  if (!bundle.is_object() || !bundle.contains("model") || !bundle["model"].is_string() || !bundle.contains("per_dataset") ||
      !bundle["per_dataset"].is_object())
    throw Error(ErrorClass::validation, "results bundle needs string 'model' and object 'per_dataset'");
  std::vector<LeaderboardRow> out;
  for (Protocol p : {Protocol::mpjpe, Protocol::pa_mpjpe}) {
    LeaderboardRow row;
    row.model_name = bundle["model"].get<std::string>();
    row.variant = bundle.value("variant", std::string());
    row.protocol = p;
    const char* key = p == Protocol::mpjpe ? "mpjpe_mm" : "pa_mpjpe_mm";
    for (const auto& [name, entry] : bundle["per_dataset"].items())
      if (entry.is_object() && entry.contains(key) && entry[key].is_number()) row.per_dataset_mm[name] = entry[key].get<double>();
    if (!row.per_dataset_mm.empty()) out.push_back(std::move(row));
  }
  return out;
}

inline std::vector<LeaderboardRow> load_bundles(const std::vector<std::string>& paths, Protocol protocol) {
  std::vector<LeaderboardRow> rows;
  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorClass::data, "cannot read '" + path + "'");
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorClass::data, "'" + path + "' is not valid JSON");
    // A file may hold one bundle or a list of them.
    const auto bundles = j.is_array() ? j : nlohmann::json::array({j});
    for (const auto& b : bundles)
      for (auto& r : rows_from_bundle(b))
        if (r.protocol == protocol) rows.push_back(std::move(r));
  }
  return rows;
}

namespace detail {

inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string f2(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline const char* dataset_title(const std::string& key) {
  if (key == "h36m") return "H36M";
  if (key == "gpa") return "GPA";
  if (key == "3dpw") return "3DPW";
  if (key == "surreal") return "SURREAL";
  return "?";
}

}  // namespace detail

enum class ReportFormat { csv, json, markdown };

inline ReportFormat report_format_from_string(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  throw Error(ErrorClass::validation, "unknown report format '" + s + "' (csv, json, markdown)");
}

inline std::string leaderboard_csv(const std::vector<LeaderboardRow>& rows) {
  std::string out = "model,variant,protocol";
  for (const auto& d : supported_datasets()) out += "," + d;
  out += ",average\n";
  for (const auto& r : rows) {
    out += r.model_name + "," + r.variant + "," + to_string(r.protocol);
    for (const auto& d : supported_datasets()) {
      out += ",";
      if (auto it = r.per_dataset_mm.find(d); it != r.per_dataset_mm.end()) out += detail::g17(it->second);
    }
    out += "," + detail::g17(r.average_mm) + "\n";
  }
  return out;
}

inline std::string leaderboard_json(const std::vector<LeaderboardRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"model", r.model_name},
                 {"variant", r.variant},
                 {"protocol", to_string(r.protocol)},
                 {"per_dataset", r.per_dataset_mm},
                 {"average_mm", r.average_mm}});
  return nlohmann::json{{"rows", std::move(j)}}.dump(2) + "\n";
}

/// Two-decimal markdown table, one row per model, absent cells shown as "-".
inline std::string leaderboard_markdown(const std::vector<LeaderboardRow>& rows) {
  std::string out = "| Model |";
  for (const auto& d : supported_datasets()) out += std::string(" ") + detail::dataset_title(d) + " |";
  out += " Average |\n|---|";
  for (std::size_t i = 0; i < supported_datasets().size(); ++i) out += "---:|";
  out += "---:|\n";
  for (const auto& r : rows) {
    out += "| " + r.display_name() + " |";
    for (const auto& d : supported_datasets()) {
      auto it = r.per_dataset_mm.find(d);
      out += " " + (it == r.per_dataset_mm.end() ? std::string("-") : detail::f2(it->second)) + " |";
    }
    out += " " + detail::f2(r.average_mm) + " |\n";
  }
  return out;
}

/// Rows compared against `baseline`: each cell carries the value and its
/// signed change relative to the baseline cell, e.g. "39.11 (↓ 5.6%)".
inline std::string comparison_markdown(const LeaderboardRow& baseline, const std::vector<LeaderboardRow>& rows) {
  std::string out = "| Model |";
  for (const auto& d : supported_datasets()) out += std::string(" ") + detail::dataset_title(d) + " |";
  out += " Average |\n|---|";
  for (std::size_t i = 0; i < supported_datasets().size(); ++i) out += "---:|";
  out += "---:|\n";
  auto cell = [&](std::optional<double> base, std::optional<double> v, bool is_baseline) {
    if (!v) return std::string("-");
    std::string s = detail::f2(*v);
    if (!is_baseline && base) s += " (" + percent_improvement(*base, *v).label() + ")";
    return s;
  };
  auto lookup = [](const LeaderboardRow& r, const std::string& d) -> std::optional<double> {
    auto it = r.per_dataset_mm.find(d);
    if (it == r.per_dataset_mm.end()) return std::nullopt;
    return it->second;
  };
  std::vector<const LeaderboardRow*> all{&baseline};
  for (const auto& r : rows) all.push_back(&r);
  for (const auto* r : all) {
    const bool is_base = r == &baseline;
    out += "| " + r->display_name() + " |";
    for (const auto& d : supported_datasets()) out += " " + cell(lookup(baseline, d), lookup(*r, d), is_base) + " |";
    out += " " + cell(baseline.average_mm, r->average_mm, is_base) + " |\n";
  }
  return out;
}

inline std::string render_leaderboard(const std::vector<LeaderboardRow>& rows, ReportFormat format) {
  switch (format) {
    case ReportFormat::csv: return leaderboard_csv(rows);
    case ReportFormat::json: return leaderboard_json(rows);
    case ReportFormat::markdown: return leaderboard_markdown(rows);
  }
  return {};
}

/// Writes the rendered leaderboard to `path`.
inline void emit_report(const std::vector<LeaderboardRow>& rows, ReportFormat format, const std::filesystem::path& path) {
  const std::string text = render_leaderboard(rows, format);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorClass::data, "cannot write '" + path.string() + "'");
  out << text;
  out.close();
  if (!out) throw Error(ErrorClass::data, "write failed for '" + path.string() + "'");
}

/// Parses leaderboard_csv output back into rows (averages as written).
inline std::vector<LeaderboardRow> parse_leaderboard_csv(const std::string& text) {
  std::vector<LeaderboardRow> rows;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 4 + supported_datasets().size())
      throw Error(ErrorClass::data, "leaderboard csv: bad field count in '" + line + "'");
    LeaderboardRow r;
    r.model_name = f[0];
    r.variant = f[1];
    r.protocol = protocol_from_string(f[2]);
    for (std::size_t k = 0; k < supported_datasets().size(); ++k)
      if (!f[3 + k].empty()) r.per_dataset_mm[supported_datasets()[k]] = std::stod(f[3 + k]);
    r.average_mm = std::stod(f.back());
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace poseval
