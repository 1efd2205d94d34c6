// poseval command-line front end.
//
// Exit status: 0 ok, 1 validation, 2 data, 3 prediction source, 4 internal.

#include <poseval/adapters.hpp>
#include <poseval/analytics.hpp>
#include <poseval/config.hpp>
#include <poseval/evaluate.hpp>
#include <poseval/report.hpp>
#include <poseval/synth.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace {

using namespace poseval;

int preprocess(const std::string& dataset, const std::string& raw, const std::string& out, double threshold,
               const std::string& config_path) {
  AdapterOptions opt;
  opt.sample_frames_threshold_mm = threshold;
  if (!config_path.empty()) opt.sample_frames_threshold_mm = parse_config(config_path).sample_frames_threshold_mm;
  const PoseDataset ds = adapt(dataset, raw, opt);
  save_dataset(out, ds);
  std::size_t train = 0;
  for (const auto& s : ds.samples) train += s.split == Split::train;
  std::cerr << dataset << ": " << ds.samples.size() << " samples (" << train << " train, " << ds.samples.size() - train
            << " test) -> " << out << '\n';
  return 0;
}

int synth(const std::string& spec_path, const std::string& out) {
  std::ifstream in(spec_path);
  if (!in) throw Error(ErrorClass::validation, "cannot read '" + spec_path + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw SpecError("'" + spec_path + "' is not valid JSON");
  const SynthSpec spec = SynthSpec::from_json(j);
  save_dataset(out, synth_generate(spec));
  std::cerr << "synth: " << spec.count << " samples -> " << out << '\n';
  return 0;
}

int evaluate(const std::string& config_path, const std::string& out_dir, int workers) {
  EvalConfig cfg = parse_config(config_path);
  if (workers > 0) cfg.num_workers = workers;
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  const MetricsReport report = run_evaluation(cfg, [](const std::string& msg) { std::cerr << msg << '\n'; });
  if (!cfg.output_dir.empty()) write_evaluation(report, cfg.output_dir);
  std::cout << report.to_bundle().dump(2) << '\n';
  return 0;
}

struct ErrorRow {
  double elevation, azimuth, mpjpe;
};

// Reads the per-sample CSV written by `evaluate`.
std::vector<ErrorRow> read_errors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorClass::data, "cannot read '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind("sample_id,elevation_deg,azimuth_deg,mpjpe_mm", 0) != 0)
    throw Error(ErrorClass::data, path + ": not a per-sample error file");
  std::vector<ErrorRow> rows;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() < 4) throw Error(ErrorClass::data, path + ": short row '" + line + "'");
    if (f[1].empty() || f[2].empty()) continue;  // undefined viewpoint
    rows.push_back({std::stod(f[1]), std::stod(f[2]), std::stod(f[3])});
  }
  return rows;
}

int analyze(const std::string& train_path, const std::string& errors_path, const std::string& contour_out,
            int min_train, int min_test) {
  ViewpointGrid grid = detail::train_grid(train_path);
  for (const auto& r : read_errors(errors_path)) grid.add_test({r.elevation, r.azimuth}, r.mpjpe);
  if (!contour_out.empty()) {
    std::ofstream out(contour_out, std::ios::binary);
    if (!out) throw Error(ErrorClass::data, "cannot write '" + contour_out + "'");
    out << export_contour(grid);
  }
  const auto c = viewpoint_error_correlation(grid, static_cast<std::size_t>(min_train), static_cast<std::size_t>(min_test));
  std::cout << nlohmann::json{{"num_bins", c.num_bins}, {"rho", c.rho}, {"p_value", c.p_value}, {"sigma", c.sigma}}.dump(2)
            << '\n';
  return 0;
}

int report(const std::vector<std::string>& inputs, const std::string& format, const std::string& protocol,
           const std::string& out) {
  const auto rows = build_leaderboard(load_bundles(inputs, protocol_from_string(protocol)));
  const auto fmt = report_format_from_string(format);
  if (out.empty()) std::cout << render_leaderboard(rows, fmt);
  else emit_report(rows, fmt, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-dataset 3D human pose evaluation"};
  app.require_subcommand(1);

  std::string dataset, raw, out, config, spec, train, errors, format = "markdown", protocol = "mpjpe";
  std::vector<std::string> inputs;
  double threshold = 40.0;
  int workers = 0, min_train = 5, min_test = 5;

  auto* pre = app.add_subcommand("preprocess", "Convert a raw dataset export into an archive");
  pre->add_option("dataset", dataset, "h36m, gpa, 3dpw or surreal")->required();
  pre->add_option("--raw", raw, "Raw export directory")->required();
  pre->add_option("--out", out, "Output archive")->required();
  pre->add_option("--threshold", threshold, "Frame thinning threshold in mm")->capture_default_str();
  pre->add_option("--config", config, "Take the thinning threshold from an evaluation config");

  auto* syn = app.add_subcommand("synth", "Generate a synthetic archive");
  syn->add_option("--spec", spec, "Synthetic rig spec (JSON)")->required();
  syn->add_option("--out", out, "Output archive")->required();

  auto* ev = app.add_subcommand("evaluate", "Run an evaluation config");
  ev->add_option("--config", config, "YAML config")->required();
  ev->add_option("--out", out, "Output directory (overrides output_dir)");
  ev->add_option("--workers", workers, "Override num_workers");

  auto* an = app.add_subcommand("analyze", "Viewpoint frequency vs error correlation");
  an->add_option("--train", train, "Training archive")->required();
  an->add_option("--errors", errors, "Per-sample error CSV from evaluate")->required();
  an->add_option("--contour", out, "Write the contour CSV here");
  an->add_option("--min-train", min_train)->capture_default_str();
  an->add_option("--min-test", min_test)->capture_default_str();

  auto* rep = app.add_subcommand("report", "Leaderboard from results bundles");
  rep->add_option("--in", inputs, "Results bundles (JSON)")->required();
  rep->add_option("--format", format, "csv, json or markdown")->capture_default_str();
  rep->add_option("--protocol", protocol, "mpjpe or pa_mpjpe")->capture_default_str();
  rep->add_option("--out", out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*pre) return preprocess(dataset, raw, out, threshold, config);
    if (*syn) return synth(spec, out);
    if (*ev) return evaluate(config, out, workers);
    if (*an) return analyze(train, errors, out, min_train, min_test);
    if (*rep) return report(inputs, format, protocol, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return static_cast<int>(ErrorClass::internal);
  }
  return static_cast<int>(ErrorClass::internal);
}
