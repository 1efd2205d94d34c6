#pragma once

#include <poseval/analytics.hpp>
#include <poseval/config.hpp>
#include <poseval/datasets.hpp>
#include <poseval/metrics.hpp>
#include <poseval/normalize.hpp>
#include <poseval/parallel.hpp>
#include <poseval/runner.hpp>

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace poseval {

/// Wraps a failure with the pipeline stage (load, normalize, predict,
/// metric, analytics, write) and dataset it happened in. Keeps the class.
struct StageError : Error {
  StageError(std::string stage_name, const std::string& dataset, const Error& cause)
      : Error(cause.error_class(), "[" + stage_name + (dataset.empty() ? "" : ":" + dataset) + "] " + cause.what()),
        stage(std::move(stage_name)) {}
  std::string stage;
};

struct DatasetReport {
  std::string dataset;
  ProtocolResult result;
  std::vector<std::string> sample_ids;
  std::vector<std::optional<ViewpointAngles>> viewpoints;
  std::optional<ViewpointGrid> grid;  // present when a training archive is configured
  std::optional<CorrelationResult> correlation;
  std::string correlation_note;
};

struct MetricsReport {
  std::string model;
  std::string variant;
  bool with_scale = true;
  int num_joints = 16;
  std::vector<std::string> joint_names;
  std::vector<DatasetReport> datasets;
  Eigen::Matrix<double, Eigen::Dynamic, 2> per_joint;  // mean over datasets: MPJPE, PA-MPJPE

  /// Results bundle: {model, variant, protocol, per_dataset, per_joint}.
  nlohmann::json to_bundle() const {
    nlohmann::json per_dataset = nlohmann::json::object();
    for (const auto& d : datasets) {
      nlohmann::json entry = {{"mpjpe_mm", d.result.mpjpe_mm},
                              {"pa_mpjpe_mm", d.result.pa_mpjpe_mm},
                              {"samples", d.result.sample_count},
                              {"pa_excluded", d.result.pa_excluded}};
      if (d.correlation) {
        entry["correlation"] = {{"num_bins", d.correlation->num_bins},
                                {"rho", d.correlation->rho},
                                {"p_value", d.correlation->p_value},
                                {"sigma", d.correlation->sigma}};
      } else if (!d.correlation_note.empty()) {
        entry["correlation"] = nullptr;
        entry["correlation_note"] = d.correlation_note;
      }
      per_dataset[d.dataset] = std::move(entry);
    }
    nlohmann::json joints = nlohmann::json::array();
    for (Eigen::Index k = 0; k < per_joint.rows(); ++k)
      joints.push_back({{"joint", joint_names[static_cast<std::size_t>(k)]},
                        {"mpjpe_mm", per_joint(k, 0)},
                        {"pa_mpjpe_mm", per_joint(k, 1)}});
    return {{"model", model},
            {"variant", variant},
            {"protocol", {{"p1", "mpjpe"}, {"p2", with_scale ? "pa_mpjpe_similarity" : "pa_mpjpe_rigid"}, {"num_joints", num_joints}}},
            {"per_dataset", std::move(per_dataset)},
            {"per_joint", std::move(joints)}};
  }
};

namespace detail {

template <typename Fn>
auto staged(const char* stage, const std::string& dataset, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, dataset, e);
  } catch (const std::exception& e) {
    throw StageError(stage, dataset, Error(ErrorClass::internal, e.what()));
  }
}

inline auto sequence_key(const CanonicalPose& p) {
  return std::make_tuple(p.subject_id, p.action_id, p.sequence_id, p.camera_id);
}

/// Test split in canonical order, converted to the run's joint set.
inline std::vector<CanonicalPose> test_split(PoseDataset ds, const JointSet& target) {
  std::vector<CanonicalPose> out;
  const JointSet& source = ds.joints();
  if (source.size() != target.size() && !(source == canonical16() && target == canonical14()))
    throw ShapeError(ds.name + " archive holds " + source.name + ", run needs " + target.name);
  for (auto& s : ds.samples) {
    if (s.split != Split::test) continue;
    if (source.size() != target.size()) {
      s.keypoints_2d = select_joint_subset(s.keypoints_2d);
      s.joints_3d_cam = select_joint_subset(s.joints_3d_cam);
      if (s.joints_3d_world) s.joints_3d_world = select_joint_subset(*s.joints_3d_world);
      s.viewpoint.reset();
    }
    out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end(), [](const CanonicalPose& a, const CanonicalPose& b) {
    return std::make_tuple(a.subject_id, a.action_id, a.sequence_id, a.camera_id, a.frame_index) <
           std::make_tuple(b.subject_id, b.action_id, b.sequence_id, b.camera_id, b.frame_index);
  });
  return out;
}

inline Joints3 to_target(const Joints3& j, const JointSet& target) {
  return j.rows() == target.size() ? j : Joints3(select_joint_subset(j));
}
inline Joints2 to_target(const Joints2& j, const JointSet& target) {
  return j.rows() == target.size() ? j : Joints2(select_joint_subset(j));
}

/// 2D and centered-3D statistics over one split of an archive.
inline std::pair<ZScoreStats, ZScoreStats> split_stats(const std::string& path, Split split, const JointSet& target) {
  ArchiveReader reader(path);
  PoseStream stream(reader);
  StatsAccumulator acc2, acc3;
  std::vector<CanonicalPose> batch;
  while (stream.next(batch))
    for (const auto& s : batch) {
      if (s.split != split) continue;
      acc2.add(to_target(s.keypoints_2d, target));
      acc3.add(hip_center(to_target(s.joints_3d_cam, target), target.root_index));
    }
  return {acc2.finish(stream.dataset_name(), target.name), acc3.finish(stream.dataset_name(), target.name)};
}

inline ViewpointGrid train_grid(const std::string& path) {
  ArchiveReader reader(path);
  PoseStream stream(reader);
  ViewpointGrid grid;
  std::vector<CanonicalPose> batch;
  while (stream.next(batch))
    for (auto& s : batch) {
      if (s.split != Split::train) continue;
      if (auto v = viewpoint_of(s, stream.joint_set())) grid.add_train(*v);
    }
  return grid;
}

/// Runs the external model over `samples`, one session per worker, each on a
/// contiguous block. Windows never cross sequence boundaries.
inline std::vector<Joints3> external_predictions(const EvalConfig& cfg, const std::vector<CanonicalPose>& samples,
                                                 const ModelIO& io) {
  const std::size_t n = samples.size();
  std::vector<Joints2> prepared(n);
  parallel_for(n, cfg.num_workers, [&](std::size_t i) { prepared[i] = io.prepare(samples[i].keypoints_2d, samples[i].camera); });

  // [begin, end) of the sequence containing each sample.
  std::vector<std::pair<std::size_t, std::size_t>> seq(n);
  for (std::size_t b = 0; b < n;) {
    std::size_t e = b + 1;
    while (e < n && sequence_key(samples[e]) == sequence_key(samples[b])) ++e;
    for (std::size_t i = b; i < e; ++i) seq[i] = {b, e};
    b = e;
  }

  SessionConfig sc;
  sc.command = cfg.prediction_source.command;
  sc.num_joints = cfg.num_joints;
  sc.video_mode = cfg.video_mode;
  sc.num_frames = cfg.num_frames;
  sc.trained_on_normalized_data = cfg.trained_on_normalized_data;
  sc.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(cfg.prediction_source.timeout_s * 1000.0));

  std::vector<Joints3> out(n);
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.num_workers), std::max<std::size_t>(n, 1));
  const std::size_t block = (n + workers - 1) / std::max<std::size_t>(workers, 1);
  constexpr std::size_t kChunk = 1024;
  parallel_for(workers, static_cast<int>(workers), [&](std::size_t w) {
    const std::size_t begin = w * block, end = std::min(n, begin + block);
    if (begin >= end) return;
    ModelSession session = external_session(sc);
    for (std::size_t c = begin; c < end; c += kChunk) {
      const std::size_t stop = std::min(end, c + kChunk);
      std::vector<std::vector<Joints2>> windows;
      windows.reserve(stop - c);
      for (std::size_t i = c; i < stop; ++i) {
        const auto [sb, se] = seq[i];
        std::vector<Joints2> win;
        for (std::size_t k : window_indices(se - sb, i - sb, cfg.num_frames)) win.push_back(prepared[sb + k]);
        windows.push_back(std::move(win));
      }
      auto replies = session.infer_batch(windows);
      for (std::size_t i = c; i < stop; ++i) out[i] = io.finish(replies[i - c]);
    }
  });
  return out;
}

}  // namespace detail

using ProgressFn = std::function<void(const std::string&)>;

/// Evaluates every configured dataset. Test samples are processed in
/// (subject, action, sequence, camera, frame) order and all reductions are
/// sequential, so the report does not depend on num_workers or on archive
/// row order.
inline MetricsReport run_evaluation(const EvalConfig& cfg, const ProgressFn& progress = {}) {
  const JointSet& set = joint_set_for(cfg.num_joints);
  MetricsReport report;
  report.model = cfg.model_name.empty() ? cfg.model_type : cfg.model_name;
  report.variant = cfg.variant;
  report.with_scale = cfg.with_scale;
  report.num_joints = cfg.num_joints;
  report.joint_names = set.joint_names;

  std::optional<ViewpointGrid> train;
  if (!cfg.train_archive.empty())
    train = detail::staged("load", "train", [&] { return detail::train_grid(cfg.train_archive); });

  std::optional<std::pair<ZScoreStats, ZScoreStats>> train_stats;
  const bool needs_stats = cfg.prediction_source.kind == PredictionKind::external && cfg.trained_on_normalized_data;
  if (needs_stats && cfg.stats_source == StatsSource::train_dataset)
    train_stats = detail::staged("normalize", "train", [&] { return detail::split_stats(cfg.train_archive, Split::train, set); });

  std::size_t index = 0;
  for (const auto& [name, path] : cfg.datasets) {
    if (progress) progress("evaluating " + name);
    const std::uint64_t dataset_seed = cfg.prediction_source.seed + index++;

    auto samples = detail::staged("load", name, [&, &path = path] { return detail::test_split(load_dataset(path), set); });
    if (samples.empty()) throw StageError("load", name, LoadError(path + " has no test samples"));

    std::vector<Joints3> gt(samples.size());
    std::vector<std::string> ids(samples.size());
    detail::staged("normalize", name, [&] {
      parallel_for(samples.size(), cfg.num_workers, [&](std::size_t i) {
        gt[i] = hip_center(samples[i].joints_3d_cam, set.root_index);
        ids[i] = samples[i].sample_id();
      });
    });

    ModelIO io;
    if (needs_stats) {
      io = detail::staged("normalize", name, [&, &path = path] {
        ModelIO m;
        m.trained_on_normalized_data = true;
        m.normalize_2d = cfg.normalize_2d;
        m.normalize_3d = cfg.normalize_3d;
        m.root = set.root_index;
        auto stats = train_stats ? *train_stats : detail::split_stats(path, Split::test, set);
        m.stats_2d = std::move(stats.first);
        m.stats_3d = std::move(stats.second);
        return m;
      });
    }
    io.root = set.root_index;

    std::vector<Joints3> pred = detail::staged("predict", name, [&, &name = name] {
      switch (cfg.prediction_source.kind) {
        case PredictionKind::file:
          return load_prediction_file(cfg.prediction_source.paths.at(name), set, ids);
        case PredictionKind::oracle:
          return oracle_with_noise(gt, cfg.prediction_source.sigma_mm, dataset_seed, set.root_index);
        case PredictionKind::external:
          return detail::external_predictions(cfg, samples, io);
      }
      throw Error(ErrorClass::internal, "unknown prediction source");
    });

    DatasetReport d;
    d.dataset = name;
    d.sample_ids = std::move(ids);
    d.result = detail::staged("metric", name, [&] {
      return evaluate_protocols(pred, gt, cfg.with_scale, set.root_index, cfg.num_workers);
    });

    detail::staged("analytics", name, [&] {
      d.viewpoints.resize(samples.size());
      parallel_for(samples.size(), cfg.num_workers, [&](std::size_t i) { d.viewpoints[i] = viewpoint_of(samples[i], set); });
      if (!train) return;
      ViewpointGrid grid = *train;
      for (std::size_t i = 0; i < samples.size(); ++i)
        if (d.viewpoints[i]) grid.add_test(*d.viewpoints[i], d.result.sample_mpjpe_mm[i]);
      try {
        d.correlation = viewpoint_error_correlation(grid, static_cast<std::size_t>(cfg.min_train),
                                                    static_cast<std::size_t>(cfg.min_test));
      } catch (const CorrelationError& e) {
        d.correlation_note = e.what();
      }
      d.grid = std::move(grid);
    });
    report.datasets.push_back(std::move(d));
  }

  std::vector<ProtocolResult> results;
  for (const auto& d : report.datasets) results.push_back(d.result);
  report.per_joint = per_joint_report(results);
  return report;
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// sample_id,elevation_deg,azimuth_deg,mpjpe_mm,pa_mpjpe_mm; undefined values left empty.
inline std::string per_sample_csv(const DatasetReport& d) {
  std::string out = "sample_id,elevation_deg,azimuth_deg,mpjpe_mm,pa_mpjpe_mm\n";
  for (std::size_t i = 0; i < d.sample_ids.size(); ++i) {
    const auto& v = i < d.viewpoints.size() ? d.viewpoints[i] : std::nullopt;
    out += d.sample_ids[i] + "," + (v ? format_number(v->elevation) : "") + "," + (v ? format_number(v->azimuth) : "") +
           "," + format_number(d.result.sample_mpjpe_mm[i]) + "," + format_number(d.result.sample_pa_mpjpe_mm[i]) + "\n";
  }
  return out;
}

inline std::string per_joint_csv(const MetricsReport& r) {
  std::string out = "joint,mpjpe_mm,pa_mpjpe_mm\n";
  for (Eigen::Index k = 0; k < r.per_joint.rows(); ++k)
    out += r.joint_names[static_cast<std::size_t>(k)] + "," + format_number(r.per_joint(k, 0)) + "," +
           format_number(r.per_joint(k, 1)) + "\n";
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorClass::data, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorClass::data, "write failed for '" + path.string() + "'");
}

/// results.json, per_joint.csv, <dataset>_samples.csv and, with analytics,
/// <dataset>_contour.csv under `dir`.
inline void write_evaluation(const MetricsReport& r, const std::filesystem::path& dir) {
  detail::staged("write", "", [&] {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorClass::data, "cannot create '" + dir.string() + "': " + ec.message());
    write_text(dir / "results.json", r.to_bundle().dump(2) + "\n");
    write_text(dir / "per_joint.csv", per_joint_csv(r));
    for (const auto& d : r.datasets) {
      write_text(dir / (d.dataset + "_samples.csv"), per_sample_csv(d));
      if (d.grid) write_text(dir / (d.dataset + "_contour.csv"), export_contour(*d.grid));
    }
  });
}

}  // namespace poseval
