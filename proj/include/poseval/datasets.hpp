#pragma once

#include <poseval/archive.hpp>
#include <poseval/core.hpp>
#include <poseval/geometry.hpp>
#include <poseval/skeleton.hpp>

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace poseval {

enum class Split { train = 0, test = 1 };

inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

/// One sample: 2D keypoints and camera-space 3D joints in a canonical joint
/// order. joints_3d_cam is stored uncentered so that projecting it
/// reproduces keypoints_2d; hip-centering happens at evaluation time.
struct CanonicalPose {
  Joints2 keypoints_2d;
  Joints3 joints_3d_cam;
  std::optional<Joints3> joints_3d_world;
  CameraModel camera;
  int subject_id = 0;
  int action_id = 0;
  int sequence_id = 0;
  int camera_id = 0;
  int frame_index = 0;
  Split split = Split::train;
  std::optional<ViewpointAngles> viewpoint;

  std::string sample_id() const {
    return "S" + std::to_string(subject_id) + "-A" + std::to_string(action_id) + "-Q" + std::to_string(sequence_id) +
           "-C" + std::to_string(camera_id) + "-F" + std::to_string(frame_index);
  }

  /// Invariants every archived sample satisfies. Throws InvalidSampleError.
  void validate(const JointSet& set) const {
    if (keypoints_2d.rows() != set.size() || joints_3d_cam.rows() != set.size())
      throw InvalidSampleError(sample_id() + ": joint count differs from " + set.name);
    if (!all_finite(keypoints_2d) || !all_finite(joints_3d_cam))
      throw InvalidSampleError(sample_id() + ": non-finite coordinates");
    if ((joints_3d_cam.col(2).array() <= 0.0).any()) throw InvalidSampleError(sample_id() + ": joint behind camera");
  }
};

/// Subject-relative viewpoint, computing and caching it on first use.
/// Returns nullopt when the subject frame is degenerate.
inline std::optional<ViewpointAngles> viewpoint_of(CanonicalPose& pose, const JointSet& set) {
  if (!pose.viewpoint) {
    try {
      pose.viewpoint = subject_viewpoint(pose.joints_3d_cam, set);
    } catch (const UndefinedViewpointError&) {
      return std::nullopt;
    }
  }
  return pose.viewpoint;
}

struct PoseDataset {
  std::string name;
  Convention convention = Convention::h36m;
  std::string joint_set = "canonical16";
  std::vector<CanonicalPose> samples;
  nlohmann::json metadata = nlohmann::json::object();  // run metadata (thresholds, filter report, ...)

  const JointSet& joints() const { return joint_set_by_name(joint_set); }
};

/// Native extrinsic width per convention: h36m R (9) + camera center (3);
/// gpa rvec (3) + translation cm (3); 3dpw/surreal 4x4 matrix (16).
inline int native_extrinsic_width(Convention c) {
  switch (c) {
    case Convention::h36m: return 12;
    case Convention::gpa: return 6;
    case Convention::pw3d:
    case Convention::surreal: return 16;
  }
  return 0;
}

inline std::vector<double> encode_native_extrinsic(const CameraModel& cam) {
  std::vector<double> out;
  switch (cam.convention) {
    case Convention::h36m: {
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) out.push_back(cam.rotation(r, c));
      const Vec3 center = cam.position_world();
      out.insert(out.end(), {center.x(), center.y(), center.z()});
      break;
    }
    case Convention::gpa: {
      const Vec3 rv = rotation_to_rvec(cam.rotation.transpose());
      const Vec3 t_cm = cam.translation / 10.0;
      out = {rv.x(), rv.y(), rv.z(), t_cm.x(), t_cm.y(), t_cm.z()};
      break;
    }
    case Convention::pw3d:
    case Convention::surreal: {
      const Mat4 e = extrinsic_matrix(cam);
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) out.push_back(e(r, c));
      break;
    }
  }
  return out;
}

/// Float storage leaves rotations slightly off orthonormal; decoding snaps them back.
template <typename T>
CameraModel decode_camera(const T* intrinsics, const T* ext, Convention conv) {
  CameraModel cam;
  switch (conv) {
    case Convention::h36m: {
      Mat3 r;
      for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = ext[i];
      cam = camera_from_h36m(snap_rotation(r), Vec3(ext[9], ext[10], ext[11]));
      break;
    }
    case Convention::gpa:
      cam = camera_from_gpa(Vec3(ext[0], ext[1], ext[2]), Vec3(ext[3], ext[4], ext[5]));
      break;
    case Convention::pw3d:
    case Convention::surreal: {
      Mat4 e;
      for (int i = 0; i < 16; ++i) e(i / 4, i % 4) = ext[i];
      e.topLeftCorner<3, 3>() = snap_rotation(e.topLeftCorner<3, 3>());
      cam = camera_from_extrinsic(e, conv);
      break;
    }
  }
  cam.fx = intrinsics[0];
  cam.fy = intrinsics[1];
  cam.cx = intrinsics[2];
  cam.cy = intrinsics[3];
  cam.width = intrinsics[4];
  cam.height = intrinsics[5];
  return cam;
}

inline DatasetArchive to_archive(const PoseDataset& ds) {
  const JointSet& set = ds.joints();
  const auto n = static_cast<std::int64_t>(ds.samples.size());
  const std::int64_t j = set.size();
  const int ew = native_extrinsic_width(ds.convention);
  const bool with_world = !ds.samples.empty() && std::all_of(ds.samples.begin(), ds.samples.end(), [](const auto& s) {
    return s.joints_3d_world.has_value();
  });

  Tensor kp{{n, j, 2}, {}}, cam3{{n, j, 3}, {}}, world{{n, j, 3}, {}}, intr{{n, 6}, {}}, ext{{n, ew}, {}}, meta{{n, 6}, {}};
  kp.data.reserve(static_cast<std::size_t>(n * j * 2));
  cam3.data.reserve(static_cast<std::size_t>(n * j * 3));
  std::set<std::string> ids;
  std::int64_t train = 0;
  for (const auto& s : ds.samples) {
    s.validate(set);
    if (s.camera.convention != ds.convention)
      throw Error(ErrorClass::data, s.sample_id() + ": camera convention differs from dataset convention");
    if (!ids.insert(s.sample_id()).second) throw Error(ErrorClass::data, "duplicate sample id " + s.sample_id());
    for (Eigen::Index r = 0; r < j; ++r) {
      for (int c = 0; c < 2; ++c) kp.data.push_back(static_cast<float>(s.keypoints_2d(r, c)));
      for (int c = 0; c < 3; ++c) cam3.data.push_back(static_cast<float>(s.joints_3d_cam(r, c)));
      if (with_world)
        for (int c = 0; c < 3; ++c) world.data.push_back(static_cast<float>((*s.joints_3d_world)(r, c)));
    }
    for (double v : {s.camera.fx, s.camera.fy, s.camera.cx, s.camera.cy, s.camera.width, s.camera.height})
      intr.data.push_back(static_cast<float>(v));
    for (double v : encode_native_extrinsic(s.camera)) ext.data.push_back(static_cast<float>(v));
    for (int v : {s.subject_id, s.action_id, s.sequence_id, s.camera_id, s.frame_index, static_cast<int>(s.split)})
      meta.data.push_back(static_cast<float>(v));
    if (s.split == Split::train) ++train;
  }

  DatasetArchive a;
  a.manifest = {{"kind", "dataset"},
                {"dataset", ds.name},
                {"convention", std::string(to_string(ds.convention))},
                {"joint_set", ds.joint_set},
                {"units", {{"joints", "mm"}, {"keypoints", "px"}}},
                {"counts", {{"samples", n}, {"train", train}, {"test", n - train}}},
                {"hip_centered", false},
                {"stats", nullptr},
                {"metadata", ds.metadata}};
  a.tensors["keypoints_2d"] = std::move(kp);
  a.tensors["joints_3d_cam"] = std::move(cam3);
  if (with_world) a.tensors["joints_3d_world"] = std::move(world);
  a.tensors["camera_intrinsics"] = std::move(intr);
  a.tensors["camera_extrinsic"] = std::move(ext);
  a.tensors["meta"] = std::move(meta);
  return a;
}

/// Streams CanonicalPose batches from a dataset archive, holding at most one
/// batch of decoded samples plus one tensor's worth of row scratch.
class PoseStream {
 public:
  explicit PoseStream(const ArchiveReader& reader, std::int64_t batch_size = 4096)
      : reader_(reader), batch_size_(batch_size) {
    const auto& m = reader.manifest();
    if (m.value("kind", std::string()) != "dataset")
      throw ArchiveError(ArchiveError::Kind::shape, reader.path() + " is not a dataset archive");
    try {
      name_ = m.at("dataset").get<std::string>();
      convention_ = convention_from_string(m.at("convention").get<std::string>());
      set_ = &joint_set_by_name(m.at("joint_set").get<std::string>());
      total_ = m.at("counts").at("samples").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ArchiveError(ArchiveError::Kind::corrupt, reader.path() + ": incomplete manifest: " + e.what());
    }
    const std::int64_t j = set_->size();
    auto expect = [&](const std::string& key, std::vector<std::int64_t> shape) {
      if (reader.shape(key) != shape)
        throw ArchiveError(ArchiveError::Kind::shape, reader.path() + ": tensor '" + key + "' disagrees with manifest");
    };
    expect("keypoints_2d", {total_, j, 2});
    expect("joints_3d_cam", {total_, j, 3});
    expect("camera_intrinsics", {total_, 6});
    expect("camera_extrinsic", {total_, native_extrinsic_width(convention_)});
    expect("meta", {total_, 6});
    with_world_ = reader.has_tensor("joints_3d_world");
    if (with_world_) expect("joints_3d_world", {total_, j, 3});
  }

  const std::string& dataset_name() const { return name_; }
  Convention convention() const { return convention_; }
  const JointSet& joint_set() const { return *set_; }
  std::int64_t size() const { return total_; }
  std::int64_t position() const { return pos_; }

  void rewind() { pos_ = 0; }

  /// Fills `batch` with the next samples; false once the archive is exhausted.
  bool next(std::vector<CanonicalPose>& batch) {
    batch.clear();
    if (pos_ >= total_) return false;
    const std::int64_t count = std::min(batch_size_, total_ - pos_);
    const std::int64_t j = set_->size();
    batch.resize(static_cast<std::size_t>(count));

    auto rows = [&](const std::string& key, std::int64_t width, auto&& fill) {
      scratch_.resize(static_cast<std::size_t>(count * width));
      reader_.read_rows(key, pos_, count, scratch_.data());
      for (std::int64_t i = 0; i < count; ++i) fill(batch[static_cast<std::size_t>(i)], scratch_.data() + i * width);
    };
    rows("keypoints_2d", j * 2, [&](CanonicalPose& p, const float* f) {
      p.keypoints_2d = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, 2, Eigen::RowMajor>>(f, j, 2).cast<double>();
    });
    rows("joints_3d_cam", j * 3, [&](CanonicalPose& p, const float* f) {
      p.joints_3d_cam = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>>(f, j, 3).cast<double>();
    });
    if (with_world_) {
      rows("joints_3d_world", j * 3, [&](CanonicalPose& p, const float* f) {
        p.joints_3d_world =
            Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>>(f, j, 3).cast<double>();
      });
    }
    std::vector<float> intr(static_cast<std::size_t>(count * 6));
    reader_.read_rows("camera_intrinsics", pos_, count, intr.data());
    const int ew = native_extrinsic_width(convention_);
    rows("camera_extrinsic", ew, [&](CanonicalPose& p, const float* f) {
      const std::size_t i = static_cast<std::size_t>(&p - batch.data());
      p.camera = decode_camera(intr.data() + i * 6, f, convention_);
    });
    rows("meta", 6, [&](CanonicalPose& p, const float* f) {
      p.subject_id = static_cast<int>(f[0]);
      p.action_id = static_cast<int>(f[1]);
      p.sequence_id = static_cast<int>(f[2]);
      p.camera_id = static_cast<int>(f[3]);
      p.frame_index = static_cast<int>(f[4]);
      p.split = f[5] == 0.0f ? Split::train : Split::test;
    });
    pos_ += count;
    return true;
  }

 private:
  const ArchiveReader& reader_;
  std::int64_t batch_size_;
  std::int64_t total_ = 0;
  std::int64_t pos_ = 0;
  std::string name_;
  Convention convention_ = Convention::h36m;
  const JointSet* set_ = nullptr;
  bool with_world_ = false;
  std::vector<float> scratch_;
};

inline PoseDataset load_dataset(const ArchiveReader& reader) {
  PoseStream stream(reader);
  PoseDataset ds;
  ds.name = stream.dataset_name();
  ds.convention = stream.convention();
  ds.joint_set = stream.joint_set().name;
  ds.metadata = reader.manifest().value("metadata", nlohmann::json::object());
  ds.samples.reserve(static_cast<std::size_t>(stream.size()));
  std::vector<CanonicalPose> batch;
  while (stream.next(batch))
    for (auto& p : batch) ds.samples.push_back(std::move(p));
  return ds;
}

inline PoseDataset load_dataset(const std::string& path) {
  ArchiveReader reader(path);
  return load_dataset(reader);
}

inline void save_dataset(const std::string& path, const PoseDataset& ds) { write_archive(path, to_archive(ds)); }

/// Indices of frames kept by motion-based thinning: the first frame always,
/// then frame k when some joint moved more than `threshold_mm` since the last
/// kept frame. A zero threshold keeps every frame.
inline std::vector<std::size_t> sample_frame_indices(const std::vector<Joints3>& sequence, double threshold_mm) {
  if (threshold_mm < 0) throw Error(ErrorClass::validation, "sample_frames threshold must be >= 0");
  std::vector<std::size_t> kept;
  if (sequence.empty()) return kept;
  kept.push_back(0);
  for (std::size_t k = 1; k < sequence.size(); ++k) {
    if (threshold_mm == 0.0) {
      kept.push_back(k);
      continue;
    }
    const Joints3& last = sequence[kept.back()];
    if (sequence[k].rows() != last.rows()) throw ShapeError("sample_frames: joint count changes within a sequence");
    const double disp = (sequence[k] - last).rowwise().norm().maxCoeff();
    if (disp > threshold_mm) kept.push_back(k);
  }
  return kept;
}

inline std::vector<Joints3> sample_frames(const std::vector<Joints3>& sequence, double threshold_mm) {
  std::vector<Joints3> out;
  for (auto k : sample_frame_indices(sequence, threshold_mm)) out.push_back(sequence[k]);
  return out;
}

struct FilterReport {
  std::map<std::string, std::size_t> dropped_by_reason;  // "non-finite", "behind-camera", "bone-length"
  std::size_t total = 0;
  std::size_t dropped = 0;

  double fraction() const { return total == 0 ? 0.0 : static_cast<double>(dropped) / static_cast<double>(total); }

  nlohmann::json to_json() const {
    return {{"total", total}, {"dropped", dropped}, {"fraction", fraction()}, {"reasons", dropped_by_reason}};
  }
};

struct FilterLimits {
  double min_bone_mm = 10.0;
  double max_bone_mm = 1000.0;
};

/// Reason a sample fails validity checks, or empty when it is usable.
inline std::string invalid_reason(const CanonicalPose& s, const JointSet& set, const FilterLimits& limits = {}) {
  if (!all_finite(s.keypoints_2d) || !all_finite(s.joints_3d_cam)) return "non-finite";
  if (s.joints_3d_cam.rows() != set.size()) return "non-finite";
  if ((s.joints_3d_cam.col(2).array() <= 0.0).any()) return "behind-camera";
  for (double b : bone_lengths(s.joints_3d_cam, set))
    if (b < limits.min_bone_mm || b > limits.max_bone_mm) return "bone-length";
  return {};
}

inline std::pair<std::vector<CanonicalPose>, FilterReport> filter_invalid(std::vector<CanonicalPose> samples,
                                                                          const JointSet& set,
                                                                          const FilterLimits& limits = {}) {
  FilterReport report;
  report.total = samples.size();
  std::vector<CanonicalPose> kept;
  kept.reserve(samples.size());
  for (auto& s : samples) {
    auto reason = invalid_reason(s, set, limits);
    if (reason.empty()) {
      kept.push_back(std::move(s));
    } else {
      ++report.dropped_by_reason[reason];
      ++report.dropped;
    }
  }
  return {std::move(kept), report};
}

}  // namespace poseval
