#pragma once

#include <poseval/datasets.hpp>
#include <poseval/geometry.hpp>
#include <poseval/skeleton.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <tuple>
#include <vector>

// Readers for JSON exports of the four supported datasets. Each export keeps
// the dataset's native joint order, units and camera convention; layouts are
// documented in docs/raw-formats.md.

namespace poseval {

struct AdapterOptions {
  double sample_frames_threshold_mm = 40.0;
  FilterLimits limits;
};

namespace detail {

namespace fs = std::filesystem;

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot read " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw LoadError(path.string() + " is not valid JSON");
  return j;
}

template <typename T>
T field(const nlohmann::json& j, const char* key, const fs::path& where) {
  if (!j.is_object() || !j.contains(key)) throw LoadError(where.string() + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw LoadError(where.string() + ": field '" + key + "' has the wrong type");
  }
}

inline Joints3 rows3(const nlohmann::json& j, const fs::path& where) {
  if (!j.is_array()) throw LoadError(where.string() + ": expected an array of [x, y, z]");
  Joints3 out(static_cast<Eigen::Index>(j.size()), 3);
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != 3) throw LoadError(where.string() + ": joint row is not [x, y, z]");
    for (int c = 0; c < 3; ++c) {
      const auto& v = j[r][static_cast<std::size_t>(c)];
      out(static_cast<Eigen::Index>(r), c) = v.is_number() ? v.get<double>() : std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

inline Joints3 flat3(const std::vector<double>& flat, const fs::path& where) {
  if (flat.size() % 3 != 0) throw LoadError(where.string() + ": flat joint vector length not a multiple of 3");
  Joints3 out(static_cast<Eigen::Index>(flat.size() / 3), 3);
  for (std::size_t i = 0; i < flat.size(); ++i) out(static_cast<Eigen::Index>(i / 3), static_cast<int>(i % 3)) = flat[i];
  return out;
}

inline Mat3 mat3(const nlohmann::json& j, const fs::path& where) {
  Mat3 m;
  if (!j.is_array() || j.size() != 3) throw LoadError(where.string() + ": expected a 3x3 matrix");
  for (int r = 0; r < 3; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || row.size() != 3) throw LoadError(where.string() + ": expected a 3x3 matrix");
    for (int c = 0; c < 3; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline Mat4 mat4(const nlohmann::json& j, const fs::path& where) {
  Mat4 m = Mat4::Identity();
  if (!j.is_array() || (j.size() != 4 && j.size() != 3)) throw LoadError(where.string() + ": expected a 4x4 or 3x4 matrix");
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != 4) throw LoadError(where.string() + ": expected a 4x4 or 3x4 matrix");
    for (int c = 0; c < 4; ++c) m(static_cast<int>(r), c) = j[r][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline void set_intrinsics(CameraModel& cam, double fx, double fy, double cx, double cy, double w, double h) {
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = cx;
  cam.cy = cy;
  cam.width = w;
  cam.height = h;
}

/// One sample from canonical world joints and its already-transformed camera joints.
inline CanonicalPose make_sample(const Joints3& world, const Joints3& cam_joints, const CameraModel& cam,
                                 std::array<int, 5> ids, Split split) {
  CanonicalPose p;
  p.joints_3d_world = world;
  p.joints_3d_cam = cam_joints;
  p.keypoints_2d = project(cam_joints, cam);
  p.camera = cam;
  p.subject_id = ids[0];
  p.action_id = ids[1];
  p.sequence_id = ids[2];
  p.camera_id = ids[3];
  p.frame_index = ids[4];
  p.split = split;
  return p;
}

inline std::vector<fs::path> json_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline void require_dir(const fs::path& root) {
  if (!fs::is_directory(root)) throw LoadError("raw root " + root.string() + " is not a directory");
}

inline PoseDataset finish(std::string name, Convention conv, std::vector<CanonicalPose> samples,
                          const AdapterOptions& opt, nlohmann::json extra = nlohmann::json::object()) {
  if (samples.empty()) throw LoadError(name + ": no samples produced");
  PoseDataset ds;
  ds.name = std::move(name);
  ds.convention = conv;
  ds.joint_set = canonical16().name;
  ds.samples = std::move(samples);
  ds.metadata = std::move(extra);
  ds.metadata["sample_frames_threshold_mm"] = opt.sample_frames_threshold_mm;
  for (const auto& s : ds.samples) s.validate(canonical16());
  return ds;
}

}  // namespace detail

/// Human3.6M export:
///   cameras.json          {"S<k>": [{id, R[3][3], t[3] (camera center, mm), f[2], c[2], w, h}, ...]}
///   S<k>/poses/*.json     {action_id, subaction, frames[F][38][3]} world mm
/// Subjects 1, 5, 6, 7, 8 form the train split, 9 and 11 the test split;
/// other subject directories are ignored.
inline PoseDataset adapt_h36m(const std::filesystem::path& root, const AdapterOptions& opt = {}) {
  namespace fs = std::filesystem;
  detail::require_dir(root);
  const JointRemap table = builtin_remap("h36m");
  const fs::path cam_path = root / "cameras.json";
  if (!fs::exists(cam_path)) throw LoadError("missing camera file " + cam_path.string());
  const auto cameras = detail::read_json(cam_path);

  const std::map<int, Split> subjects{{1, Split::train}, {5, Split::train}, {6, Split::train}, {7, Split::train},
                                      {8, Split::train}, {9, Split::test},   {11, Split::test}};
  std::vector<CanonicalPose> samples;
  int found = 0;
  for (const auto& [subject, split] : subjects) {
    const std::string key = "S" + std::to_string(subject);
    const fs::path dir = root / key / "poses";
    if (!fs::exists(root / key)) continue;
    ++found;
    if (!cameras.contains(key) || !cameras[key].is_array() || cameras[key].empty())
      throw LoadError("no cameras for " + key + " in " + cam_path.string());
    const auto files = detail::json_files(dir);
    if (files.empty()) throw LoadError("missing pose files under " + dir.string());

    std::vector<std::pair<CameraModel, int>> rigs;
    for (const auto& c : cameras[key]) {
      const Mat3 r = detail::mat3(c.at("R"), cam_path);
      const auto t = detail::field<std::vector<double>>(c, "t", cam_path);
      const auto f = detail::field<std::vector<double>>(c, "f", cam_path);
      const auto cc = detail::field<std::vector<double>>(c, "c", cam_path);
      if (t.size() != 3 || f.size() != 2 || cc.size() != 2) throw LoadError(cam_path.string() + ": bad camera vector length");
      CameraModel cam = camera_from_h36m(r, Vec3(t[0], t[1], t[2]));
      detail::set_intrinsics(cam, f[0], f[1], cc[0], cc[1], detail::field<double>(c, "w", cam_path),
                             detail::field<double>(c, "h", cam_path));
      cam.validate();
      rigs.emplace_back(cam, detail::field<int>(c, "id", cam_path));
    }

    for (const auto& file : files) {
      const auto j = detail::read_json(file);
      const int action = detail::field<int>(j, "action_id", file);
      const int sub = detail::field<int>(j, "subaction", file);
      if (!j.contains("frames") || !j["frames"].is_array()) throw LoadError(file.string() + ": missing frames");
      std::vector<Joints3> world;
      for (const auto& fr : j["frames"]) world.push_back(remap(detail::rows3(fr, file), table, canonical16()));
      for (std::size_t k : sample_frame_indices(world, opt.sample_frames_threshold_mm))
        for (const auto& [cam, id] : rigs) {
          const Joints3 xc = world_to_camera_h36m(world[k], cam.rotation, cam.position_world());
          samples.push_back(detail::make_sample(world[k], xc, cam, {subject, action, sub, id, static_cast<int>(k)}, split));
        }
    }
  }
  if (found == 0) throw LoadError("no subject directories (S1, S5, S6, S7, S8, S9, S11) under " + root.string());
  return detail::finish("h36m", Convention::h36m, std::move(samples), opt);
}

/// GPA export: annotations.json {"images": [{subject, sequence, frame, camera,
/// rvec[3], t_cm[3], f[2], c[2], w, h, joints_world[34][3] (mm), split}]}.
/// Mean bone length must fall in [50, 600] mm, which catches unit mistakes.
inline PoseDataset adapt_gpa(const std::filesystem::path& root, const AdapterOptions& opt = {}) {
  namespace fs = std::filesystem;
  detail::require_dir(root);
  const JointRemap table = builtin_remap("gpa");
  const fs::path path = root / "annotations.json";
  if (!fs::exists(path)) throw LoadError("missing annotation file " + path.string());
  const auto j = detail::read_json(path);
  if (!j.contains("images") || !j["images"].is_array()) throw LoadError(path.string() + ": missing images array");

  struct Frame {
    int frame;
    Joints3 world;
    CameraModel cam;
    Split split;
  };
  std::map<std::tuple<int, int, int>, std::vector<Frame>> groups;  // (subject, sequence, camera)
  double bone_sum = 0.0;
  std::size_t bone_count = 0;
  for (const auto& im : j["images"]) {
    const auto rv = detail::field<std::vector<double>>(im, "rvec", path);
    const auto t = detail::field<std::vector<double>>(im, "t_cm", path);
    const auto f = detail::field<std::vector<double>>(im, "f", path);
    const auto c = detail::field<std::vector<double>>(im, "c", path);
    if (rv.size() != 3 || t.size() != 3 || f.size() != 2 || c.size() != 2) throw LoadError(path.string() + ": bad camera vector length");
    const auto split_name = detail::field<std::string>(im, "split", path);
    if (split_name != "train" && split_name != "test") throw LoadError(path.string() + ": split must be train or test");
    CameraModel cam = camera_from_gpa(Vec3(rv[0], rv[1], rv[2]), Vec3(t[0], t[1], t[2]));
    detail::set_intrinsics(cam, f[0], f[1], c[0], c[1], detail::field<double>(im, "w", path), detail::field<double>(im, "h", path));
    Joints3 world = remap(detail::rows3(im.at("joints_world"), path), table, canonical16());
    for (double b : bone_lengths(world, canonical16())) {
      bone_sum += b;
      ++bone_count;
    }
    groups[{detail::field<int>(im, "subject", path), detail::field<int>(im, "sequence", path),
            detail::field<int>(im, "camera", path)}]
        .push_back({detail::field<int>(im, "frame", path), std::move(world), cam,
                    split_name == "train" ? Split::train : Split::test});
  }
  if (bone_count == 0) throw LoadError(path.string() + ": no images");
  const double mean_bone = bone_sum / static_cast<double>(bone_count);
  if (mean_bone < 50.0 || mean_bone > 600.0)
    throw LoadError(path.string() + ": mean bone length " + std::to_string(mean_bone) +
                    " mm outside [50, 600]; check joint and translation units");

  std::vector<CanonicalPose> samples;
  for (auto& [key, frames] : groups) {
    std::sort(frames.begin(), frames.end(), [](const Frame& a, const Frame& b) { return a.frame < b.frame; });
    std::vector<Joints3> world;
    for (const auto& f : frames) world.push_back(f.world);
    for (std::size_t k : sample_frame_indices(world, opt.sample_frames_threshold_mm)) {
      const auto& f = frames[k];
      const Joints3 xc = world_to_camera_gpa(f.world, rotation_to_rvec(f.cam.rotation.transpose()), f.cam.translation / 10.0);
      const auto [subject, sequence, camera] = key;
      samples.push_back(detail::make_sample(f.world, xc, f.cam, {subject, 0, sequence, camera, f.frame}, f.split));
    }
  }
  return detail::finish("gpa", Convention::gpa, std::move(samples), opt, {{"mean_bone_mm", mean_bone}});
}

/// 3DPW export: sequenceFiles/{train,test}/*.json with {sequence_id,
/// cam_intrinsics[3][3], cam_poses[F][4][4] (meters), jointPositions[P][F][72]
/// (meters), image_size[2] optional}. Every person in a sequence becomes its
/// own stream (subject id = person index + 1).
inline PoseDataset adapt_3dpw(const std::filesystem::path& root, const AdapterOptions& opt = {}) {
  namespace fs = std::filesystem;
  detail::require_dir(root);
  const JointRemap table = builtin_remap("3dpw");
  std::vector<CanonicalPose> samples;
  int files_seen = 0;
  for (const auto& [dir, split] : {std::pair{"train", Split::train}, std::pair{"test", Split::test}}) {
    for (const auto& file : detail::json_files(root / "sequenceFiles" / dir)) {
      ++files_seen;
      const auto j = detail::read_json(file);
      const int seq = detail::field<int>(j, "sequence_id", file);
      const Mat3 k = detail::mat3(j.at("cam_intrinsics"), file);
      std::vector<double> size{1920.0, 1080.0};
      if (j.contains("image_size")) size = detail::field<std::vector<double>>(j, "image_size", file);
      if (!j.contains("cam_poses") || !j["cam_poses"].is_array()) throw LoadError(file.string() + ": missing cam_poses");
      std::vector<Mat4> poses;
      for (const auto& e : j["cam_poses"]) {
        Mat4 m = detail::mat4(e, file);
        m.block<3, 1>(0, 3) *= 1000.0;
        poses.push_back(m);
      }
      const auto people = detail::field<std::vector<std::vector<std::vector<double>>>>(j, "jointPositions", file);
      for (std::size_t person = 0; person < people.size(); ++person) {
        const auto& frames = people[person];
        if (frames.size() != poses.size())
          throw LoadError(file.string() + ": person " + std::to_string(person) + " frame count differs from cam_poses");
        std::vector<Joints3> world;
        for (const auto& flat : frames) world.push_back(remap(Joints3(detail::flat3(flat, file) * 1000.0), table, canonical16()));
        for (std::size_t f : sample_frame_indices(world, opt.sample_frames_threshold_mm)) {
          CameraModel cam = camera_from_extrinsic(poses[f], Convention::pw3d);
          detail::set_intrinsics(cam, k(0, 0), k(1, 1), k(0, 2), k(1, 2), size.at(0), size.at(1));
          const Joints3 xc = world_to_camera_3dpw(world[f], poses[f]);
          samples.push_back(detail::make_sample(world[f], xc, cam, {static_cast<int>(person) + 1, 0, seq, 0, static_cast<int>(f)}, split));
        }
      }
    }
  }
  if (files_seen == 0) throw LoadError("no sequence files under " + (root / "sequenceFiles").string() + "/{train,test}");
  return detail::finish("3dpw", Convention::pw3d, std::move(samples), opt);
}

/// SURREAL export: {train,test}/**/*.json clips with {sequence_id, subject_id
/// (optional), extrinsic[3][4] (meters), intrinsic[3][3] (optional), width,
/// height (optional), frames[T][24][3] (meters)}. Invalid frames are dropped
/// by filter_invalid and the report is stored in the manifest metadata.
inline PoseDataset adapt_surreal(const std::filesystem::path& root, const AdapterOptions& opt = {}) {
  namespace fs = std::filesystem;
  detail::require_dir(root);
  const JointRemap table = builtin_remap("surreal");
  const JointSet& set = canonical16();
  std::vector<CanonicalPose> samples;
  FilterReport report;
  int files_seen = 0;
  for (const auto& [dir, split] : {std::pair{"train", Split::train}, std::pair{"test", Split::test}}) {
    for (const auto& file : detail::json_files(root / dir)) {
      ++files_seen;
      const auto j = detail::read_json(file);
      const int seq = detail::field<int>(j, "sequence_id", file);
      const int subject = j.contains("subject_id") ? detail::field<int>(j, "subject_id", file) : 0;
      Mat4 e = detail::mat4(j.at("extrinsic"), file);
      e.block<3, 1>(0, 3) *= 1000.0;
      CameraModel cam = camera_from_extrinsic(e, Convention::surreal);
      Mat3 k;
      k << 600.0, 0.0, 160.0, 0.0, 600.0, 120.0, 0.0, 0.0, 1.0;
      if (j.contains("intrinsic")) k = detail::mat3(j["intrinsic"], file);
      detail::set_intrinsics(cam, k(0, 0), k(1, 1), k(0, 2), k(1, 2), j.value("width", 320.0), j.value("height", 240.0));
      if (!j.contains("frames") || !j["frames"].is_array()) throw LoadError(file.string() + ": missing frames");

      // Validity first, so corrupted frames never drive frame thinning.
      std::vector<Joints3> world;
      std::vector<int> index;
      const auto& frames = j["frames"];
      for (std::size_t f = 0; f < frames.size(); ++f) {
        ++report.total;
        const Joints3 raw = detail::rows3(frames[f], file) * 1000.0;
        if (raw.rows() != table.source_joint_count) throw LoadError(file.string() + ": frame joint count");
        if (!all_finite(raw)) {
          ++report.dropped;
          ++report.dropped_by_reason["non-finite"];
          continue;
        }
        Joints3 w = remap(raw, table, set);
        CanonicalPose probe;
        probe.joints_3d_cam = world_to_camera_3dpw(w, e);
        probe.keypoints_2d = Joints2::Zero(set.size(), 2);
        if (auto reason = invalid_reason(probe, set, opt.limits); !reason.empty()) {
          ++report.dropped;
          ++report.dropped_by_reason[reason];
          continue;
        }
        world.push_back(std::move(w));
        index.push_back(static_cast<int>(f));
      }
      for (std::size_t k2 : sample_frame_indices(world, opt.sample_frames_threshold_mm)) {
        const Joints3 xc = world_to_camera_3dpw(world[k2], e);
        samples.push_back(detail::make_sample(world[k2], xc, cam, {subject, 0, seq, 0, index[k2]}, split));
      }
    }
  }
  if (files_seen == 0) throw LoadError("no clip files under " + root.string() + "/{train,test}");
  return detail::finish("surreal", Convention::surreal, std::move(samples), opt, {{"filter", report.to_json()}});
}

inline PoseDataset adapt(const std::string& dataset, const std::filesystem::path& root, const AdapterOptions& opt = {}) {
  if (dataset == "h36m") return adapt_h36m(root, opt);
  if (dataset == "gpa") return adapt_gpa(root, opt);
  if (dataset == "3dpw") return adapt_3dpw(root, opt);
  if (dataset == "surreal") return adapt_surreal(root, opt);
  throw Error(ErrorClass::validation, "unknown dataset '" + dataset + "' (h36m, gpa, 3dpw, surreal)");
}

}  // namespace poseval
