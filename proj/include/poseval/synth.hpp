#pragma once

// Deterministic synthetic datasets: randomized canonical-16 skeletons seen by
// a rig whose distance, height and focal statistics default to values typical
// of each dataset convention.

#include <poseval/datasets.hpp>
#include <poseval/geometry.hpp>
#include <poseval/skeleton.hpp>

#include <nlohmann/json.hpp>

#include <array>
#include <random>
#include <string>
#include <vector>

namespace poseval {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

struct SynthSpec {
  enum class Rig { random, ring };

  std::string dataset = "synthetic";
  Convention convention = Convention::h36m;
  std::int64_t count = 1000;
  std::uint64_t seed = 0;
  int subjects = 5;
  std::vector<int> test_subjects;  // empty: the last two subject ids
  int frames_per_sequence = 50;
  Rig rig = Rig::random;
  MeanStd distance_mm;
  MeanStd height_mm;
  double ring_elevation_deg = 10.0;
  MeanStd focal_px;
  double width = 1000, height = 1000;
  double limb_swing_deg = 35.0;
  double torso_swing_deg = 15.0;

  /// Rig defaults for a dataset-like convention.
  static SynthSpec like(Convention c) {
    SynthSpec s;
    s.convention = c;
    s.dataset = "synthetic-" + std::string(to_string(c));
    switch (c) {
      case Convention::h36m:
        s.distance_mm = {5200, 800}, s.height_mm = {1600, 50}, s.focal_px = {1146.8, 2.0};
        s.width = 1000, s.height = 1002;
        break;
      case Convention::gpa:
        s.distance_mm = {5100, 1200}, s.height_mm = {1000, 300}, s.focal_px = {1172.4, 121.3};
        s.width = 1920, s.height = 1080;
        break;
      case Convention::pw3d:
        s.distance_mm = {3500, 700}, s.height_mm = {600, 800}, s.focal_px = {1962.2, 1.5};
        s.width = 1920, s.height = 1080;
        break;
      case Convention::surreal:
        s.distance_mm = {8000, 1000}, s.height_mm = {900, 100}, s.focal_px = {600, 0};
        s.width = 320, s.height = 240;
        break;
    }
    return s;
  }

  void validate() const {
    if (count < 0) throw SpecError("count must be >= 0");
    if (subjects < 1) throw SpecError("subjects must be >= 1");
    if (frames_per_sequence < 1) throw SpecError("frames_per_sequence must be >= 1");
    for (int t : test_subjects)
      if (t < 1 || t > subjects) throw SpecError("test subject " + std::to_string(t) + " out of range");
    if (!(limb_swing_deg >= 0 && limb_swing_deg <= 180))
      throw SpecError("limb_swing_deg must lie in [0, 180] (infeasible joint limits)");
    if (!(torso_swing_deg >= 0 && torso_swing_deg <= 60))
      throw SpecError("torso_swing_deg must lie in [0, 60] (infeasible joint limits)");
    if (!(distance_mm.mean > 1500 && distance_mm.std >= 0)) throw SpecError("camera distance must exceed 1.5 m");
    if (!(height_mm.std >= 0)) throw SpecError("height std must be >= 0");
    if (!(focal_px.mean > 0 && focal_px.std >= 0)) throw SpecError("focal length must be positive");
    if (!(width > 0 && height > 0)) throw SpecError("image size must be positive");
    if (!(ring_elevation_deg > -80 && ring_elevation_deg < 80)) throw SpecError("ring elevation must lie in (-80, 80)");
  }

  std::vector<int> effective_test_subjects() const {
    if (!test_subjects.empty()) return test_subjects;
    if (subjects < 3) return {subjects};
    return {subjects - 1, subjects};
  }

  nlohmann::json to_json() const {
    return {{"dataset", dataset},
            {"convention", std::string(to_string(convention))},
            {"count", count},
            {"seed", seed},
            {"subjects", subjects},
            {"test_subjects", effective_test_subjects()},
            {"frames_per_sequence", frames_per_sequence},
            {"rig",
             {{"type", rig == Rig::ring ? "ring" : "random"},
              {"distance_mm", {distance_mm.mean, distance_mm.std}},
              {"height_mm", {height_mm.mean, height_mm.std}},
              {"elevation_deg", ring_elevation_deg}}},
            {"focal_px", {focal_px.mean, focal_px.std}},
            {"image", {width, height}},
            {"joint_limits", {{"limb_swing_deg", limb_swing_deg}, {"torso_swing_deg", torso_swing_deg}}}};
  }

  /// Missing keys fall back to the convention's defaults.
  static SynthSpec from_json(const nlohmann::json& j) {
    try {
      SynthSpec s = like(convention_from_string(j.value("convention", std::string("h36m"))));
      for (const auto& [key, _] : j.items()) {
        static const std::set<std::string> known{"dataset", "convention", "count", "seed", "subjects", "test_subjects",
                                                 "frames_per_sequence", "rig", "focal_px", "image", "joint_limits"};
        if (!known.count(key)) throw SpecError("unknown key '" + key + "'");
      }
      auto pair = [](const nlohmann::json& a) {
        auto v = a.get<std::vector<double>>();
        if (v.size() != 2) throw SpecError("expected [mean, std]");
        return MeanStd{v[0], v[1]};
      };
      s.dataset = j.value("dataset", s.dataset);
      s.count = j.value("count", s.count);
      s.seed = j.value("seed", s.seed);
      s.subjects = j.value("subjects", s.subjects);
      if (j.contains("test_subjects")) s.test_subjects = j["test_subjects"].get<std::vector<int>>();
      s.frames_per_sequence = j.value("frames_per_sequence", s.frames_per_sequence);
      if (j.contains("rig")) {
        const auto& r = j["rig"];
        const auto type = r.value("type", std::string("random"));
        if (type == "ring") {
          s.rig = Rig::ring;
        } else if (type == "random") {
          s.rig = Rig::random;
        } else {
          throw SpecError("unknown rig type '" + type + "'");
        }
        if (r.contains("distance_mm")) s.distance_mm = pair(r["distance_mm"]);
        if (r.contains("height_mm")) s.height_mm = pair(r["height_mm"]);
        s.ring_elevation_deg = r.value("elevation_deg", s.ring_elevation_deg);
      }
      if (j.contains("focal_px")) s.focal_px = pair(j["focal_px"]);
      if (j.contains("image")) {
        auto wh = j["image"].get<std::vector<double>>();
        if (wh.size() != 2) throw SpecError("image must be [width, height]");
        s.width = wh[0], s.height = wh[1];
      }
      if (j.contains("joint_limits")) {
        s.limb_swing_deg = j["joint_limits"].value("limb_swing_deg", s.limb_swing_deg);
        s.torso_swing_deg = j["joint_limits"].value("torso_swing_deg", s.torso_swing_deg);
      }
      s.validate();
      return s;
    } catch (const nlohmann::json::exception& e) {
      throw SpecError(e.what());
    }
  }
};

namespace detail {

// Canonical-16 rest pose in a body frame: x to the subject's right, y forward, z up.
struct RestBone {
  int joint;
  int parent;
  Vec3 direction;
  double length_mm;
  bool torso;
};

inline const std::array<RestBone, 15>& rest_bones() {
  static const std::array<RestBone, 15> bones{{
      {1, 0, {1, 0, 0}, 130, false},    // right hip
      {2, 1, {0, 0, -1}, 450, false},   // right knee
      {3, 2, {0, 0, -1}, 440, false},   // right ankle
      {4, 0, {-1, 0, 0}, 130, false},   // left hip
      {5, 4, {0, 0, -1}, 450, false},   // left knee
      {6, 5, {0, 0, -1}, 440, false},   // left ankle
      {7, 0, {0, 0, 1}, 230, true},     // spine
      {8, 7, {0, 0, 1}, 260, true},     // neck
      {9, 8, {0, 0, 1}, 190, true},     // head
      {10, 8, {-1, 0, 0}, 170, false},  // left shoulder
      {11, 10, {0, 0, -1}, 280, false}, // left elbow
      {12, 11, {0, 0, -1}, 250, false}, // left wrist
      {13, 8, {1, 0, 0}, 170, false},   // right shoulder
      {14, 13, {0, 0, -1}, 280, false}, // right elbow
      {15, 14, {0, 0, -1}, 250, false}, // right wrist
  }};
  return bones;
}

inline Mat3 look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 z = (target - eye).normalized();
  Vec3 up = Vec3::UnitZ();
  if (std::abs(z.dot(up)) > 0.999) up = Vec3::UnitY();
  const Vec3 x = z.cross(up).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = z.transpose();
  return r;
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-9);
  return v.normalized();
}

}  // namespace detail

/// World-space canonical-16 pose for one subject (fixed bone lengths) with
/// random bone swings within the configured joint limits.
inline Joints3 synth_world_pose(const std::array<double, 15>& bone_lengths, const SynthSpec& spec,
                                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Joints3 body = Joints3::Zero(16, 3);
  const auto& bones = detail::rest_bones();
  for (std::size_t b = 0; b < bones.size(); ++b) {
    const auto& bone = bones[b];
    Vec3 dir = bone.direction;
    // hip bones stay rigid so the pelvis axis is always well defined
    if (bone.parent != 0 || bone.torso) {
      const double limit = deg2rad(bone.torso ? spec.torso_swing_deg : spec.limb_swing_deg);
      dir = Eigen::AngleAxisd(limit * unit(rng), detail::random_unit(rng)) * dir;
    }
    body.row(bone.joint) = body.row(bone.parent) + bone_lengths[b] * dir.transpose();
  }
  std::uniform_real_distribution<double> yaw(-kPi, kPi);
  std::uniform_real_distribution<double> offset(-2000.0, 2000.0);
  const Mat3 rot = Eigen::AngleAxisd(yaw(rng), Vec3::UnitZ()).toRotationMatrix();
  const Vec3 hip(offset(rng), offset(rng), bone_lengths[1] + bone_lengths[2]);
  return ((rot * body.transpose()).colwise() + hip).transpose();
}

inline PoseDataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<std::array<double, 15>> lengths(static_cast<std::size_t>(spec.subjects));
  for (auto& l : lengths) {
    const double scale = 1.0 + 0.05 * normal(rng);
    for (std::size_t b = 0; b < l.size(); ++b)
      l[b] = detail::rest_bones()[b].length_mm * scale * (1.0 + 0.03 * normal(rng));
  }
  const auto test_ids = spec.effective_test_subjects();
  const JointSet& set = canonical16();

  PoseDataset ds;
  ds.name = spec.dataset;
  ds.convention = spec.convention;
  ds.joint_set = set.name;
  ds.metadata = {{"synth_spec", spec.to_json()}};
  ds.samples.reserve(static_cast<std::size_t>(spec.count));

  for (std::int64_t k = 0; k < spec.count; ++k) {
    const int sequence = static_cast<int>(k / spec.frames_per_sequence);
    const int subject = 1 + sequence % spec.subjects;
    const Joints3 world = synth_world_pose(lengths[static_cast<std::size_t>(subject - 1)], spec, rng);
    const SubjectFrame frame = subject_frame(world, set);

    CanonicalPose p;
    for (int attempt = 0;; ++attempt) {
      if (attempt == 1000) throw SpecError("rig cannot place a camera in front of every joint");
      double distance = 0;
      do {
        distance = spec.distance_mm.mean + spec.distance_mm.std * normal(rng);
      } while (distance < 1000.0);
      const double azimuth = (2.0 * unit(rng) - 1.0) * kPi;

      Vec3 eye;
      if (spec.rig == SynthSpec::Rig::ring) {
        const double el = deg2rad(spec.ring_elevation_deg);
        const Vec3 dir = std::cos(el) * (std::cos(azimuth) * frame.forward + std::sin(azimuth) * frame.lateral) +
                         std::sin(el) * frame.up;
        eye = frame.origin + distance * dir;
      } else {
        const double dz = std::clamp(spec.height_mm.mean + spec.height_mm.std * normal(rng) - frame.origin.z(),
                                     -0.95 * distance, 0.95 * distance);
        const double horizontal = std::sqrt(distance * distance - dz * dz);
        const Vec3 fwd = Vec3(frame.forward.x(), frame.forward.y(), 0.0).normalized();
        const Vec3 side = Vec3::UnitZ().cross(fwd);
        eye = frame.origin + horizontal * (std::cos(azimuth) * fwd + std::sin(azimuth) * side) + dz * Vec3::UnitZ();
      }

      const Mat3 r = detail::look_at(eye, frame.origin);
      switch (spec.convention) {
        case Convention::h36m:
          p.camera = camera_from_h36m(r, eye);
          p.joints_3d_cam = world_to_camera_h36m(world, r, eye);
          break;
        case Convention::gpa: {
          const Vec3 rvec = rotation_to_rvec(r.transpose());
          const Vec3 t_cm = -(r * eye) / 10.0;
          p.camera = camera_from_gpa(rvec, t_cm);
          p.joints_3d_cam = world_to_camera_gpa(world, rvec, t_cm);
          break;
        }
        case Convention::pw3d:
        case Convention::surreal: {
          Mat4 e = Mat4::Identity();
          e.topLeftCorner<3, 3>() = r;
          e.topRightCorner<3, 1>() = -r * eye;
          p.camera = camera_from_extrinsic(e, spec.convention);
          p.joints_3d_cam = world_to_camera_3dpw(world, e);
          break;
        }
      }
      // keep every joint well in front of the image plane
      if (p.joints_3d_cam.col(2).minCoeff() > 100.0) break;
    }
    double f = 0;
    do {
      f = spec.focal_px.mean + spec.focal_px.std * normal(rng);
    } while (f <= 1.0);
    p.camera.fx = p.camera.fy = f;
    p.camera.cx = spec.width / 2.0;
    p.camera.cy = spec.height / 2.0;
    p.camera.width = spec.width;
    p.camera.height = spec.height;
    p.keypoints_2d = project(p.joints_3d_cam, p.camera);
    p.joints_3d_world = world;
    p.subject_id = subject;
    p.sequence_id = sequence;
    p.action_id = 0;
    p.camera_id = 0;
    p.frame_index = static_cast<int>(k % spec.frames_per_sequence);
    p.split = std::find(test_ids.begin(), test_ids.end(), subject) != test_ids.end() ? Split::test : Split::train;
    ds.samples.push_back(std::move(p));
  }
  return ds;
}

}  // namespace poseval
