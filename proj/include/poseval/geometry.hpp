#pragma once

#include <poseval/core.hpp>
#include <poseval/skeleton.hpp>

#include <Eigen/SVD>

#include <string>
#include <string_view>

namespace poseval {

/// The four world-to-camera parameterizations found in the supported datasets.
enum class Convention { h36m, gpa, pw3d, surreal };

inline std::string_view to_string(Convention c) {
  switch (c) {
    case Convention::h36m: return "h36m";
    case Convention::gpa: return "gpa";
    case Convention::pw3d: return "3dpw";
    case Convention::surreal: return "surreal";
  }
  return "?";
}

inline Convention convention_from_string(std::string_view s) {
  if (s == "h36m") return Convention::h36m;
  if (s == "gpa") return Convention::gpa;
  if (s == "3dpw") return Convention::pw3d;
  if (s == "surreal") return Convention::surreal;
  throw Error(ErrorClass::validation, "unknown dataset convention '" + std::string(s) + "'");
}

/// Pinhole camera. Extrinsics are normalized to x_cam = rotation * x_world + translation
/// whatever the source convention was; `convention` records where they came from.
struct CameraModel {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  double width = 1.0, height = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  Convention convention = Convention::h36m;

  void validate() const {
    if (!(fx > 0 && fy > 0)) throw Error(ErrorClass::data, "camera focal lengths must be positive");
    if (!(width > 0 && height > 0)) throw Error(ErrorClass::data, "camera image size must be positive");
    if (!all_finite(rotation) || !all_finite(translation))
      throw Error(ErrorClass::data, "camera extrinsics contain non-finite values");
    if ((rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
        std::abs(rotation.determinant() - 1.0) > 1e-6)
      throw Error(ErrorClass::data, "camera rotation is not a proper orthonormal matrix");
  }

  /// Camera center in world coordinates.
  Vec3 position_world() const { return -rotation.transpose() * translation; }
};

struct ViewpointAngles {
  double elevation = 0.0;  // degrees, [-90, 90]
  double azimuth = 0.0;    // degrees, (-180, 180]
};

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

/// Nearest proper rotation to a matrix already within 1e-6 of orthonormal;
/// anything further off is returned unchanged so validation rejects it.
inline Mat3 snap_rotation(const Mat3& r) {
  if (!all_finite(r) || (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
      std::abs(r.determinant() - 1.0) > 1e-6)
    return r;
  const Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

/// Axis-angle vector (radians) to rotation matrix.
inline Mat3 rodrigues(const Vec3& rvec) {
  require_finite(rvec, "rotation vector");
  const double theta = rvec.norm();
  if (theta < 1e-12) return Mat3::Identity() + skew(rvec);
  const Vec3 k = rvec / theta;
  const double c = std::cos(theta);
  return c * Mat3::Identity() + (1.0 - c) * k * k.transpose() + std::sin(theta) * skew(k);
}

/// Inverse of rodrigues for proper rotations; angle in [0, pi].
inline Vec3 rotation_to_rvec(const Mat3& r) {
  Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

/// x_cam = R (x_world - t), row-wise. `t` is the camera center in world mm.
inline Joints3 world_to_camera_h36m(const Joints3& world, const Mat3& rotation, const Vec3& t) {
  require_finite(world, "world joints");
  require_finite(rotation, "rotation");
  require_finite(t, "translation");
  return ((rotation * (world.transpose().colwise() - t))).transpose();
}

/// x_cam = R(rvec)^T x_world + 10 t_cm, row-wise. The source stores translation in centimeters.
inline Joints3 world_to_camera_gpa(const Joints3& world, const Vec3& rvec, const Vec3& t_cm) {
  require_finite(world, "world joints");
  require_finite(t_cm, "translation");
  const Mat3 r = rodrigues(rvec);
  return ((r.transpose() * world.transpose()).colwise() + 10.0 * t_cm).transpose();
}

inline void validate_extrinsic(const Mat4& e) {
  if (!all_finite(e)) throw Error(ErrorClass::data, "extrinsic matrix contains non-finite values");
  if (std::abs(e(3, 0)) > 1e-9 || std::abs(e(3, 1)) > 1e-9 || std::abs(e(3, 2)) > 1e-9 ||
      std::abs(e(3, 3) - 1.0) > 1e-9)
    throw Error(ErrorClass::data, "malformed extrinsic: bottom row must be (0, 0, 0, 1)");
}

/// x_cam = (E [x_world; 1]) truncated to three components.
inline Joints3 world_to_camera_3dpw(const Joints3& world, const Mat4& extrinsic) {
  require_finite(world, "world joints");
  validate_extrinsic(extrinsic);
  Eigen::Matrix<double, 4, Eigen::Dynamic> homog(4, world.rows());
  homog.topRows<3>() = world.transpose();
  homog.row(3).setOnes();
  return (extrinsic * homog).topRows<3>().transpose();
}

inline Joints3 world_to_camera(const Joints3& world, const CameraModel& cam) {
  require_finite(world, "world joints");
  return ((cam.rotation * world.transpose()).colwise() + cam.translation).transpose();
}

inline CameraModel camera_from_h36m(const Mat3& rotation, const Vec3& center_mm) {
  CameraModel c;
  c.rotation = rotation;
  c.translation = -rotation * center_mm;
  c.convention = Convention::h36m;
  return c;
}

inline CameraModel camera_from_gpa(const Vec3& rvec, const Vec3& t_cm) {
  CameraModel c;
  c.rotation = rodrigues(rvec).transpose();
  c.translation = 10.0 * t_cm;
  c.convention = Convention::gpa;
  return c;
}

inline CameraModel camera_from_extrinsic(const Mat4& e, Convention conv = Convention::pw3d) {
  validate_extrinsic(e);
  CameraModel c;
  c.rotation = e.topLeftCorner<3, 3>();
  c.translation = e.topRightCorner<3, 1>();
  c.convention = conv;
  return c;
}

inline Mat4 extrinsic_matrix(const CameraModel& cam) {
  Mat4 e = Mat4::Identity();
  e.topLeftCorner<3, 3>() = cam.rotation;
  e.topRightCorner<3, 1>() = cam.translation;
  return e;
}

/// Perspective projection to pixels. Every joint must be in front of the camera.
inline Joints2 project(const Joints3& cam_space, const CameraModel& cam) {
  require_finite(cam_space, "camera-space joints");
  Joints2 uv(cam_space.rows(), 2);
  for (Eigen::Index k = 0; k < cam_space.rows(); ++k) {
    const double z = cam_space(k, 2);
    if (!(z > 0.0)) throw BehindCameraError("joint " + std::to_string(k) + " has z = " + std::to_string(z));
    uv(k, 0) = cam.fx * cam_space(k, 0) / z + cam.cx;
    uv(k, 1) = cam.fy * cam_space(k, 1) / z + cam.cy;
  }
  return uv;
}

/// Orthonormal frame anchored at the hip. `lateral` points from the right hip to
/// the left hip, `up` follows the hip-to-neck direction, `forward` is the facing.
struct SubjectFrame {
  Vec3 origin;
  Vec3 lateral;  // normalize(left_hip - right_hip)
  Vec3 up;       // forward x lateral
  Vec3 forward;  // normalize(lateral x normalize(neck - hip))
};

inline SubjectFrame subject_frame(const Joints3& pose, const JointSet& set) {
  const int hip = set.root_index;
  const int lhip = set.index_of("left_hip");
  const int rhip = set.index_of("right_hip");
  const int neck = set.index_of("neck");
  if (lhip < 0 || rhip < 0 || neck < 0 || pose.rows() != set.size())
    throw UndefinedViewpointError("joint set '" + set.name + "' lacks hips or neck");
  require_finite(pose, "pose");
  const Vec3 h = pose.row(hip).transpose();
  const Vec3 across = (pose.row(lhip) - pose.row(rhip)).transpose();
  const Vec3 up_raw = pose.row(neck).transpose() - h;
  constexpr double eps = 1e-9;
  if (across.norm() < eps) throw UndefinedViewpointError("left and right hip coincide");
  if (up_raw.norm() < eps) throw UndefinedViewpointError("neck coincides with hip");
  const Vec3 r = across.normalized();
  const Vec3 u0 = up_raw.normalized();
  const Vec3 f_raw = r.cross(u0);
  if (f_raw.norm() < 1e-6) throw UndefinedViewpointError("hip axis is collinear with the spine");
  const Vec3 f = f_raw.normalized();
  return {h, r, f.cross(r), f};
}

/// Elevation/azimuth of a camera position seen from the subject's own frame.
/// Azimuth 0 is in front of the subject and grows towards `lateral` (the left-hip
/// side); elevation is positive along `up`.
inline ViewpointAngles subject_viewpoint(const Joints3& pose, const Vec3& camera_position, const JointSet& set) {
  const SubjectFrame fr = subject_frame(pose, set);
  const Vec3 d = camera_position - fr.origin;
  const double n = d.norm();
  if (!(n > 1e-9)) throw UndefinedViewpointError("camera coincides with the hip");
  ViewpointAngles a;
  a.elevation = rad2deg(std::asin(std::clamp(d.dot(fr.up) / n, -1.0, 1.0)));
  a.azimuth = rad2deg(std::atan2(d.dot(fr.lateral), d.dot(fr.forward)));
  if (a.azimuth <= -180.0) a.azimuth = 180.0;
  return a;
}

/// Camera-space poses have the camera at the origin.
inline ViewpointAngles subject_viewpoint(const Joints3& camera_space_pose, const JointSet& set) {
  return subject_viewpoint(camera_space_pose, Vec3::Zero(), set);
}

}  // namespace poseval
