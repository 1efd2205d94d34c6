#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace poseval {

// All lengths are millimeters unless a name says otherwise.
using Joints3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Joints2 = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Vec3 = Eigen::Vector3d;

/// Broad failure class. Maps one-to-one onto the CLI exit codes.
enum class ErrorClass : int {
  validation = 1,
  data = 2,
  prediction = 3,
  internal = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), class_(cls) {}
  ErrorClass error_class() const noexcept { return class_; }
  int exit_code() const noexcept { return static_cast<int>(class_); }

 private:
  ErrorClass class_;
};

struct RemapError : Error {
  explicit RemapError(const std::string& w) : Error(ErrorClass::data, "remap: " + w) {}
};
struct InvalidSampleError : Error {
  explicit InvalidSampleError(const std::string& w) : Error(ErrorClass::data, "invalid sample: " + w) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error(ErrorClass::validation, "shape mismatch: " + w) {}
};
struct BehindCameraError : Error {
  explicit BehindCameraError(const std::string& w) : Error(ErrorClass::data, "behind camera: " + w) {}
};
struct UndefinedViewpointError : Error {
  explicit UndefinedViewpointError(const std::string& w)
      : Error(ErrorClass::data, "undefined viewpoint: " + w) {}
};
struct DegenerateAlignmentError : Error {
  explicit DegenerateAlignmentError(const std::string& w)
      : Error(ErrorClass::data, "alignment degenerate: " + w) {}
};
struct NotCenteredError : Error {
  explicit NotCenteredError(const std::string& w) : Error(ErrorClass::validation, "not hip-centered: " + w) {}
};
struct CorrelationError : Error {
  explicit CorrelationError(const std::string& w) : Error(ErrorClass::data, "undefined correlation: " + w) {}
};
struct LoadError : Error {
  explicit LoadError(const std::string& w) : Error(ErrorClass::data, "load: " + w) {}
};
struct ArchiveError : Error {
  enum class Kind { corrupt, version, shape, io };
  ArchiveError(Kind k, const std::string& w) : Error(ErrorClass::data, label(k) + w), kind(k) {}
  Kind kind;

 private:
  static std::string label(Kind k) {
    switch (k) {
      case Kind::corrupt: return "archive corrupt: ";
      case Kind::version: return "archive version: ";
      case Kind::shape: return "archive shape: ";
      case Kind::io: return "archive io: ";
    }
    return "archive: ";
  }
};
struct SpecError : Error {
  explicit SpecError(const std::string& w) : Error(ErrorClass::validation, "synth spec: " + w) {}
};

/// Row-wise check used by every operation that rejects NaN/inf input.
template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.array().isFinite().all();
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (!all_finite(m)) throw InvalidSampleError(std::string(what) + " contains non-finite values");
}

inline constexpr double kPi = 3.14159265358979323846;
inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

}  // namespace poseval
