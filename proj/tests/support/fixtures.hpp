#pragma once

#include <poseval/core.hpp>
#include <poseval/skeleton.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

namespace poseval::testing {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "poseval";
    if (info) name += std::string("-") + info->test_suite_name() + "-" + info->name();
    for (char& c : name)
      if (c == '/') c = '_';
    std::random_device rd;
    path_ = fs::temp_directory_path() / (name + "-" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Uniform random joints in a 1 m cube around the origin.
inline Joints3 random_joints(std::mt19937_64& rng, int joints = 16, double half_extent = 500.0) {
  std::uniform_real_distribution<double> u(-half_extent, half_extent);
  Joints3 out(joints, 3);
  for (int r = 0; r < joints; ++r)
    for (int c = 0; c < 3; ++c) out(r, c) = u(rng);
  return out;
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

/// Upright canonical-16 pose facing +y with the hip at the origin
/// (x towards the subject's right, z up).
inline Joints3 upright_pose() {
  Joints3 p(16, 3);
  p << 0, 0, 0,          // hip
      130, 0, 0,         // right hip
      130, 0, -450,      // right knee
      130, 0, -890,      // right ankle
      -130, 0, 0,        // left hip
      -130, 0, -450,     // left knee
      -130, 0, -890,     // left ankle
      0, 0, 230,         // spine
      0, 0, 490,         // neck
      0, 10, 680,        // head
      -170, 0, 490,      // left shoulder
      -170, 0, 210,      // left elbow
      -170, 30, -40,     // left wrist
      170, 0, 490,       // right shoulder
      170, 0, 210,       // right elbow
      170, 30, -40;      // right wrist
  return p;
}

}  // namespace poseval::testing
