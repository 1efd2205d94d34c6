#pragma once

#include <poseval/core.hpp>
#include <poseval/remap_tables.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace poseval {

/// Ordered joint labels with the root (hip) at index 0. `parents[k]` is the
/// bone parent of joint k (-1 for the root) and drives bone-length checks.
struct JointSet {
  std::string name;
  std::vector<std::string> joint_names;
  std::vector<int> parents;
  int root_index = 0;

  int size() const { return static_cast<int>(joint_names.size()); }

  int index_of(std::string_view joint) const {
    auto it = std::find(joint_names.begin(), joint_names.end(), joint);
    return it == joint_names.end() ? -1 : static_cast<int>(it - joint_names.begin());
  }

  bool operator==(const JointSet& other) const {
    return name == other.name && joint_names == other.joint_names;
  }
};

inline const JointSet& canonical16() {
  static const JointSet set{
      "canonical16",
      {"hip", "right_hip", "right_knee", "right_ankle", "left_hip", "left_knee", "left_ankle", "spine",
       "neck", "head", "left_shoulder", "left_elbow", "left_wrist", "right_shoulder", "right_elbow",
       "right_wrist"},
      {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 8, 10, 11, 8, 13, 14},
      0};
  return set;
}

/// canonical16 without spine (7) and head (9). The neck hangs directly off the hip.
inline const JointSet& canonical14() {
  static const JointSet set{
      "canonical14",
      {"hip", "right_hip", "right_knee", "right_ankle", "left_hip", "left_knee", "left_ankle", "neck",
       "left_shoulder", "left_elbow", "left_wrist", "right_shoulder", "right_elbow", "right_wrist"},
      {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 7, 11, 12},
      0};
  return set;
}

inline const JointSet& joint_set_for(int num_joints) {
  if (num_joints == 16) return canonical16();
  if (num_joints == 14) return canonical14();
  throw Error(ErrorClass::validation, "num_joints must be 14 or 16, got " + std::to_string(num_joints));
}

inline const JointSet& joint_set_by_name(std::string_view name) {
  if (name == canonical16().name) return canonical16();
  if (name == canonical14().name) return canonical14();
  throw Error(ErrorClass::validation, "unknown joint set '" + std::string(name) + "'");
}

/// Canonical-16 rows kept by select_joint_subset.
inline constexpr std::array<int, 14> kCanonical14Rows{0, 1, 2, 3, 4, 5, 6, 8, 10, 11, 12, 13, 14, 15};

struct MidpointRule {
  int a = 0;
  int b = 0;
};

struct RemapEntry {
  int target = 0;
  std::variant<int, MidpointRule> rule;
};

struct JointRemap {
  std::string source_dataset;
  int source_joint_count = 0;
  std::vector<std::string> source_joint_names;  // optional, used for auditing only
  std::vector<RemapEntry> mapping;

  /// Checks that every target index in [0, target_count) is mapped exactly
  /// once and that every referenced source row exists.
  void validate(int target_count) const {
    if (source_joint_count <= 0) throw RemapError(source_dataset + ": source_joint_count must be positive");
    std::vector<int> seen(static_cast<std::size_t>(target_count), 0);
    auto check_src = [&](int s) {
      if (s < 0 || s >= source_joint_count)
        throw RemapError(source_dataset + ": source index " + std::to_string(s) + " out of range [0, " +
                         std::to_string(source_joint_count) + ")");
    };
    for (const auto& e : mapping) {
      if (e.target < 0 || e.target >= target_count)
        throw RemapError(source_dataset + ": target index " + std::to_string(e.target) + " out of range");
      if (++seen[static_cast<std::size_t>(e.target)] > 1)
        throw RemapError(source_dataset + ": target " + std::to_string(e.target) + " mapped twice");
      if (const int* s = std::get_if<int>(&e.rule)) {
        check_src(*s);
      } else {
        const auto& m = std::get<MidpointRule>(e.rule);
        check_src(m.a);
        check_src(m.b);
      }
    }
    for (int t = 0; t < target_count; ++t)
      if (seen[static_cast<std::size_t>(t)] == 0)
        throw RemapError(source_dataset + ": target " + std::to_string(t) + " is not mapped");
  }

  static JointRemap from_json(const nlohmann::json& j) {
    JointRemap r;
    try {
      r.source_dataset = j.at("source_dataset").get<std::string>();
      if (j.contains("source_joint_names"))
        r.source_joint_names = j.at("source_joint_names").get<std::vector<std::string>>();
      if (j.contains("source_joint_count")) {
        r.source_joint_count = j.at("source_joint_count").get<int>();
      } else {
        r.source_joint_count = static_cast<int>(r.source_joint_names.size());
      }
      for (const auto& m : j.at("mapping")) {
        RemapEntry e;
        e.target = m.at("target").get<int>();
        if (m.contains("source") == m.contains("midpoint"))
          throw RemapError(r.source_dataset + ": entry for target " + std::to_string(e.target) +
                           " needs exactly one of 'source' or 'midpoint'");
        if (m.contains("source")) {
          e.rule = m.at("source").get<int>();
        } else {
          auto mp = m.at("midpoint").get<std::vector<int>>();
          if (mp.size() != 2) throw RemapError(r.source_dataset + ": midpoint needs two indices");
          e.rule = MidpointRule{mp[0], mp[1]};
        }
        r.mapping.push_back(e);
      }
    } catch (const nlohmann::json::exception& ex) {
      throw RemapError(std::string("malformed remap table: ") + ex.what());
    }
    if (!r.source_joint_names.empty() &&
        static_cast<int>(r.source_joint_names.size()) != r.source_joint_count)
      throw RemapError(r.source_dataset + ": source_joint_names length disagrees with source_joint_count");
    return r;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["source_dataset"] = source_dataset;
    j["source_joint_count"] = source_joint_count;
    if (!source_joint_names.empty()) j["source_joint_names"] = source_joint_names;
    auto arr = nlohmann::json::array();
    for (const auto& e : mapping) {
      if (const int* s = std::get_if<int>(&e.rule)) {
        arr.push_back({{"target", e.target}, {"source", *s}});
      } else {
        const auto& m = std::get<MidpointRule>(e.rule);
        arr.push_back({{"target", e.target}, {"midpoint", {m.a, m.b}}});
      }
    }
    j["mapping"] = arr;
    return j;
  }

  static JointRemap identity(int n, std::string name = "identity") {
    JointRemap r;
    r.source_dataset = std::move(name);
    r.source_joint_count = n;
    for (int i = 0; i < n; ++i) r.mapping.push_back({i, i});
    return r;
  }
};

/// Shipped tables for h36m, gpa, 3dpw and surreal, mapping onto canonical16.
inline JointRemap builtin_remap(std::string_view dataset) {
  auto text = detail::builtin_remap_json(dataset);
  if (text.empty()) throw RemapError("no shipped remap table for dataset '" + std::string(dataset) + "'");
  auto r = JointRemap::from_json(nlohmann::json::parse(text));
  r.validate(canonical16().size());
  return r;
}

template <typename Derived>
using RowsLike = Eigen::Matrix<double, Eigen::Dynamic, Derived::ColsAtCompileTime, Eigen::RowMajor>;

/// Reorders source rows into the target joint order; midpoint rules average two rows.
template <typename Derived>
RowsLike<Derived> remap(const Eigen::MatrixBase<Derived>& source, const JointRemap& table, const JointSet& target) {
  static_assert(Derived::ColsAtCompileTime == 2 || Derived::ColsAtCompileTime == 3);
  table.validate(target.size());
  if (source.rows() != table.source_joint_count)
    throw RemapError(table.source_dataset + ": expected " + std::to_string(table.source_joint_count) +
                     " source rows, got " + std::to_string(source.rows()));
  require_finite(source, "remap input");
  RowsLike<Derived> out(target.size(), Derived::ColsAtCompileTime);
  for (const auto& e : table.mapping) {
    if (const int* s = std::get_if<int>(&e.rule)) {
      out.row(e.target) = source.row(*s);
    } else {
      const auto& m = std::get<MidpointRule>(e.rule);
      out.row(e.target) = 0.5 * (source.row(m.a) + source.row(m.b));
    }
  }
  return out;
}

inline Joints3 hip_center(const Joints3& joints, int root_index = 0) {
  if (root_index < 0 || root_index >= joints.rows()) throw ShapeError("root index out of range");
  require_finite(joints, "hip_center input");
  Joints3 out = joints.rowwise() - joints.row(root_index);
  out.row(root_index).setZero();
  return out;
}

/// canonical16 rows to canonical14 rows (drops spine and head).
template <typename Derived>
RowsLike<Derived> select_joint_subset(const Eigen::MatrixBase<Derived>& joints16) {
  if (joints16.rows() != 16)
    throw ShapeError("select_joint_subset expects 16 rows, got " + std::to_string(joints16.rows()));
  RowsLike<Derived> out(14, joints16.cols());
  for (std::size_t k = 0; k < kCanonical14Rows.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = joints16.row(kCanonical14Rows[k]);
  return out;
}

/// Bone lengths along the joint set's parent links, in joint order (root skipped).
inline std::vector<double> bone_lengths(const Joints3& joints, const JointSet& set) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(set.size()));
  for (int k = 0; k < set.size(); ++k) {
    int p = set.parents[static_cast<std::size_t>(k)];
    if (p < 0) continue;
    out.push_back((joints.row(k) - joints.row(p)).norm());
  }
  return out;
}

}  // namespace poseval
