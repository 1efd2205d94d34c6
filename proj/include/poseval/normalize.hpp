#pragma once

#include <poseval/core.hpp>

#include <nlohmann/json.hpp>

#include <functional>
#include <iostream>
#include <string>

namespace poseval {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kMinStd = 1e-12;

/// Pixel coordinates divided by image width and height. Out-of-frame points stay out of [0, 1].
inline Joints2 screen_normalize(const Joints2& uv, double width, double height) {
  if (!(width > 0 && height > 0)) throw Error(ErrorClass::validation, "screen_normalize: dimensions must be positive");
  Joints2 out = uv;
  out.col(0) /= width;
  out.col(1) /= height;
  return out;
}

inline Joints2 screen_denormalize(const Joints2& uv, double width, double height) {
  Joints2 out = uv;
  out.col(0) *= width;
  out.col(1) *= height;
  return out;
}

/// Per-coordinate mean and population standard deviation of one dataset.
struct ZScoreStats {
  RowMatrix mean;
  RowMatrix std;
  std::string dataset;
  std::string joint_set;

  nlohmann::json to_json() const {
    auto rows = [](const RowMatrix& m) {
      auto out = nlohmann::json::array();
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        auto row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        out.push_back(row);
      }
      return out;
    };
    return {{"dataset", dataset}, {"joint_set", joint_set}, {"mean", rows(mean)}, {"std", rows(std)}};
  }

  static ZScoreStats from_json(const nlohmann::json& j) {
    auto matrix = [](const nlohmann::json& a) {
      auto v = a.get<std::vector<std::vector<double>>>();
      if (v.empty() || v.front().empty()) throw Error(ErrorClass::data, "stats: empty array");
      RowMatrix m(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(v.front().size()));
      for (std::size_t r = 0; r < v.size(); ++r) {
        if (v[r].size() != v.front().size()) throw Error(ErrorClass::data, "stats: ragged array");
        for (std::size_t c = 0; c < v[r].size(); ++c)
          m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[r][c];
      }
      return m;
    };
    ZScoreStats s;
    try {
      s.dataset = j.at("dataset").get<std::string>();
      s.joint_set = j.at("joint_set").get<std::string>();
      s.mean = matrix(j.at("mean"));
      s.std = matrix(j.at("std"));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorClass::data, std::string("stats: ") + e.what());
    }
    if (s.mean.rows() != s.std.rows() || s.mean.cols() != s.std.cols())
      throw Error(ErrorClass::data, "stats: mean and std shapes differ");
    if ((s.std.array() <= kMinStd * 0.999).any()) throw Error(ErrorClass::data, "stats: std entries must be positive");
    return s;
  }
};

/// Welford accumulator: single pass, numerically stable.
class StatsAccumulator {
 public:
  using Warning = std::function<void(const std::string&)>;

  void add(const RowMatrix& sample) {
    if (count_ == 0) {
      mean_ = RowMatrix::Zero(sample.rows(), sample.cols());
      m2_ = RowMatrix::Zero(sample.rows(), sample.cols());
    } else if (sample.rows() != mean_.rows() || sample.cols() != mean_.cols()) {
      throw ShapeError("stats sample is " + std::to_string(sample.rows()) + "x" + std::to_string(sample.cols()) +
                       ", expected " + std::to_string(mean_.rows()) + "x" + std::to_string(mean_.cols()));
    }
    ++count_;
    const RowMatrix delta = sample - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_.array() += delta.array() * (sample - mean_).array();
  }

  template <typename Derived>
  void add(const Eigen::MatrixBase<Derived>& sample) {
    add(RowMatrix(sample));
  }

  std::size_t count() const { return count_; }

  ZScoreStats finish(std::string dataset, std::string joint_set, const Warning& warn = default_warning) const {
    if (count_ < 2) throw Error(ErrorClass::data, "compute_stats needs at least 2 samples");
    ZScoreStats s;
    s.dataset = std::move(dataset);
    s.joint_set = std::move(joint_set);
    s.mean = mean_;
    s.std = (m2_ / static_cast<double>(count_)).array().sqrt();
    int clamped = 0;
    for (Eigen::Index i = 0; i < s.std.size(); ++i) {
      if (!(s.std.data()[i] > kMinStd)) {
        s.std.data()[i] = kMinStd;
        ++clamped;
      }
    }
    if (clamped > 0 && warn) warn(std::to_string(clamped) + " constant coordinate(s); std clamped to 1e-12");
    return s;
  }

  static void default_warning(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

 private:
  std::size_t count_ = 0;
  RowMatrix mean_;
  RowMatrix m2_;
};

template <typename Range>
ZScoreStats compute_stats(const Range& samples, std::string dataset = {}, std::string joint_set = {},
                          const StatsAccumulator::Warning& warn = StatsAccumulator::default_warning) {
  StatsAccumulator acc;
  for (const auto& s : samples) acc.add(s);
  return acc.finish(std::move(dataset), std::move(joint_set), warn);
}

template <typename Derived>
RowMatrix zscore(const Eigen::MatrixBase<Derived>& x, const ZScoreStats& stats) {
  if (x.rows() != stats.mean.rows() || x.cols() != stats.mean.cols())
    throw ShapeError("zscore input " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                     " vs stats " + std::to_string(stats.mean.rows()) + "x" + std::to_string(stats.mean.cols()));
  return ((x.template cast<double>() - stats.mean).array() / stats.std.array()).matrix();
}

template <typename Derived>
RowMatrix zscore_inverse(const Eigen::MatrixBase<Derived>& x, const ZScoreStats& stats) {
  if (x.rows() != stats.mean.rows() || x.cols() != stats.mean.cols())
    throw ShapeError("zscore_inverse input " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                     " vs stats " + std::to_string(stats.mean.rows()) + "x" + std::to_string(stats.mean.cols()));
  return (x.template cast<double>().array() * stats.std.array()).matrix() + stats.mean;
}

}  // namespace poseval
