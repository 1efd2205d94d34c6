#pragma once

#include <poseval/core.hpp>
#include <poseval/parallel.hpp>

#include <Eigen/SVD>

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace poseval {

inline constexpr double kCenteredTolerance = 1e-6;

struct Alignment {
  Joints3 aligned;
  Mat3 rotation = Mat3::Identity();
  double scale = 1.0;
  Vec3 translation = Vec3::Zero();  // aligned = scale * rotation * pred + translation
};

/// Least-squares similarity (or rigid, when with_scale is false) fit of pred
/// onto gt via SVD of the centered cross-covariance. Reflections are removed
/// by flipping the axis of the smallest singular value.
inline Alignment procrustes_align(const Joints3& pred, const Joints3& gt, bool with_scale = true) {
  if (pred.rows() != gt.rows()) throw ShapeError("procrustes: pred and gt joint counts differ");
  if (pred.rows() < 3) throw DegenerateAlignmentError("need at least 3 joints");
  require_finite(pred, "procrustes pred");
  require_finite(gt, "procrustes gt");

  const Eigen::RowVector3d mu_pred = pred.colwise().mean();
  const Eigen::RowVector3d mu_gt = gt.colwise().mean();
  const Joints3 x = pred.rowwise() - mu_pred;
  const Joints3 y = gt.rowwise() - mu_gt;
  const double x_norm2 = x.squaredNorm();
  if (y.squaredNorm() == 0.0) throw DegenerateAlignmentError("ground-truth points coincide");
  if (x_norm2 == 0.0) throw DegenerateAlignmentError("predicted points coincide");

  const Mat3 cov = x.transpose() * y;
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (sv(1) <= 1e-12 * sv(0)) throw DegenerateAlignmentError("cross-covariance has rank < 2 (collinear points)");

  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Vec3 d(1.0, 1.0, (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0);

  Alignment a;
  a.rotation = v * d.asDiagonal() * u.transpose();
  a.scale = with_scale ? sv.dot(d) / x_norm2 : 1.0;
  a.translation = mu_gt.transpose() - a.scale * a.rotation * mu_pred.transpose();
  a.aligned = ((a.scale * a.rotation * x.transpose()).colwise() + mu_gt.transpose()).transpose();
  return a;
}

/// Per-joint Euclidean distances for one sample.
inline Eigen::VectorXd joint_errors(const Joints3& pred, const Joints3& gt) {
  return (pred - gt).rowwise().norm();
}

inline void require_centered(const Joints3& pose, int root, const char* what) {
  if (pose.row(root).cwiseAbs().maxCoeff() > kCenteredTolerance)
    throw NotCenteredError(std::string(what) + " root row is not at the origin");
}

/// Aggregate of one protocol over a sample set.
struct ProtocolStats {
  double mean_mm = 0.0;
  Eigen::VectorXd per_joint_mm;
  std::size_t sample_count = 0;
  std::size_t excluded = 0;  // degenerate alignments (Protocol 2 only)
};

struct ProtocolResult {
  double mpjpe_mm = 0.0;
  double pa_mpjpe_mm = 0.0;
  Eigen::VectorXd per_joint_mpjpe_mm;
  Eigen::VectorXd per_joint_pa_mpjpe_mm;
  std::size_t sample_count = 0;
  std::size_t pa_excluded = 0;
  std::vector<double> sample_mpjpe_mm;     // per sample, in input order
  std::vector<double> sample_pa_mpjpe_mm;  // NaN for excluded samples
};

namespace detail {

inline void check_batch(const std::vector<Joints3>& pred, const std::vector<Joints3>& gt) {
  if (pred.size() != gt.size())
    throw ShapeError("batch sizes differ: " + std::to_string(pred.size()) + " vs " + std::to_string(gt.size()));
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i].rows() != gt[i].rows() || pred[i].rows() != pred.front().rows())
      throw ShapeError("sample " + std::to_string(i) + " has inconsistent joint count");
}

// Sequential reduction in sample order: identical results for any worker count.
inline ProtocolStats reduce(const std::vector<Eigen::VectorXd>& errors, Eigen::Index joints) {
  ProtocolStats s;
  s.per_joint_mm = Eigen::VectorXd::Zero(joints);
  for (const auto& e : errors) {
    if (e.size() == 0) {
      ++s.excluded;
      continue;
    }
    s.per_joint_mm += e;
    ++s.sample_count;
  }
  if (s.sample_count > 0) {
    s.per_joint_mm /= static_cast<double>(s.sample_count);
    s.mean_mm = s.per_joint_mm.mean();
  }
  return s;
}

}  // namespace detail

/// Protocol 1. Both inputs must already be hip-centered.
inline ProtocolStats mpjpe(const std::vector<Joints3>& pred, const std::vector<Joints3>& gt, int root = 0,
                           int workers = 1) {
  detail::check_batch(pred, gt);
  std::vector<Eigen::VectorXd> errors(pred.size());
  parallel_for(pred.size(), workers, [&](std::size_t i) {
    require_centered(pred[i], root, "prediction");
    require_centered(gt[i], root, "ground truth");
    errors[i] = joint_errors(pred[i], gt[i]);
  });
  return detail::reduce(errors, pred.empty() ? 0 : pred.front().rows());
}

/// Protocol 2. Degenerate samples are excluded and counted.
inline ProtocolStats pa_mpjpe(const std::vector<Joints3>& pred, const std::vector<Joints3>& gt, bool with_scale = true,
                              int workers = 1) {
  detail::check_batch(pred, gt);
  std::vector<Eigen::VectorXd> errors(pred.size());
  parallel_for(pred.size(), workers, [&](std::size_t i) {
    try {
      errors[i] = joint_errors(procrustes_align(pred[i], gt[i], with_scale).aligned, gt[i]);
    } catch (const DegenerateAlignmentError&) {
      errors[i] = Eigen::VectorXd();
    }
  });
  return detail::reduce(errors, pred.empty() ? 0 : pred.front().rows());
}

/// Both protocols plus per-sample errors (used for viewpoint analytics).
inline ProtocolResult evaluate_protocols(const std::vector<Joints3>& pred, const std::vector<Joints3>& gt,
                                         bool with_scale = true, int root = 0, int workers = 1) {
  detail::check_batch(pred, gt);
  const std::size_t n = pred.size();
  std::vector<Eigen::VectorXd> e1(n), e2(n);
  parallel_for(n, workers, [&](std::size_t i) {
    require_centered(pred[i], root, "prediction");
    require_centered(gt[i], root, "ground truth");
    e1[i] = joint_errors(pred[i], gt[i]);
    try {
      e2[i] = joint_errors(procrustes_align(pred[i], gt[i], with_scale).aligned, gt[i]);
    } catch (const DegenerateAlignmentError&) {
      e2[i] = Eigen::VectorXd();
    }
  });
  const Eigen::Index j = n == 0 ? 0 : pred.front().rows();
  const ProtocolStats p1 = detail::reduce(e1, j);
  const ProtocolStats p2 = detail::reduce(e2, j);
  ProtocolResult r;
  r.mpjpe_mm = p1.mean_mm;
  r.pa_mpjpe_mm = p2.mean_mm;
  r.per_joint_mpjpe_mm = p1.per_joint_mm;
  r.per_joint_pa_mpjpe_mm = p2.per_joint_mm;
  r.sample_count = p1.sample_count;
  r.pa_excluded = p2.excluded;
  r.sample_mpjpe_mm.reserve(n);
  r.sample_pa_mpjpe_mm.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.sample_mpjpe_mm.push_back(e1[i].mean());
    r.sample_pa_mpjpe_mm.push_back(e2[i].size() ? e2[i].mean() : std::numeric_limits<double>::quiet_NaN());
  }
  return r;
}

/// Per-joint means across several (model, dataset) results: column 0 is
/// Protocol 1, column 1 Protocol 2.
inline Eigen::Matrix<double, Eigen::Dynamic, 2> per_joint_report(const std::vector<ProtocolResult>& results) {
  if (results.empty()) throw Error(ErrorClass::validation, "per_joint_report needs at least one result");
  const Eigen::Index j = results.front().per_joint_mpjpe_mm.size();
  Eigen::Matrix<double, Eigen::Dynamic, 2> out = Eigen::Matrix<double, Eigen::Dynamic, 2>::Zero(j, 2);
  for (const auto& r : results) {
    if (r.per_joint_mpjpe_mm.size() != j || r.per_joint_pa_mpjpe_mm.size() != j)
      throw ShapeError("per_joint_report: joint-set mismatch across results");
    out.col(0) += r.per_joint_mpjpe_mm;
    out.col(1) += r.per_joint_pa_mpjpe_mm;
  }
  return out / static_cast<double>(results.size());
}

}  // namespace poseval
