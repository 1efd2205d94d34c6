#pragma once

#include <poseval/core.hpp>
#include <poseval/geometry.hpp>

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace poseval {

inline constexpr double kElevationStep = 5.0;
inline constexpr double kAzimuthStep = 10.0;
inline constexpr int kElevationBins = 36;  // [-90, 90)
inline constexpr int kAzimuthBins = 36;    // [-180, 180)

struct ViewpointBin {
  double elev_lo = 0, elev_hi = 0;
  double azim_lo = 0, azim_hi = 0;
  std::size_t train_count = 0;
  std::size_t test_count = 0;
  double test_error_sum_mm = 0;

  std::optional<double> mean_test_error_mm() const {
    if (test_count == 0) return std::nullopt;
    return test_error_sum_mm / static_cast<double>(test_count);
  }
  double elev_center() const { return 0.5 * (elev_lo + elev_hi); }
  double azim_center() const { return 0.5 * (azim_lo + azim_hi); }
};

/// 5 deg elevation x 10 deg azimuth cells covering the whole sphere,
/// stored elevation-major. Cells are lower-inclusive; elevation +90 joins the
/// top row and azimuth +180 wraps onto -180.
class ViewpointGrid {
 public:
  ViewpointGrid() : bins_(static_cast<std::size_t>(kElevationBins * kAzimuthBins)) {
    for (int e = 0; e < kElevationBins; ++e) {
      for (int a = 0; a < kAzimuthBins; ++a) {
        auto& b = bins_[index(e, a)];
        b.elev_lo = -90.0 + kElevationStep * e;
        b.elev_hi = b.elev_lo + kElevationStep;
        b.azim_lo = -180.0 + kAzimuthStep * a;
        b.azim_hi = b.azim_lo + kAzimuthStep;
      }
    }
  }

  static std::size_t index(int elev_bin, int azim_bin) {
    return static_cast<std::size_t>(elev_bin * kAzimuthBins + azim_bin);
  }

  static std::pair<int, int> locate(const ViewpointAngles& v) {
    if (!std::isfinite(v.elevation) || !std::isfinite(v.azimuth))
      throw UndefinedViewpointError("non-finite viewpoint angles");
    int e = static_cast<int>(std::floor((v.elevation + 90.0) / kElevationStep));
    e = std::clamp(e, 0, kElevationBins - 1);
    int a = static_cast<int>(std::floor((v.azimuth + 180.0) / kAzimuthStep));
    a = ((a % kAzimuthBins) + kAzimuthBins) % kAzimuthBins;
    return {e, a};
  }

  ViewpointBin& at(const ViewpointAngles& v) {
    auto [e, a] = locate(v);
    return bins_[index(e, a)];
  }

  void add_train(const ViewpointAngles& v) { ++at(v).train_count; }

  void add_test(const ViewpointAngles& v, double error_mm) {
    auto& b = at(v);
    ++b.test_count;
    b.test_error_sum_mm += error_mm;
  }

  /// Associative merge of per-shard grids.
  void merge(const ViewpointGrid& other) {
    for (std::size_t i = 0; i < bins_.size(); ++i) {
      bins_[i].train_count += other.bins_[i].train_count;
      bins_[i].test_count += other.bins_[i].test_count;
      bins_[i].test_error_sum_mm += other.bins_[i].test_error_sum_mm;
    }
  }

  const std::vector<ViewpointBin>& bins() const { return bins_; }
  std::vector<ViewpointBin>& bins() { return bins_; }

  std::size_t total_train() const {
    return std::accumulate(bins_.begin(), bins_.end(), std::size_t{0},
                           [](std::size_t s, const ViewpointBin& b) { return s + b.train_count; });
  }
  std::size_t total_test() const {
    return std::accumulate(bins_.begin(), bins_.end(), std::size_t{0},
                           [](std::size_t s, const ViewpointBin& b) { return s + b.test_count; });
  }

 private:
  std::vector<ViewpointBin> bins_;
};

/// Train viewpoints feed counts; test viewpoints (if any) feed counts and mean error.
inline ViewpointGrid bin_viewpoints(const std::vector<ViewpointAngles>& train,
                                    const std::vector<ViewpointAngles>& test = {},
                                    const std::vector<double>& test_errors_mm = {}) {
  if (!test.empty() && test.size() != test_errors_mm.size())
    throw ShapeError("bin_viewpoints: one error per test viewpoint required");
  ViewpointGrid g;
  for (const auto& v : train) g.add_train(v);
  for (std::size_t i = 0; i < test.size(); ++i) g.add_test(test[i], test_errors_mm[i]);
  return g;
}

struct CorrelationResult {
  std::size_t num_bins = 0;
  double rho = 0;
  double p_value = 1;
  double sigma = 0;  // |t| of the rank correlation
};

/// Average ranks (1-based), ties share the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// t statistic of a correlation coefficient with n - 2 degrees of freedom.
inline double correlation_t(double rho, std::size_t n) {
  if (std::abs(rho) >= 1.0) return rho > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  return rho * std::sqrt(static_cast<double>(n - 2) / ((1.0 - rho) * (1.0 + rho)));
}

/// Two-sided p-value under Student-t with n - 2 degrees of freedom, kept in (0, 1].
inline double correlation_p_value(double t, std::size_t n) {
  if (std::isinf(t)) return std::numeric_limits<double>::min();
  boost::math::students_t_distribution<double> dist(static_cast<double>(n - 2));
  const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return std::clamp(p, std::numeric_limits<double>::min(), 1.0);
}

/// Spearman rank correlation: Pearson correlation of average ranks.
inline CorrelationResult spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("spearman: inputs differ in length");
  const std::size_t n = x.size();
  if (n < 3) throw CorrelationError("spearman needs at least 3 observations");
  for (double v : x)
    if (!std::isfinite(v)) throw CorrelationError("non-finite input");
  for (double v : y)
    if (!std::isfinite(v)) throw CorrelationError("non-finite input");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw CorrelationError("constant input vector");
  CorrelationResult r;
  r.num_bins = n;
  // Without ties the rank sums are integers and 1 - 6 sum(d^2) / (n (n^2 - 1)) is exact.
  const auto has_ties = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return std::adjacent_find(v.begin(), v.end()) != v.end();
  };
  const bool ties = has_ties(x) || has_ties(y);
  if (ties) {
    r.rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  } else {
    double d2 = 0;
    for (std::size_t i = 0; i < n; ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
    const double nn = static_cast<double>(n);
    r.rho = 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0));
  }
  const double t = correlation_t(r.rho, n);
  r.p_value = correlation_p_value(t, n);
  r.sigma = std::abs(t);
  return r;
}

/// Spearman between per-bin training frequency and mean test error over the
/// bins holding at least `min_train` training and `min_test` test samples.
inline CorrelationResult viewpoint_error_correlation(const ViewpointGrid& grid, std::size_t min_train = 5,
                                                     std::size_t min_test = 5) {
  std::vector<double> counts, errors;
  for (const auto& b : grid.bins()) {
    if (b.train_count < min_train || b.test_count < min_test) continue;
    counts.push_back(static_cast<double>(b.train_count));
    errors.push_back(*b.mean_test_error_mm());
  }
  if (counts.size() < 3)
    throw CorrelationError("only " + std::to_string(counts.size()) + " bins pass the count thresholds (need 3)");
  return spearman(counts, errors);
}

inline constexpr const char* kContourHeader = "azim_center,elev_center,train_count,test_count,mean_error_mm";

/// Populated bins as CSV, elevation-major. Missing means are left empty.
inline std::string export_contour(const ViewpointGrid& grid) {
  std::string out = std::string(kContourHeader) + "\n";
  char buf[160];
  for (const auto& b : grid.bins()) {
    if (b.train_count == 0 && b.test_count == 0) continue;
    std::snprintf(buf, sizeof buf, "%.1f,%.1f,%zu,%zu,", b.azim_center(), b.elev_center(), b.train_count,
                  b.test_count);
    out += buf;
    if (auto m = b.mean_test_error_mm()) {
      std::snprintf(buf, sizeof buf, "%.17g", *m);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace poseval
