#include <poseval/analytics.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

using namespace poseval;

namespace {

// Spearman by the rank-difference formula; valid only without ties.
double rank_formula(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  auto rank = [](const std::vector<double>& v, std::size_t i) {
    return 1.0 + static_cast<double>(std::count_if(v.begin(), v.end(), [&](double w) { return w < v[i]; }));
  };
  double d2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += std::pow(rank(x, i) - rank(y, i), 2);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

ViewpointAngles at(double elev, double azim) { return {elev, azim}; }

struct ContourRow {
  double azim, elev;
  std::size_t train, test;
  std::optional<double> mean;
};

std::vector<ContourRow> parse_contour(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kContourHeader);
  std::vector<ContourRow> rows;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    EXPECT_EQ(f.size(), 5u) << line;
    ContourRow r{std::stod(f[0]), std::stod(f[1]), std::stoul(f[2]), std::stoul(f[3]), std::nullopt};
    if (!f[4].empty()) r.mean = std::stod(f[4]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

TEST(Grid, CoversSphereWithFixedSpans) {
  const ViewpointGrid g;
  ASSERT_EQ(g.bins().size(), 36u * 36u);
  for (const auto& b : g.bins()) {
    EXPECT_DOUBLE_EQ(b.elev_hi - b.elev_lo, 5.0);
    EXPECT_DOUBLE_EQ(b.azim_hi - b.azim_lo, 10.0);
    EXPECT_FALSE(b.mean_test_error_mm().has_value());
  }
  EXPECT_EQ(g.bins().front().elev_lo, -90.0);
  EXPECT_EQ(g.bins().front().azim_lo, -180.0);
  EXPECT_EQ(g.bins().back().elev_hi, 90.0);
  EXPECT_EQ(g.bins().back().azim_hi, 180.0);
}

TEST(Grid, EdgesAreLowerInclusive) {
  const auto [e, a] = ViewpointGrid::locate(at(10.0, 10.0));
  const ViewpointGrid g;
  const auto& b = g.bins()[ViewpointGrid::index(e, a)];
  EXPECT_EQ(b.azim_lo, 10.0);
  EXPECT_EQ(b.azim_hi, 20.0);
  EXPECT_EQ(b.elev_lo, 10.0);
  EXPECT_EQ(ViewpointGrid::locate(at(90.0, 0.0)).first, kElevationBins - 1);
  EXPECT_EQ(ViewpointGrid::locate(at(-90.0, 0.0)).first, 0);
  EXPECT_EQ(ViewpointGrid::locate(at(0.0, 180.0)).second, 0);
  EXPECT_EQ(ViewpointGrid::locate(at(0.0, -180.0)).second, 0);
  EXPECT_EQ(ViewpointGrid::locate(at(0.0, 179.999)).second, kAzimuthBins - 1);
  EXPECT_THROW(ViewpointGrid::locate(at(std::nan(""), 0.0)), UndefinedViewpointError);
}

TEST(BinViewpoints, SinglePointFillsOneBin) {
  const ViewpointGrid g = bin_viewpoints(std::vector<ViewpointAngles>(7, at(10.0, 0.0)));
  const auto populated = std::count_if(g.bins().begin(), g.bins().end(), [](const auto& b) { return b.train_count > 0; });
  EXPECT_EQ(populated, 1);
  EXPECT_EQ(g.total_train(), 7u);
}

TEST(BinViewpoints, UniformRingPopulatesOneRowEvenly) {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> azim(-180.0, 180.0);
  const std::size_t n = 36000;
  std::vector<ViewpointAngles> ring;
  for (std::size_t i = 0; i < n; ++i) ring.push_back(at(12.0, azim(rng)));
  const ViewpointGrid g = bin_viewpoints(ring);
  EXPECT_EQ(g.total_train(), n);
  const double expected = static_cast<double>(n) / kAzimuthBins;
  for (const auto& b : g.bins()) {
    if (b.elev_lo != 10.0) {
      EXPECT_EQ(b.train_count, 0u);
      continue;
    }
    EXPECT_LE(std::abs(static_cast<double>(b.train_count) - expected), 3.0 * std::sqrt(expected)) << b.azim_lo;
  }
}

TEST(BinViewpoints, TestErrorsAveragePerBin) {
  const ViewpointGrid g = bin_viewpoints({at(0, 0)}, {at(1, 1), at(2, 2), at(-50, 100)}, {10.0, 20.0, 7.0});
  const auto& b = g.bins()[ViewpointGrid::index(ViewpointGrid::locate(at(0, 0)).first, ViewpointGrid::locate(at(0, 0)).second)];
  EXPECT_EQ(b.train_count, 1u);
  EXPECT_EQ(b.test_count, 2u);
  EXPECT_DOUBLE_EQ(*b.mean_test_error_mm(), 15.0);
  EXPECT_EQ(g.total_test(), 3u);
  EXPECT_THROW(bin_viewpoints({}, {at(0, 0)}, {}), ShapeError);
}

TEST(BinViewpoints, MergeOfShardsEqualsWhole) {
  std::mt19937_64 rng(72);
  std::uniform_real_distribution<double> e(-90, 90), a(-180, 180), err(0, 300);
  std::vector<ViewpointAngles> train, test;
  std::vector<double> errors;
  for (int i = 0; i < 3000; ++i) {
    train.push_back(at(e(rng), a(rng)));
    test.push_back(at(e(rng), a(rng)));
    errors.push_back(err(rng));
  }
  const ViewpointGrid whole = bin_viewpoints(train, test, errors);
  ViewpointGrid merged;
  for (std::size_t lo = 0; lo < train.size(); lo += 700) {
    const std::size_t hi = std::min(train.size(), lo + 700);
    merged.merge(bin_viewpoints({train.begin() + lo, train.begin() + hi}, {test.begin() + lo, test.begin() + hi},
                                {errors.begin() + lo, errors.begin() + hi}));
  }
  for (std::size_t i = 0; i < whole.bins().size(); ++i) {
    EXPECT_EQ(whole.bins()[i].train_count, merged.bins()[i].train_count);
    EXPECT_EQ(whole.bins()[i].test_count, merged.bins()[i].test_count);
    EXPECT_NEAR(whole.bins()[i].test_error_sum_mm, merged.bins()[i].test_error_sum_mm, 1e-9);
  }
}

TEST(Spearman, Examples) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4, 5}, {5, 4, 3, 2, 1}).rho, -1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3}, {1, 3, 2}).rho, 0.5);
  const auto r = spearman({1, 2, 3, 4, 5}, {1, 2, 3, 4, 5});
  EXPECT_DOUBLE_EQ(r.rho, 1.0);
  EXPECT_GT(r.p_value, 0.0);
  EXPECT_LE(r.p_value, 1.0);
  EXPECT_TRUE(std::isinf(r.sigma));
}

TEST(Spearman, AllPermutationsOfFiveMatchRankFormula) {
  std::vector<double> x{1, 2, 3, 4, 5}, y{1, 2, 3, 4, 5};
  int count = 0;
  do {
    EXPECT_EQ(spearman(x, y).rho, rank_formula(x, y));
    ++count;
  } while (std::next_permutation(y.begin(), y.end()));
  EXPECT_EQ(count, 120);
}

TEST(Spearman, TiesUseAverageRanks) {
  EXPECT_EQ(average_ranks({10, 20, 20, 30}), (std::vector<double>{1, 2.5, 2.5, 4}));
  EXPECT_EQ(average_ranks({5, 5, 5}), (std::vector<double>{2, 2, 2}));
  // Pearson on ranks [1,2.5,2.5,4] vs [1,2,3,4]
  const double rho = spearman({10, 20, 20, 30}, {1, 2, 3, 4}).rho;
  EXPECT_NEAR(rho, 4.5 / std::sqrt(4.5 * 5.0), 1e-12);
  // a triple tie gives integer average ranks [3,3,3,1] but still needs the Pearson form
  EXPECT_NEAR(spearman({5, 5, 5, 1}, {1, 2, 3, 4}).rho, -3.0 / std::sqrt(3.0 * 5.0), 1e-12);
}

TEST(Spearman, InvariantUnderMonotoneTransformsAndSymmetric) {
  std::mt19937_64 rng(73);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x, y;
    for (int i = 0; i < 40; ++i) {
      x.push_back(n(rng));
      y.push_back(0.5 * x.back() + n(rng));
    }
    const auto base = spearman(x, y);
    std::vector<double> tx, ty;
    for (double v : x) tx.push_back(std::exp(3.0 * v) + 2.0);
    for (double v : y) ty.push_back(-1.0 / (1.0 + std::exp(v)));
    EXPECT_NEAR(spearman(tx, y).rho, base.rho, 1e-12);
    EXPECT_NEAR(spearman(x, ty).rho, base.rho, 1e-12);
    EXPECT_NEAR(spearman(y, x).rho, base.rho, 1e-12);
    EXPECT_NEAR(spearman(x, x).rho, 1.0, 1e-12);
    EXPECT_GE(base.rho, -1.0);
    EXPECT_LE(base.rho, 1.0);
  }
}

TEST(Spearman, PValueMatchesStudentT) {
  // two-sided critical values of Student-t with 10 degrees of freedom
  const double rho = 2.2 / std::sqrt(10.0 + 2.2 * 2.2);
  EXPECT_NEAR(correlation_t(rho, 12), 2.2, 1e-12);
  EXPECT_NEAR(correlation_p_value(2.228139, 12), 0.05, 1e-5);
  EXPECT_NEAR(correlation_p_value(3.169273, 12), 0.01, 1e-5);
  EXPECT_NEAR(correlation_p_value(-3.169273, 12), 0.01, 1e-5);
  EXPECT_NEAR(correlation_p_value(0.0, 12), 1.0, 1e-12);
}

TEST(Spearman, SigmaFromPublishedRows) {
  struct Row {
    double rho;
    std::size_t n;
    double sigma;
  };
  for (const Row& r : {Row{-0.45, 377, 9.78}, Row{-0.19, 380, 3.70}, Row{-0.68, 751, 25.50}})
    EXPECT_NEAR(std::abs(correlation_t(r.rho, r.n)), r.sigma, 0.15) << r.rho << " n=" << r.n;
}

TEST(Spearman, Errors) {
  EXPECT_THROW(spearman({1, 2}, {2, 1}), CorrelationError);
  EXPECT_THROW(spearman({1, 1, 1}, {1, 2, 3}), CorrelationError);
  EXPECT_THROW(spearman({1, 2, 3}, {4, 4, 4}), CorrelationError);
  EXPECT_THROW(spearman({1, 2, std::nan("")}, {1, 2, 3}), CorrelationError);
  EXPECT_THROW(spearman({1, 2, 3}, {1, 2}), ShapeError);
}

TEST(ViewpointCorrelation, PerfectInverseAndThresholds) {
  ViewpointGrid g;
  auto& bins = g.bins();
  for (std::size_t k = 0; k < 6; ++k) {
    auto& b = bins[k * 40];
    b.train_count = 5 + 3 * k;
    b.test_count = 5;
    b.test_error_sum_mm = 5.0 * (1.0 / static_cast<double>(b.train_count));
  }
  const auto r = viewpoint_error_correlation(g);
  EXPECT_DOUBLE_EQ(r.rho, -1.0);
  EXPECT_EQ(r.num_bins, 6u);

  bins[40].train_count = 4;
  EXPECT_EQ(viewpoint_error_correlation(g).num_bins, 5u);
  bins[80].test_count = 4;
  EXPECT_EQ(viewpoint_error_correlation(g).num_bins, 4u);
  EXPECT_EQ(viewpoint_error_correlation(g, 1, 1).num_bins, 6u);
  EXPECT_THROW(viewpoint_error_correlation(g, 100, 5), CorrelationError);
}

TEST(ViewpointCorrelation, SizedFixtureKeepsEveryBin) {
  std::mt19937_64 rng(74);
  std::uniform_int_distribution<std::size_t> count(5, 400);
  ViewpointGrid g;
  for (std::size_t k = 0; k < 641; ++k) {
    auto& b = g.bins()[k * 2];
    b.train_count = count(rng);
    b.test_count = count(rng);
    b.test_error_sum_mm = static_cast<double>(b.test_count) * (300.0 - 0.3 * static_cast<double>(b.train_count));
  }
  const auto r = viewpoint_error_correlation(g);
  EXPECT_EQ(r.num_bins, 641u);
  EXPECT_LT(r.rho, -0.99);
}

TEST(ViewpointCorrelation, IndependentOfSampleOrder) {
  std::mt19937_64 rng(75);
  std::normal_distribution<double> e(10, 15), a(0, 60), err(100, 30);
  std::vector<ViewpointAngles> train, test;
  std::vector<double> errors;
  for (int i = 0; i < 20000; ++i) train.push_back(at(std::clamp(e(rng), -89.0, 89.0), std::remainder(a(rng), 360.0)));
  for (int i = 0; i < 5000; ++i) {
    test.push_back(at(std::clamp(e(rng), -89.0, 89.0), std::remainder(a(rng), 360.0)));
    errors.push_back(err(rng));
  }
  const auto base = viewpoint_error_correlation(bin_viewpoints(train, test, errors));
  std::vector<std::size_t> perm(test.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<ViewpointAngles> test2;
  std::vector<double> errors2;
  for (auto i : perm) {
    test2.push_back(test[i]);
    errors2.push_back(errors[i]);
  }
  std::reverse(train.begin(), train.end());
  const auto shuffled = viewpoint_error_correlation(bin_viewpoints(train, test2, errors2));
  EXPECT_EQ(shuffled.num_bins, base.num_bins);
  EXPECT_NEAR(shuffled.rho, base.rho, 1e-12);
}

TEST(Contour, EmptyAndSingleBin) {
  EXPECT_EQ(export_contour(ViewpointGrid()), std::string(kContourHeader) + "\n");
  const std::string one = export_contour(bin_viewpoints({at(10, 0)}));
  EXPECT_EQ(one, std::string(kContourHeader) + "\n5.0,12.5,1,0,\n");
}

TEST(Contour, ParseBackReconstructsGrid) {
  std::mt19937_64 rng(76);
  std::uniform_real_distribution<double> e(-90, 90), a(-180, 180), err(0, 300);
  std::vector<ViewpointAngles> train, test;
  std::vector<double> errors;
  for (int i = 0; i < 2000; ++i) train.push_back(at(e(rng), a(rng)));
  for (int i = 0; i < 800; ++i) {
    test.push_back(at(e(rng), a(rng)));
    errors.push_back(err(rng));
  }
  const ViewpointGrid g = bin_viewpoints(train, test, errors);
  const auto rows = parse_contour(export_contour(g));

  ViewpointGrid back;
  double last_key = -1e9;
  for (const auto& r : rows) {
    const double key = r.elev * 1000 + r.azim;
    EXPECT_GT(key, last_key);
    last_key = key;
    auto& b = back.at(at(r.elev, r.azim));
    b.train_count = r.train;
    b.test_count = r.test;
    EXPECT_EQ(r.mean.has_value(), r.test > 0);
    if (r.mean) b.test_error_sum_mm = *r.mean * static_cast<double>(r.test);
  }
  for (std::size_t i = 0; i < g.bins().size(); ++i) {
    EXPECT_EQ(back.bins()[i].train_count, g.bins()[i].train_count);
    EXPECT_EQ(back.bins()[i].test_count, g.bins()[i].test_count);
    const auto m1 = g.bins()[i].mean_test_error_mm(), m2 = back.bins()[i].mean_test_error_mm();
    ASSERT_EQ(m1.has_value(), m2.has_value());
    if (m1) {
      EXPECT_NEAR(*m1, *m2, 1e-9);
    }
  }
}
