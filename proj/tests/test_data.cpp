#include "tdcd/data.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <set>

using namespace tdcd;

TEST(LoadCsv, MapsFieldsAndDropsLabelColumn) {
  const auto dir = test::temp_dir("csv_basic");
  const auto path = test::write_file(dir / "a.csv", "a,b,y\n1,2,3\n4,5,6");
  const Dataset ds = load_csv(path, std::string("y"), true);
  ASSERT_EQ(ds.rows(), 2);
  ASSERT_EQ(ds.cols(), 2);
  EXPECT_EQ(ds.labels(0), 3.0);
  EXPECT_EQ(ds.labels(1), 6.0);
  EXPECT_EQ(ds.features(1, 0), 4.0);
  EXPECT_EQ(ds.features(1, 1), 5.0);
  EXPECT_EQ(ds.column_names, (std::vector<std::string>{"a", "b"}));
}

TEST(LoadCsv, LabelByIndexWithoutHeader) {
  const auto dir = test::temp_dir("csv_index");
  const auto path = test::write_file(dir / "a.csv", "7,1,2\r\n8,3,4\r\n\n");
  const Dataset ds = load_csv(path, std::size_t{0}, false);
  ASSERT_EQ(ds.rows(), 2);
  EXPECT_EQ(ds.labels(1), 8.0);
  EXPECT_EQ(ds.features(1, 1), 4.0);
}

TEST(LoadCsv, ReportsParseLocation) {
  const auto dir = test::temp_dir("csv_parse");
  const auto path = test::write_file(dir / "a.csv", "a,b,y\nx,2,3\n");
  try {
    load_csv(path, std::string("y"), true);
    FAIL() << "expected ParseError";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ParseError);
    EXPECT_EQ(e.row(), 1u);
    EXPECT_EQ(e.column(), 0u);
  }
}

TEST(LoadCsv, RejectsNonFiniteAndRaggedRows) {
  const auto dir = test::temp_dir("csv_ragged");
  auto path = test::write_file(dir / "a.csv", "a,y\n1,2\ninf,3\n");
  EXPECT_THROW(load_csv(path, std::string("y"), true), Error);
  path = test::write_file(dir / "b.csv", "a,b,y\n1,2,3\n1,2\n");
  try {
    load_csv(path, std::string("y"), true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ParseError);
    EXPECT_EQ(e.row(), 2u);
  }
}

TEST(LoadCsv, MissingAndEmpty) {
  const auto dir = test::temp_dir("csv_missing");
  try {
    load_csv(dir / "nope.csv", std::string("y"), true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingFile);
  }
  const auto path = test::write_file(dir / "h.csv", "a,y\n");
  try {
    load_csv(path, std::string("y"), true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyDataset);
  }
}

TEST(Standardize, TwoPointColumn) {
  Matrix x(2, 1);
  x << 1, 3;
  const Dataset ds = standardize(test::dataset_from(x, Vector::Zero(2)));
  EXPECT_DOUBLE_EQ(ds.features(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(ds.features(1, 0), 1.0);
  EXPECT_DOUBLE_EQ((*ds.column_means)(0), 2.0);
  EXPECT_DOUBLE_EQ((*ds.column_stds)(0), 1.0);
}

TEST(Standardize, ConstantColumnRejectedUnlessExempt) {
  Matrix x(2, 2);
  x << 5, 1, 5, 2;
  try {
    standardize(test::dataset_from(x, Vector::Zero(2)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ZeroVariance);
    EXPECT_EQ(e.column(), 0u);
  }
  const Dataset ok = standardize(test::dataset_from(x, Vector::Zero(2)), {0});
  EXPECT_EQ(ok.features(0, 0), 5.0);
  EXPECT_TRUE(ok.is_exempt(0));
}

TEST(Standardize, RandomMatrixMomentsAndIdempotence) {
  Rng rng(11);
  const Dataset raw = test::random_instance(rng, 10, 3, false);
  Dataset scaled = raw;
  scaled.features = (raw.features.array() * 3.0 + 7.0).matrix();
  const Dataset ds = standardize(scaled);
  for (Index c = 0; c < 3; ++c) {
    const double mean = ds.features.col(c).mean();
    const double var = (ds.features.col(c).array() - mean).square().mean();
    EXPECT_LT(std::abs(mean), 1e-12);
    EXPECT_NEAR(std::sqrt(var), 1.0, 1e-12);
  }
  const Dataset twice = standardize(ds);
  EXPECT_LT((twice.features - ds.features).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AppendBias, AddsExemptOnesColumn) {
  Matrix x(2, 2);
  x << 1, 2, 3, 5;
  const Dataset ds = append_bias(test::dataset_from(x, Vector::Zero(2)));
  ASSERT_EQ(ds.cols(), 3);
  EXPECT_EQ(ds.features(0, 2), 1.0);
  EXPECT_EQ(ds.features(1, 2), 1.0);
  EXPECT_TRUE(ds.is_exempt(2));

  const Dataset later = standardize(ds);
  EXPECT_EQ(later.features(0, 2), 1.0);
  EXPECT_EQ(later.features(1, 2), 1.0);
  EXPECT_DOUBLE_EQ(later.features(0, 0), -1.0);
}

TEST(AppendBias, AfterStandardizeKeepsMoments) {
  const auto [raw, w] = synth_regression(3, 50, 81, 0.1);
  const Dataset ds = append_bias(standardize(raw));
  EXPECT_EQ(ds.cols(), 82);
  EXPECT_EQ((*ds.column_means)(81), 0.0);
  EXPECT_EQ((*ds.column_stds)(81), 1.0);
}

TEST(SynthRegression, NoiselessLabelsAreExact) {
  const auto [ds, w] = synth_regression(7, 40, 5, 0.0);
  for (Index r = 0; r < ds.rows(); ++r) {
    double z = 0.0;
    for (Index c = 0; c < ds.cols(); ++c) z += ds.features(r, c) * w(c);
    EXPECT_EQ(z - ds.labels(r), 0.0);
  }
}

TEST(SynthRegression, SameSeedSameBytes) {
  const auto [a, wa] = synth_regression(7, 30, 4, 0.3);
  const auto [b, wb] = synth_regression(7, 30, 4, 0.3);
  EXPECT_EQ(std::memcmp(a.features.data(), b.features.data(), sizeof(double) * 120), 0);
  EXPECT_EQ(std::memcmp(a.labels.data(), b.labels.data(), sizeof(double) * 30), 0);
  EXPECT_EQ(std::memcmp(wa.data(), wb.data(), sizeof(double) * 4), 0);
  const auto [c, wc] = synth_regression(8, 30, 4, 0.3);
  EXPECT_NE(a.features(0, 0), c.features(0, 0));
}

TEST(SynthRegression, LeastSquaresRecoversWeights) {
  const auto [ds, w] = synth_regression(7, 100, 8, 0.0);
  const Eigen::MatrixXd gram = ds.features.transpose() * ds.features;
  const Vector rhs = ds.features.transpose() * ds.labels;
  const Vector fit = gram.ldlt().solve(rhs);
  EXPECT_LT((fit - w).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(MakePartition, DefaultWidths) {
  EXPECT_EQ(make_partition(10, 8, 4, 1).widths(), (std::vector<Index>{2, 2, 2, 2}));
  EXPECT_EQ(make_partition(10, 82, 4, 1).widths(), (std::vector<Index>{21, 21, 20, 20}));
}

TEST(MakePartition, ContiguousRowsIdenticalAcrossSilos) {
  const auto plan = make_partition(10, 4, 2, 5);
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t k = 0; k < 5; ++k) {
      EXPECT_EQ(plan.row_assignment[j][k], (std::vector<std::size_t>{2 * k, 2 * k + 1}));
    }
  }
  EXPECT_TRUE(plan.equal_split);
  EXPECT_TRUE(plan.identical_across_silos);
}

TEST(MakePartition, Errors) {
  auto kind_of = [](auto fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::InvalidConfig;
  };
  EXPECT_EQ(kind_of([] { make_partition(10, 3, 4, 1); }), ErrorKind::BadWidths);
  EXPECT_EQ(kind_of([] { make_partition(10, 4, 2, 1, std::vector<Index>{1, 2}); }), ErrorKind::BadWidths);
  EXPECT_EQ(kind_of([] { make_partition(10, 4, 2, 1, std::vector<Index>{4, 0}); }), ErrorKind::BadWidths);
  EXPECT_EQ(kind_of([] { make_partition(10, 4, 2, 1, std::vector<Index>{4}); }), ErrorKind::BadWidths);
  EXPECT_EQ(kind_of([] { make_partition(3, 4, 2, 4); }), ErrorKind::TooManyClients);
}

TEST(MakePartition, UnevenSplitRelaxesEquality) {
  const auto plan = make_partition(11, 4, 2, 3);
  EXPECT_FALSE(plan.equal_split);
  std::size_t lo = 100, hi = 0;
  for (const auto& shard : plan.row_assignment[0]) {
    lo = std::min(lo, shard.size());
    hi = std::max(hi, shard.size());
  }
  EXPECT_LE(hi - lo, 1u);
}

// Property: blocks tile the columns and every silo's shards partition the rows.
TEST(MakePartition, RandomPlansCoverExactly) {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const Index d = 1 + static_cast<Index>(rng.uniform_below(30));
    const Index m = 1 + static_cast<Index>(rng.uniform_below(60));
    const std::size_t n = 1 + rng.uniform_below(static_cast<std::uint64_t>(d));
    const std::size_t k = 1 + rng.uniform_below(static_cast<std::uint64_t>(m));
    const auto scheme = trial % 3 == 0 ? RowScheme::Contiguous : RowScheme::Strided;
    std::optional<std::uint64_t> seed;
    if (trial % 3 == 2) seed = rng.next();
    const auto plan = make_partition(m, d, n, k, {}, scheme, seed);

    Index next = 0;
    for (const auto& b : plan.vertical_blocks) {
      ASSERT_EQ(b.begin, next);
      ASSERT_GE(b.width, 1);
      next = b.end();
    }
    ASSERT_EQ(next, d);
    for (std::size_t j = 0; j < n; ++j) {
      std::vector<int> seen(static_cast<std::size_t>(m), 0);
      for (const auto& shard : plan.row_assignment[j]) {
        for (std::size_t p : shard) ++seen[p];
      }
      for (int s : seen) ASSERT_EQ(s, 1);
    }
  }
}

TEST(MakePartition, SeededStridedIsReproducible) {
  const auto a = make_partition(40, 6, 3, 4, {}, RowScheme::Strided, 99);
  const auto b = make_partition(40, 6, 3, 4, {}, RowScheme::Strided, 99);
  EXPECT_EQ(a.row_assignment, b.row_assignment);
  EXPECT_NE(a.row_assignment[0], a.row_assignment[1]);
  EXPECT_FALSE(a.identical_across_silos);
}
