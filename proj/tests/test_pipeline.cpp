#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "sgfa/error.hpp"
#include "sgfa/io.hpp"
#include "sgfa/pipeline.hpp"

using namespace sgfa;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::InvalidArgument;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

MultiViewDataset one_feature(const std::vector<double>& values) {
  Eigen::MatrixXd x(1, static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = values[i];
  return make_dataset({x});
}

// Raw dataset with missing cells and confounds, loosely shaped like a cohort.
MultiViewDataset messy_dataset(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u01;
  const int N = 60;
  Eigen::MatrixXd C(2, N);
  for (int n = 0; n < N; ++n) {
    C(0, n) = 40.0 + 10.0 * n01(rng);
    C(1, n) = n % 2;
  }
  std::vector<Eigen::MatrixXd> views;
  for (int d : {8, 5}) {
    Eigen::MatrixXd x(d, N);
    for (int j = 0; j < d; ++j)
      for (int n = 0; n < N; ++n) {
        x(j, n) = 3.0 + 0.05 * C(0, n) - 0.7 * C(1, n) + n01(rng) * (1.0 + j);
        if (u01(rng) < 0.04 * (j % 4)) x(j, n) = NAN;
      }
    views.push_back(x);
  }
  auto data = make_dataset(std::move(views));
  data.confounds = C;
  data.confound_names = {"age", "sex"};
  return data;
}

double max_abs_diff(const MultiViewDataset& a, const MultiViewDataset& b) {
  return (a.stacked() - b.stacked()).cwiseAbs().maxCoeff();
}

}  // namespace

TEST(Csv, SplitsQuotedFields) {
  EXPECT_EQ(io::split_csv_line("a,\"b,c\",d"), (std::vector<std::string>{"a", "b,c", "d"}));
  EXPECT_EQ(io::split_csv_line("a,,"), (std::vector<std::string>{"a", "", ""}));
}

TEST(Csv, RaggedRowNamesLine) {
  const std::string text = "id,a,b\ns1,1,2\ns2,3\n";
  EXPECT_EQ(kind_of([&] { io::parse_table(text, "x.csv"); }), ErrorKind::Parse);
  EXPECT_NE(message_of([&] { io::parse_table(text, "x.csv"); }).find("line 3"), std::string::npos);
}

TEST(Csv, UnparseableCellNamesRowAndColumn) {
  const std::string text = "id,a,b\ns1,1,2\ns2,3,abc\n";
  const std::string msg = message_of([&] { io::parse_table(text, "x.csv"); });
  EXPECT_NE(msg.find("s2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("b"), std::string::npos) << msg;
  EXPECT_EQ(kind_of([&] { io::parse_table(text, "x.csv"); }), ErrorKind::Parse);
}

TEST(Csv, MissingMarkersAndRoundTrip) {
  const auto t = io::parse_table("id,a,b\ns1,NA,2.5\ns2,,1e-3\ns3,NaN,-4\n", "t");
  EXPECT_TRUE(std::isnan(t.values(0, 0)));
  EXPECT_TRUE(std::isnan(t.values(1, 0)));
  EXPECT_EQ(t.values(1, 1), 1e-3);
  const std::string text = io::format_table(t.id_column, t.columns, t.row_ids, t.values);
  const auto back = io::parse_table(text, "t");
  EXPECT_EQ(back.row_ids, t.row_ids);
  EXPECT_EQ(back.values(2, 1), -4.0);
  EXPECT_TRUE(std::isnan(back.values(0, 0)));
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02e23})
    EXPECT_EQ(std::stod(io::format_double(v)), v);
}

TEST(Io, AtomicWriteAndDigest) {
  const fs::path dir = fs::temp_directory_path() / "sgfa_io_test";
  fs::create_directories(dir);
  io::write_file(dir / "a.txt", "abc");
  EXPECT_EQ(io::read_file(dir / "a.txt"), "abc");
  EXPECT_EQ(io::sha256_file(dir / "a.txt"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(io::sha256_hex(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_FALSE(fs::exists(dir / "a.txt.tmp"));
  EXPECT_EQ(kind_of([&] { io::read_file(dir / "missing.txt"); }), ErrorKind::Io);
  fs::remove_all(dir);
}

TEST(LoadViews, AlignsByIdentifier) {
  const auto data = load_views_from_text({"id,a,b\ns1,1,2\ns2,3,4\ns3,5,6\n",
                                          "id,c\ns3,30\ns1,10\ns2,20\n"},
                                         {"v1", "v2"});
  EXPECT_EQ(data.num_views(), 2u);
  EXPECT_EQ(data.sample_ids, (std::vector<std::string>{"s1", "s2", "s3"}));
  EXPECT_EQ(data.views[0].rows(), 2);
  EXPECT_EQ(data.views[1](0, 2), 30.0);
  EXPECT_EQ(data.views[1](0, 0), 10.0);
  EXPECT_EQ(data.feature_names[0], (std::vector<std::string>{"a", "b"}));
}

TEST(LoadViews, LabelsAndConfounds) {
  const auto data = load_views_from_text({"id,a\ns1,1\ns2,3\ns3,5\n"}, {"v"},
                                         std::string("id,group\ns2,ctl\ns1,case\ns3,ctl\n"),
                                         "group", std::string("id,age\ns1,50\ns2,60\ns3,70\n"));
  ASSERT_TRUE(data.labels.has_value());
  EXPECT_EQ(data.group_names, (std::vector<std::string>{"case", "ctl"}));
  EXPECT_EQ(*data.labels, (std::vector<int>{0, 1, 1}));
  ASSERT_TRUE(data.confounds.has_value());
  EXPECT_EQ((*data.confounds)(0, 1), 60.0);
}

TEST(LoadViews, Errors) {
  EXPECT_EQ(kind_of([] {
              load_views_from_text({"id,a\ns1,1\ns2,2\n", "id,b\nx1,1\nx2,2\n"}, {"a", "b"});
            }),
            ErrorKind::Alignment);
  const std::string msg = message_of([] {
    load_views_from_text({"id,a\ns1,1\ns2,2\n", "id,b\ns1,1\ns9,2\n"}, {"a", "b"});
  });
  EXPECT_NE(msg.find("s9"), std::string::npos) << msg;
  EXPECT_NE(msg.find("s2"), std::string::npos) << msg;
  EXPECT_EQ(kind_of([] { load_views_from_text({"id,a\ns1,1\ns1,2\n"}, {"a"}); }),
            ErrorKind::Alignment);
}

TEST(LoadViews, FromFiles) {
  const fs::path dir = fs::temp_directory_path() / "sgfa_load_test";
  fs::create_directories(dir);
  io::write_file(dir / "v1.csv", "id,a\ns1,1\ns2,2\n");
  io::write_file(dir / "v2.csv", "id,b\ns1,3\ns2,4\n");
  const auto data = load_views({dir / "v1.csv", dir / "v2.csv"});
  EXPECT_EQ(data.view_names, (std::vector<std::string>{"v1", "v2"}));
  EXPECT_EQ(kind_of([&] { load_views({dir / "nope.csv"}); }), ErrorKind::Io);
  fs::remove_all(dir);
}

TEST(DropHighMissing, StrictThreshold) {
  Eigen::MatrixXd x(3, 100);
  x.setOnes();
  for (int n = 0; n < 11; ++n) x(0, n) = NAN;  // 11%
  for (int n = 0; n < 10; ++n) x(1, n) = NAN;  // exactly 10%
  PreprocessReport r;
  const auto out = drop_high_missing(make_dataset({x}), 0.10, r);
  ASSERT_EQ(out.views[0].rows(), 2);
  ASSERT_EQ(r.dropped_features.size(), 1u);
  EXPECT_EQ(r.dropped_features[0].name, "v1_f1");
  EXPECT_NEAR(r.dropped_features[0].missing_fraction, 0.11, 1e-15);
  EXPECT_EQ(out.feature_names[0], (std::vector<std::string>{"v1_f2", "v1_f3"}));
}

TEST(DropHighMissing, IdentityAndDegenerateView) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(2, 10);
  PreprocessReport r;
  const auto data = make_dataset({x});
  EXPECT_EQ(drop_high_missing(data, 0.1, r).stacked(), data.stacked());
  x.row(0).setConstant(NAN);
  x.row(1).setConstant(NAN);
  EXPECT_EQ(kind_of([&] { drop_high_missing(make_dataset({x}), 0.1, r); }), ErrorKind::Degenerate);
  EXPECT_THROW(drop_high_missing(data, 0.0, r), Error);
}

TEST(DropHighMissingSamples, RemovesSparseSubjects) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(3, 4);
  x(0, 1) = NAN;  // 1/3 missing: kept
  x(0, 2) = x(1, 2) = NAN;  // 2/3 missing: dropped
  PreprocessReport r;
  const auto out = drop_high_missing_samples(make_dataset({x}), 1.0 / 3.0, std::nullopt, r);
  EXPECT_EQ(out.sample_ids, (std::vector<std::string>{"s1", "s2", "s4"}));
  ASSERT_EQ(r.dropped_samples.size(), 1u);
  EXPECT_EQ(r.dropped_samples[0].id, "s3");
}

TEST(MedianImpute, Values) {
  PreprocessReport r;
  auto out = median_impute(one_feature({1, 2, 100, NAN}), r);
  EXPECT_EQ(out.views[0](0, 3), 2.0);
  out = median_impute(one_feature({1, NAN, 3}), r);
  EXPECT_EQ(out.views[0](0, 1), 2.0);
  const auto clean = one_feature({4, 5, 6});
  EXPECT_EQ(median_impute(clean, r).stacked(), clean.stacked());
  EXPECT_EQ(kind_of([&] { median_impute(one_feature({NAN, NAN}), r); }), ErrorKind::Degenerate);
}

TEST(RegressConfounds, ExactFitLeavesZero) {
  auto data = one_feature({2, 4, 6, 10, -2});
  data.confounds = Eigen::MatrixXd(1, 5);
  *data.confounds << 1, 2, 3, 5, -1;
  PreprocessReport r;
  const auto out = regress_confounds(data, r);
  EXPECT_LT(out.views[0].norm(), 1e-10);
}

TEST(RegressConfounds, OrthogonalConfoundOnlyRemovesMean) {
  auto data = one_feature({1, 2, 3, 4});
  data.confounds = Eigen::MatrixXd(1, 4);
  *data.confounds << 1, -1, -1, 1;  // empirical correlation with the feature is 0
  PreprocessReport r;
  const auto out = regress_confounds(data, r);
  const Eigen::RowVector4d want(-1.5, -0.5, 0.5, 1.5);
  EXPECT_LT((out.views[0].row(0) - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RegressConfounds, ResidualsUncorrelated) {
  const auto raw = messy_dataset(3);
  PreprocessReport r;
  const auto out = regress_confounds(median_impute(raw, r), r);
  const Eigen::MatrixXd& C = *out.confounds;
  for (const auto& v : out.views)
    for (Eigen::Index j = 0; j < v.rows(); ++j)
      for (Eigen::Index c = 0; c < C.rows(); ++c) {
        const Eigen::ArrayXd x = v.row(j).array() - v.row(j).mean();
        const Eigen::ArrayXd y = C.row(c).array() - C.row(c).mean();
        const double corr = (x * y).sum() / std::sqrt(x.square().sum() * y.square().sum());
        EXPECT_LT(std::abs(corr), 1e-10);
      }
}

TEST(RegressConfounds, RankDeficiencyNamesColumns) {
  auto data = one_feature({1, 2, 3, 4});
  data.confounds = Eigen::MatrixXd(2, 4);
  *data.confounds << 1, 2, 3, 5,  //
      2, 4, 6, 10;
  data.confound_names = {"age", "age_twice"};
  PreprocessReport r;
  EXPECT_EQ(kind_of([&] { regress_confounds(data, r); }), ErrorKind::Degenerate);
  EXPECT_NE(message_of([&] { regress_confounds(data, r); }).find("age_twice"), std::string::npos);
}

TEST(Standardize, Values) {
  PreprocessReport r;
  const auto out = standardize(one_feature({0, 2}), r);
  EXPECT_EQ(out.views[0](0, 0), -1.0);
  EXPECT_EQ(out.views[0](0, 1), 1.0);
  const auto again = standardize(out, r);
  EXPECT_LT(max_abs_diff(again, out), 1e-12);
  EXPECT_EQ(kind_of([&] { standardize(one_feature({3, 3, 3}), r); }), ErrorKind::Degenerate);
  EXPECT_NE(message_of([&] { standardize(one_feature({3, 3, 3}), r); }).find("v1_f1"),
            std::string::npos);
  const auto sample = standardize(one_feature({0, 2}), r, SdConvention::Sample);
  EXPECT_NEAR(sample.views[0](0, 1), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Standardize, MomentsOnRandomData) {
  PreprocessReport r;
  const auto raw = messy_dataset(5);
  const auto out = standardize(median_impute(raw, r), r);
  for (const auto& v : out.views)
    for (Eigen::Index j = 0; j < v.rows(); ++j) {
      const double mean = v.row(j).mean();
      EXPECT_NEAR(mean, 0.0, 1e-12);
      EXPECT_NEAR(std::sqrt((v.row(j).array() - mean).square().mean()), 1.0, 1e-12);
    }
}

TEST(Preprocess, FixedOrderAndIdempotence) {
  const auto raw = messy_dataset(7);
  PreprocessReport r;
  PreprocessOptions opt;
  const auto once = preprocess(raw, opt, r);
  EXPECT_EQ(r.steps, (std::vector<std::string>{"drop_features", "impute", "regress_confounds",
                                               "standardize"}));
  EXPECT_FALSE(once.has_missing());
  PreprocessReport r2;
  const auto twice = preprocess(once, opt, r2);
  EXPECT_LT(max_abs_diff(once, twice), 1e-10);
}

TEST(Preprocess, ReplayIsBitExact) {
  const auto raw = messy_dataset(8);
  PreprocessReport r;
  PreprocessOptions opt;
  opt.sample_threshold = 1.0 / 3.0;
  const auto processed = preprocess(raw, opt, r);
  EXPECT_EQ(replay(raw, r).stacked(), processed.stacked());
  // The report survives serialisation without losing a bit.
  const auto back = PreprocessReport::from_json(r.to_json());
  EXPECT_EQ(replay(raw, back).stacked(), processed.stacked());
  EXPECT_EQ(back.to_json(), r.to_json());
}
