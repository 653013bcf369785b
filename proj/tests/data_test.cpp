#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "fairflow/data.hpp"
#include "fairflow/serialize.hpp"

using namespace fairflow;

namespace {

SchemaSpec fixture_schema() {
  return schema_from_json(json::parse(R"({
    "features": [{"name": "a", "kind": "continuous"},
                 {"name": "b", "kind": "discrete"},
                 {"name": "c", "kind": "discrete", "categories": ["lo", "hi"]}],
    "sensitive": {"column": "grp", "groups": ["x", "y"]},
    "label": {"column": "lab", "positive": ["yes"]}
  })"));
}

Dataset parse(const std::string& text, const SchemaSpec& schema, bool continuous_only = false) {
  std::istringstream in(text);
  return parse_csv(in, schema, continuous_only);
}

Dataset cells_dataset(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.x.resize(static_cast<Index>(n), 1);
  ds.y.resize(static_cast<Index>(n));
  ds.schema = {{"v", ColumnKind::kContinuous, {}}};
  for (std::size_t i = 0; i < n; ++i) {
    ds.x(static_cast<Index>(i), 0) = rng.normal();
    ds.s.push_back(rng.uniform() < 0.3 ? 1 : 0);
    ds.y(static_cast<Index>(i)) = rng.uniform() < 0.6 ? 1.0 : 0.0;
  }
  return ds;
}

}  // namespace

TEST(LoadCsv, HandcraftedFixture) {
  Dataset ds = parse(
      "lab,a,grp,b,c,extra\n"
      "yes,1.5,x,3,hi,zz\n"
      "no,-2,y,0,lo,\"quoted, field\"\n"
      "no,0.25,y,7,hi,q\n"
      "yes,4e1,x,1,lo,q\n",
      fixture_schema());
  ASSERT_EQ(ds.size(), 4u);
  ASSERT_EQ(ds.dim(), 3);
  Tensor expect(4, 3);
  expect << 1.5, 3, 1, -2, 0, 0, 0.25, 7, 1, 40, 1, 0;
  EXPECT_EQ(ds.x, expect);
  EXPECT_EQ(ds.s, (std::vector<int>{0, 1, 1, 0}));
  EXPECT_EQ(ds.y, (Eigen::VectorXd(4) << 1, 0, 0, 1).finished());
  EXPECT_EQ(ds.schema[1].kind, ColumnKind::kDiscrete);
  EXPECT_EQ(ds.dropped_missing, 0u);
}

TEST(LoadCsv, MissingValueRowDroppedAndCounted) {
  Dataset ds = parse(
      "lab,a,grp,b,c\n"
      "yes,1,x,3,hi\n"
      "no,,y,0,lo\n"
      "no,2,y,?,lo\n"
      "yes,4,y,1,lo\n",
      fixture_schema());
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.dropped_missing, 2u);
}

TEST(LoadCsv, UndeclaredGroupFiltered) {
  Dataset ds = parse("lab,a,grp,b,c\nyes,1,x,3,hi\nno,1,z,3,hi\nno,2,y,1,lo\n", fixture_schema());
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.dropped_filtered, 1u);
}

TEST(LoadCsv, Errors) {
  const auto schema = fixture_schema();
  EXPECT_THROW(parse("lab,a,grp,b\nyes,1,x,3\n", schema), DataError);               // missing column
  EXPECT_THROW(parse("lab,a,grp,b,c\nyes,1,x,3,hi\nno,abc,y,1,lo\n", schema), DataError);  // bad cell
  EXPECT_THROW(parse("lab,a,grp,b,c\nyes,1,x,3,hi\nno,2,x,1,lo\n", schema), DataError);    // empty group y
  try {
    parse("lab,a,grp,b,c\nyes,1,x,3,hi\nno,abc,y,1,lo\n", schema);
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(LoadCsv, ContinuousOnlyKeepsContinuousColumns) {
  auto schema = schema_from_json(read_json_file(std::string(FAIRFLOW_TEST_CONFIG_DIR) + "/adult_schema.json"));
  const std::string rows =
      "39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 2174, 0, 40, "
      "United-States, <=50K\n"
      "50, Self-emp-not-inc, 83311, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, White, Female, 0, "
      "0, 13, United-States, >50K\n"
      "38, ?, 215646, HS-grad, 9, Divorced, Handlers-cleaners, Not-in-family, White, Male, 0, 0, 40, "
      "United-States, <=50K\n";
  Dataset full = parse(rows, schema);
  EXPECT_EQ(full.dim(), 8);
  EXPECT_EQ(full.dropped_missing, 1u);  // '?' workclass
  Dataset cont = parse(rows, schema, true);
  ASSERT_EQ(cont.dim(), 6);
  for (const auto& c : cont.schema) EXPECT_EQ(c.kind, ColumnKind::kContinuous);
  EXPECT_EQ(cont.size(), 3u);  // workclass no longer used
  EXPECT_EQ(cont.s, (std::vector<int>{0, 1, 0}));
  EXPECT_EQ(cont.y(1), 1.0);
}

TEST(LoadCsv, CompasFileMatchesReferenceFiltering) {
  const std::string path = std::string(FAIRFLOW_TEST_DATA_DIR) + "/compas-scores-two-years.csv";
  auto schema = schema_from_json(read_json_file(std::string(FAIRFLOW_TEST_CONFIG_DIR) + "/compas_schema.json"));
  Dataset ds = load_csv(path, schema);
  EXPECT_EQ(ds.size(), 5278u);
  EXPECT_EQ(ds.group_counts(), (std::vector<std::size_t>{3175, 2103}));
  EXPECT_EQ(ds.y.sum(), 2753.0);
}

TEST(Folds, NineUniformRowsGiveFoldsOfThree) {
  Dataset ds;
  ds.x = Tensor::Zero(9, 1);
  ds.y = Eigen::VectorXd::Zero(9);
  ds.schema = {{"v", ColumnKind::kContinuous, {}}};
  for (int i = 0; i < 9; ++i) ds.s.push_back(i % 3 == 0 ? 1 : 0);
  ds.y(1) = ds.y(4) = ds.y(7) = 1;
  FoldPlan plan = make_folds(ds, 5, 3, 2);
  ASSERT_EQ(plan.outer.size(), 3u);
  for (const auto& f : plan.outer) EXPECT_EQ(f.split.test.size(), 3u);
}

TEST(Folds, DeterministicGivenSeed) {
  Dataset ds = cells_dataset(120, 1);
  EXPECT_EQ(to_json(make_folds(ds, 42)), to_json(make_folds(ds, 42)));
  EXPECT_NE(to_json(make_folds(ds, 42)), to_json(make_folds(ds, 43)));
}

TEST(Folds, PartitionAndStratification) {
  Dataset ds = cells_dataset(300, 2);
  FoldPlan plan = make_folds(ds, 7);
  auto cell = [&](std::size_t r) { return std::make_pair(ds.s[r], static_cast<int>(ds.y(static_cast<Index>(r)))); };
  std::map<std::pair<int, int>, double> total;
  for (std::size_t r = 0; r < ds.size(); ++r) total[cell(r)] += 1;

  std::multiset<std::size_t> seen;
  for (const auto& of : plan.outer) {
    seen.insert(of.split.test.begin(), of.split.test.end());
    std::map<std::pair<int, int>, double> in_fold;
    for (std::size_t r : of.split.test) in_fold[cell(r)] += 1;
    for (const auto& [k, n] : total) EXPECT_LE(std::abs(in_fold[k] - n / 3.0), 1.0);

    // Inner folds partition the outer training rows.
    std::multiset<std::size_t> inner_seen;
    for (const auto& in : of.inner) inner_seen.insert(in.test.begin(), in.test.end());
    EXPECT_EQ(inner_seen, std::multiset<std::size_t>(of.split.train.begin(), of.split.train.end()));
    std::set<std::size_t> test(of.split.test.begin(), of.split.test.end());
    for (std::size_t r : of.split.train) EXPECT_EQ(test.count(r), 0u);
  }
  EXPECT_EQ(seen.size(), ds.size());
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), ds.size());
}

TEST(Toy, Reproducible) {
  ToyConfig cfg;
  cfg.n_per_group = 2;
  cfg.seed = 9;
  Dataset a = gen_toy(cfg), b = gen_toy(cfg);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.s, (std::vector<int>{0, 0, 1, 1}));
}

TEST(Toy, SampleMomentsMatchConfig) {
  ToyConfig cfg;
  cfg.n_per_group = 2000;
  cfg.seed = 3;
  Dataset ds = gen_toy(cfg);
  for (int g = 0; g < 2; ++g) {
    Dataset part = ds.subset(ds.rows_of_group(g));
    const auto& mu = g == 0 ? cfg.mean0 : cfg.mean1;
    const auto& sd = g == 0 ? cfg.std0 : cfg.std1;
    for (Index c = 0; c < 2; ++c) {
      const double m = part.x.col(c).mean();
      EXPECT_LT(std::abs(m - mu[static_cast<std::size_t>(c)]), 3 * sd[static_cast<std::size_t>(c)] / std::sqrt(2000.0));
    }
    // Labels split each group near its median.
    EXPECT_NEAR(part.y.mean(), 0.5, 0.05);
  }
}

TEST(Toy, DefaultSeparationIsFourCombinedStds) {
  ToyConfig cfg;
  const double dx = cfg.mean1[0] - cfg.mean0[0], dy = cfg.mean1[1] - cfg.mean0[1];
  EXPECT_GE(std::hypot(dx, dy), 4.0 * (cfg.std0[0] + cfg.std1[0]));
}

TEST(Preprocess, TrainColumnsStandardized) {
  Dataset ds = cells_dataset(90, 4);
  FoldPlan plan = make_folds(ds, 1);
  auto res = preprocess(ds, plan.outer[0].split);
  EXPECT_NEAR(res.train.x.col(0).mean(), 0.0, 1e-12);
  EXPECT_NEAR(std::sqrt(res.train.x.col(0).array().square().mean()), 1.0, 1e-12);
}

TEST(Preprocess, ConstantColumnZeroed) {
  Dataset ds = cells_dataset(60, 5);
  ds.x.col(0).setConstant(3.7);
  auto res = preprocess(ds, make_folds(ds, 1).outer[0].split);
  EXPECT_EQ(res.stats.std[0], PreprocessStats::kStdFloor);
  EXPECT_LT(res.train.x.cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT(res.test.x.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Preprocess, TestRowsUseTrainStatistics) {
  Dataset ds = cells_dataset(90, 6);
  FoldSplit split = make_folds(ds, 2).outer[1].split;
  for (std::size_t r : split.test) ds.x(static_cast<Index>(r), 0) += 10.0;  // shifted test distribution
  auto res = preprocess(ds, split);
  EXPECT_GT(res.test.x.col(0).mean(), 5.0);
  Tensor manual = (ds.subset(split.test).x.array() - res.stats.mean[0]) / res.stats.std[0];
  EXPECT_EQ(res.test.x, manual);
}

TEST(Preprocess, NoLeakageFromTestRows) {
  Dataset ds = cells_dataset(90, 7);
  FoldSplit split = make_folds(ds, 3).outer[2].split;
  auto a = preprocess(ds, split);
  for (std::size_t r : split.test) ds.x(static_cast<Index>(r), 0) = 1e6;
  auto b = preprocess(ds, split);
  EXPECT_EQ(a.stats.mean, b.stats.mean);
  EXPECT_EQ(a.stats.std, b.stats.std);
  EXPECT_EQ(a.train.x, b.train.x);
}

TEST(Preprocess, DequantizationOnlyTouchesDiscreteColumns) {
  Dataset ds = cells_dataset(90, 8);
  ds.x.conservativeResize(Eigen::NoChange, 2);
  for (Index r = 0; r < ds.x.rows(); ++r) ds.x(r, 1) = static_cast<double>(r % 4);
  ds.schema.push_back({"count", ColumnKind::kDiscrete, {}});
  FoldSplit split = make_folds(ds, 4).outer[0].split;
  auto with = preprocess(ds, split, {true, 11});
  auto without = preprocess(ds, split, {false, 11});
  EXPECT_EQ(with.stats.dequantized, (std::vector<bool>{false, true}));
  EXPECT_EQ(with.train.x.col(0), without.train.x.col(0));
  // Dequantized training values are no longer on a lattice.
  std::set<double> distinct(with.train.x.col(1).data(), with.train.x.col(1).data() + with.train.x.rows());
  EXPECT_GT(distinct.size(), 4u);
  // Reproducible for a fixed seed.
  EXPECT_EQ(preprocess(ds, split, {true, 11}).train.x, with.train.x);
}
