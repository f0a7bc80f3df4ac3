#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "ssn/data.hpp"
#include "test_util.hpp"

using namespace ssn;
using testutil::TempDir;
using testutil::write_text;

namespace {

std::multiset<std::vector<double>> row_set(const Dataset& d) {
  std::multiset<std::vector<double>> out;
  for (Index i = 0; i < d.size(); ++i) {
    std::vector<double> r;
    for (Index c = 0; c < d.input_dim(); ++c) r.push_back(d.X(i, c));
    for (Index c = 0; c < d.task_dim(); ++c) r.push_back(d.Y(i, c));
    out.insert(r);
  }
  return out;
}

}  // namespace

TEST(Generators, NoiselessMatchesPlantedMap) {
  const auto [data, truth] = gen_single_layer(50, 8, 5, 3, 0.0, 2);
  const Matrix W = truth.weights();
  for (Index i = 0; i < data.size(); ++i) {
    const Vector x = data.X.row(i).transpose();
    EXPECT_LT((data.Y.row(i).transpose() - relu(Vector(W * x))).norm(), 1e-12);
  }
}

TEST(Generators, LargeScaleCensoringFraction) {
  const auto [data, truth] = gen_single_layer(5000, 200, 100, 10, 3.0, 1);
  const double zero = (data.Y.array() == 0.0).cast<double>().mean();
  EXPECT_GE(zero, 0.35);
  EXPECT_LE(zero, 0.65);
}

TEST(Generators, Deterministic) {
  const auto a = gen_single_layer(100, 10, 5, 2, 1.0, 9);
  const auto b = gen_single_layer(100, 10, 5, 2, 1.0, 9);
  EXPECT_EQ(a.first.X, b.first.X);
  EXPECT_EQ(a.first.Y, b.first.Y);
  const auto c = gen_single_layer(100, 10, 5, 2, 1.0, 10);
  EXPECT_NE(a.first.Y, c.first.Y);
}

TEST(Generators, RankValidation) {
  EXPECT_THROW(gen_single_layer(10, 4, 5, 5, 1.0, 1), Error);
  EXPECT_THROW(gen_single_layer(10, 4, 5, 0, 1.0, 1), Error);
  EXPECT_THROW(gen_deep(10, 4, 5, 2, 1.0, 0, 1), Error);
  EXPECT_THROW(gen_heteroscedastic(10, 4, 5, 2, {}, 1), Error);
  EXPECT_THROW(gen_heteroscedastic(10, 4, 5, 2, {1.0, -1.0}, 1), Error);
}

TEST(Generators, DeepDepthOneIsSingleLayer) {
  const auto a = gen_deep(100, 10, 5, 2, 1.0, 1, 4);
  const auto b = gen_single_layer(100, 10, 5, 2, 1.0, 4);
  EXPECT_EQ(a.first.Y, b.first.Y);
  EXPECT_EQ(a.second.U[0], b.second.U[0]);
}

TEST(Generators, DeepShapesAndSign) {
  const auto [data, truth] = gen_deep(300, 20, 8, 3, 1.0, 3, 5);
  ASSERT_EQ(truth.U.size(), 3u);
  EXPECT_EQ(truth.V[0].cols(), 20);
  EXPECT_EQ(truth.V[1].cols(), 8);
  EXPECT_EQ(truth.V[2].cols(), 8);
  EXPECT_TRUE((data.Y.array() >= 0.0).all());
  EXPECT_TRUE(data.Y.allFinite());
}

TEST(Generators, LargeScaleDeepIsFinite) {
  const auto [data, truth] = gen_deep(5000, 200, 100, 10, 3.0, 3, 1);
  EXPECT_TRUE(data.Y.allFinite());
  EXPECT_TRUE((data.Y.array() >= 0.0).all());
}

TEST(Generators, HeteroscedasticSingletonMatchesSingleLayer) {
  const auto a = gen_heteroscedastic(100, 10, 5, 2, {1.5}, 3);
  const auto b = gen_single_layer(100, 10, 5, 2, 1.5, 3);
  EXPECT_EQ(a.first.X, b.first.X);
  EXPECT_EQ(a.first.Y, b.first.Y);
  EXPECT_EQ(a.second.sigma, Vector::Constant(5, 1.5));
}

TEST(Generators, HeteroscedasticNoiseLevels) {
  const auto [data, truth] = gen_heteroscedastic(2000, 20, 20, 5, {0.5, 3.0}, 1);
  const Matrix noiseless = data.X * truth.weights().transpose();
  double low = 0.0, high = 0.0;
  int n_low = 0, n_high = 0;
  for (Index t = 0; t < 20; ++t) {
    double sum = 0.0;
    int count = 0;
    for (Index i = 0; i < data.size(); ++i)
      if (data.Y(i, t) > 0.0) {
        sum += std::abs(data.Y(i, t) - noiseless(i, t));
        ++count;
      }
    (truth.sigma[t] == 0.5 ? low : high) += sum / count;
    ++(truth.sigma[t] == 0.5 ? n_low : n_high);
  }
  ASSERT_GT(n_low, 0);
  ASSERT_GT(n_high, 0);
  EXPECT_GT(high / n_high, low / n_low);
}

TEST(Csv, WellFormedPair) {
  TempDir dir;
  write_text(dir.file("x.csv"), "a,b,c\n1,2,3\n4,5.5,-6\n");
  write_text(dir.file("y.csv"), "s,t\n0,1\n2.5,0\n");
  const auto d = load_csv(dir.file("x.csv"), dir.file("y.csv"));
  EXPECT_EQ(d.size(), 2);
  EXPECT_EQ(d.input_dim(), 3);
  EXPECT_EQ(d.task_dim(), 2);
  EXPECT_EQ(d.X(1, 2), -6.0);
  EXPECT_EQ(d.target_names[1], "t");
}

TEST(Csv, NanCellLocated) {
  TempDir dir;
  write_text(dir.file("x.csv"), "a,b\n1,2\n3,NaN\n");
  write_text(dir.file("y.csv"), "s\n0\n1\n");
  try {
    load_csv(dir.file("x.csv"), dir.file("y.csv"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Parse);
    EXPECT_NE(std::string(e.what()).find("x.csv:3:2"), std::string::npos) << e.what();
  }
}

TEST(Csv, Rejections) {
  TempDir dir;
  write_text(dir.file("x.csv"), "a,b\n1,2\n3,4\n");
  write_text(dir.file("neg.csv"), "s\n0\n-1\n");
  write_text(dir.file("short.csv"), "s\n0\n");
  write_text(dir.file("gap.csv"), "a,b\n1,\n3,4\n5\n");
  write_text(dir.file("word.csv"), "a,b\n1,x\n3,4\n");
  write_text(dir.file("thousands.csv"), "s\n\"1,000\"\n2\n");
  auto kind_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Config;
  };
  EXPECT_EQ(kind_of([&] { load_csv(dir.file("x.csv"), dir.file("neg.csv")); }), ErrorKind::Parse);
  EXPECT_EQ(kind_of([&] { load_csv(dir.file("x.csv"), dir.file("short.csv")); }), ErrorKind::Parse);
  EXPECT_EQ(kind_of([&] { load_csv(dir.file("word.csv"), dir.file("short.csv")); }), ErrorKind::Parse);
  EXPECT_EQ(kind_of([&] { load_csv(dir.file("x.csv"), dir.file("missing.csv")); }), ErrorKind::Io);
  EXPECT_EQ(kind_of([&] { load_feature_csv(dir.file("thousands.csv")); }), ErrorKind::Parse);
  try {
    load_feature_csv(dir.file("gap.csv"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("lines 2 4"), std::string::npos) << e.what();
  }
}

TEST(Csv, RoundTripIsExact) {
  TempDir dir;
  const auto [data, truth] = gen_single_layer(200, 7, 4, 2, 1.0, 3);
  save_csv(data, dir.file("x.csv"), dir.file("y.csv"));
  const auto back = load_csv(dir.file("x.csv"), dir.file("y.csv"));
  EXPECT_EQ(back.X, data.X);
  EXPECT_EQ(back.Y, data.Y);
}

TEST(Split, FloorArithmetic) {
  Dataset d;
  d.X = Matrix::Random(670, 2);
  d.Y = Matrix::Ones(670, 1);
  const auto [train, valid] = split(d, 0.8, 1);
  EXPECT_EQ(train.size(), 536);
  EXPECT_EQ(valid.size(), 134);
}

TEST(Split, ExhaustiveAndDeterministic) {
  const auto [data, truth] = gen_single_layer(101, 4, 3, 2, 1.0, 1);
  const auto [a_train, a_valid] = split(data, 0.4, 5);
  const auto [b_train, b_valid] = split(data, 0.4, 5);
  const auto [c_train, c_valid] = split(data, 0.4, 6);
  EXPECT_EQ(a_train.X, b_train.X);
  EXPECT_NE(a_train.X, c_train.X);
  auto both = row_set(a_train);
  const auto v = row_set(a_valid);
  both.insert(v.begin(), v.end());
  EXPECT_EQ(both, row_set(data));
}

TEST(Split, DegenerateFractions) {
  const auto [data, truth] = gen_single_layer(10, 4, 3, 2, 1.0, 1);
  EXPECT_THROW(split(data, 0.0, 1), Error);
  EXPECT_THROW(split(data, 1.0, 1), Error);
  EXPECT_THROW(split(data, 1.5, 1), Error);
  EXPECT_THROW(split(data, 0.05, 1), Error);
}
