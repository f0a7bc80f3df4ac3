#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ssn/data.hpp"
#include "ssn/layer.hpp"
#include "ssn/metrics.hpp"
#include "test_oracles.hpp"

using namespace ssn;

namespace {

struct Instance {
  SubspaceLayer layer;
  Vector x;
  Vector y;
};

Instance random_instance(std::uint64_t seed, Index t, Index d, Index r, double lambda) {
  Rng rng(seed);
  Instance in;
  in.layer.U = rng.gaussian(t, r, 0.7);
  in.layer.V = rng.gaussian(r, d, 0.7);
  in.layer.sigma = Vector::NullaryExpr(t, [&] { return 0.5 + 1.5 * rng.uniform(); });
  in.layer.lambda = lambda;
  in.x = rng.gaussian(d, 1);
  in.y = Vector::NullaryExpr(t, [&] { return rng.uniform() < 0.4 ? 0.0 : 3.0 * rng.uniform(); });
  return in;
}

TrainConfig plain_config(double eta, double mu, double lambda) {
  TrainConfig cfg;
  cfg.eta = eta;
  cfg.mu = mu;
  cfg.lambda = lambda;
  cfg.step_decay = StepDecay::Constant;
  cfg.step_scaling = StepScaling::None;
  return cfg;
}

double oracle_cost(const SubspaceLayer& l, const Vector& x, const Vector& y) {
  return oracle::cost(l.U, l.V, x, y, l.sigma, l.lambda);
}

}  // namespace

TEST(InstantaneousCost, ZeroResiduals) {
  SubspaceLayer l;
  l.U = (Matrix(3, 2) << 1.0, 0.0, 0.0, 1.0, 0.5, 0.0).finished();
  l.V = Matrix::Identity(2, 4);
  l.sigma = Vector::Constant(3, 1.7);
  l.lambda = 0.0;
  const Vector x = (Vector(4) << 2.0, 0.5, -1.0, 3.0).finished();
  const Vector y = (Vector(3) << 2.0, 0.5, 1.0).finished();
  ASSERT_NEAR((l.U * (l.V * x) - y).norm(), 0.0, 1e-15);
  EXPECT_NEAR(instantaneous_cost(x, y, l), 3.0 * (0.5 * std::log(2.0 * M_PI) + std::log(1.7)), 1e-12);
}

TEST(InstantaneousCost, AllCensoredAtZero) {
  SubspaceLayer l;
  l.U = Matrix::Zero(4, 2);
  l.V = Matrix::Zero(2, 3);
  l.sigma = Vector::Ones(4);
  l.lambda = 1.0;
  EXPECT_NEAR(instantaneous_cost(Vector::Ones(3), Vector::Zero(4), l), 4.0 * std::log(2.0), 1e-12);
}

TEST(InstantaneousCost, MatchesScalarLoop) {
  for (std::uint64_t s = 1; s <= 20; ++s) {
    const auto in = random_instance(s, 3, 4, 2, 0.3);
    EXPECT_NEAR(instantaneous_cost(in.x, in.y, in.layer), oracle_cost(in.layer, in.x, in.y), 1e-11);
  }
}

TEST(InstantaneousCost, RejectsShapes) {
  const auto in = random_instance(1, 3, 4, 2, 0.0);
  EXPECT_THROW(instantaneous_cost(Vector::Ones(5), in.y, in.layer), Error);
  EXPECT_THROW(instantaneous_cost(in.x, Vector::Ones(2), in.layer), Error);
}

TEST(SketchV, FixedPointAtZeroGradient) {
  SubspaceLayer l;
  l.U = Matrix::Identity(2, 1);
  l.U(1, 0) = 2.0;
  l.V = (Matrix(1, 3) << 1.0, 0.5, 0.25).finished();
  l.sigma = Vector::Ones(2);
  l.lambda = 0.0;
  const Vector x = Vector::Ones(3);
  const Vector y = l.U * (l.V * x);
  const auto cfg = plain_config(0.1, 0.1, 0.0);
  EXPECT_EQ(sketch_v(x, y, l, cfg), l.V);
  EXPECT_EQ(refine_u_row(1, x, y[1], l, cfg), l.U.row(1));
}

TEST(SketchV, MatchesFiniteDifferences) {
  for (std::uint64_t s = 1; s <= 50; ++s) {
    auto in = random_instance(s, 2, 3, 1, 0.2);
    const auto cfg = plain_config(1.0, 1.0, 0.2);
    const Matrix step = in.layer.V - sketch_v(in.x, in.y, in.layer, cfg);
    const Matrix fd = oracle::fd_gradient(
        [&](const Matrix& V) { return oracle::cost(in.layer.U, V, in.x, in.y, in.layer.sigma, 0.2); }, in.layer.V);
    EXPECT_LT(oracle::max_relative_error(step, fd), 1e-5) << "seed " << s;
  }
}

TEST(SketchV, InnerStepsRepeatTheUpdate) {
  auto in = random_instance(3, 4, 5, 2, 0.1);
  auto cfg = plain_config(1e-2, 1e-2, 0.1);
  const Matrix once = sketch_v(in.x, in.y, in.layer, cfg);
  SubspaceLayer mid = in.layer;
  mid.V = once;
  const Matrix twice_manual = sketch_v(in.x, in.y, mid, cfg);
  cfg.v_inner_steps = 2;
  EXPECT_LT((sketch_v(in.x, in.y, in.layer, cfg) - twice_manual).norm(), 1e-14);
}

TEST(SketchV, SmallStepDescends) {
  for (std::uint64_t s = 1; s <= 100; ++s) {
    auto in = random_instance(100 + s, 5, 6, 2, 0.1);
    const auto cfg = plain_config(1e-4, 1e-4, 0.1);
    const double before = instantaneous_cost(in.x, in.y, in.layer);
    SubspaceLayer after = in.layer;
    after.V = sketch_v(in.x, in.y, in.layer, cfg);
    EXPECT_LE(instantaneous_cost(in.x, in.y, after), before) << "seed " << s;
  }
}

TEST(SketchV, DivergenceRaisesStepSizeError) {
  auto in = random_instance(5, 3, 4, 2, 0.0);
  in.layer.V *= 1e300;
  in.layer.U *= 1e10;
  auto cfg = plain_config(1e300, 1.0, 0.0);
  try {
    sketch_v(in.x, in.y, in.layer, cfg, StepContext{7});
    FAIL() << "expected a step-size error";
  } catch (const StepSizeError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::StepSize);
    EXPECT_EQ(e.iteration(), 7);
  }
}

TEST(RefineURow, MatchesFiniteDifferences) {
  for (std::uint64_t s = 1; s <= 50; ++s) {
    auto in = random_instance(200 + s, 3, 4, 2, 0.3);
    const auto cfg = plain_config(1.0, 1.0, 0.3);
    for (Index t = 0; t < 3; ++t) {
      const RowVector step = in.layer.U.row(t) - refine_u_row(t, in.x, in.y[t], in.layer, cfg);
      const Matrix fd = oracle::fd_gradient(
          [&](const Matrix& row) {
            Matrix U = in.layer.U;
            U.row(t) = row;
            const Vector vx = in.layer.V * in.x;
            return oracle::nll(in.y[t], U.row(t).dot(vx), in.layer.sigma[t]) + 0.15 * row.squaredNorm();
          },
          in.layer.U.row(t));
      EXPECT_LT(oracle::max_relative_error(step, fd), 1e-5) << "seed " << s << " task " << t;
    }
  }
}

TEST(RefineURow, AllRowsAgreeWithBatch) {
  auto in = random_instance(9, 6, 4, 3, 0.05);
  const auto cfg = plain_config(0.1, 0.1, 0.05);
  const Matrix U = refine_u(in.x, in.y, in.layer, cfg);
  for (Index t = 0; t < 6; ++t) EXPECT_LT((U.row(t) - refine_u_row(t, in.x, in.y[t], in.layer, cfg)).norm(), 1e-14);
}

TEST(RefineURow, SmallStepDescends) {
  for (std::uint64_t s = 1; s <= 100; ++s) {
    auto in = random_instance(300 + s, 5, 6, 2, 0.1);
    const auto cfg = plain_config(1e-4, 1e-4, 0.1);
    const double before = instantaneous_cost(in.x, in.y, in.layer);
    SubspaceLayer after = in.layer;
    after.U = refine_u(in.x, in.y, in.layer, cfg);
    EXPECT_LE(instantaneous_cost(in.x, in.y, after), before) << "seed " << s;
  }
}

TEST(RefineURow, RejectsBadTask) {
  auto in = random_instance(1, 3, 4, 2, 0.0);
  EXPECT_THROW(refine_u_row(3, in.x, 0.0, in.layer, plain_config(1, 1, 0)), Error);
  EXPECT_THROW(refine_u_row(-1, in.x, 0.0, in.layer, plain_config(1, 1, 0)), Error);
}

TEST(StepSchedule, DecayModes) {
  TrainConfig cfg;
  cfg.decay_offset = 1.0;
  cfg.step_decay = StepDecay::Constant;
  EXPECT_EQ(cfg.decay(100), 1.0);
  cfg.step_decay = StepDecay::InvSqrt;
  EXPECT_DOUBLE_EQ(cfg.decay(4), 0.5);
  cfg.step_decay = StepDecay::Inv;
  EXPECT_DOUBLE_EQ(cfg.decay(4), 0.25);
  cfg.decay_offset = 10.0;
  EXPECT_DOUBLE_EQ(cfg.decay(11), 0.5);
  EXPECT_EQ(step_decay_from_string(to_string(StepDecay::InvSqrt)), StepDecay::InvSqrt);
  EXPECT_EQ(step_scaling_from_string(to_string(StepScaling::Curvature)), StepScaling::Curvature);
  EXPECT_THROW(step_decay_from_string("fast"), Error);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.eta = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.v_inner_steps = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.lambda = -1.0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Predict, LinearAndRelu) {
  Rng rng(4);
  SubspaceLayer l;
  l.U = rng.gaussian(3, 2);
  l.V = rng.gaussian(2, 4);
  l.sigma = Vector::Ones(3);
  const Vector x = rng.gaussian(4, 1);
  const Matrix W = l.U * l.V;
  Vector dense = Vector::Zero(3);
  for (Index t = 0; t < 3; ++t)
    for (Index d = 0; d < 4; ++d) dense[t] += W(t, d) * x[d];
  EXPECT_LT((predict_linear(l, x) - dense).norm(), 1e-12);
  const Vector p = predict(l, x);
  for (Index t = 0; t < 3; ++t) EXPECT_EQ(p[t], dense[t] > 0.0 ? predict_linear(l, x)[t] : 0.0);
  EXPECT_EQ(predict_linear(l, Vector::Zero(4)), Vector::Zero(3));
  SubspaceLayer zero = l;
  zero.U.setZero();
  EXPECT_EQ(predict_linear(zero, x), Vector::Zero(3));
  EXPECT_THROW(predict_linear(l, Vector::Ones(5)), Error);
}

TEST(Predict, SignCases) {
  SubspaceLayer l;
  l.U = Matrix::Identity(2, 2);
  l.V = Matrix::Identity(2, 2);
  l.sigma = Vector::Ones(2);
  EXPECT_EQ(predict(l, Vector::Constant(2, -1.0)), Vector::Zero(2));
  EXPECT_EQ(predict(l, Vector::Constant(2, 2.0)), predict_linear(l, Vector::Constant(2, 2.0)));
}

TEST(TrainLayer, SingleSample) {
  Dataset data;
  data.X = Matrix::Ones(1, 4);
  data.Y = Matrix::Ones(1, 3);
  TrainConfig cfg;
  cfg.rank = 2;
  const auto [layer, log] = train_layer(data, cfg);
  ASSERT_EQ(log.entries.size(), 1u);
  EXPECT_EQ(log.entries[0].iteration, 1);
  EXPECT_EQ(log.samples_seen, 1);
  EXPECT_EQ(layer.U.rows(), 3);
  EXPECT_EQ(layer.V.cols(), 4);
}

TEST(TrainLayer, EmptyDataset) {
  Dataset data;
  data.X.resize(0, 4);
  data.Y.resize(0, 3);
  try {
    train_layer(data, TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyInput);
  }
}

TEST(TrainLayer, OnePassDeterministic) {
  const auto [data, truth] = gen_single_layer(300, 10, 6, 2, 0.5, 3);
  TrainConfig cfg;
  cfg.rank = 2;
  cfg.seed = 42;
  Index counter = 0;
  TrainOptions opts;
  opts.sample_counter = &counter;
  const auto a = train_layer(data, cfg, opts);
  EXPECT_EQ(counter, 300);
  const auto b = train_layer(data, cfg);
  EXPECT_EQ(a.first.U, b.first.U);
  EXPECT_EQ(a.first.V, b.first.V);
  for (std::size_t i = 1; i < a.second.entries.size(); ++i) {
    EXPECT_GT(a.second.entries[i].iteration, a.second.entries[i - 1].iteration);
    EXPECT_TRUE(std::isfinite(a.second.entries[i].cost));
  }
  cfg.seed = 43;
  EXPECT_NE(train_layer(data, cfg).first.U, a.first.U);
}

TEST(TrainLayer, DivergenceKeepsLastFiniteIterate) {
  const auto [data, truth] = gen_single_layer(200, 10, 5, 2, 1.0, 1);
  TrainConfig cfg = plain_config(1e200, 1e200, 0.0);
  cfg.rank = 2;
  try {
    train_layer(data, cfg);
    FAIL() << "expected divergence";
  } catch (const StepSizeError& e) {
    EXPECT_GE(e.iteration(), 1);
    ASSERT_TRUE(e.last_finite().has_value());
    EXPECT_TRUE(e.last_finite()->U.allFinite());
    EXPECT_TRUE(e.last_finite()->V.allFinite());
  }
}

TEST(TrainLayer, RecoversPlantedSubspace) {
  const auto [data, truth] = gen_single_layer(2000, 50, 20, 5, 0.5, 1);
  TrainConfig cfg;
  cfg.rank = 5;
  cfg.eta = 3.0;
  cfg.mu = 0.25;
  cfg.step_decay = StepDecay::Inv;
  cfg.decay_offset = 100.0;
  cfg.step_scaling = StepScaling::Curvature;
  cfg.sigma = 0.5;
  cfg.seed = 1;
  TrainOptions opts;
  opts.planted_u = &truth.U[0];
  const auto [layer, log] = train_layer(data, cfg, opts);
  ASSERT_TRUE(log.entries.back().subspace_diff.has_value());
  const Vector corr = weight_correlations(layer.U * layer.V, truth.weights());
  std::vector<double> c(corr.data(), corr.data() + corr.size());
  std::nth_element(c.begin(), c.begin() + c.size() / 2, c.end());
  EXPECT_GT(c[c.size() / 2], 0.9);
}
