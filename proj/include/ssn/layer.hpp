#pragma once

// One censored multi-task regression layer, y = ReLU(U V x + eps), trained in
// a single pass: for every sample, sketch V against the current basis U, then
// refine each row U_t against the new sketch.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ssn/core_math.hpp"
#include "ssn/dataset.hpp"
#include "ssn/error.hpp"
#include "ssn/random.hpp"
#include "ssn/types.hpp"

namespace ssn {

enum class StepDecay { Constant, InvSqrt, Inv };

inline const char* to_string(StepDecay d) {
  switch (d) {
    case StepDecay::Constant: return "constant";
    case StepDecay::InvSqrt: return "inv_sqrt";
    case StepDecay::Inv: return "inv";
  }
  return "constant";
}

inline StepDecay step_decay_from_string(const std::string& s) {
  if (s == "constant") return StepDecay::Constant;
  if (s == "inv_sqrt") return StepDecay::InvSqrt;
  if (s == "inv") return StepDecay::Inv;
  fail(ErrorKind::InvalidArgument, "unknown step decay '" + s + "'");
}

/// How eta and mu are scaled per sample before the decay schedule.
///  none:        raw eta, mu.
///  input_power: eta * D_in / (running mean of ||x||^2); mu unchanged.
///  curvature:   each step divided by a bound on the curvature of its
///               subproblem, eta / (||x||^2 lmax(U^T U) / min sigma^2 + lambda)
///               and mu / (||V x||^2 / sigma_t^2 + lambda), which makes the
///               steps invariant to input and target scale.
enum class StepScaling { None, InputPower, Curvature };

inline const char* to_string(StepScaling m) {
  switch (m) {
    case StepScaling::None: return "none";
    case StepScaling::InputPower: return "input_power";
    case StepScaling::Curvature: return "curvature";
  }
  return "none";
}

inline StepScaling step_scaling_from_string(const std::string& s) {
  if (s == "none") return StepScaling::None;
  if (s == "input_power") return StepScaling::InputPower;
  if (s == "curvature") return StepScaling::Curvature;
  fail(ErrorKind::InvalidArgument, "unknown step scaling '" + s + "'");
}

struct TrainConfig {
  double eta = 1e-3;     // V step size
  double mu = 1e-3;      // U step size, shared by all tasks
  double lambda = 1e-3;  // Frobenius penalty on both factors
  Index rank = 1;
  int v_inner_steps = 1;
  std::uint64_t seed = 0;
  double init_scale = 1.0;  // U ~ N(0, s^2/r), V ~ N(0, s^2/D_in)
  StepDecay step_decay = StepDecay::Constant;
  double decay_offset = 1.0;  // i0 in 1/(1 + (i-1)/i0); 1 gives plain 1/i
  double sigma = 1.0;  // noise scale used for every task unless overridden
  double censor_threshold = 0.0;
  StepScaling step_scaling = StepScaling::None;

  void validate() const {
    require(eta > 0.0 && std::isfinite(eta), ErrorKind::InvalidArgument, "eta must be positive");
    require(mu > 0.0 && std::isfinite(mu), ErrorKind::InvalidArgument, "mu must be positive");
    require(lambda >= 0.0 && std::isfinite(lambda), ErrorKind::InvalidArgument, "lambda must be >= 0");
    require(rank >= 1, ErrorKind::InvalidArgument, "rank must be >= 1");
    require(v_inner_steps >= 1, ErrorKind::InvalidArgument, "v_inner_steps must be >= 1");
    require(init_scale > 0.0 && std::isfinite(init_scale), ErrorKind::InvalidArgument, "init_scale must be positive");
    require(sigma > 0.0 && std::isfinite(sigma), ErrorKind::InvalidArgument, "sigma must be positive");
    require(decay_offset >= 1.0 && std::isfinite(decay_offset), ErrorKind::InvalidArgument, "decay offset must be >= 1");
    require(censor_threshold >= 0.0, ErrorKind::InvalidArgument, "censor threshold must be >= 0");
  }

  /// Step multiplier for the 1-based sample index i.
  double decay(Index i) const {
    const double s = 1.0 + static_cast<double>(i - 1) / decay_offset;
    switch (step_decay) {
      case StepDecay::Constant: return 1.0;
      case StepDecay::InvSqrt: return 1.0 / std::sqrt(s);
      case StepDecay::Inv: return 1.0 / s;
    }
    return 1.0;
  }
};

struct SubspaceLayer {
  Matrix U;      // T x R, row t is the basis coordinates of task t
  Matrix V;      // R x D_in
  Vector sigma;  // per-task noise scale
  double lambda = 0.0;
  double censor_threshold = 0.0;

  Index t_out() const { return U.rows(); }
  Index d_in() const { return V.cols(); }
  Index rank() const { return U.cols(); }

  void validate() const {
    require(U.cols() == V.rows(), ErrorKind::Dimension,
            "U has " + std::to_string(U.cols()) + " columns but V has " + std::to_string(V.rows()) + " rows");
    require(rank() >= 1 && rank() <= std::min(t_out(), d_in()), ErrorKind::Dimension,
            "rank must lie in [1, min(T, D_in)]");
    require(sigma.size() == t_out(), ErrorKind::Dimension, "sigma length must equal T");
    require((sigma.array() > 0.0).all(), ErrorKind::InvalidArgument, "sigma entries must be positive");
    require(U.allFinite() && V.allFinite(), ErrorKind::InvalidArgument, "layer factors must be finite");
    require(lambda >= 0.0, ErrorKind::InvalidArgument, "lambda must be >= 0");
  }

  /// Random N(0, s^2/r) basis and N(0, s^2/D_in) sketch.
  static SubspaceLayer random(Index t_out, Index d_in, const TrainConfig& cfg) {
    require(cfg.rank <= std::min(t_out, d_in), ErrorKind::InvalidArgument,
            "rank " + std::to_string(cfg.rank) + " exceeds min(T, D_in)");
    SubspaceLayer layer;
    const double r = static_cast<double>(cfg.rank);
    layer.U = Rng::stream(cfg.seed, "layer.U").gaussian(t_out, cfg.rank, cfg.init_scale / std::sqrt(r));
    layer.V = Rng::stream(cfg.seed, "layer.V")
                  .gaussian(cfg.rank, d_in, cfg.init_scale / std::sqrt(static_cast<double>(d_in)));
    layer.sigma = Vector::Constant(t_out, cfg.sigma);
    layer.lambda = cfg.lambda;
    layer.censor_threshold = cfg.censor_threshold;
    return layer;
  }
};

/// Thrown when an update produces a non-finite entry. Carries the 1-based
/// sample index and, when available, the last finite layer.
class StepSizeError : public Error {
 public:
  StepSizeError(Index iteration, std::optional<SubspaceLayer> last_finite, std::optional<Index> layer = {})
      : Error(ErrorKind::StepSize, (layer ? "layer " + std::to_string(*layer) + ": " : std::string()) +
                                       "non-finite update at iteration " + std::to_string(iteration) +
                                       "; reduce eta/mu"),
        iteration_(iteration),
        last_finite_(std::move(last_finite)),
        layer_(layer) {}

  Index iteration() const noexcept { return iteration_; }
  const std::optional<SubspaceLayer>& last_finite() const noexcept { return last_finite_; }
  std::optional<Index> layer() const noexcept { return layer_; }

 private:
  Index iteration_;
  std::optional<SubspaceLayer> last_finite_;
  std::optional<Index> layer_;
};

struct TraceEntry {
  Index iteration = 0;              // 1-based sample index
  double cost = 0.0;                // g(x_i, y_i, U, V) at the iterate that predicts sample i
  double u_step = 0.0;              // ||U^i - U^{i-1}||_F
  std::optional<double> subspace_diff;  // ||U* - U^i||_F / ||U*||_F when a planted basis is given
};

struct TraceLog {
  std::vector<TraceEntry> entries;
  Index samples_seen = 0;
  Index saturated_terms = 0;
};

/// Position of an update within the stream.
struct StepContext {
  Index iteration = 1;       // 1-based sample index, drives the decay schedule
  double eta_scale = 1.0;    // extra multiplier on eta (input-power scaling)
  Index* saturated = nullptr;  // incremented per saturated likelihood term
};

namespace detail {

inline void check_sample(const Vector& x, const Vector& y, const SubspaceLayer& layer) {
  require(x.size() == layer.d_in(), ErrorKind::Dimension,
          "input has length " + std::to_string(x.size()) + ", layer expects " + std::to_string(layer.d_in()));
  require(y.size() == layer.t_out(), ErrorKind::Dimension,
          "target has length " + std::to_string(y.size()) + ", layer expects " + std::to_string(layer.t_out()));
}

/// d nll / d mu for every task at predictor mu; counts saturated terms.
inline Vector task_gradients(const Vector& y, const Vector& mu, const SubspaceLayer& layer, Index* saturated,
                             Index iteration) {
  if (!mu.allFinite()) throw StepSizeError(iteration, std::nullopt);
  Vector g(y.size());
  for (Index t = 0; t < y.size(); ++t) {
    const auto d = grad_mu_censored_nll_checked({y[t], mu[t], layer.sigma[t]}, layer.censor_threshold);
    g[t] = d.value;
    if (saturated && d.saturated) ++*saturated;
  }
  return g;
}

/// Step size of basis row t given the sketch response V x.
inline double u_step(Index t, const Vector& vx, const SubspaceLayer& layer, const TrainConfig& cfg, Index iteration) {
  const double mu = cfg.mu * cfg.decay(iteration);
  if (cfg.step_scaling != StepScaling::Curvature) return mu;
  const double s = layer.sigma[t];
  const double curvature = vx.squaredNorm() / (s * s) + layer.lambda;
  return curvature > 0.0 ? mu / curvature : 0.0;
}

}  // namespace detail

inline Vector predict_linear(const SubspaceLayer& layer, const Vector& x) {
  require(x.size() == layer.d_in(), ErrorKind::Dimension,
          "input has length " + std::to_string(x.size()) + ", layer expects " + std::to_string(layer.d_in()));
  return layer.U * (layer.V * x);
}

inline Vector predict(const SubspaceLayer& layer, const Vector& x) { return relu(predict_linear(layer, x)); }

/// Row-wise linear predictions for a whole design matrix (N x D_in -> N x T).
inline Matrix predict_linear_batch(const SubspaceLayer& layer, const Matrix& X) {
  require(X.cols() == layer.d_in(), ErrorKind::Dimension, "design matrix width does not match layer input");
  return (X * layer.V.transpose()) * layer.U.transpose();
}

/// Negative log-likelihood of sample (x, y) plus lambda/2 (||U||^2 + ||V||^2).
inline double instantaneous_cost(const Vector& x, const Vector& y, const SubspaceLayer& layer) {
  detail::check_sample(x, y, layer);
  const Vector mu = layer.U * (layer.V * x);
  double nll = 0.0;
  for (Index t = 0; t < y.size(); ++t) nll += censored_nll({y[t], mu[t], layer.sigma[t]}, layer.censor_threshold);
  return nll + 0.5 * layer.lambda * (layer.U.squaredNorm() + layer.V.squaredNorm());
}

/// Per-task objective g_t(U_t) = nll_t + lambda/2 ||U_t||^2 with V fixed.
inline double task_cost(Index t, const Vector& x, double y_t, const SubspaceLayer& layer) {
  const double mu = layer.U.row(t).dot(layer.V * x);
  return censored_nll({y_t, mu, layer.sigma[t]}, layer.censor_threshold) + 0.5 * layer.lambda * layer.U.row(t).squaredNorm();
}

/// Sketch step: v_inner_steps gradient steps on V with U fixed, warm-started
/// from layer.V. The task gradients enter as the rank-one sum (U^T g) x^T.
inline Matrix sketch_v(const Vector& x, const Vector& y, const SubspaceLayer& layer, const TrainConfig& cfg,
                       const StepContext& ctx = {}) {
  detail::check_sample(x, y, layer);
  const Index iteration = ctx.iteration;
  Index* saturated = ctx.saturated;
  double eta = cfg.eta * ctx.eta_scale * cfg.decay(iteration);
  if (cfg.step_scaling == StepScaling::Curvature) {
    const double u_gain = Eigen::SelfAdjointEigenSolver<Matrix>(layer.U.transpose() * layer.U,
                                                                Eigen::EigenvaluesOnly)
                              .eigenvalues()
                              .maxCoeff();
    const double s_min = layer.sigma.minCoeff();
    const double curvature = x.squaredNorm() * u_gain / (s_min * s_min) + layer.lambda;
    eta = curvature > 0.0 ? eta / curvature : 0.0;
  }
  Matrix V = layer.V;
  for (int step = 0; step < cfg.v_inner_steps; ++step) {
    const Vector mu = layer.U * (V * x);
    const Vector g = detail::task_gradients(y, mu, layer, saturated, iteration);
    V -= eta * (layer.lambda * V + (layer.U.transpose() * g) * x.transpose());
    if (!V.allFinite()) throw StepSizeError(iteration, std::nullopt);
  }
  return V;
}

/// Refinement step for one basis row, using the sketch already in layer.V.
inline RowVector refine_u_row(Index t, const Vector& x, double y_t, const SubspaceLayer& layer, const TrainConfig& cfg,
                              const StepContext& ctx = {}) {
  const Index iteration = ctx.iteration;
  require(t >= 0 && t < layer.t_out(), ErrorKind::InvalidArgument, "task index out of range");
  require(x.size() == layer.d_in(), ErrorKind::Dimension, "input length does not match layer");
  const Vector vx = layer.V * x;
  const double g = grad_mu_censored_nll({y_t, layer.U.row(t).dot(vx), layer.sigma[t]}, layer.censor_threshold);
  const double step = detail::u_step(t, vx, layer, cfg, iteration);
  RowVector row = layer.U.row(t) - step * (layer.lambda * layer.U.row(t) + g * vx.transpose());
  if (!row.allFinite()) throw StepSizeError(iteration, std::nullopt);
  return row;
}

/// All T row refinements against one snapshot of V x. Rows are independent.
inline Matrix refine_u(const Vector& x, const Vector& y, const SubspaceLayer& layer, const TrainConfig& cfg,
                       const StepContext& ctx = {}) {
  detail::check_sample(x, y, layer);
  const Index iteration = ctx.iteration;
  Index* saturated = ctx.saturated;
  const Vector vx = layer.V * x;
  const Vector g = detail::task_gradients(y, layer.U * vx, layer, saturated, iteration);
  Vector step(layer.t_out());
  for (Index t = 0; t < layer.t_out(); ++t) step[t] = detail::u_step(t, vx, layer, cfg, iteration);
  Matrix U = layer.U - step.asDiagonal() * (layer.lambda * layer.U + g * vx.transpose());
  if (!U.allFinite()) throw StepSizeError(iteration, std::nullopt);
  return U;
}

struct TrainOptions {
  const Matrix* planted_u = nullptr;        // enables subspace_diff in the trace
  std::optional<Vector> sigma;              // per-task noise scales; cfg.sigma otherwise
  std::optional<SubspaceLayer> initial;     // warm start instead of random init
  Index* sample_counter = nullptr;          // incremented once per consumed sample
  Index schedule_offset = 0;                // step-size decay continues from this many earlier samples
};

/// One pass over data in stream order. Deterministic in (data, cfg.seed).
inline std::pair<SubspaceLayer, TraceLog> train_layer(const Dataset& data, const TrainConfig& cfg,
                                                      const TrainOptions& opts = {}) {
  require(data.size() >= 1, ErrorKind::EmptyInput, "cannot train a layer on an empty dataset");
  data.validate();
  cfg.validate();
  const Index n = data.size();

  SubspaceLayer layer = opts.initial ? *opts.initial : SubspaceLayer::random(data.task_dim(), data.input_dim(), cfg);
  if (opts.sigma) layer.sigma = *opts.sigma;
  layer.lambda = cfg.lambda;
  layer.censor_threshold = cfg.censor_threshold;
  layer.validate();
  require(layer.d_in() == data.input_dim() && layer.t_out() == data.task_dim(), ErrorKind::Dimension,
          "initial layer shape does not match the dataset");

  double planted_norm = 0.0;
  if (opts.planted_u) {
    require(opts.planted_u->rows() == layer.t_out() && opts.planted_u->cols() == layer.rank(), ErrorKind::Dimension,
            "planted basis shape does not match the layer");
    planted_norm = opts.planted_u->norm();
    require(planted_norm > 0.0, ErrorKind::Degenerate, "planted basis has zero norm");
  }

  TraceLog log;
  log.entries.reserve(static_cast<std::size_t>(n));
  double input_power = 0.0;  // running mean of ||x||^2
  for (Index i = 0; i < n; ++i) {
    const Index iter = i + 1;
    const Vector x = data.X.row(i).transpose();
    const Vector y = data.Y.row(i).transpose();
    input_power += (x.squaredNorm() - input_power) / static_cast<double>(iter);
    StepContext ctx{opts.schedule_offset + iter, 1.0, &log.saturated_terms};
    if (cfg.step_scaling == StepScaling::InputPower && input_power > 0.0) ctx.eta_scale = static_cast<double>(layer.d_in()) / input_power;
    TraceEntry entry;
    entry.iteration = iter;
    if (!(layer.U * (layer.V * x)).allFinite()) throw StepSizeError(iter, layer);
    entry.cost = instantaneous_cost(x, y, layer);
    try {
      Matrix V = sketch_v(x, y, layer, cfg, ctx);
      SubspaceLayer next = layer;
      next.V = std::move(V);
      next.U = refine_u(x, y, next, cfg, ctx);
      entry.u_step = (next.U - layer.U).norm();
      layer = std::move(next);
    } catch (const StepSizeError&) {
      throw StepSizeError(iter, layer);
    }
    if (opts.planted_u) entry.subspace_diff = (*opts.planted_u - layer.U).norm() / planted_norm;
    if (!std::isfinite(entry.cost)) throw StepSizeError(iter, layer);
    log.entries.push_back(entry);
    ++log.samples_seen;
    if (opts.sample_counter) ++*opts.sample_counter;
  }
  return {std::move(layer), std::move(log)};
}

}  // namespace ssn
