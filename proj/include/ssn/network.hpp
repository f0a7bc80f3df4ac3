#pragma once

// Deep subspace network grown greedily: each new layer is a censored
// regression from [previous prediction; x] (or the previous prediction alone
// in naive mode) to the original targets. Trained layers are frozen.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ssn/dataset.hpp"
#include "ssn/error.hpp"
#include "ssn/layer.hpp"
#include "ssn/random.hpp"
#include "ssn/types.hpp"

namespace ssn {

enum class SkipMode { Concat, Naive };

inline const char* to_string(SkipMode m) { return m == SkipMode::Concat ? "concat" : "naive"; }

inline SkipMode skip_mode_from_string(const std::string& s) {
  if (s == "concat") return SkipMode::Concat;
  if (s == "naive") return SkipMode::Naive;
  fail(ErrorKind::InvalidArgument, "unknown skip mode '" + s + "'");
}

/// Which samples enter the residual variance estimate.
enum class CalibrationResiduals { All, Uncensored };

inline const char* to_string(CalibrationResiduals r) { return r == CalibrationResiduals::All ? "all" : "uncensored"; }

inline CalibrationResiduals calibration_residuals_from_string(const std::string& s) {
  if (s == "all") return CalibrationResiduals::All;
  if (s == "uncensored") return CalibrationResiduals::Uncensored;
  fail(ErrorKind::InvalidArgument, "unknown calibration residual set '" + s + "'");
}

struct CalibrationConfig {
  bool enabled = false;
  CalibrationResiduals residuals = CalibrationResiduals::All;
  double sigma_min = 1e-2;
  double sigma_max = 1e2;
};

struct CalibrationReport {
  Vector sigma;               // clamped per-task estimate
  std::vector<bool> clamped;  // true where the raw estimate left [sigma_min, sigma_max]
};

struct SubspaceNetwork {
  std::vector<SubspaceLayer> layers;
  SkipMode skip_mode = SkipMode::Concat;
  Index input_dim = 0;
  Index task_dim = 0;

  Index depth() const { return static_cast<Index>(layers.size()); }

  /// Input width layer k must consume.
  Index layer_input_dim(Index k) const {
    if (k == 0) return input_dim;
    return skip_mode == SkipMode::Concat ? task_dim + input_dim : task_dim;
  }

  void validate() const {
    require(!layers.empty(), ErrorKind::EmptyInput, "network has no layers");
    for (Index k = 0; k < depth(); ++k) {
      const auto& layer = layers[static_cast<std::size_t>(k)];
      try {
        layer.validate();
      } catch (const Error& e) {
        fail(e.kind(), "layer " + std::to_string(k) + ": " + e.what());
      }
      require(layer.t_out() == task_dim, ErrorKind::Dimension,
              "layer " + std::to_string(k) + " has " + std::to_string(layer.t_out()) + " outputs, expected " +
                  std::to_string(task_dim));
      require(layer.d_in() == layer_input_dim(k), ErrorKind::Dimension,
              "layer " + std::to_string(k) + " consumes " + std::to_string(layer.d_in()) + " inputs, expected " +
                  std::to_string(layer_input_dim(k)));
    }
  }
};

/// Input of the layer after `prev_output` in the given wiring.
inline Matrix next_layer_input(SkipMode mode, const Matrix& prev_output, const Matrix& X) {
  if (mode == SkipMode::Naive) return prev_output;
  Matrix out(X.rows(), prev_output.cols() + X.cols());
  out << prev_output, X;
  return out;
}

/// Outputs of every layer for a batch (N x D in, K matrices N x T out).
inline std::vector<Matrix> forward_layers(const SubspaceNetwork& net, const Matrix& X, std::optional<Index> upto = {}) {
  const Index k_max = upto.value_or(net.depth());
  require(!net.layers.empty(), ErrorKind::EmptyInput, "network has no layers");
  require(k_max >= 1 && k_max <= net.depth(), ErrorKind::InvalidArgument,
          "layer count " + std::to_string(k_max) + " outside [1, " + std::to_string(net.depth()) + "]");
  require(X.cols() == net.input_dim, ErrorKind::Dimension,
          "input width " + std::to_string(X.cols()) + " does not match network input " + std::to_string(net.input_dim));
  std::vector<Matrix> outs;
  outs.reserve(static_cast<std::size_t>(k_max));
  Matrix input = X;
  for (Index k = 0; k < k_max; ++k) {
    const auto& layer = net.layers[static_cast<std::size_t>(k)];
    require(input.cols() == layer.d_in(), ErrorKind::Dimension,
            "layer " + std::to_string(k) + " expects " + std::to_string(layer.d_in()) + " inputs, got " +
                std::to_string(input.cols()));
    outs.push_back(relu(predict_linear_batch(layer, input)));
    if (k + 1 < k_max) input = next_layer_input(net.skip_mode, outs.back(), X);
  }
  return outs;
}

inline Matrix forward_batch(const SubspaceNetwork& net, const Matrix& X, std::optional<Index> upto = {}) {
  return forward_layers(net, X, upto).back();
}

/// Nonnegative prediction of the first `upto` layers (all by default).
inline Vector forward(const SubspaceNetwork& net, const Vector& x, std::optional<Index> upto = {}) {
  return forward_batch(net, x.transpose(), upto).row(0).transpose();
}

/// Per-task sigma_t^2 = mean (y_t - [U V x]_t)^2 with the pre-activation
/// predictor, clamped to [sigma_min, sigma_max].
inline CalibrationReport calibrate_sigma(const SubspaceLayer& layer, const Dataset& data,
                                         const CalibrationConfig& cfg = {}) {
  require(data.size() >= 1, ErrorKind::EmptyInput, "calibration needs at least one sample");
  require(cfg.sigma_min > 0.0 && cfg.sigma_min <= cfg.sigma_max, ErrorKind::InvalidArgument,
          "calibration bounds must satisfy 0 < sigma_min <= sigma_max");
  require(data.task_dim() == layer.t_out(), ErrorKind::Dimension, "calibration targets do not match layer outputs");
  const Matrix pred = predict_linear_batch(layer, data.X);
  CalibrationReport report;
  report.sigma.resize(layer.t_out());
  report.clamped.assign(static_cast<std::size_t>(layer.t_out()), false);
  for (Index t = 0; t < layer.t_out(); ++t) {
    double sum = 0.0;
    Index count = 0;
    for (Index i = 0; i < data.size(); ++i) {
      if (cfg.residuals == CalibrationResiduals::Uncensored && is_censored(data.Y(i, t), layer.censor_threshold))
        continue;
      const double r = data.Y(i, t) - pred(i, t);
      sum += r * r;
      ++count;
    }
    const double raw = count > 0 ? std::sqrt(sum / static_cast<double>(count)) : cfg.sigma_max;
    const double clamped = std::clamp(raw, cfg.sigma_min, cfg.sigma_max);
    report.sigma[t] = clamped;
    report.clamped[static_cast<std::size_t>(t)] = clamped != raw;
  }
  return report;
}

struct ExpandOptions {
  SkipMode skip_mode = SkipMode::Concat;
  CalibrationConfig calibration;
  const Matrix* planted_u = nullptr;  // trace probe for layer 0
  Index* sample_counter = nullptr;
  /// Layers >= 1 start from the previous layer's factors routed through the
  /// x block of the skip input (reproducing f_{k-1}) instead of random.
  bool warm_start = false;
  /// Layers train on Y / target_scale and the scale is folded back into the
  /// factors afterwards, so the returned network predicts in original units.
  double target_scale = 1.0;
};

struct ExpandResult {
  SubspaceNetwork network;
  std::vector<TraceLog> traces;
  std::vector<CalibrationReport> calibrations;  // entry k was installed into layer k+1
};

/// Multiplies every layer's output by s while keeping the network's function
/// on rescaled targets: U_k <- s U_k, and the block of V_k that reads the
/// previous prediction is divided by s.
inline void scale_outputs(SubspaceNetwork& net, double s) {
  require(s > 0.0 && std::isfinite(s), ErrorKind::InvalidArgument, "output scale must be positive and finite");
  for (Index k = 0; k < net.depth(); ++k) {
    auto& layer = net.layers[static_cast<std::size_t>(k)];
    layer.U *= s;
    layer.sigma *= s;
    layer.censor_threshold *= s;
    if (k > 0) layer.V.leftCols(net.task_dim) /= s;
  }
}

/// Seed for layer k; layer 0 uses the configured seed unchanged.
inline std::uint64_t layer_seed(std::uint64_t seed, Index k) {
  return k == 0 ? seed : splitmix64(seed ^ splitmix64(stream_key("expand.layer") + static_cast<std::uint64_t>(k)));
}

/// Greedy layer-wise expansion to depth K on the same single-pass stream.
inline ExpandResult expand(const Dataset& data, Index depth, const TrainConfig& cfg, const ExpandOptions& opts = {}) {
  require(depth >= 1, ErrorKind::InvalidArgument, "network depth must be >= 1");
  data.validate();
  cfg.validate();
  ExpandResult out;
  out.network.skip_mode = opts.skip_mode;
  out.network.input_dim = data.input_dim();
  out.network.task_dim = data.task_dim();

  require(opts.target_scale > 0.0 && std::isfinite(opts.target_scale), ErrorKind::InvalidArgument,
          "target scale must be positive and finite");
  Dataset stage = data;  // inputs of the layer being trained, original targets
  if (opts.target_scale != 1.0) stage.Y /= opts.target_scale;
  const Matrix X = data.X;
  std::optional<Vector> sigma;
  for (Index k = 0; k < depth; ++k) {
    TrainConfig layer_cfg = cfg;
    layer_cfg.seed = layer_seed(cfg.seed, k);
    layer_cfg.censor_threshold = cfg.censor_threshold / opts.target_scale;
    TrainOptions topts;
    topts.planted_u = k == 0 ? opts.planted_u : nullptr;
    topts.sigma = sigma;
    topts.sample_counter = opts.sample_counter;
    if (k > 0 && opts.warm_start && opts.skip_mode == SkipMode::Concat) {
      const SubspaceLayer& prev = out.network.layers.back();
      if (prev.rank() == layer_cfg.rank) {
        SubspaceLayer init = prev;
        const Index d = data.input_dim();
        const Matrix prev_x_block = prev.V.rightCols(d);
        init.V = Matrix::Zero(prev.rank(), data.task_dim() + d);
        init.V.rightCols(d) = prev_x_block;
        init.sigma = sigma.value_or(Vector::Constant(data.task_dim(), cfg.sigma));
        topts.initial = std::move(init);
        topts.schedule_offset = k * data.size();
      }
    }
    std::pair<SubspaceLayer, TraceLog> trained;
    try {
      trained = train_layer(stage, layer_cfg, topts);
    } catch (const StepSizeError& e) {
      throw StepSizeError(e.iteration(), e.last_finite(), k);
    } catch (const Error& e) {
      fail(e.kind(), "layer " + std::to_string(k) + ": " + e.what());
    }
    out.network.layers.push_back(std::move(trained.first));
    out.traces.push_back(std::move(trained.second));
    if (k + 1 == depth) break;

    const SubspaceLayer& last = out.network.layers.back();
    if (opts.calibration.enabled) {
      out.calibrations.push_back(calibrate_sigma(last, stage, opts.calibration));
      sigma = out.calibrations.back().sigma;
    }
    const Matrix f = relu(predict_linear_batch(last, stage.X));
    stage.X = next_layer_input(opts.skip_mode, f, X);
    stage.feature_names.clear();
  }
  if (opts.target_scale != 1.0) {
    scale_outputs(out.network, opts.target_scale);
    for (auto& c : out.calibrations) c.sigma *= opts.target_scale;
  }
  out.network.validate();
  return out;
}

}  // namespace ssn
