#pragma once

// Uncensored least-squares / ridge baselines. "Censored" variants clamp the
// affine prediction at zero; the fit itself ignores censoring.

#include <string>

#include "ssn/dataset.hpp"
#include "ssn/error.hpp"
#include "ssn/types.hpp"

namespace ssn {

struct LinearModel {
  Matrix W;          // T x D
  Vector intercept;  // T
  double ridge_lambda = 0.0;
};

/// Minimum reciprocal condition number accepted for the normal equations.
inline constexpr double kMinRcond = 1e-12;

/// Ridge per task on centered data: (Xc^T Xc + lambda I) w_t = Xc^T yc_t.
/// All tasks share one factorization.
inline LinearModel fit_ridge(const Dataset& data, double ridge_lambda) {
  require(data.size() >= 1, ErrorKind::EmptyInput, "ridge needs at least one sample");
  require(ridge_lambda >= 0.0, ErrorKind::InvalidArgument, "ridge lambda must be >= 0");
  require(data.X.rows() == data.Y.rows(), ErrorKind::Dimension, "feature and target row counts differ");

  const RowVector x_mean = data.X.colwise().mean();
  const RowVector y_mean = data.Y.colwise().mean();
  const Matrix Xc = data.X.rowwise() - x_mean;
  const Matrix Yc = data.Y.rowwise() - y_mean;

  Matrix gram = Xc.transpose() * Xc;
  gram.diagonal().array() += ridge_lambda;
  const Eigen::LDLT<Matrix> ldlt(gram);
  if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > kMinRcond))
    fail(ErrorKind::Conditioning, "normal equations are singular (rcond " + std::to_string(ldlt.rcond()) +
                                      "); use ridge_lambda > 0");

  LinearModel model;
  model.ridge_lambda = ridge_lambda;
  model.W = ldlt.solve(Xc.transpose() * Yc).transpose();
  model.intercept = (y_mean - x_mean * model.W.transpose()).transpose();
  require(model.W.allFinite() && model.intercept.allFinite(), ErrorKind::Conditioning, "ridge solution is not finite");
  return model;
}

/// X W^T + intercept, clamped at zero when `censor` is set.
inline Matrix predict_baseline(const LinearModel& model, const Matrix& X, bool censor) {
  require(X.cols() == model.W.cols(), ErrorKind::Dimension,
          "design width " + std::to_string(X.cols()) + " does not match model width " + std::to_string(model.W.cols()));
  Matrix out = (X * model.W.transpose()).rowwise() + model.intercept.transpose();
  return censor ? relu(out) : out;
}

}  // namespace ssn
