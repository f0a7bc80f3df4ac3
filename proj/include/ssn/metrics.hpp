#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ssn/error.hpp"
#include "ssn/types.hpp"

namespace ssn {

/// ||reference - candidate||_F / ||reference||_F.
inline double subspace_difference(const Matrix& reference, const Matrix& candidate) {
  require(reference.rows() == candidate.rows() && reference.cols() == candidate.cols(), ErrorKind::Dimension,
          "subspace comparison needs matching shapes");
  const double ref = reference.norm();
  require(ref > 0.0, ErrorKind::Degenerate, "reference basis has zero Frobenius norm");
  return (reference - candidate).norm() / ref;
}

/// min over orthogonal Q of ||reference - candidate Q||_F / ||reference||_F
/// (orthogonal Procrustes). Insensitive to rotations of the basis coordinates.
inline double aligned_subspace_difference(const Matrix& reference, const Matrix& candidate) {
  require(reference.rows() == candidate.rows() && reference.cols() == candidate.cols(), ErrorKind::Dimension,
          "subspace comparison needs matching shapes");
  const double ref = reference.norm();
  require(ref > 0.0, ErrorKind::Degenerate, "reference basis has zero Frobenius norm");
  const Eigen::JacobiSVD<Matrix> svd(candidate.transpose() * reference, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Matrix Q = svd.matrixU() * svd.matrixV().transpose();
  return (reference - candidate * Q).norm() / ref;
}

/// ||U^i - U^{i-1}||_F / ||reference||_F for consecutive iterates.
inline std::vector<double> iterwise_difference(const std::vector<Matrix>& iterates, const Matrix& reference) {
  require(iterates.size() >= 2, ErrorKind::EmptyInput, "iteration-wise difference needs at least two iterates");
  const double ref = reference.norm();
  require(ref > 0.0, ErrorKind::Degenerate, "reference basis has zero Frobenius norm");
  std::vector<double> out;
  out.reserve(iterates.size() - 1);
  for (std::size_t i = 1; i < iterates.size(); ++i) {
    require(iterates[i].rows() == iterates[i - 1].rows() && iterates[i].cols() == iterates[i - 1].cols(),
            ErrorKind::Dimension, "iterates change shape");
    out.push_back((iterates[i] - iterates[i - 1]).norm() / ref);
  }
  return out;
}

struct Coherence {
  double max = 0.0;
  double mean = 0.0;
};

/// Absolute cosine over every (column of A, column of B) pair.
inline Coherence mutual_coherence(const Matrix& A, const Matrix& B) {
  require(A.rows() == B.rows(), ErrorKind::Dimension, "mutual coherence needs equal row counts");
  require(A.cols() >= 1 && B.cols() >= 1, ErrorKind::EmptyInput, "mutual coherence needs at least one column");
  const Vector na = A.colwise().norm().transpose();
  const Vector nb = B.colwise().norm().transpose();
  for (Index j = 0; j < A.cols(); ++j)
    require(na[j] > 0.0, ErrorKind::Degenerate, "column " + std::to_string(j) + " of the first matrix is zero");
  for (Index j = 0; j < B.cols(); ++j)
    require(nb[j] > 0.0, ErrorKind::Degenerate, "column " + std::to_string(j) + " of the second matrix is zero");
  const Matrix cos =
      (na.cwiseInverse().asDiagonal() * (A.transpose() * B) * nb.cwiseInverse().asDiagonal()).cwiseAbs().cwiseMin(1.0);
  return {cos.maxCoeff(), cos.mean()};
}

/// Pearson correlation of corresponding rows.
inline Vector weight_correlations(const Matrix& estimate, const Matrix& truth) {
  require(estimate.rows() == truth.rows() && estimate.cols() == truth.cols(), ErrorKind::Dimension,
          "weight correlation needs matching shapes");
  require(estimate.cols() >= 2, ErrorKind::Degenerate, "correlation needs at least two columns");
  Vector out(estimate.rows());
  for (Index t = 0; t < estimate.rows(); ++t) {
    const RowVector a = estimate.row(t).array() - estimate.row(t).mean();
    const RowVector b = truth.row(t).array() - truth.row(t).mean();
    const double na = a.norm();
    const double nb = b.norm();
    require(na > 0.0 && nb > 0.0, ErrorKind::Degenerate, "row " + std::to_string(t) + " has zero variance");
    out[t] = a.dot(b) / (na * nb);
  }
  return out;
}

/// Per-task NMSE (normalized by the task's variance around its mean),
/// averaged over tasks.
inline Vector nmse_per_task(const Matrix& truth, const Matrix& prediction) {
  require(truth.rows() == prediction.rows() && truth.cols() == prediction.cols(), ErrorKind::Dimension,
          "ANMSE needs matching shapes");
  require(truth.rows() >= 1, ErrorKind::EmptyInput, "ANMSE needs at least one sample");
  Vector out(truth.cols());
  for (Index t = 0; t < truth.cols(); ++t) {
    const double denom = (truth.col(t).array() - truth.col(t).mean()).square().sum();
    require(denom > 0.0, ErrorKind::Degenerate, "target column " + std::to_string(t) + " has zero variance");
    out[t] = (truth.col(t) - prediction.col(t)).squaredNorm() / denom;
  }
  return out;
}

inline double anmse(const Matrix& truth, const Matrix& prediction) { return nmse_per_task(truth, prediction).mean(); }

}  // namespace ssn
