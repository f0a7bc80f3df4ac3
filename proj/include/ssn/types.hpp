#pragma once

#include <Eigen/Dense>

namespace ssn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

inline Vector relu(const Vector& v) { return v.cwiseMax(0.0); }
inline Matrix relu(const Matrix& m) { return m.cwiseMax(0.0); }

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace ssn
