#pragma once

#include <string>
#include <vector>

#include "ssn/error.hpp"
#include "ssn/types.hpp"

namespace ssn {

/// N samples of (features, nonnegative targets). Row i of X and Y is sample i.
struct Dataset {
  Matrix X;  // N x D
  Matrix Y;  // N x T
  std::vector<std::string> feature_names;
  std::vector<std::string> target_names;

  Index size() const { return X.rows(); }
  Index input_dim() const { return X.cols(); }
  Index task_dim() const { return Y.cols(); }

  /// Throws unless shapes agree, N >= 1, entries are finite and Y >= 0.
  void validate() const {
    require(X.rows() >= 1, ErrorKind::EmptyInput, "dataset has no samples");
    require(X.rows() == Y.rows(), ErrorKind::Dimension,
            "feature rows " + std::to_string(X.rows()) + " != target rows " + std::to_string(Y.rows()));
    require(X.allFinite() && Y.allFinite(), ErrorKind::InvalidArgument, "dataset has non-finite entries");
    require((Y.array() >= 0.0).all(), ErrorKind::InvalidArgument, "targets must be nonnegative");
    require(feature_names.empty() || static_cast<Index>(feature_names.size()) == X.cols(), ErrorKind::Dimension,
            "feature name count does not match D");
    require(target_names.empty() || static_cast<Index>(target_names.size()) == Y.cols(), ErrorKind::Dimension,
            "target name count does not match T");
  }

  /// Subset of rows in the given order.
  Dataset rows(const std::vector<Index>& idx) const {
    Dataset out;
    out.X.resize(static_cast<Index>(idx.size()), X.cols());
    out.Y.resize(static_cast<Index>(idx.size()), Y.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.X.row(static_cast<Index>(k)) = X.row(idx[k]);
      out.Y.row(static_cast<Index>(k)) = Y.row(idx[k]);
    }
    out.feature_names = feature_names;
    out.target_names = target_names;
    return out;
  }
};

}  // namespace ssn
