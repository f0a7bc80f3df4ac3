#pragma once

// Planted generators, CSV ingestion/emission and seeded splitting.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ssn/dataset.hpp"
#include "ssn/error.hpp"
#include "ssn/random.hpp"
#include "ssn/types.hpp"

namespace ssn {

/// Ground truth behind a planted dataset. Layer k maps its input through
/// W_k = U[k] * V[k]; layer 0 reads X, deeper layers read the previous
/// layer's ReLU output (no skip connection in generation).
struct PlantedTruth {
  std::vector<Matrix> U;  // T x R each
  std::vector<Matrix> V;  // R x D_k each
  Vector sigma;           // per-task noise scale of the final layer
  int depth = 1;

  Matrix weights(std::size_t layer = 0) const { return U.at(layer) * V.at(layer); }
};

namespace detail {

inline void check_generator_args(Index n, Index d, Index t, Index r) {
  require(n >= 1 && d >= 1 && t >= 1, ErrorKind::InvalidArgument, "generator sizes must be positive");
  require(r >= 1 && r <= std::min(t, d), ErrorKind::InvalidArgument,
          "rank " + std::to_string(r) + " must lie in [1, min(T, D)]");
}

/// One planted layer on top of `input`; `noise_scale` is per task.
inline Matrix planted_layer(const Matrix& input, Index t, Index r, const Vector& noise_scale, std::uint64_t seed,
                            std::uint64_t layer, PlantedTruth& truth) {
  Matrix U = Rng::stream(seed, "gen.U", layer).gaussian(t, r);
  Matrix V = Rng::stream(seed, "gen.V", layer).gaussian(r, input.cols());
  Matrix E = Rng::stream(seed, "gen.E", layer).gaussian(input.rows(), t);
  E = E * noise_scale.asDiagonal();
  Matrix out = relu(Matrix((input * V.transpose()) * U.transpose() + E));
  truth.U.push_back(std::move(U));
  truth.V.push_back(std::move(V));
  return out;
}

}  // namespace detail

/// X, U*, V* i.i.d. N(0, 1); Y = ReLU(X V*^T U*^T + E), E i.i.d. N(0, sigma^2).
inline std::pair<Dataset, PlantedTruth> gen_deep(Index n, Index d, Index t, Index r, double sigma, int depth,
                                                 std::uint64_t seed) {
  detail::check_generator_args(n, d, t, r);
  require(depth >= 1, ErrorKind::InvalidArgument, "generator depth must be >= 1");
  require(sigma >= 0.0 && std::isfinite(sigma), ErrorKind::InvalidArgument, "sigma must be >= 0");
  Dataset data;
  PlantedTruth truth;
  truth.depth = depth;
  truth.sigma = Vector::Constant(t, sigma);
  data.X = Rng::stream(seed, "gen.X").gaussian(n, d);
  Matrix h = data.X;
  for (int k = 0; k < depth; ++k) h = detail::planted_layer(h, t, r, truth.sigma, seed, static_cast<std::uint64_t>(k), truth);
  data.Y = std::move(h);
  return {std::move(data), std::move(truth)};
}

inline std::pair<Dataset, PlantedTruth> gen_single_layer(Index n, Index d, Index t, Index r, double sigma,
                                                         std::uint64_t seed) {
  return gen_deep(n, d, t, r, sigma, 1, seed);
}

/// Single-layer generator whose per-task noise scale is drawn uniformly from
/// sigma_set.
inline std::pair<Dataset, PlantedTruth> gen_heteroscedastic(Index n, Index d, Index t, Index r,
                                                            const std::vector<double>& sigma_set, std::uint64_t seed) {
  detail::check_generator_args(n, d, t, r);
  require(!sigma_set.empty(), ErrorKind::InvalidArgument, "sigma set must be nonempty");
  for (double s : sigma_set)
    require(s > 0.0 && std::isfinite(s), ErrorKind::InvalidArgument, "sigma set entries must be positive");
  Dataset data;
  PlantedTruth truth;
  truth.sigma.resize(t);
  Rng pick = Rng::stream(seed, "gen.sigma");
  for (Index k = 0; k < t; ++k) truth.sigma[k] = sigma_set[pick.uniform_index(sigma_set.size())];
  data.X = Rng::stream(seed, "gen.X").gaussian(n, d);
  data.Y = detail::planted_layer(data.X, t, r, truth.sigma, seed, 0, truth);
  return {std::move(data), std::move(truth)};
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::string location(const std::string& path, std::size_t line, std::size_t column) {
  return path + ":" + std::to_string(line) + ":" + std::to_string(column);
}

struct CsvTable {
  std::vector<std::string> header;
  Matrix values;
};

inline CsvTable read_csv_table(const std::string& path, bool nonnegative) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Parse, path + ": missing header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  for (auto f : split_fields(line)) table.header.emplace_back(trim(f));
  const std::size_t width = table.header.size();

  std::vector<double> flat;
  std::vector<std::size_t> missing_rows;
  std::size_t line_no = 1;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    bool missing = fields.size() != width;
    for (auto f : fields) missing = missing || trim(f).empty();
    if (missing) {
      missing_rows.push_back(line_no);
      continue;
    }
    for (std::size_t c = 0; c < width; ++c) {
      const auto cell = trim(fields[c]);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v))
        fail(ErrorKind::Parse, location(path, line_no, c + 1) + ": non-numeric cell '" + std::string(cell) + "'");
      if (nonnegative && v < 0.0)
        fail(ErrorKind::Parse, location(path, line_no, c + 1) + ": negative target " + std::string(cell));
      flat.push_back(v);
    }
    ++rows;
  }
  if (!missing_rows.empty()) {
    std::string msg = path + ": rows with missing cells at lines";
    for (auto r : missing_rows) msg += " " + std::to_string(r);
    fail(ErrorKind::Parse, msg);
  }
  table.values.resize(static_cast<Index>(rows), static_cast<Index>(width));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t c = 0; c < width; ++c)
      table.values(static_cast<Index>(i), static_cast<Index>(c)) = flat[i * width + c];
  return table;
}

}  // namespace detail

/// Reads a feature matrix (any real values) from a headered CSV.
inline Matrix load_feature_csv(const std::string& path, std::vector<std::string>* names = nullptr) {
  auto table = detail::read_csv_table(path, false);
  if (names) *names = std::move(table.header);
  return std::move(table.values);
}

/// Feature and target CSVs, both with a header row and equal row counts.
inline Dataset load_csv(const std::string& features_path, const std::string& targets_path) {
  auto features = detail::read_csv_table(features_path, false);
  auto targets = detail::read_csv_table(targets_path, true);
  require(features.values.rows() == targets.values.rows(), ErrorKind::Parse,
          "row-count mismatch: " + features_path + " has " + std::to_string(features.values.rows()) + " rows, " +
              targets_path + " has " + std::to_string(targets.values.rows()));
  require(features.values.rows() >= 1, ErrorKind::EmptyInput, features_path + ": no data rows");
  Dataset data;
  data.X = std::move(features.values);
  data.Y = std::move(targets.values);
  data.feature_names = std::move(features.header);
  data.target_names = std::move(targets.header);
  data.validate();
  return data;
}

/// Writes a matrix with a header row; values round-trip exactly (17 digits).
inline void write_csv(const std::string& path, const Matrix& m, const std::vector<std::string>& header) {
  require(static_cast<Index>(header.size()) == m.cols(), ErrorKind::Dimension, "header width does not match matrix");
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write '" + path + "'");
  out.precision(17);
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
  out << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << m(i, c);
    out << '\n';
  }
  if (!out) fail(ErrorKind::Io, "write failed for '" + path + "'");
}

inline std::vector<std::string> default_names(const std::string& prefix, Index n) {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

inline void save_csv(const Dataset& data, const std::string& features_path, const std::string& targets_path) {
  write_csv(features_path, data.X,
            data.feature_names.empty() ? default_names("x", data.input_dim()) : data.feature_names);
  write_csv(targets_path, data.Y, data.target_names.empty() ? default_names("y", data.task_dim()) : data.target_names);
}

// ---------------------------------------------------------------------------
// Splitting

inline std::vector<Index> shuffled_indices(Index n, std::uint64_t seed, std::string_view label) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  Rng rng = Rng::stream(seed, label);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  return idx;
}

/// Seeded shuffle, then the first floor(fraction * N) rows train and the rest
/// validate.
inline std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0, ErrorKind::InvalidArgument,
          "train fraction must lie in (0, 1)");
  const Index n = data.size();
  const auto n_train = static_cast<Index>(std::floor(train_fraction * static_cast<double>(n) + 1e-9));
  require(n_train >= 1 && n_train < n, ErrorKind::InvalidArgument,
          "train fraction " + std::to_string(train_fraction) + " leaves an empty side for N=" + std::to_string(n));
  const auto idx = shuffled_indices(n, seed, "split");
  std::vector<Index> train(idx.begin(), idx.begin() + n_train);
  std::vector<Index> valid(idx.begin() + n_train, idx.end());
  return {data.rows(train), data.rows(valid)};
}

inline Dataset shuffle_rows(const Dataset& data, std::uint64_t seed) {
  return data.rows(shuffled_indices(data.size(), seed, "stream-order"));
}

}  // namespace ssn
