#pragma once

// Experiment runner. A config expands into independent cells, one per
// (seed, split fraction, rank, calibration flag); cells run on a worker pool
// and each emits rows of results.csv, optional trace CSVs and a model file.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ssn/baselines.hpp"
#include "ssn/config.hpp"
#include "ssn/data.hpp"
#include "ssn/metrics.hpp"
#include "ssn/model_io.hpp"
#include "ssn/network.hpp"

namespace ssn {

/// results.csv columns, in order.
inline const std::vector<std::string>& result_columns() {
  static const std::vector<std::string> cols = {
      "experiment", "cell", "status", "message", "model", "seed", "fraction", "n_train", "n_valid", "rank",
      "network_depth", "depth", "calibrated", "anmse", "train_anmse", "subspace_diff", "aligned_subspace_diff",
      "coherence_max", "coherence_mean", "random_coherence_max", "layer_coherence_max", "weight_corr_median",
      "sigma_rank_agreement", "samples_seen", "saturated_terms", "ridge_lambda", "eta", "mu", "lambda",
      "v_inner_steps", "init_scale", "step_decay", "decay_offset", "step_scaling", "sigma", "censor_threshold",
      "skip_mode", "warm_start", "standardize_targets", "target_scale", "calibration_residuals", "sigma_min",
      "sigma_max", "data_source", "generator", "n", "d", "t", "planted_rank", "planted_sigma", "planted_depth",
      "sigma_set", "features", "targets", "seconds"};
  return cols;
}

/// Columns whose values vary between identical reruns.
inline bool is_timing_column(const std::string& c) { return c == "seconds"; }

using ResultRow = std::map<std::string, std::string>;

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_number(Index v) { return std::to_string(v); }

struct CellSpec {
  std::uint64_t seed = 0;
  std::optional<double> fraction;
  Index rank = 1;
  bool calibrated = false;

  std::string name() const {
    std::string f = fraction ? std::to_string(static_cast<int>(std::lround(*fraction * 100.0))) : std::string("all");
    return "s" + std::to_string(seed) + "_f" + f + "_r" + std::to_string(rank) + "_c" + (calibrated ? "1" : "0");
  }
};

struct CellResult {
  std::vector<ResultRow> rows;
  bool ok = false;
  bool numeric_failure = false;
};

struct RunSummary {
  std::size_t cells = 0;
  std::size_t ok_cells = 0;
  std::size_t numeric_failures = 0;
  std::size_t other_failures = 0;
};

inline std::vector<CellSpec> expand_cells(const ExperimentConfig& cfg) {
  std::vector<CellSpec> cells;
  std::vector<std::optional<double>> fracs;
  if (cfg.fractions.empty()) fracs.emplace_back();
  for (double f : cfg.fractions) fracs.emplace_back(f);
  std::vector<bool> calib = cfg.recipe == Recipe::CalibrationStudy ? std::vector<bool>{false, true}
                                                                   : std::vector<bool>{cfg.calibration.enabled};
  for (auto seed : cfg.seeds)
    for (const auto& f : fracs)
      for (auto r : cfg.ranks)
        for (bool c : calib) cells.push_back(CellSpec{seed, f, r, c});
  return cells;
}

/// Worker count: SSN_THREADS when set to a positive integer, otherwise the
/// hardware concurrency; never more than the number of jobs.
inline std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SSN_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) n = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

namespace detail {

struct LoadedData {
  Dataset data;
  std::optional<PlantedTruth> truth;
};

inline LoadedData make_data(const ExperimentConfig& cfg, std::uint64_t seed, const Dataset* csv) {
  if (!cfg.data.planted()) return {*csv, std::nullopt};
  const DataSpec& d = cfg.data;
  if (d.generator == "heteroscedastic") {
    auto [data, truth] = gen_heteroscedastic(d.n, d.d, d.t, d.rank, d.sigma_set, seed);
    return {std::move(data), std::move(truth)};
  }
  auto [data, truth] = gen_deep(d.n, d.d, d.t, d.rank, d.sigma, d.generator == "deep" ? d.depth : 1, seed);
  return {std::move(data), std::move(truth)};
}

/// Concordant fraction over task pairs whose planted sigma differs.
inline std::optional<double> sigma_rank_agreement(const Vector& estimate, const Vector& truth) {
  Index pairs = 0;
  Index agree = 0;
  for (Index i = 0; i < truth.size(); ++i)
    for (Index j = i + 1; j < truth.size(); ++j) {
      if (truth[i] == truth[j]) continue;
      ++pairs;
      if ((estimate[i] - estimate[j]) * (truth[i] - truth[j]) > 0.0) ++agree;
    }
  if (pairs == 0) return std::nullopt;
  return static_cast<double>(agree) / static_cast<double>(pairs);
}

/// Mean max-coherence of random Gaussian bases of the given shape against ref.
inline double random_coherence(const Matrix& ref, Index rank, std::uint64_t seed, int draws = 100) {
  double sum = 0.0;
  for (int k = 0; k < draws; ++k)
    sum += mutual_coherence(Rng::stream(seed, "random_basis", static_cast<std::uint64_t>(k)).gaussian(ref.rows(), rank),
                            ref)
               .max;
  return sum / draws;
}

inline std::string join_numbers(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : ";") + format_number(x);
  return s;
}

inline void fill_config_columns(ResultRow& row, const ExperimentConfig& cfg, const CellSpec& cell) {
  const TrainConfig& t = cfg.train;
  row["experiment"] = to_string(cfg.recipe);
  row["cell"] = cell.name();
  row["seed"] = std::to_string(cell.seed);
  row["fraction"] = cell.fraction ? format_number(*cell.fraction) : "";
  row["rank"] = format_number(cell.rank);
  row["network_depth"] = format_number(cfg.depth);
  row["calibrated"] = cell.calibrated ? "1" : "0";
  row["eta"] = format_number(t.eta);
  row["mu"] = format_number(t.mu);
  row["lambda"] = format_number(t.lambda);
  row["v_inner_steps"] = std::to_string(t.v_inner_steps);
  row["init_scale"] = format_number(t.init_scale);
  row["step_decay"] = to_string(t.step_decay);
  row["decay_offset"] = format_number(t.decay_offset);
  row["step_scaling"] = to_string(t.step_scaling);
  row["sigma"] = format_number(t.sigma);
  row["censor_threshold"] = format_number(t.censor_threshold);
  row["skip_mode"] = to_string(cfg.skip_mode);
  row["warm_start"] = cfg.warm_start ? "1" : "0";
  row["standardize_targets"] = cfg.standardize_targets ? "1" : "0";
  row["calibration_residuals"] = to_string(cfg.calibration.residuals);
  row["sigma_min"] = format_number(cfg.calibration.sigma_min);
  row["sigma_max"] = format_number(cfg.calibration.sigma_max);
  row["data_source"] = cfg.data.source;
  if (cfg.data.planted()) {
    row["generator"] = cfg.data.generator;
    row["n"] = format_number(cfg.data.n);
    row["d"] = format_number(cfg.data.d);
    row["t"] = format_number(cfg.data.t);
    row["planted_rank"] = format_number(cfg.data.rank);
    if (cfg.data.generator == "heteroscedastic") row["sigma_set"] = join_numbers(cfg.data.sigma_set);
    else row["planted_sigma"] = format_number(cfg.data.sigma);
    row["planted_depth"] = std::to_string(cfg.data.generator == "deep" ? cfg.data.depth : 1);
  } else {
    row["features"] = cfg.data.features;
    row["targets"] = cfg.data.targets;
  }
}

inline void write_trace(const std::string& path, const TraceLog& log, double reference_norm) {
  std::ostringstream out;
  out << "i,cost,iterwise_diff,subspace_diff\n";
  for (const auto& e : log.entries) {
    out << e.iteration << ',' << format_number(e.cost) << ',' << format_number(e.u_step / reference_norm) << ',';
    if (e.subspace_diff) out << format_number(*e.subspace_diff);
    out << '\n';
  }
  write_file_atomic(path, out.str());
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace detail

/// Runs one cell. Never throws for numeric or data failures; those become a
/// status row.
inline CellResult run_cell(const ExperimentConfig& cfg, const CellSpec& cell, const Dataset* csv,
                           const std::filesystem::path& out_dir) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  CellResult result;
  ResultRow base;
  detail::fill_config_columns(base, cfg, cell);
  auto seconds = [&]() { return cfg.record_timing ? format_number(std::chrono::duration<double>(Clock::now() - start).count()) : std::string(); };
  auto failure = [&](const std::string& status, const std::string& msg, bool numeric) {
    ResultRow row = base;
    row["status"] = status;
    row["message"] = msg;
    row["model"] = "sn";
    row["seconds"] = seconds();
    result.rows = {row};
    result.ok = false;
    result.numeric_failure = numeric;
    return result;
  };

  try {
    auto loaded = detail::make_data(cfg, cell.seed, csv);
    Dataset train;
    Dataset valid;
    if (cell.fraction) {
      std::tie(train, valid) = split(loaded.data, *cell.fraction, cell.seed);
    } else {
      train = shuffle_rows(loaded.data, cell.seed);
      valid = loaded.data;
    }
    base["n_train"] = format_number(train.size());
    base["n_valid"] = format_number(valid.size());
    require(cell.rank <= std::min(train.task_dim(), train.input_dim()), ErrorKind::InvalidArgument,
            "rank " + std::to_string(cell.rank) + " exceeds min(T, D)");

    TrainConfig tcfg = cfg.train;
    tcfg.rank = cell.rank;
    tcfg.seed = cell.seed;
    ExpandOptions opts;
    opts.skip_mode = cfg.skip_mode;
    opts.warm_start = cfg.warm_start;
    opts.calibration = cfg.calibration;
    opts.calibration.enabled = cell.calibrated;
    if (cfg.standardize_targets) {
      const double rms = std::sqrt(train.Y.squaredNorm() / static_cast<double>(train.Y.size()));
      if (rms > 0.0) opts.target_scale = rms;
    }
    base["target_scale"] = format_number(opts.target_scale);

    std::optional<Matrix> reference;  // planted basis of the target space
    if (loaded.truth) {
      reference = loaded.truth->U.back();
      if (reference->cols() == cell.rank) opts.planted_u = &*reference;
    }

    const ExpandResult fit = expand(train, cfg.depth, tcfg, opts);
    const auto valid_out = forward_layers(fit.network, valid.X);
    const auto train_out = forward_layers(fit.network, train.X);
    const std::string secs = seconds();

    std::optional<double> rand_coh;
    if (reference) rand_coh = detail::random_coherence(*reference, cell.rank, cell.seed);

    for (Index k = 0; k < fit.network.depth(); ++k) {
      const auto ku = static_cast<std::size_t>(k);
      const SubspaceLayer& layer = fit.network.layers[ku];
      ResultRow row = base;
      row["status"] = "ok";
      row["model"] = "sn";
      row["depth"] = format_number(k + 1);
      row["anmse"] = format_number(anmse(valid.Y, valid_out[ku]));
      row["train_anmse"] = format_number(anmse(train.Y, train_out[ku]));
      row["samples_seen"] = format_number(fit.traces[ku].samples_seen);
      row["saturated_terms"] = format_number(fit.traces[ku].saturated_terms);
      if (reference) {
        const Coherence coh = mutual_coherence(layer.U, *reference);
        row["coherence_max"] = format_number(coh.max);
        row["coherence_mean"] = format_number(coh.mean);
        row["random_coherence_max"] = format_number(*rand_coh);
        if (reference->cols() == cell.rank) {
          row["subspace_diff"] = format_number(subspace_difference(*reference, layer.U));
          row["aligned_subspace_diff"] = format_number(aligned_subspace_difference(*reference, layer.U));
        }
        if (ku < loaded.truth->U.size())
          row["layer_coherence_max"] = format_number(mutual_coherence(layer.U, loaded.truth->U[ku]).max);
        if (k == 0 && loaded.truth->U.size() == 1)
          row["weight_corr_median"] =
              format_number(detail::median([&] {
                const Vector c = weight_correlations(layer.U * layer.V, loaded.truth->weights(0));
                return std::vector<double>(c.data(), c.data() + c.size());
              }()));
      }
      if (cell.calibrated && k >= 1 && loaded.truth) {
        if (auto a = detail::sigma_rank_agreement(fit.calibrations[ku - 1].sigma, loaded.truth->sigma))
          row["sigma_rank_agreement"] = format_number(*a);
      }
      row["seconds"] = secs;
      result.rows.push_back(std::move(row));

      if (cfg.write_traces) {
        const double ref_norm = reference && reference->cols() == cell.rank ? reference->norm() : layer.U.norm();
        detail::write_trace((out_dir / "traces" / (cell.name() + "_layer" + std::to_string(k + 1) + ".csv")).string(),
                            fit.traces[ku], ref_norm > 0.0 ? ref_norm : 1.0);
      }
    }
    if (cfg.save_models) save_model(fit.network, (out_dir / "models" / (cell.name() + ".ssnw")).string());

    // Baselines depend only on (seed, fraction); emit them once per split.
    if (cfg.baselines && cell.rank == cfg.ranks.front() && !cell.calibrated) {
      for (bool censor : {false, true}) {
        ResultRow row = base;
        row["model"] = censor ? "ridge_relu" : "ridge";
        double best = std::numeric_limits<double>::infinity();
        double best_lambda = 0.0;
        std::string last_error;
        for (double lam : cfg.ridge_lambdas) {
          try {
            const LinearModel lm = fit_ridge(train, lam);
            const double a = anmse(valid.Y, predict_baseline(lm, valid.X, censor));
            if (a < best) {
              best = a;
              best_lambda = lam;
            }
          } catch (const Error& e) {
            last_error = e.what();
          }
        }
        if (std::isfinite(best)) {
          row["status"] = "ok";
          row["anmse"] = format_number(best);
          row["ridge_lambda"] = format_number(best_lambda);
        } else {
          row["status"] = "numeric";
          row["message"] = last_error;
        }
        for (const char* k : {"rank", "calibrated", "network_depth"}) row[k] = "";
        row["seconds"] = "";
        result.rows.push_back(std::move(row));
      }
    }
    result.ok = true;
    return result;
  } catch (const StepSizeError& e) {
    return failure("step_size", e.what(), true);
  } catch (const Error& e) {
    const bool numeric = e.kind() == ErrorKind::Degenerate || e.kind() == ErrorKind::Conditioning;
    return failure(numeric ? "numeric" : "error", e.what(), numeric);
  } catch (const std::exception& e) {
    return failure("error", e.what(), false);
  }
}

inline std::string results_csv(const std::vector<ResultRow>& rows) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  std::ostringstream out;
  const auto& cols = result_columns();
  for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      auto it = row.find(cols[c]);
      out << (c ? "," : "") << (it == row.end() ? std::string() : quote(it->second));
    }
    out << '\n';
  }
  return out.str();
}

/// Medians and sample standard deviations over seeds, grouped by
/// (model, calibrated, fraction, rank, depth).
inline nlohmann::ordered_json summarize(const ExperimentConfig& cfg, const std::vector<ResultRow>& rows,
                                        const RunSummary& run) {
  static const std::vector<std::string> metrics = {"anmse", "train_anmse", "subspace_diff", "aligned_subspace_diff",
                                                   "coherence_max", "coherence_mean", "random_coherence_max",
                                                   "layer_coherence_max", "weight_corr_median", "sigma_rank_agreement",
                                                   "seconds"};
  static const std::vector<std::string> keys = {"model", "calibrated", "fraction", "rank", "depth"};
  std::map<std::vector<std::string>, std::map<std::string, std::vector<double>>> groups;
  std::map<std::vector<std::string>, std::size_t> counts;
  for (const auto& row : rows) {
    if (row.at("status") != "ok") continue;
    std::vector<std::string> key;
    for (const auto& k : keys) {
      auto it = row.find(k);
      key.push_back(it == row.end() ? "" : it->second);
    }
    ++counts[key];
    auto& g = groups[key];
    for (const auto& m : metrics) {
      auto it = row.find(m);
      if (it != row.end() && !it->second.empty()) g[m].push_back(std::strtod(it->second.c_str(), nullptr));
    }
  }
  nlohmann::ordered_json out;
  out["experiment"] = to_string(cfg.recipe);
  out["schema_version"] = cfg.schema_version;
  out["cells"] = run.cells;
  out["ok_cells"] = run.ok_cells;
  out["failed_cells"] = run.numeric_failures + run.other_failures;
  nlohmann::ordered_json groups_json = nlohmann::ordered_json::array();
  for (const auto& [key, values] : groups) {
    nlohmann::ordered_json g;
    for (std::size_t i = 0; i < keys.size(); ++i) g[keys[i]] = key[i];
    g["count"] = counts[key];
    for (const auto& m : metrics) {
      auto it = values.find(m);
      if (it == values.end() || it->second.empty()) continue;
      g[m] = {{"median", detail::median(it->second)}, {"std", detail::sample_std(it->second)}};
    }
    groups_json.push_back(std::move(g));
  }
  out["groups"] = std::move(groups_json);
  return out;
}

/// Executes every cell and writes results.csv, summary.json, traces/ and
/// models/ under cfg.output_dir.
inline RunSummary run_experiment(const ExperimentConfig& cfg) {
  const std::filesystem::path out_dir(cfg.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (cfg.write_traces) std::filesystem::create_directories(out_dir / "traces", ec);
  if (cfg.save_models) std::filesystem::create_directories(out_dir / "models", ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    fail(ErrorKind::Io, "cannot create output directory '" + cfg.output_dir + "'");

  std::optional<Dataset> csv;
  if (!cfg.data.planted()) csv = load_csv(cfg.data.features, cfg.data.targets);

  const auto cells = expand_cells(cfg);
  std::vector<CellResult> results(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < cells.size(); i = next++)
      results[i] = run_cell(cfg, cells[i], csv ? &*csv : nullptr, out_dir);
  };
  const std::size_t n_threads = worker_count(cells.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  RunSummary run;
  run.cells = cells.size();
  std::vector<ResultRow> rows;
  for (auto& r : results) {
    if (r.ok) ++run.ok_cells;
    else if (r.numeric_failure) ++run.numeric_failures;
    else ++run.other_failures;
    for (auto& row : r.rows) rows.push_back(std::move(row));
  }
  write_file_atomic((out_dir / "results.csv").string(), results_csv(rows));
  write_file_atomic((out_dir / "summary.json").string(), summarize(cfg, rows, run).dump(2) + "\n");
  return run;
}

}  // namespace ssn
