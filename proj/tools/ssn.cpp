#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "ssn/ssn.hpp"

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kIoError = 2, kNumericFailure = 3 };

int exit_code_for(const ssn::Error& e) {
  switch (e.kind()) {
    case ssn::ErrorKind::Config:
    case ssn::ErrorKind::InvalidArgument: return kConfigError;
    case ssn::ErrorKind::Io:
    case ssn::ErrorKind::Parse:
    case ssn::ErrorKind::BadMagic:
    case ssn::ErrorKind::VersionMismatch:
    case ssn::ErrorKind::Truncated:
    case ssn::ErrorKind::Checksum:
    case ssn::ErrorKind::Dimension:
    case ssn::ErrorKind::EmptyInput: return kIoError;
    default: return kNumericFailure;
  }
}

int cmd_validate(const std::string& path) {
  const auto cfg = ssn::load_config(path);
  const auto cells = ssn::expand_cells(cfg);
  std::cout << path << ": ok (" << ssn::to_string(cfg.recipe) << ", " << cells.size() << " cells)\n";
  return kOk;
}

int cmd_run(const std::string& path) {
  const auto cfg = ssn::load_config(path);
  const auto run = ssn::run_experiment(cfg);
  std::cout << "cells: " << run.cells << ", ok: " << run.ok_cells << ", numeric failures: " << run.numeric_failures
            << ", other failures: " << run.other_failures << "\n"
            << "results: " << cfg.output_dir << "/results.csv\n";
  if (run.ok_cells == 0 && run.numeric_failures > 0) return kNumericFailure;
  if (run.ok_cells == 0) return kIoError;
  return kOk;
}

int cmd_predict(const std::string& model_path, const std::string& features, const std::string& out) {
  const auto net = ssn::load_model(model_path);
  std::vector<std::string> names;
  const ssn::Matrix X = ssn::load_feature_csv(features, &names);
  if (X.cols() != net.input_dim)
    throw ssn::Error(ssn::ErrorKind::Dimension, features + " has " + std::to_string(X.cols()) +
                                                    " feature columns, model expects " + std::to_string(net.input_dim));
  if (X.rows() == 0) throw ssn::Error(ssn::ErrorKind::EmptyInput, features + ": no data rows");
  const ssn::Matrix Y = ssn::forward_batch(net, X);
  if (!Y.allFinite()) throw ssn::Error(ssn::ErrorKind::Degenerate, "model produced non-finite predictions");
  ssn::write_csv(out, Y, ssn::default_names("y", net.task_dim));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Subspace network experiments"};
  app.require_subcommand(1);

  std::string config_path;
  auto* validate = app.add_subcommand("validate", "Check a config file without running it");
  validate->add_option("config", config_path, "Experiment config (JSON)")->required();

  auto* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();

  std::string model_path, features_path, out_path;
  auto* predict = app.add_subcommand("predict", "Predict targets for a feature CSV with a saved model");
  predict->add_option("--model", model_path, "Model file")->required();
  predict->add_option("--features", features_path, "Feature CSV with header")->required();
  predict->add_option("--out", out_path, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  try {
    if (*validate) return cmd_validate(config_path);
    if (*run) return cmd_run(config_path);
    return cmd_predict(model_path, features_path, out_path);
  } catch (const ssn::Error& e) {
    std::cerr << "ssn: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "ssn: " << e.what() << "\n";
    return kIoError;
  }
}
