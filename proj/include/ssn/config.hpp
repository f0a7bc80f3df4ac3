#pragma once

// Experiment configuration: JSON, schema version 1. Every key is checked for
// type and range; unknown keys are rejected. Errors carry file:line:column.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ssn/error.hpp"
#include "ssn/layer.hpp"
#include "ssn/network.hpp"

namespace ssn {

inline constexpr int kSchemaVersion = 1;

enum class Recipe { SingleLayerRecovery, DeepRecovery, DepthSweep, CalibrationStudy };

inline const char* to_string(Recipe r) {
  switch (r) {
    case Recipe::SingleLayerRecovery: return "single_layer_recovery";
    case Recipe::DeepRecovery: return "deep_recovery";
    case Recipe::DepthSweep: return "depth_sweep";
    case Recipe::CalibrationStudy: return "calibration_study";
  }
  return "depth_sweep";
}

struct DataSpec {
  std::string source = "planted";    // planted | csv
  std::string generator = "single";  // single | deep | heteroscedastic
  Index n = 2000;
  Index d = 50;
  Index t = 20;
  Index rank = 5;
  double sigma = 3.0;
  int depth = 1;
  std::vector<double> sigma_set{0.5, 3.0};
  std::string features;
  std::string targets;

  bool planted() const { return source == "planted"; }
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  Recipe recipe = Recipe::DepthSweep;
  std::string output_dir;
  DataSpec data;
  TrainConfig train;
  SkipMode skip_mode = SkipMode::Concat;
  bool warm_start = false;
  bool standardize_targets = false;
  Index depth = 1;
  std::vector<Index> ranks{5};
  std::vector<double> fractions;  // empty: train and evaluate on all samples
  std::vector<std::uint64_t> seeds{1};
  CalibrationConfig calibration;
  bool baselines = false;
  std::vector<double> ridge_lambdas{1e-4, 1e-3, 1e-2, 1e-1};
  bool save_models = true;
  bool write_traces = true;
  bool record_timing = true;
};

namespace detail {

struct SourcePos {
  std::size_t line = 1;
  std::size_t column = 1;
};

/// Scans a well-formed JSON document and maps the JSON pointer of every
/// value to its position (the key's position for object members).
class JsonPositions {
 public:
  explicit JsonPositions(const std::string& text) : text_(text) { scan(); }

  const std::map<std::string, SourcePos>& map() const { return out_; }

 private:
  struct Frame {
    bool object = false;
    std::string path;
    std::size_t index = 0;
    std::string key;
    bool expect_key = true;
  };

  static std::string escape(const std::string& k) {
    std::string e;
    for (char c : k) {
      if (c == '~') e += "~0";
      else if (c == '/') e += "~1";
      else e += c;
    }
    return e;
  }

  void step() {
    if (text_[i_] == '\n') {
      ++pos_.line;
      pos_.column = 1;
    } else {
      ++pos_.column;
    }
    ++i_;
  }

  std::string read_string() {
    std::string s;
    step();
    while (i_ < text_.size() && text_[i_] != '"') {
      if (text_[i_] == '\\' && i_ + 1 < text_.size()) step();
      s += text_[i_];
      step();
    }
    if (i_ < text_.size()) step();
    return s;
  }

  std::string value_path() const {
    if (stack_.empty()) return "";
    const Frame& f = stack_.back();
    return f.path + "/" + (f.object ? escape(f.key) : std::to_string(f.index));
  }

  void scan() {
    SourcePos key_pos;
    bool have_key = false;
    while (i_ < text_.size()) {
      const char c = text_[i_];
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == ':') {
        step();
        continue;
      }
      if (c == ',') {
        if (!stack_.empty()) {
          if (stack_.back().object) stack_.back().expect_key = true;
          else ++stack_.back().index;
        }
        step();
        continue;
      }
      if (c == '}' || c == ']') {
        if (!stack_.empty()) stack_.pop_back();
        step();
        continue;
      }
      if (c == '"' && !stack_.empty() && stack_.back().object && stack_.back().expect_key) {
        key_pos = pos_;
        have_key = true;
        stack_.back().key = read_string();
        stack_.back().expect_key = false;
        continue;
      }
      const std::string path = value_path();
      out_.emplace(path, have_key ? key_pos : pos_);
      have_key = false;
      if (c == '{' || c == '[') {
        stack_.push_back(Frame{c == '{', path, 0, {}, true});
        step();
      } else if (c == '"') {
        read_string();
      } else {
        while (i_ < text_.size() && std::string_view(",}] \t\r\n").find(text_[i_]) == std::string_view::npos) step();
      }
    }
  }

  const std::string& text_;
  std::size_t i_ = 0;
  SourcePos pos_;
  std::vector<Frame> stack_;
  std::map<std::string, SourcePos> out_;
};

/// Typed, range-checked access to one parsed config document.
class ConfigReader {
 public:
  ConfigReader(std::string file, const std::string& text) : file_(std::move(file)), positions_(text) {}

  [[noreturn]] void error(const std::string& pointer, const std::string& msg) const {
    const auto& m = positions_.map();
    auto it = m.find(pointer);
    std::string where = file_;
    if (it != m.end()) where += ":" + std::to_string(it->second.line) + ":" + std::to_string(it->second.column);
    fail(ErrorKind::Config, where + ": " + (pointer.empty() ? std::string("/") : pointer) + ": " + msg);
  }

  void allow_keys(const nlohmann::json& obj, const std::string& ptr, std::initializer_list<const char*> keys) const {
    if (!obj.is_object()) error(ptr, "expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      bool known = false;
      for (const char* k : keys) known = known || it.key() == k;
      if (!known) error(ptr + "/" + it.key(), "unknown key '" + it.key() + "'");
    }
  }

  const nlohmann::json* find(const nlohmann::json& obj, const char* key) const {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
  }

  double number(const nlohmann::json& v, const std::string& ptr) const {
    if (!v.is_number()) error(ptr, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) error(ptr, "expected a finite number");
    return x;
  }

  std::int64_t integer(const nlohmann::json& v, const std::string& ptr) const {
    if (v.is_number_integer()) return v.get<std::int64_t>();
    if (v.is_number_float()) {
      const double x = v.get<double>();
      if (std::isfinite(x) && x == std::floor(x) && std::abs(x) < 9e15) return static_cast<std::int64_t>(x);
    }
    error(ptr, "expected an integer");
  }

  bool boolean(const nlohmann::json& v, const std::string& ptr) const {
    if (!v.is_boolean()) error(ptr, "expected true or false");
    return v.get<bool>();
  }

  std::string string(const nlohmann::json& v, const std::string& ptr) const {
    if (!v.is_string()) error(ptr, "expected a string");
    return v.get<std::string>();
  }

  std::string choice(const nlohmann::json& v, const std::string& ptr, std::initializer_list<const char*> options) const {
    const std::string s = string(v, ptr);
    std::string list;
    for (const char* o : options) {
      if (s == o) return s;
      list += std::string(list.empty() ? "" : ", ") + o;
    }
    error(ptr, "'" + s + "' is not one of {" + list + "}");
  }

  const nlohmann::json& array(const nlohmann::json& v, const std::string& ptr, bool nonempty = true) const {
    if (!v.is_array()) error(ptr, "expected an array");
    if (nonempty && v.empty()) error(ptr, "expected a nonempty array");
    return v;
  }

  void check(bool ok, const std::string& ptr, const std::string& msg) const {
    if (!ok) error(ptr, msg);
  }

 private:
  std::string file_;
  JsonPositions positions_;
};

inline void read_data(const ConfigReader& r, const nlohmann::json& j, DataSpec& d) {
  const std::string p = "/data";
  r.allow_keys(j, p, {"source", "generator", "n", "d", "t", "rank", "sigma", "depth", "sigma_set", "features", "targets"});
  if (auto v = r.find(j, "source")) d.source = r.choice(*v, p + "/source", {"planted", "csv"});
  if (d.planted()) {
    for (const char* k : {"features", "targets"})
      if (r.find(j, k)) r.error(p + "/" + k, "'" + std::string(k) + "' applies only to source \"csv\"");
    if (auto v = r.find(j, "generator")) d.generator = r.choice(*v, p + "/generator", {"single", "deep", "heteroscedastic"});
    auto dim = [&](const char* key, Index& out) {
      if (auto v = r.find(j, key)) {
        out = r.integer(*v, p + "/" + key);
        r.check(out >= 1, p + "/" + key, "must be >= 1");
      }
    };
    dim("n", d.n);
    dim("d", d.d);
    dim("t", d.t);
    dim("rank", d.rank);
    r.check(d.rank <= std::min(d.t, d.d), p + "/rank", "must lie in [1, min(t, d)]");
    if (auto v = r.find(j, "sigma")) {
      d.sigma = r.number(*v, p + "/sigma");
      r.check(d.sigma >= 0.0, p + "/sigma", "must be >= 0");
    }
    if (auto v = r.find(j, "depth")) {
      r.check(d.generator == "deep", p + "/depth", "applies only to generator \"deep\"");
      d.depth = static_cast<int>(r.integer(*v, p + "/depth"));
      r.check(d.depth >= 1 && d.depth <= 64, p + "/depth", "must lie in [1, 64]");
    }
    if (auto v = r.find(j, "sigma_set")) {
      r.check(d.generator == "heteroscedastic", p + "/sigma_set", "applies only to generator \"heteroscedastic\"");
      d.sigma_set.clear();
      const auto& a = r.array(*v, p + "/sigma_set");
      for (std::size_t i = 0; i < a.size(); ++i) {
        const std::string ip = p + "/sigma_set/" + std::to_string(i);
        d.sigma_set.push_back(r.number(a[i], ip));
        r.check(d.sigma_set.back() > 0.0, ip, "must be > 0");
      }
    }
  } else {
    for (const char* k : {"generator", "n", "d", "t", "rank", "sigma", "depth", "sigma_set"})
      if (r.find(j, k)) r.error(p + "/" + k, "'" + std::string(k) + "' applies only to source \"planted\"");
    for (const char* k : {"features", "targets"}) {
      auto v = r.find(j, k);
      if (!v) r.error(p, "csv source needs '" + std::string(k) + "'");
      std::string s = r.string(*v, p + "/" + k);
      r.check(!s.empty(), p + "/" + k, "must be a nonempty path");
      (std::string(k) == "features" ? d.features : d.targets) = std::move(s);
    }
  }
}

inline void read_train(const ConfigReader& r, const nlohmann::json& j, ExperimentConfig& c) {
  const std::string p = "/train";
  r.allow_keys(j, p,
               {"eta", "mu", "lambda", "v_inner_steps", "init_scale", "step_decay", "decay_offset", "step_scaling", "sigma",
                "censor_threshold", "skip_mode", "warm_start", "standardize_targets"});
  TrainConfig& t = c.train;
  auto positive = [&](const char* key, double& out) {
    if (auto v = r.find(j, key)) {
      out = r.number(*v, p + "/" + key);
      r.check(out > 0.0, p + "/" + key, "must be > 0");
    }
  };
  positive("eta", t.eta);
  positive("mu", t.mu);
  positive("init_scale", t.init_scale);
  positive("sigma", t.sigma);
  if (auto v = r.find(j, "lambda")) {
    t.lambda = r.number(*v, p + "/lambda");
    r.check(t.lambda >= 0.0, p + "/lambda", "must be >= 0");
  }
  if (auto v = r.find(j, "censor_threshold")) {
    t.censor_threshold = r.number(*v, p + "/censor_threshold");
    r.check(t.censor_threshold >= 0.0, p + "/censor_threshold", "must be >= 0");
  }
  if (auto v = r.find(j, "v_inner_steps")) {
    const auto n = r.integer(*v, p + "/v_inner_steps");
    r.check(n >= 1 && n <= 1000, p + "/v_inner_steps", "must lie in [1, 1000]");
    t.v_inner_steps = static_cast<int>(n);
  }
  if (auto v = r.find(j, "decay_offset")) {
    t.decay_offset = r.number(*v, p + "/decay_offset");
    r.check(t.decay_offset >= 1.0, p + "/decay_offset", "must be >= 1");
  }
  if (auto v = r.find(j, "step_decay"))
    t.step_decay = step_decay_from_string(r.choice(*v, p + "/step_decay", {"constant", "inv_sqrt", "inv"}));
  if (auto v = r.find(j, "step_scaling"))
    t.step_scaling = step_scaling_from_string(r.choice(*v, p + "/step_scaling", {"none", "input_power", "curvature"}));
  if (auto v = r.find(j, "skip_mode")) c.skip_mode = skip_mode_from_string(r.choice(*v, p + "/skip_mode", {"concat", "naive"}));
  if (auto v = r.find(j, "warm_start")) c.warm_start = r.boolean(*v, p + "/warm_start");
  if (auto v = r.find(j, "standardize_targets")) c.standardize_targets = r.boolean(*v, p + "/standardize_targets");
}

inline void read_calibration(const ConfigReader& r, const nlohmann::json& j, CalibrationConfig& c) {
  const std::string p = "/calibration";
  r.allow_keys(j, p, {"enabled", "residuals", "sigma_min", "sigma_max"});
  if (auto v = r.find(j, "enabled")) c.enabled = r.boolean(*v, p + "/enabled");
  if (auto v = r.find(j, "residuals"))
    c.residuals = calibration_residuals_from_string(r.choice(*v, p + "/residuals", {"all", "uncensored"}));
  if (auto v = r.find(j, "sigma_min")) {
    c.sigma_min = r.number(*v, p + "/sigma_min");
    r.check(c.sigma_min > 0.0, p + "/sigma_min", "must be > 0");
  }
  if (auto v = r.find(j, "sigma_max")) {
    c.sigma_max = r.number(*v, p + "/sigma_max");
    r.check(c.sigma_max >= c.sigma_min, p + "/sigma_max", "must be >= sigma_min");
  }
}

}  // namespace detail

/// Parses and validates a config document. `file` only labels messages.
inline ExperimentConfig parse_config(const std::string& text, const std::string& file = "<config>") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1;
    std::size_t column = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    fail(ErrorKind::Config, file + ":" + std::to_string(line) + ":" + std::to_string(column) + ": malformed JSON");
  }
  const detail::ConfigReader r(file, text);
  r.allow_keys(j, "",
               {"schema_version", "experiment", "output_dir", "seeds", "fractions", "depth", "ranks", "data", "train",
                "calibration", "baselines", "output"});

  ExperimentConfig c;
  auto sv = r.find(j, "schema_version");
  if (!sv) r.error("", "missing required key 'schema_version'");
  c.schema_version = static_cast<int>(r.integer(*sv, "/schema_version"));
  r.check(c.schema_version == kSchemaVersion, "/schema_version",
          "unsupported schema version " + std::to_string(c.schema_version) + " (expected " +
              std::to_string(kSchemaVersion) + ")");

  auto ex = r.find(j, "experiment");
  if (!ex) r.error("", "missing required key 'experiment'");
  const std::string recipe =
      r.choice(*ex, "/experiment", {"single_layer_recovery", "deep_recovery", "depth_sweep", "calibration_study"});
  if (recipe == "single_layer_recovery") c.recipe = Recipe::SingleLayerRecovery;
  else if (recipe == "deep_recovery") c.recipe = Recipe::DeepRecovery;
  else if (recipe == "depth_sweep") c.recipe = Recipe::DepthSweep;
  else c.recipe = Recipe::CalibrationStudy;

  auto od = r.find(j, "output_dir");
  if (!od) r.error("", "missing required key 'output_dir'");
  c.output_dir = r.string(*od, "/output_dir");
  r.check(!c.output_dir.empty(), "/output_dir", "must be a nonempty path");

  if (auto v = r.find(j, "seeds")) {
    c.seeds.clear();
    const auto& a = r.array(*v, "/seeds");
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::string ip = "/seeds/" + std::to_string(i);
      const auto s = r.integer(a[i], ip);
      r.check(s >= 0, ip, "must be >= 0");
      c.seeds.push_back(static_cast<std::uint64_t>(s));
    }
  }
  if (auto v = r.find(j, "fractions")) {
    c.fractions.clear();
    const auto& a = r.array(*v, "/fractions", false);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::string ip = "/fractions/" + std::to_string(i);
      const double f = r.number(a[i], ip);
      r.check(f > 0.0 && f < 1.0, ip, "fraction " + std::to_string(f) + " outside (0, 1)");
      c.fractions.push_back(f);
    }
  }
  if (auto v = r.find(j, "depth")) {
    c.depth = r.integer(*v, "/depth");
    r.check(c.depth >= 1 && c.depth <= 256, "/depth", "must lie in [1, 256]");
  }
  if (auto v = r.find(j, "ranks")) {
    c.ranks.clear();
    const auto& a = r.array(*v, "/ranks");
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::string ip = "/ranks/" + std::to_string(i);
      c.ranks.push_back(r.integer(a[i], ip));
      r.check(c.ranks.back() >= 1, ip, "must be >= 1");
    }
  }
  if (auto v = r.find(j, "data")) detail::read_data(r, *v, c.data);
  if (auto v = r.find(j, "train")) detail::read_train(r, *v, c);
  if (auto v = r.find(j, "calibration")) detail::read_calibration(r, *v, c.calibration);
  if (auto v = r.find(j, "baselines")) {
    r.allow_keys(*v, "/baselines", {"enabled", "ridge_lambdas"});
    if (auto e = r.find(*v, "enabled")) c.baselines = r.boolean(*e, "/baselines/enabled");
    if (auto l = r.find(*v, "ridge_lambdas")) {
      c.ridge_lambdas.clear();
      const auto& a = r.array(*l, "/baselines/ridge_lambdas");
      for (std::size_t i = 0; i < a.size(); ++i) {
        const std::string ip = "/baselines/ridge_lambdas/" + std::to_string(i);
        c.ridge_lambdas.push_back(r.number(a[i], ip));
        r.check(c.ridge_lambdas.back() >= 0.0, ip, "must be >= 0");
      }
    }
  }
  if (auto v = r.find(j, "output")) {
    r.allow_keys(*v, "/output", {"models", "traces", "timing"});
    if (auto e = r.find(*v, "models")) c.save_models = r.boolean(*e, "/output/models");
    if (auto e = r.find(*v, "traces")) c.write_traces = r.boolean(*e, "/output/traces");
    if (auto e = r.find(*v, "timing")) c.record_timing = r.boolean(*e, "/output/timing");
  }

  // Cross-field rules.
  if (c.data.planted())
    for (std::size_t i = 0; i < c.ranks.size(); ++i)
      r.check(c.ranks[i] <= std::min(c.data.t, c.data.d), "/ranks/" + std::to_string(i),
              "rank exceeds min(t, d) of the planted data");
  switch (c.recipe) {
    case Recipe::SingleLayerRecovery:
      r.check(c.data.planted() && c.data.generator == "single", "/data",
              "single_layer_recovery needs planted data from the \"single\" generator");
      r.check(c.depth == 1, "/depth", "single_layer_recovery trains exactly one layer");
      break;
    case Recipe::DeepRecovery:
      r.check(c.data.planted() && c.data.generator == "deep", "/data",
              "deep_recovery needs planted data from the \"deep\" generator");
      break;
    case Recipe::CalibrationStudy:
      r.check(c.depth >= 2, "/depth", "calibration_study needs depth >= 2 so a calibrated layer exists");
      break;
    case Recipe::DepthSweep: break;
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

}  // namespace ssn
