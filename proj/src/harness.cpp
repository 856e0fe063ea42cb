#include "sketchy/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "sketchy/errors.hpp"
#include "sketchy/format.hpp"

namespace sketchy {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ------------------------------------------------------------ validation

class SchemaChecker {
 public:
  void error(const std::string& msg) { errors_.push_back(msg); }
  std::vector<std::string> take() { return std::move(errors_); }

  void allowed_keys(const json& obj, const std::string& where,
                    std::initializer_list<const char*> keys) {
    for (const auto& [key, _] : obj.items()) {
      if (std::none_of(keys.begin(), keys.end(),
                       [&](const char* k) { return key == k; }))
        error(where + ": unknown field '" + key + "'");
    }
  }

  void positive_int(const json& obj, const std::string& where, const char* key,
                    bool allow_auto = false, bool allow_inf = false) {
    if (!obj.contains(key)) return;
    const json& v = obj[key];
    if (allow_auto && v == "auto") return;
    if (allow_inf && v == "inf") return;
    if (!v.is_number_integer() || v.get<long long>() < 1)
      error(where + "." + key + ": expected a positive integer" +
            (allow_auto ? " or \"auto\"" : "") + (allow_inf ? " or \"inf\"" : ""));
  }

  void number(const json& obj, const std::string& where, const char* key,
              bool strictly_positive, bool allow_auto = false) {
    if (!obj.contains(key)) return;
    const json& v = obj[key];
    if (allow_auto && v == "auto") return;
    const bool ok = v.is_number() && std::isfinite(v.get<double>()) &&
                    (strictly_positive ? v.get<double>() > 0.0 : v.get<double>() >= 0.0);
    if (!ok)
      error(where + "." + key + ": expected a " +
            (strictly_positive ? "positive" : "nonnegative") + " number" +
            (allow_auto ? " or \"auto\"" : ""));
  }

  void string_field(const json& obj, const std::string& where, const char* key,
                    bool required, bool must_exist = false) {
    if (!obj.contains(key)) {
      if (required) error(where + "." + key + ": missing required field");
      return;
    }
    if (!obj[key].is_string()) {
      error(where + "." + key + ": expected a string");
      return;
    }
    if (must_exist && !fs::exists(obj[key].get<std::string>()))
      error(where + "." + key + ": file '" + obj[key].get<std::string>() +
            "' does not exist");
  }

 private:
  std::vector<std::string> errors_;
};

void check_optimizer(SchemaChecker& c, const json& opt, const std::string& where) {
  if (!opt.is_object()) {
    c.error(where + ": expected an object");
    return;
  }
  if (!opt.contains("name") || !opt["name"].is_string()) {
    c.error(where + ".name: missing required field");
    return;
  }
  const std::string name = opt["name"];
  if (name == "sketchysgd" || name == "sketchysgd-theoretical") {
    if (name == "sketchysgd")
      c.allowed_keys(opt, where, {"name", "rank", "rho", "grad_batch", "hessian_batch",
                                  "update_freq", "alpha", "power_iters", "lr"});
    else
      c.allowed_keys(opt, where, {"name", "rank", "rho", "grad_batch", "hessian_batch",
                                  "update_freq", "power_iters", "lr", "stage_length"});
    c.positive_int(opt, where, "rank");
    c.number(opt, where, "rho", true, true);
    c.positive_int(opt, where, "grad_batch");
    c.positive_int(opt, where, "hessian_batch", true);
    c.positive_int(opt, where, "update_freq", true, true);
    c.number(opt, where, "alpha", true);
    c.positive_int(opt, where, "power_iters");
    c.number(opt, where, "lr", false, true);
    c.positive_int(opt, where, "stage_length", true);
  } else if (name == "sgd" || name == "svrg") {
    if (name == "sgd")
      c.allowed_keys(opt, where, {"name", "lr", "grad_batch"});
    else
      c.allowed_keys(opt, where, {"name", "lr", "grad_batch", "epoch_length"});
    c.number(opt, where, "lr", false, true);
    c.positive_int(opt, where, "grad_batch");
    c.positive_int(opt, where, "epoch_length", true);
  } else {
    c.error(where + ".name: unknown optimizer '" + name +
            "' (expected sketchysgd, sketchysgd-theoretical, sgd or svrg)");
  }
}

void check_step(SchemaChecker& c, const json& step, const std::string& where) {
  if (!step.is_object() || !step.contains("op") || !step["op"].is_string()) {
    c.error(where + ": expected an object with an \"op\" field");
    return;
  }
  const std::string op = step["op"];
  if (op == "normalize_rows" || op == "standardize") {
    c.allowed_keys(step, where, {"op"});
  } else if (op == "random_features") {
    c.allowed_keys(step, where, {"op", "kind", "dim", "bandwidth", "seed"});
    if (!step.contains("kind") || !step["kind"].is_string() ||
        (step["kind"] != "rff" && step["kind"] != "rff-cosine" && step["kind"] != "relu"))
      c.error(where + ".kind: expected \"rff\" or \"relu\"");
    if (!step.contains("dim")) c.error(where + ".dim: missing required field");
    c.positive_int(step, where, "dim");
    c.number(step, where, "bandwidth", true);
    if (step.contains("seed") && !step["seed"].is_number_unsigned())
      c.error(where + ".seed: expected a nonnegative integer");
  } else if (op == "split") {
    c.allowed_keys(step, where, {"op", "fraction", "seed"});
    if (step.contains("fraction")) {
      const json& f = step["fraction"];
      if (!f.is_number() || !(f.get<double>() > 0.0 && f.get<double>() < 1.0))
        c.error(where + ".fraction: expected a number strictly between 0 and 1");
    }
    if (step.contains("seed") && !step["seed"].is_number_unsigned())
      c.error(where + ".seed: expected a nonnegative integer");
  } else {
    c.error(where + ".op: unknown preprocessing step '" + op + "'");
  }
}

std::optional<double> auto_or_number(const json& obj, const char* key) {
  if (!obj.contains(key) || obj[key] == "auto") return std::nullopt;
  return obj[key].get<double>();
}

std::optional<std::size_t> auto_or_count(const json& obj, const char* key) {
  if (!obj.contains(key) || obj[key] == "auto") return std::nullopt;
  if (obj[key] == "inf") return kNeverUpdate;
  return obj[key].get<std::size_t>();
}

DataMatrix widen(const DataMatrix& m, std::size_t p) {
  if (m.cols() == p) return m;
  const DataMatrix sp = m.to_sparse();
  return DataMatrix::sparse(
      sp.rows(), p, std::vector<std::size_t>(sp.row_ptr().begin(), sp.row_ptr().end()),
      std::vector<std::uint32_t>(sp.col_idx().begin(), sp.col_idx().end()),
      std::vector<double>(sp.values().begin(), sp.values().end()),
      Vector(sp.labels().begin(), sp.labels().end()));
}

json count_json(std::size_t v) {
  return v == kNeverUpdate ? json("inf") : json(v);
}

json optimizer_json(const ResolvedOptimizer& opt) {
  json j;
  j["name"] = opt.name;
  if (opt.sketchy) {
    const OptimizerConfig& c = *opt.sketchy;
    j["rank"] = c.rank;
    j["rho"] = *c.rho;
    j["grad_batch"] = c.grad_batch;
    j["hessian_batch"] = *c.hessian_batch;
    j["update_freq"] = count_json(*c.update_freq);
    j["lr"] = c.fixed_lr ? json(*c.fixed_lr) : json("auto");
    if (!c.fixed_lr) j["power_iters"] = c.power_iters;
    if (c.mode == SketchyMode::practical) j["alpha"] = c.alpha;
    else j["stage_length"] = *c.stage_length;
  } else {
    const BaselineConfig& c = *opt.baseline;
    j["lr"] = *c.lr;
    j["grad_batch"] = c.grad_batch;
    if (c.epoch_length) j["epoch_length"] = *c.epoch_length;
  }
  return j;
}

json step_json(const PreprocessStep& s) {
  switch (s.kind) {
    case PreprocessStep::Kind::normalize_rows:
      return {{"op", "normalize_rows"}};
    case PreprocessStep::Kind::standardize:
      return {{"op", "standardize"}};
    case PreprocessStep::Kind::random_features:
      return {{"op", "random_features"},
              {"kind", to_string(s.feature_kind)},
              {"dim", s.dim},
              {"bandwidth", s.bandwidth},
              {"seed", s.seed}};
    case PreprocessStep::Kind::split:
      return {{"op", "split"}, {"fraction", s.fraction}, {"seed", s.seed}};
  }
  return {};
}

std::string opt_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

void apply_overrides(RunConfig& cfg, const CliOverrides& o) {
  if (o.output_dir) cfg.output_dir = *o.output_dir;
  if (o.max_passes) {
    if (!(*o.max_passes > 0.0)) throw ConfigError("--max-passes must be positive");
    cfg.max_passes = *o.max_passes;
  }
  if (o.seed) cfg.seeds = {*o.seed};
}

std::size_t thread_count() {
  if (const char* env = std::getenv("SKETCHY_NUM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return 1;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write '" + path.string() + "'");
  f << text;
}

// Loads config and data, mapping failures onto exit codes.
struct Loaded {
  RunConfig config;
  std::optional<PreparedData> data;
  int status = kExitOk;
};

Loaded load_everything(const std::string& path, const CliOverrides& overrides,
                       std::ostream& err) {
  Loaded l;
  try {
    l.config = load_run_config(path);
    apply_overrides(l.config, overrides);
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    l.status = kExitConfig;
    return l;
  }
  try {
    l.data = prepare_data(l.config);
  } catch (const CapExceededError& e) {
    err << "caps exceeded: " << e.what() << '\n';
    l.status = kExitCaps;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << '\n';
    l.status = kExitConfig;
  }
  return l;
}

std::string job_stem(const RunConfig& cfg, std::size_t idx) {
  const std::string& name = cfg.optimizers[idx].name;
  const auto same = std::count_if(cfg.optimizers.begin(), cfg.optimizers.end(),
                                  [&](const OptimizerSpec& o) { return o.name == name; });
  return same > 1 ? name + "-" + std::to_string(idx) : name;
}

}  // namespace

// ------------------------------------------------------------------ config

std::vector<std::string> validate_config(const json& doc) {
  SchemaChecker c;
  if (!doc.is_object()) {
    c.error("config: top level must be a JSON object");
    return c.take();
  }
  c.allowed_keys(doc, "config",
                 {"dataset", "task", "preprocessing", "l2", "optimizers", "seeds",
                  "max_passes", "eval_every", "output_dir", "save_iterates",
                  "diagnose"});

  if (!doc.contains("dataset") || !doc["dataset"].is_object()) {
    c.error("dataset: missing required object");
  } else {
    const json& d = doc["dataset"];
    c.allowed_keys(d, "dataset", {"path", "format", "num_features", "test_path"});
    c.string_field(d, "dataset", "path", true, true);
    c.string_field(d, "dataset", "test_path", false, true);
    if (d.contains("format") && d["format"] != "libsvm")
      c.error("dataset.format: only \"libsvm\" is supported");
    c.positive_int(d, "dataset", "num_features");
  }

  if (!doc.contains("task")) {
    c.error("task: missing required field");
  } else if (doc["task"] != "ridge" && doc["task"] != "logistic") {
    c.error("task: expected \"ridge\" or \"logistic\"");
  }

  if (doc.contains("preprocessing")) {
    if (!doc["preprocessing"].is_array()) {
      c.error("preprocessing: expected an array");
    } else {
      bool seen_split = false;
      for (std::size_t i = 0; i < doc["preprocessing"].size(); ++i) {
        const json& step = doc["preprocessing"][i];
        check_step(c, step, "preprocessing[" + std::to_string(i) + "]");
        if (step.is_object() && step.value("op", "") == "split") {
          if (seen_split) c.error("preprocessing: at most one split step");
          if (doc.contains("dataset") && doc["dataset"].is_object() &&
              doc["dataset"].contains("test_path"))
            c.error("preprocessing: split cannot be combined with dataset.test_path");
          seen_split = true;
        }
      }
    }
  }

  c.number(doc, "config", "l2", false, true);

  if (!doc.contains("optimizers") || !doc["optimizers"].is_array() ||
      doc["optimizers"].empty()) {
    c.error("optimizers: expected a nonempty array");
  } else {
    for (std::size_t i = 0; i < doc["optimizers"].size(); ++i)
      check_optimizer(c, doc["optimizers"][i], "optimizers[" + std::to_string(i) + "]");
  }

  if (!doc.contains("seeds") || !doc["seeds"].is_array() || doc["seeds"].empty()) {
    c.error("seeds: expected a nonempty array of nonnegative integers");
  } else {
    for (const json& s : doc["seeds"])
      if (!s.is_number_unsigned()) {
        c.error("seeds: expected a nonempty array of nonnegative integers");
        break;
      }
  }

  c.number(doc, "config", "max_passes", true);
  c.number(doc, "config", "eval_every", true);
  c.string_field(doc, "config", "output_dir", false);
  if (doc.contains("save_iterates") && !doc["save_iterates"].is_boolean())
    c.error("config.save_iterates: expected a boolean");

  if (doc.contains("diagnose")) {
    const json& d = doc["diagnose"];
    if (!d.is_object()) {
      c.error("diagnose: expected an object");
    } else {
      c.allowed_keys(d, "diagnose", {"optimizer", "top_m", "betas", "seed", "iterates",
                                     "checkpoints", "max_dim", "max_samples"});
      if (d.contains("optimizer")) {
        const json& o = d["optimizer"];
        if (!o.is_number_unsigned()) {
          c.error("diagnose.optimizer: expected an optimizer index");
        } else if (doc.contains("optimizers") && doc["optimizers"].is_array() &&
                   o.get<std::size_t>() >= doc["optimizers"].size()) {
          c.error("diagnose.optimizer: index out of range");
        }
      }
      c.positive_int(d, "diagnose", "top_m");
      c.positive_int(d, "diagnose", "max_dim");
      c.positive_int(d, "diagnose", "max_samples");
      if (d.contains("seed") && !d["seed"].is_number_unsigned())
        c.error("diagnose.seed: expected a nonnegative integer");
      if (d.contains("betas")) {
        bool ok = d["betas"].is_array();
        if (ok)
          for (const json& b : d["betas"]) ok = ok && b.is_number() && b.get<double>() > 0.0;
        if (!ok) c.error("diagnose.betas: expected an array of positive numbers");
      }
      c.string_field(d, "diagnose", "iterates", false);
      if (d.contains("checkpoints")) {
        bool ok = d["checkpoints"].is_array();
        if (ok)
          for (const json& b : d["checkpoints"]) ok = ok && b.is_number();
        if (!ok) c.error("diagnose.checkpoints: expected an array of numbers");
      }
    }
  }
  return c.take();
}

RunConfig parse_run_config(const json& doc) {
  const std::vector<std::string> errors = validate_config(doc);
  if (!errors.empty()) {
    std::string msg = std::to_string(errors.size()) + " schema violation(s):";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  RunConfig cfg;
  const json& d = doc["dataset"];
  cfg.dataset_path = d["path"];
  cfg.format = d.value("format", "libsvm");
  if (d.contains("num_features")) cfg.num_features = d["num_features"].get<std::size_t>();
  cfg.test_path = d.value("test_path", "");
  cfg.task = task_from_string(doc["task"]);

  for (const json& s : doc.value("preprocessing", json::array())) {
    PreprocessStep step;
    const std::string op = s["op"];
    if (op == "normalize_rows") {
      step.kind = PreprocessStep::Kind::normalize_rows;
    } else if (op == "standardize") {
      step.kind = PreprocessStep::Kind::standardize;
    } else if (op == "random_features") {
      step.kind = PreprocessStep::Kind::random_features;
      step.feature_kind = feature_kind_from_string(s["kind"]);
      step.dim = s["dim"];
      step.bandwidth = s.value("bandwidth", 1.0);
      step.seed = s.value("seed", std::uint64_t{0});
    } else {
      step.kind = PreprocessStep::Kind::split;
      step.fraction = s.value("fraction", 0.8);
      step.seed = s.value("seed", std::uint64_t{0});
    }
    cfg.preprocessing.push_back(step);
  }

  cfg.l2 = auto_or_number(doc, "l2");
  for (const json& o : doc["optimizers"]) {
    OptimizerSpec spec;
    spec.name = o["name"];
    spec.params = o;
    spec.params.erase("name");
    cfg.optimizers.push_back(std::move(spec));
  }
  for (const json& s : doc["seeds"]) cfg.seeds.push_back(s.get<std::uint64_t>());
  cfg.max_passes = doc.value("max_passes", 40.0);
  cfg.eval_every = doc.value("eval_every", 1.0);
  cfg.output_dir = doc.value("output_dir", std::string("results"));
  cfg.save_iterates = doc.value("save_iterates", false);

  if (doc.contains("diagnose")) {
    const json& g = doc["diagnose"];
    if (g.contains("optimizer")) cfg.diagnose.optimizer = g["optimizer"].get<std::size_t>();
    cfg.diagnose.top_m = g.value("top_m", std::size_t{500});
    cfg.diagnose.betas = g.value("betas", std::vector<double>{});
    cfg.diagnose.seed = g.value("seed", std::uint64_t{0});
    cfg.diagnose.iterates = g.value("iterates", std::string());
    cfg.diagnose.checkpoints = g.value("checkpoints", std::vector<double>{});
    cfg.diagnose.caps.max_dim = g.value("max_dim", cfg.diagnose.caps.max_dim);
    cfg.diagnose.caps.max_samples = g.value("max_samples", cfg.diagnose.caps.max_samples);
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

// -------------------------------------------------------------------- data

PreparedData prepare_data(const RunConfig& cfg) {
  RawDataset train = load_libsvm(cfg.dataset_path, cfg.num_features);
  std::optional<RawDataset> test;
  if (!cfg.test_path.empty()) {
    test = load_libsvm(cfg.test_path, cfg.num_features);
    const std::size_t p = std::max(train.matrix.cols(), test->matrix.cols());
    train.matrix = widen(train.matrix, p);
    test->matrix = widen(test->matrix, p);
  }
  const std::string checksum = file_checksum(cfg.dataset_path);

  for (const PreprocessStep& step : cfg.preprocessing) {
    switch (step.kind) {
      case PreprocessStep::Kind::normalize_rows:
        train = normalize_rows(train);
        if (test) test = normalize_rows(*test);
        break;
      case PreprocessStep::Kind::standardize: {
        const FeatureStats stats = feature_stats(train.matrix);
        train = standardize(train, stats);
        if (test) test = standardize(*test, stats);
        break;
      }
      case PreprocessStep::Kind::random_features: {
        const FeatureMap map(step.feature_kind, train.matrix.cols(), step.dim,
                             step.bandwidth, step.seed);
        train = random_features(train, map);
        if (test) test = random_features(*test, map);
        break;
      }
      case PreprocessStep::Kind::split: {
        Split parts = split(train, step.fraction, step.seed);
        train = std::move(parts.train);
        test = std::move(parts.test);
        break;
      }
    }
  }

  if (train.matrix.rows() == 0) throw ConfigError("training set is empty");
  const double l2 = cfg.l2.value_or(1e-2 / static_cast<double>(train.matrix.rows()));
  PreparedData out{ProblemOracle(train.matrix, cfg.task, l2), std::nullopt, checksum,
                   train.provenance};
  if (test && test->matrix.rows() > 0)
    out.test.emplace(test->matrix, cfg.task, l2);
  return out;
}

ResolvedOptimizer resolve_optimizer(const OptimizerSpec& spec, const RunConfig& cfg,
                                    const ProblemOracle& train, std::uint64_t seed) {
  ResolvedOptimizer out;
  out.name = spec.name;
  const json& p = spec.params;
  if (spec.name == "sketchysgd" || spec.name == "sketchysgd-theoretical") {
    OptimizerConfig c;
    c.mode = spec.name == "sketchysgd" ? SketchyMode::practical : SketchyMode::theoretical;
    c.rank = p.value("rank", c.rank);
    c.rho = auto_or_number(p, "rho");
    c.grad_batch = p.value("grad_batch", c.grad_batch);
    c.hessian_batch = auto_or_count(p, "hessian_batch");
    c.update_freq = auto_or_count(p, "update_freq");
    c.alpha = p.value("alpha", c.alpha);
    c.power_iters = p.value("power_iters", c.power_iters);
    c.fixed_lr = auto_or_number(p, "lr");
    c.stage_length = auto_or_count(p, "stage_length");
    c.max_passes = cfg.max_passes;
    c.seed = seed;
    out.sketchy = resolve_config(c, train);
  } else {
    BaselineConfig c;
    c.lr = auto_or_number(p, "lr");
    c.grad_batch = p.value("grad_batch", c.grad_batch);
    c.epoch_length = auto_or_count(p, "epoch_length");
    c.max_passes = cfg.max_passes;
    c.seed = seed;
    out.baseline = resolve_baseline_config(c, train, spec.name == "svrg");
  }
  return out;
}

RunResult run_optimizer(const ResolvedOptimizer& opt, const ProblemOracle& train,
                        const RunOptions& options) {
  if (opt.name == "sketchysgd") return sketchysgd_run(train, *opt.sketchy, options);
  if (opt.name == "sketchysgd-theoretical")
    return sketchysgd_theoretical_run(train, *opt.sketchy, options);
  if (opt.name == "sgd") return sgd_run(train, *opt.baseline, options);
  if (opt.name == "svrg") return svrg_run(train, *opt.baseline, options);
  throw ConfigError("unknown optimizer '" + opt.name + "'");
}

json resolved_config_json(const RunConfig& cfg, const PreparedData& data) {
  json j;
  json ds = {{"path", cfg.dataset_path},
             {"format", cfg.format},
             {"checksum_fnv1a64", data.checksum},
             {"provenance", data.provenance},
             {"n_train", data.train.num_samples()},
             {"n_test", data.test ? data.test->num_samples() : 0},
             {"num_features", data.train.dim()}};
  if (!cfg.test_path.empty()) ds["test_path"] = cfg.test_path;
  j["dataset"] = ds;
  j["task"] = to_string(cfg.task);
  json steps = json::array();
  for (const auto& s : cfg.preprocessing) steps.push_back(step_json(s));
  j["preprocessing"] = steps;
  j["l2"] = data.train.l2();
  j["smoothness_upper_bound"] = data.train.smoothness_upper_bound();
  json opts = json::array();
  const std::uint64_t seed0 = cfg.seeds.empty() ? 0 : cfg.seeds.front();
  for (const auto& spec : cfg.optimizers)
    opts.push_back(optimizer_json(resolve_optimizer(spec, cfg, data.train, seed0)));
  j["optimizers"] = opts;
  j["seeds"] = cfg.seeds;
  j["max_passes"] = cfg.max_passes;
  j["eval_every"] = cfg.eval_every;
  j["output_dir"] = cfg.output_dir;
  j["save_iterates"] = cfg.save_iterates;
  return j;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRecord>& records) {
  out << "pass,wall_seconds,train_loss,test_loss,train_acc,test_acc\n";
  for (const MetricsRecord& r : records) {
    out << format_double(r.passes) << ',' << format_double(r.wall_seconds) << ','
        << format_double(r.train_loss) << ',' << opt_field(r.test_loss) << ','
        << opt_field(r.train_acc) << ',' << opt_field(r.test_acc) << '\n';
  }
}

// ---------------------------------------------------------------- commands

int cmd_validate(const std::string& config_path, const CliOverrides& overrides,
                 std::ostream& out, std::ostream& err) {
  json doc;
  {
    std::ifstream in(config_path);
    if (!in) {
      err << "config error: cannot open config '" << config_path << "'\n";
      return kExitConfig;
    }
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      err << "config error: not valid JSON: " << e.what() << '\n';
      return kExitConfig;
    }
  }
  const std::vector<std::string> errors = validate_config(doc);
  if (!errors.empty()) {
    err << errors.size() << " schema violation(s):\n";
    for (const auto& e : errors) err << "  - " << e << '\n';
    return kExitConfig;
  }
  Loaded l = load_everything(config_path, overrides, err);
  if (l.status != kExitOk) return l.status;
  try {
    out << resolved_config_json(l.config, *l.data).dump(2) << '\n';
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitOk;
}

int cmd_run(const std::string& config_path, const CliOverrides& overrides,
            std::ostream& out, std::ostream& err) {
  Loaded l = load_everything(config_path, overrides, err);
  if (l.status != kExitOk) return l.status;
  const RunConfig& cfg = l.config;
  const PreparedData& data = *l.data;

  json resolved;
  struct Job {
    std::size_t optimizer;
    std::uint64_t seed;
    ResolvedOptimizer resolved;
    std::string stem;
    json status;
  };
  std::vector<Job> jobs;
  try {
    resolved = resolved_config_json(cfg, data);
    for (std::size_t i = 0; i < cfg.optimizers.size(); ++i)
      for (std::uint64_t seed : cfg.seeds)
        jobs.push_back({i, seed, resolve_optimizer(cfg.optimizers[i], cfg, data.train, seed),
                        job_stem(cfg, i) + "-seed" + std::to_string(seed), json()});
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  const fs::path dir(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    err << "runtime error: cannot create output directory '" << dir.string()
        << "': " << ec.message() << '\n';
    return kExitRuntime;
  }

  std::mutex log_mutex;
  auto run_job = [&](Job& job) {
    RunOptions options;
    options.test = data.test ? &*data.test : nullptr;
    options.eval_every = cfg.eval_every;
    json iterates = {{"passes", json::array()}, {"w", json::array()}};
    if (cfg.save_iterates) {
      options.on_record = [&](const MetricsRecord& rec, std::span<const double> w) {
        iterates["passes"].push_back(rec.passes);
        iterates["w"].push_back(std::vector<double>(w.begin(), w.end()));
      };
    }
    const fs::path csv = dir / (job.stem + ".csv");
    json status = {{"optimizer", job.resolved.name},
                   {"optimizer_index", job.optimizer},
                   {"seed", job.seed},
                   {"hyperparameters", optimizer_json(job.resolved)}};
    try {
      const RunResult res = run_optimizer(job.resolved, data.train, options);
      std::ostringstream text;
      write_metrics_csv(text, res.records);
      write_text(csv, text.str());
      status["status"] = "ok";
      status["file"] = csv.filename().string();
      status["iterations"] = res.iterations;
      status["passes"] = res.accountant.passes();
      status["preconditioner_updates"] = res.preconditioner_updates;
      status["final_learning_rate"] = res.learning_rate;
    } catch (const DivergenceError& e) {
      std::ostringstream text;
      write_metrics_csv(text, e.records());
      const fs::path partial = dir / (job.stem + ".csv.partial");
      write_text(partial, text.str());
      status["status"] = "diverged";
      status["file"] = partial.filename().string();
      status["message"] = e.what();
      std::lock_guard lock(log_mutex);
      err << job.stem << ": " << e.what() << '\n';
    } catch (const std::exception& e) {
      status["status"] = "failed";
      status["message"] = e.what();
      std::lock_guard lock(log_mutex);
      err << job.stem << ": " << e.what() << '\n';
    }
    if (cfg.save_iterates)
      write_text(dir / (job.stem + ".iterates.json"), iterates.dump());
    job.status = std::move(status);
  };

  const std::size_t workers = std::min(thread_count(), jobs.size());
  if (workers <= 1) {
    for (Job& job : jobs) run_job(job);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) run_job(jobs[i]);
      });
    for (auto& t : pool) t.join();
  }

  bool all_ok = true;
  json manifest;
  manifest["version"] = kVersion;
  manifest["config"] = resolved;
  manifest["jobs"] = json::array();
  for (const Job& job : jobs) {
    manifest["jobs"].push_back(job.status);
    all_ok = all_ok && job.status["status"] == "ok";
  }
  try {
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
  out << "wrote " << jobs.size() << " run(s) to " << dir.string() << '\n';
  return all_ok ? kExitOk : kExitRuntime;
}

int cmd_diagnose(const std::string& config_path, const CliOverrides& overrides,
                 std::ostream& out, std::ostream& err) {
  Loaded l = load_everything(config_path, overrides, err);
  if (l.status != kExitOk) return l.status;
  const RunConfig& cfg = l.config;
  const PreparedData& data = *l.data;
  const DiagnoseSpec& spec = cfg.diagnose;

  OptimizerConfig sketch_cfg;
  try {
    std::optional<std::size_t> idx = spec.optimizer;
    if (!idx) {
      for (std::size_t i = 0; i < cfg.optimizers.size(); ++i)
        if (cfg.optimizers[i].name.rfind("sketchysgd", 0) == 0) {
          idx = i;
          break;
        }
    }
    if (idx) {
      if (cfg.optimizers[*idx].name.rfind("sketchysgd", 0) != 0)
        throw ConfigError("diagnose.optimizer must refer to a sketchysgd optimizer");
      sketch_cfg = *resolve_optimizer(cfg.optimizers[*idx], cfg, data.train, spec.seed).sketchy;
    } else {
      sketch_cfg.seed = spec.seed;
      sketch_cfg = resolve_config(sketch_cfg, data.train);
    }
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  std::vector<std::pair<std::string, Vector>> points;
  points.emplace_back("init", Vector(data.train.dim(), 0.0));
  if (!spec.iterates.empty()) {
    try {
      std::ifstream in(spec.iterates);
      if (!in) throw ConfigError("cannot open '" + spec.iterates + "'");
      const json saved = json::parse(in);
      const auto passes = saved.at("passes").get<std::vector<double>>();
      const auto ws = saved.at("w").get<std::vector<std::vector<double>>>();
      if (passes.empty() || passes.size() != ws.size())
        throw ConfigError("iterates file has mismatched passes and w arrays");
      for (double c : spec.checkpoints) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < passes.size(); ++i)
          if (std::abs(passes[i] - c) < std::abs(passes[best] - c)) best = i;
        if (ws[best].size() != data.train.dim())
          throw ConfigError("saved iterate has the wrong dimension");
        points.emplace_back("pass" + format_double(c), ws[best]);
      }
    } catch (const std::exception& e) {
      err << "config error: cannot use iterates file: " << e.what() << '\n';
      return kExitConfig;
    }
  }

  const fs::path dir(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  try {
    for (const auto& [label, w] : points) {
      ConditioningOptions opts;
      opts.top_m = spec.top_m;
      opts.betas = spec.betas;
      opts.label = label;
      const SpectrumReport rep =
          conditioning_report(data.train, w, sketch_cfg, opts, spec.caps);
      std::ostringstream csv;
      write_spectrum_csv(csv, rep);
      write_text(dir / ("spectrum-" + label + ".csv"), csv.str());
      write_text(dir / ("spectrum-" + label + ".json"),
                 spectrum_summary(rep).dump(2) + "\n");
      out << label << ": kappa " << format_double(rep.raw_kappa) << " -> "
          << format_double(rep.precond_kappa) << '\n';
    }
  } catch (const CapExceededError& e) {
    err << "caps exceeded: " << e.what() << '\n';
    return kExitCaps;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

int cli_main(int argc, char** argv) {
  CLI::App app{"Stochastic quasi-Newton optimization with Nystrom preconditioning"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path;
  CliOverrides overrides;
  std::string output_dir;
  double max_passes = 0.0;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "JSON run configuration")->required();
    sub->add_option("--output-dir", output_dir, "Override output_dir");
    sub->add_option("--max-passes", max_passes, "Override max_passes");
    sub->add_option("--seed", seed, "Run a single seed instead of the seeds list");
  };
  CLI::App* run = app.add_subcommand("run", "Run optimizers and write metrics CSVs");
  CLI::App* diagnose = app.add_subcommand("diagnose", "Write spectrum reports");
  CLI::App* validate = app.add_subcommand("validate", "Check a config and print it resolved");
  for (CLI::App* sub : {run, diagnose, validate}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  CLI::App* active = app.get_subcommands().front();
  if (active->count("--output-dir")) overrides.output_dir = output_dir;
  if (active->count("--max-passes")) overrides.max_passes = max_passes;
  if (active->count("--seed")) overrides.seed = seed;

  if (active == run) return cmd_run(config_path, overrides, std::cout, std::cerr);
  if (active == diagnose) return cmd_diagnose(config_path, overrides, std::cout, std::cerr);
  return cmd_validate(config_path, overrides, std::cout, std::cerr);
}

}  // namespace sketchy
