#pragma once

// Configuration-driven front end: a JSON run description is validated,
// its dataset loaded and preprocessed, and optimizers run per seed with
// metrics written as CSV plus a JSON manifest.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sketchy/data.hpp"
#include "sketchy/diagnostics.hpp"
#include "sketchy/optimizer.hpp"
#include "sketchy/oracles.hpp"

namespace sketchy {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitRuntime = 3,
  kExitCaps = 4,
};

struct PreprocessStep {
  enum class Kind { normalize_rows, standardize, random_features, split };
  Kind kind = Kind::normalize_rows;
  FeatureKind feature_kind = FeatureKind::rff_cosine;
  std::size_t dim = 0;
  double bandwidth = 1.0;
  double fraction = 0.8;
  std::uint64_t seed = 0;
};

struct OptimizerSpec {
  std::string name;  // sketchysgd, sketchysgd-theoretical, sgd, svrg
  nlohmann::json params = nlohmann::json::object();
};

struct DiagnoseSpec {
  std::optional<std::size_t> optimizer;  // index into optimizers
  std::size_t top_m = 500;
  std::vector<double> betas;
  std::uint64_t seed = 0;
  std::string iterates;            // saved iterates of a prior run
  std::vector<double> checkpoints; // passes to analyze from `iterates`
  DiagnosticCaps caps;
};

struct RunConfig {
  std::string dataset_path;
  std::string format = "libsvm";
  std::optional<std::size_t> num_features;
  std::string test_path;
  Task task = Task::ridge;
  std::vector<PreprocessStep> preprocessing;
  std::optional<double> l2;  // auto = 1e-2 / n_train
  std::vector<OptimizerSpec> optimizers;
  std::vector<std::uint64_t> seeds;
  double max_passes = 40.0;
  double eval_every = 1.0;
  std::string output_dir = "results";
  bool save_iterates = false;
  DiagnoseSpec diagnose;
};

/// Every schema violation in the document (empty when valid). File
/// existence is checked here as well.
std::vector<std::string> validate_config(const nlohmann::json& doc);
/// Parses a document; throws ConfigError listing all violations.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);

struct PreparedData {
  ProblemOracle train;
  std::optional<ProblemOracle> test;
  std::string checksum;
  std::string provenance;
};

PreparedData prepare_data(const RunConfig& config);

/// Optimizer settings with all auto fields resolved against the training
/// problem. Exactly one of sketchy/baseline is set.
struct ResolvedOptimizer {
  std::string name;
  std::optional<OptimizerConfig> sketchy;
  std::optional<BaselineConfig> baseline;
};
ResolvedOptimizer resolve_optimizer(const OptimizerSpec& spec,
                                    const RunConfig& config,
                                    const ProblemOracle& train,
                                    std::uint64_t seed);
RunResult run_optimizer(const ResolvedOptimizer& opt, const ProblemOracle& train,
                        const RunOptions& options);

nlohmann::json resolved_config_json(const RunConfig& config,
                                    const PreparedData& data);

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRecord>& records);

struct CliOverrides {
  std::optional<std::string> output_dir;
  std::optional<double> max_passes;
  std::optional<std::uint64_t> seed;
};

int cmd_run(const std::string& config_path, const CliOverrides& overrides,
            std::ostream& out, std::ostream& err);
int cmd_diagnose(const std::string& config_path, const CliOverrides& overrides,
                 std::ostream& out, std::ostream& err);
int cmd_validate(const std::string& config_path, const CliOverrides& overrides,
                 std::ostream& out, std::ostream& err);

/// Entry point for the command-line tool.
int cli_main(int argc, char** argv);

}  // namespace sketchy
