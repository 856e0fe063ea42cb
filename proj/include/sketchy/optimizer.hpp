#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "sketchy/errors.hpp"
#include "sketchy/nystrom.hpp"
#include "sketchy/oracles.hpp"
#include "sketchy/rng.hpp"

namespace sketchy {

/// Update frequency meaning "build the preconditioner once, at k = 0".
inline constexpr std::size_t kNeverUpdate =
    std::numeric_limits<std::size_t>::max();

enum class SketchyMode { practical, theoretical };

/// Hyperparameters for SketchySGD. Empty optionals are "auto" and are
/// filled in by resolve_config.
struct OptimizerConfig {
  std::size_t rank = 10;
  std::optional<double> rho;
  std::size_t grad_batch = 256;
  std::optional<std::size_t> hessian_batch;
  std::optional<std::size_t> update_freq;
  double alpha = 0.5;
  std::size_t power_iters = 10;
  double max_passes = 40.0;
  std::uint64_t seed = 0;
  SketchyMode mode = SketchyMode::practical;
  // Theoretical mode: stage length (auto = ceil(n / b_g)). Its automatic
  // rate is 1 / (4 lambda_q), re-estimated at every preconditioner update.
  // In either mode a fixed rate, when given, replaces the estimate.
  std::optional<std::size_t> stage_length;
  std::optional<double> fixed_lr;
};

/// Plain SGD and SVRG settings. Empty optionals are "auto".
struct BaselineConfig {
  std::optional<double> lr;
  std::size_t grad_batch = 256;
  double max_passes = 40.0;
  std::uint64_t seed = 0;
  std::optional<std::size_t> epoch_length;  // SVRG only
};

/// Materializes every auto field of a SketchySGD config for this problem.
OptimizerConfig resolve_config(OptimizerConfig config,
                               const ProblemOracle& oracle);
BaselineConfig resolve_baseline_config(BaselineConfig config,
                                       const ProblemOracle& oracle,
                                       bool svrg);

/// max{1/(3L), 1/(2(L + n*l2))} with L the smoothness upper bound.
double default_baseline_lr(const ProblemOracle& oracle);

/// Full-data-pass bookkeeping. Work is counted in row touches so that the
/// total is an exact integer; passes() divides by n once.
class PassAccountant {
 public:
  explicit PassAccountant(std::size_t n = 1) : n_(n) {}

  void charge_gradient(std::uint64_t rows) { gradient_rows_ += rows; }
  void charge_hvp(std::uint64_t rows) { hvp_rows_ += rows; }
  void charge_snapshot(std::uint64_t rows) { snapshot_rows_ += rows; }

  std::uint64_t gradient_rows() const noexcept { return gradient_rows_; }
  std::uint64_t hvp_rows() const noexcept { return hvp_rows_; }
  std::uint64_t snapshot_rows() const noexcept { return snapshot_rows_; }
  std::uint64_t total_rows() const noexcept {
    return gradient_rows_ + hvp_rows_ + snapshot_rows_;
  }
  double passes() const noexcept {
    return static_cast<double>(total_rows()) / static_cast<double>(n_);
  }

 private:
  std::size_t n_;
  std::uint64_t gradient_rows_ = 0;
  std::uint64_t hvp_rows_ = 0;
  std::uint64_t snapshot_rows_ = 0;
};

struct MetricsRecord {
  double passes = 0.0;
  double wall_seconds = 0.0;
  double train_loss = 0.0;
  std::optional<double> test_loss;
  std::optional<double> train_acc;
  std::optional<double> test_acc;
};

struct RunOptions {
  Vector initial;  // empty means the zero vector
  // Held-out problem for test metrics; loss is reported without l2.
  const ProblemOracle* test = nullptr;
  // Record spacing in passes; records are also taken at 0 and at the end.
  double eval_every = 1.0;
  std::function<void(const MetricsRecord&, std::span<const double>)> on_record;
  // Theoretical mode: called with the averaged iterate after each stage.
  std::function<void(std::size_t, std::span<const double>)> on_stage_end;
};

struct RunResult {
  Vector w;
  std::vector<MetricsRecord> records;
  PassAccountant accountant;
  std::size_t iterations = 0;
  std::size_t preconditioner_updates = 0;
  std::size_t epochs = 0;  // SVRG snapshots or theoretical stages
  double learning_rate = 0.0;  // last rate used
  std::optional<NystromApprox> preconditioner;  // last one built
};

/// Non-finite iterate or loss. Carries the records made before the abort.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t iteration,
                  std::vector<MetricsRecord> records)
      : Error(what), iteration_(iteration), records_(std::move(records)) {}
  std::size_t iteration() const noexcept { return iteration_; }
  const std::vector<MetricsRecord>& records() const noexcept { return records_; }

 private:
  std::size_t iteration_;
  std::vector<MetricsRecord> records_;
};

struct LearningRateEstimate {
  double eta = 0.0;
  double lambda = 0.0;  // power-iteration estimate of the top eigenvalue
  std::size_t operator_calls = 0;
};

/// Randomized powering on (H_hat + rho I)^{-1/2} H' (H_hat + rho I)^{-1/2};
/// returns eta = alpha / lambda_q. Retries once from a fresh start when the
/// estimate is non-positive, then throws NumericalError.
LearningRateEstimate estimate_learning_rate(const VectorOperator& hessian,
                                            const NystromApprox& nys,
                                            double rho, std::size_t q,
                                            double alpha, Rng& rng);

/// Same, with H' the minibatch Hessian of the oracle (without l2) at w.
LearningRateEstimate estimate_learning_rate(const ProblemOracle& oracle,
                                            const NystromApprox& nys,
                                            double rho,
                                            std::span<const double> w,
                                            const Batch& fresh_batch,
                                            std::size_t q, double alpha,
                                            Rng& rng);

/// w - eta (H_hat + rho I)^{-1} g.
Vector preconditioned_step(const NystromApprox& nys, double rho, double eta,
                           std::span<const double> w,
                           std::span<const double> gradient);

RunResult sketchysgd_run(const ProblemOracle& oracle, OptimizerConfig config,
                         const RunOptions& options = {});
RunResult sketchysgd_theoretical_run(const ProblemOracle& oracle,
                                     OptimizerConfig config,
                                     const RunOptions& options = {});
RunResult sgd_run(const ProblemOracle& oracle, BaselineConfig config,
                  const RunOptions& options = {});
RunResult svrg_run(const ProblemOracle& oracle, BaselineConfig config,
                   const RunOptions& options = {});

}  // namespace sketchy
