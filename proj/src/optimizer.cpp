#include "sketchy/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

namespace sketchy {
namespace {

using Clock = std::chrono::steady_clock;

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

bool all_finite(std::span<const double> w) {
  return std::all_of(w.begin(), w.end(),
                     [](double v) { return std::isfinite(v); });
}

// Evaluation schedule, wall-clock accounting and divergence checks shared by
// every optimizer. Evaluation time is excluded from wall_seconds.
class RunMonitor {
 public:
  RunMonitor(const ProblemOracle& train, const RunOptions& options)
      : train_(train), options_(options) {}

  void resume_clock() { started_ = Clock::now(); }
  void pause_clock() {
    elapsed_ += std::chrono::duration<double>(Clock::now() - started_).count();
  }

  void check(std::span<const double> w, std::size_t iteration) const {
    if (!all_finite(w)) {
      throw DivergenceError("divergence detected at iteration " +
                                std::to_string(iteration) +
                                ": non-finite iterate",
                            iteration, records_);
    }
  }

  void record(double passes, std::span<const double> w, std::size_t iteration) {
    MetricsRecord rec;
    rec.passes = passes;
    rec.wall_seconds = elapsed_;
    rec.train_loss = train_.full_loss(w);
    if (!std::isfinite(rec.train_loss)) {
      throw DivergenceError("divergence detected at iteration " +
                                std::to_string(iteration) + ": non-finite loss",
                            iteration, records_);
    }
    if (options_.test != nullptr) rec.test_loss = options_.test->data_loss(w);
    if (train_.task() == Task::logistic) {
      rec.train_acc = train_.accuracy(w);
      if (options_.test != nullptr) rec.test_acc = options_.test->accuracy(w);
    }
    records_.push_back(rec);
    if (options_.on_record) options_.on_record(rec, w);
    if (options_.eval_every > 0.0) {
      while (next_eval_ <= passes) next_eval_ += options_.eval_every;
    }
  }

  void maybe_record(double passes, std::span<const double> w,
                    std::size_t iteration) {
    if (options_.eval_every > 0.0 && passes >= next_eval_)
      record(passes, w, iteration);
  }

  void finish(double passes, std::span<const double> w, std::size_t iteration) {
    if (records_.empty() || records_.back().passes < passes)
      record(passes, w, iteration);
  }

  std::vector<MetricsRecord> take() { return std::move(records_); }

 private:
  const ProblemOracle& train_;
  const RunOptions& options_;
  std::vector<MetricsRecord> records_;
  double next_eval_ = 0.0;
  double elapsed_ = 0.0;
  Clock::time_point started_ = Clock::now();
};

Vector initial_point(const ProblemOracle& oracle, const RunOptions& options) {
  if (options.initial.empty()) return Vector(oracle.dim(), 0.0);
  if (options.initial.size() != oracle.dim())
    throw DimensionError("initial iterate has the wrong dimension");
  return options.initial;
}

void require_nonempty(const ProblemOracle& oracle) {
  if (oracle.num_samples() == 0) throw ConfigError("dataset has no rows");
  if (oracle.dim() == 0) throw ConfigError("dataset has no features");
}

// Builds a fresh preconditioner (and, unless a fixed rate is configured, a
// fresh learning rate) at w. Draw order: S_j, test matrix, S', power start.
struct PreconditionerUpdate {
  NystromApprox nys;
  double eta;
};

PreconditionerUpdate update_preconditioner(const ProblemOracle& oracle,
                                           const OptimizerConfig& cfg,
                                           std::span<const double> w,
                                           BatchSampler& sampler, Rng& rng,
                                           PassAccountant& acct) {
  const std::size_t bh = *cfg.hessian_batch;
  Batch s = sampler.draw(rng, bh);
  NystromApprox nys = sketch_hessian(oracle, w, s, cfg.rank, rng);
  acct.charge_hvp(static_cast<std::uint64_t>(cfg.rank) * bh);
  double eta = 0.0;
  if (cfg.fixed_lr) {
    eta = *cfg.fixed_lr;
  } else {
    Batch fresh = sampler.draw(rng, bh);
    const LearningRateEstimate lr = estimate_learning_rate(
        oracle, nys, *cfg.rho, w, fresh, cfg.power_iters, cfg.alpha, rng);
    acct.charge_hvp(static_cast<std::uint64_t>(lr.operator_calls) * bh);
    eta = lr.eta;
  }
  return {std::move(nys), eta};
}

}  // namespace

double default_baseline_lr(const ProblemOracle& oracle) {
  const double lip = oracle.smoothness_upper_bound();
  const double n = static_cast<double>(oracle.num_samples());
  return std::max(1.0 / (3.0 * lip), 1.0 / (2.0 * (lip + n * oracle.l2())));
}

OptimizerConfig resolve_config(OptimizerConfig cfg, const ProblemOracle& oracle) {
  require_nonempty(oracle);
  const std::size_t n = oracle.num_samples();
  const std::size_t p = oracle.dim();
  if (cfg.rank < 1) throw ConfigError("rank must be >= 1");
  if (cfg.grad_batch < 1) throw ConfigError("gradient batch must be >= 1");
  if (!(cfg.alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (cfg.power_iters < 1) throw ConfigError("power iterations must be >= 1");
  if (!(cfg.max_passes > 0.0)) throw ConfigError("max passes must be positive");

  cfg.rank = std::min(cfg.rank, p);
  cfg.grad_batch = std::min(cfg.grad_batch, n);
  if (!cfg.rho) cfg.rho = 1e-3 * oracle.smoothness_upper_bound();
  if (!(*cfg.rho > 0.0)) throw ConfigError("rho must be positive");
  if (!cfg.hessian_batch) {
    cfg.hessian_batch = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n)))));
  }
  if (*cfg.hessian_batch < 1) throw ConfigError("hessian batch must be >= 1");
  cfg.hessian_batch = std::min(*cfg.hessian_batch, n);
  if (!cfg.update_freq) {
    cfg.update_freq = oracle.task() == Task::ridge ? kNeverUpdate
                                                   : ceil_div(n, cfg.grad_batch);
  }
  if (*cfg.update_freq < 1) throw ConfigError("update frequency must be >= 1");
  if (cfg.mode == SketchyMode::theoretical) {
    if (!cfg.stage_length) cfg.stage_length = ceil_div(n, cfg.grad_batch);
    if (*cfg.stage_length < 1) throw ConfigError("stage length must be >= 1");
    // Without a fixed rate, each refresh uses a quarter of the inverse
    // estimated preconditioned curvature.
    if (!cfg.fixed_lr) cfg.alpha = 0.25;
  }
  if (cfg.fixed_lr && !(*cfg.fixed_lr >= 0.0))
    throw ConfigError("learning rate must be nonnegative");
  return cfg;
}

BaselineConfig resolve_baseline_config(BaselineConfig cfg,
                                       const ProblemOracle& oracle, bool svrg) {
  require_nonempty(oracle);
  const std::size_t n = oracle.num_samples();
  if (cfg.grad_batch < 1) throw ConfigError("gradient batch must be >= 1");
  if (!(cfg.max_passes > 0.0)) throw ConfigError("max passes must be positive");
  cfg.grad_batch = std::min(cfg.grad_batch, n);
  if (!cfg.lr) cfg.lr = default_baseline_lr(oracle);
  if (!(*cfg.lr >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  if (svrg) {
    if (!cfg.epoch_length) cfg.epoch_length = ceil_div(n, cfg.grad_batch);
    if (*cfg.epoch_length < 1) throw ConfigError("epoch length must be >= 1");
  }
  return cfg;
}

LearningRateEstimate estimate_learning_rate(const VectorOperator& hessian,
                                            const NystromApprox& nys,
                                            double rho, std::size_t q,
                                            double alpha, Rng& rng) {
  if (q < 1) throw ConfigError("power iterations must be >= 1");
  const std::size_t p = nys.dim();
  LearningRateEstimate out;
  for (int attempt = 0; attempt < 2; ++attempt) {
    Vector y(p);
    for (double& v : y) v = rng.normal();
    scale(1.0 / norm2(y), y);
    double lambda = 0.0;
    bool degenerate = false;
    for (std::size_t i = 0; i < q; ++i) {
      const Vector v = precond_inv_sqrt(nys, rho, y);
      const Vector hv = hessian(v);
      ++out.operator_calls;
      Vector next = precond_inv_sqrt(nys, rho, hv);
      lambda = dot(y, next);
      const double nrm = norm2(next);
      if (!(nrm > 0.0) || !std::isfinite(nrm)) {
        degenerate = true;
        break;
      }
      scale(1.0 / nrm, next);
      y = std::move(next);
    }
    if (!degenerate && lambda > 0.0 && std::isfinite(lambda)) {
      out.lambda = lambda;
      out.eta = alpha / lambda;
      return out;
    }
  }
  throw NumericalError("learning-rate estimation failed");
}

LearningRateEstimate estimate_learning_rate(const ProblemOracle& oracle,
                                            const NystromApprox& nys,
                                            double rho,
                                            std::span<const double> w,
                                            const Batch& fresh_batch,
                                            std::size_t q, double alpha,
                                            Rng& rng) {
  return estimate_learning_rate(
      [&](std::span<const double> v) {
        return oracle.minibatch_hvp(w, fresh_batch, v);
      },
      nys, rho, q, alpha, rng);
}

Vector preconditioned_step(const NystromApprox& nys, double rho, double eta,
                           std::span<const double> w,
                           std::span<const double> gradient) {
  Vector direction = precond_solve(nys, rho, gradient);
  Vector next(w.begin(), w.end());
  axpy(-eta, direction, next);
  return next;
}

RunResult sketchysgd_run(const ProblemOracle& oracle, OptimizerConfig config,
                         const RunOptions& options) {
  const OptimizerConfig cfg = resolve_config(std::move(config), oracle);
  const std::size_t n = oracle.num_samples();
  const double rho = *cfg.rho;
  const std::size_t u = *cfg.update_freq;

  RunResult result;
  result.accountant = PassAccountant(n);
  PassAccountant& acct = result.accountant;
  Rng rng(cfg.seed);
  BatchSampler sampler(n);
  Vector w = initial_point(oracle, options);
  RunMonitor monitor(oracle, options);
  monitor.record(0.0, w, 0);

  std::optional<PreconditionerUpdate> precond;
  std::size_t k = 0;
  while (acct.passes() < cfg.max_passes) {
    monitor.resume_clock();
    const Batch batch = sampler.draw(rng, cfg.grad_batch);
    const Vector g = oracle.minibatch_gradient(w, batch);
    acct.charge_gradient(cfg.grad_batch);
    if (k % u == 0) {
      precond = update_preconditioner(oracle, cfg, w, sampler, rng, acct);
      ++result.preconditioner_updates;
    }
    w = preconditioned_step(precond->nys, rho, precond->eta, w, g);
    ++k;
    monitor.pause_clock();
    monitor.check(w, k);
    monitor.maybe_record(acct.passes(), w, k);
  }
  monitor.finish(acct.passes(), w, k);

  result.w = std::move(w);
  result.records = monitor.take();
  result.iterations = k;
  if (precond) {
    result.learning_rate = precond->eta;
    result.preconditioner = std::move(precond->nys);
  }
  return result;
}

RunResult sketchysgd_theoretical_run(const ProblemOracle& oracle,
                                     OptimizerConfig config,
                                     const RunOptions& options) {
  config.mode = SketchyMode::theoretical;
  const OptimizerConfig cfg = resolve_config(std::move(config), oracle);
  const std::size_t n = oracle.num_samples();
  const std::size_t p = oracle.dim();
  const double rho = *cfg.rho;
  const std::size_t u = *cfg.update_freq;
  const std::size_t m = *cfg.stage_length;

  RunResult result;
  result.accountant = PassAccountant(n);
  PassAccountant& acct = result.accountant;
  Rng rng(cfg.seed);
  BatchSampler sampler(n);
  Vector w = initial_point(oracle, options);
  RunMonitor monitor(oracle, options);
  monitor.record(0.0, w, 0);

  std::optional<PreconditionerUpdate> precond;
  std::size_t t = 0;  // global iteration counter across stages
  while (acct.passes() < cfg.max_passes) {
    Vector sum(p, 0.0);
    std::size_t taken = 0;
    for (std::size_t k = 0; k < m && acct.passes() < cfg.max_passes; ++k) {
      monitor.resume_clock();
      const Batch batch = sampler.draw(rng, cfg.grad_batch);
      const Vector g = oracle.minibatch_gradient(w, batch);
      acct.charge_gradient(cfg.grad_batch);
      if (t % u == 0) {
        precond = update_preconditioner(oracle, cfg, w, sampler, rng, acct);
        ++result.preconditioner_updates;
      }
      w = preconditioned_step(precond->nys, rho, precond->eta, w, g);
      axpy(1.0, w, sum);
      ++taken;
      ++t;
      monitor.pause_clock();
      monitor.check(w, t);
    }
    // Next stage starts from the average of this stage's iterates.
    scale(1.0 / static_cast<double>(taken), sum);
    w = std::move(sum);
    ++result.epochs;
    if (options.on_stage_end) options.on_stage_end(result.epochs, w);
    monitor.maybe_record(acct.passes(), w, t);
  }
  monitor.finish(acct.passes(), w, t);

  result.w = std::move(w);
  result.records = monitor.take();
  result.iterations = t;
  if (precond) {
    result.learning_rate = precond->eta;
    result.preconditioner = std::move(precond->nys);
  }
  return result;
}

RunResult sgd_run(const ProblemOracle& oracle, BaselineConfig config,
                  const RunOptions& options) {
  const BaselineConfig cfg =
      resolve_baseline_config(std::move(config), oracle, false);
  const std::size_t n = oracle.num_samples();
  const double eta = *cfg.lr;

  RunResult result;
  result.accountant = PassAccountant(n);
  PassAccountant& acct = result.accountant;
  Rng rng(cfg.seed);
  BatchSampler sampler(n);
  Vector w = initial_point(oracle, options);
  RunMonitor monitor(oracle, options);
  monitor.record(0.0, w, 0);

  std::size_t k = 0;
  while (acct.passes() < cfg.max_passes) {
    monitor.resume_clock();
    const Batch batch = sampler.draw(rng, cfg.grad_batch);
    const Vector g = oracle.minibatch_gradient(w, batch);
    acct.charge_gradient(cfg.grad_batch);
    axpy(-eta, g, w);
    ++k;
    monitor.pause_clock();
    monitor.check(w, k);
    monitor.maybe_record(acct.passes(), w, k);
  }
  monitor.finish(acct.passes(), w, k);

  result.w = std::move(w);
  result.records = monitor.take();
  result.iterations = k;
  result.learning_rate = eta;
  return result;
}

RunResult svrg_run(const ProblemOracle& oracle, BaselineConfig config,
                   const RunOptions& options) {
  const BaselineConfig cfg =
      resolve_baseline_config(std::move(config), oracle, true);
  const std::size_t n = oracle.num_samples();
  const double eta = *cfg.lr;
  const std::size_t m = *cfg.epoch_length;

  RunResult result;
  result.accountant = PassAccountant(n);
  PassAccountant& acct = result.accountant;
  Rng rng(cfg.seed);
  BatchSampler sampler(n);
  Vector w = initial_point(oracle, options);
  RunMonitor monitor(oracle, options);
  monitor.record(0.0, w, 0);

  std::size_t k = 0;
  while (acct.passes() < cfg.max_passes) {
    monitor.resume_clock();
    const Vector snapshot = w;
    const Vector mu = oracle.full_gradient(snapshot);
    acct.charge_snapshot(n);
    ++result.epochs;
    for (std::size_t inner = 0; inner < m && acct.passes() < cfg.max_passes;
         ++inner) {
      const Batch batch = sampler.draw(rng, cfg.grad_batch);
      Vector v = oracle.minibatch_gradient(w, batch);
      const Vector g_snap = oracle.minibatch_gradient(snapshot, batch);
      acct.charge_gradient(cfg.grad_batch);
      axpy(-1.0, g_snap, v);
      axpy(1.0, mu, v);
      axpy(-eta, v, w);
      ++k;
      monitor.pause_clock();
      monitor.check(w, k);
      monitor.maybe_record(acct.passes(), w, k);
      monitor.resume_clock();
    }
    monitor.pause_clock();
  }
  monitor.finish(acct.passes(), w, k);

  result.w = std::move(w);
  result.records = monitor.take();
  result.iterations = k;
  result.learning_rate = eta;
  return result;
}

}  // namespace sketchy
