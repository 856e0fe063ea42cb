#pragma once

// Dense, capped spectral diagnostics: rho-dissimilarity, effective dimension,
// Loewner-order certificates for the Nystrom preconditioner, and
// before/after-preconditioning spectra. These are verification instruments
// for desk-scale problems, not production paths.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sketchy/linalg.hpp"
#include "sketchy/nystrom.hpp"
#include "sketchy/optimizer.hpp"
#include "sketchy/oracles.hpp"

namespace sketchy {

struct DiagnosticCaps {
  std::size_t max_dim = 2048;
  std::size_t max_samples = 20000;
};

/// (1/n) A^T D(w) A, plus l2 * I when include_l2 is set.
DenseMatrix dense_hessian(const ProblemOracle& oracle, std::span<const double> w,
                          bool include_l2, const DiagnosticCaps& caps = {});
/// (1/|S|) sum_{i in S} d_i(w) a_i a_i^T, without l2.
DenseMatrix dense_hessian(const ProblemOracle& oracle, std::span<const double> w,
                          const Batch& batch, const DiagnosticCaps& caps = {});

struct RhoDissimilarity {
  double tau = 0.0;
  // max_i lambda_1 of the per-sample Hessian (l2 included).
  double max_sample_curvature = 0.0;
  // lambda_min of the data Hessian plus l2.
  double mu = 0.0;
  // min{n, (M + rho) / (mu + rho)}
  double bound = 0.0;
};

/// max_i lambda_1((H + rho I)^{-1/2} (grad^2 f_i + rho I) (H + rho I)^{-1/2}),
/// where f_i carries the l2 term so that H is the Hessian of f. Each sample's
/// top eigenvalue is solved exactly from the rank-one-plus-diagonal secular
/// equation in the eigenbasis of H + rho I.
RhoDissimilarity rho_dissimilarity(const ProblemOracle& oracle,
                                   std::span<const double> w, double rho,
                                   const DiagnosticCaps& caps = {});

/// sum_i lambda_i / (lambda_i + beta).
double effective_dimension(std::span<const double> eigenvalues, double beta);

struct SpectrumReport {
  std::string label;
  double rho = 0.0;
  std::size_t rank = 0;
  std::size_t hessian_batch = 0;
  std::size_t num_samples = 0;

  // Descending eigenvalues of H and of P^{-1/2} H P^{-1/2}. The CSV keeps
  // only the first top_m (0 = all).
  std::size_t top_m = 0;
  Vector raw_eigenvalues;
  Vector precond_eigenvalues;
  double raw_kappa = 0.0;
  double precond_kappa = 0.0;

  // Loewner certificates for P^{-1/2} (H + rho I) P^{-1/2}.
  double sandwich_min = 0.0;
  double sandwich_max = 0.0;
  double error_norm = 0.0;  // |H_S - H_hat|_2
  double mu = 0.0;
  double upper_certificate = 0.0;  // 1 + |E| / rho
  double kappa_certificate = 0.0;  // (1 + rho/mu)(1 + |E|/rho)
  bool certified = false;          // H_S is the full Hessian (b_h = n)

  std::optional<double> tau;
  std::vector<std::pair<double, double>> effective_dimensions;  // (beta, d_eff)
};

/// Eigenvalues of P^{-1/2} H^rho P^{-1/2} with H the data Hessian at w
/// (l2 excluded, matching the sketch) and P = H_hat + rho I, plus the
/// measured |E| = |H_S - H_hat| and the resulting certificates.
SpectrumReport sandwich_check(const ProblemOracle& oracle,
                              std::span<const double> w,
                              const NystromApprox& nys, double rho,
                              const DiagnosticCaps& caps = {});

struct ConditioningOptions {
  std::size_t top_m = 500;
  std::vector<double> betas;  // empty: use rho
  bool compute_tau = true;
  std::string label;
};

/// Builds a preconditioner per the (resolved) config at w and reports the
/// spectrum of the full Hessian (l2 included) before and after
/// preconditioning, along with the sandwich certificates.
SpectrumReport conditioning_report(const ProblemOracle& oracle,
                                   std::span<const double> w,
                                   const OptimizerConfig& config,
                                   const ConditioningOptions& options = {},
                                   const DiagnosticCaps& caps = {});

/// CSV with header "index,eig_raw,eig_precond"; both columns normalized by
/// their largest eigenvalue.
void write_spectrum_csv(std::ostream& out, const SpectrumReport& report);
nlohmann::json spectrum_summary(const SpectrumReport& report);

/// Largest eigenvalue of diag(delta) + c c^T, by bisection on the secular
/// equation.
double rank_one_update_max_eigenvalue(std::span<const double> delta,
                                      std::span<const double> c);

}  // namespace sketchy
