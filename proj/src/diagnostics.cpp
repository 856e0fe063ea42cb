#include "sketchy/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "sketchy/errors.hpp"
#include "sketchy/format.hpp"

namespace sketchy {
namespace {

void check_dim_cap(std::size_t p, const DiagnosticCaps& caps) {
  if (p > caps.max_dim)
    throw CapExceededError("diagnostics: dimension " + std::to_string(p) +
                           " exceeds cap max_dim=" + std::to_string(caps.max_dim));
}

void check_sample_cap(std::size_t n, const DiagnosticCaps& caps) {
  if (n > caps.max_samples)
    throw CapExceededError("diagnostics: sample count " + std::to_string(n) +
                           " exceeds cap max_samples=" +
                           std::to_string(caps.max_samples));
}

DenseMatrix weighted_gram(const ProblemOracle& oracle, std::span<const double> w,
                          std::span<const std::size_t> rows) {
  const std::size_t p = oracle.dim();
  const DataMatrix& a = oracle.data();
  DenseMatrix h(p, p);
  Vector row(p);
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (std::size_t i : rows) {
    const double d = oracle.sample_curvature(i, a.row_dot(i, w)) * inv;
    if (d == 0.0) continue;
    std::fill(row.begin(), row.end(), 0.0);
    a.for_each_in_row(i, [&](std::size_t j, double v) { row[j] = v; });
    a.for_each_in_row(i, [&](std::size_t j, double v) {
      if (v != 0.0) axpy(d * v, row, h.col(j));
    });
  }
  return h;
}

// P^{-1/2} as a dense matrix, one column at a time.
DenseMatrix dense_inv_sqrt(const NystromApprox& nys, double rho) {
  const std::size_t p = nys.dim();
  DenseMatrix out(p, p);
  Vector e(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    e[j] = 1.0;
    const Vector c = precond_inv_sqrt(nys, rho, e);
    std::copy(c.begin(), c.end(), out.col(j).begin());
    e[j] = 0.0;
  }
  return out;
}

DenseMatrix congruence(const DenseMatrix& s, const DenseMatrix& h) {
  return matmul(s, matmul(h, s));
}

Vector descending(const Vector& ascending) {
  return Vector(ascending.rbegin(), ascending.rend());
}

double spectral_norm_symmetric(const DenseMatrix& e) {
  const SymmetricEigen eig = eigh_small(e);
  return std::max(std::abs(eig.values.front()), std::abs(eig.values.back()));
}

}  // namespace

DenseMatrix dense_hessian(const ProblemOracle& oracle, std::span<const double> w,
                          bool include_l2, const DiagnosticCaps& caps) {
  check_dim_cap(oracle.dim(), caps);
  if (w.size() != oracle.dim()) throw DimensionError("dense_hessian: dimension");
  const Batch all = full_batch(oracle.num_samples());
  DenseMatrix h = weighted_gram(oracle, w, all.indices);
  if (include_l2)
    for (std::size_t j = 0; j < h.rows(); ++j) h(j, j) += oracle.l2();
  return h;
}

DenseMatrix dense_hessian(const ProblemOracle& oracle, std::span<const double> w,
                          const Batch& batch, const DiagnosticCaps& caps) {
  check_dim_cap(oracle.dim(), caps);
  if (w.size() != oracle.dim()) throw DimensionError("dense_hessian: dimension");
  if (batch.size() == 0) throw DimensionError("dense_hessian: empty batch");
  return weighted_gram(oracle, w, batch.indices);
}

double rank_one_update_max_eigenvalue(std::span<const double> delta,
                                      std::span<const double> c) {
  if (delta.size() != c.size() || delta.empty())
    throw DimensionError("secular equation: length mismatch");
  const double dmax = *std::max_element(delta.begin(), delta.end());
  const double cc = dot(c, c);
  if (cc == 0.0) return dmax;
  double lo = dmax;
  double hi = dmax + cc;
  // f(x) = 1 - sum c_j^2 / (x - delta_j) is increasing on (dmax, inf) and
  // f(hi) >= 0; the top eigenvalue is its root (or dmax itself).
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (!(mid > lo && mid < hi)) break;
    double s = 0.0;
    for (std::size_t j = 0; j < delta.size(); ++j) s += c[j] * c[j] / (mid - delta[j]);
    if (1.0 - s < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

RhoDissimilarity rho_dissimilarity(const ProblemOracle& oracle,
                                   std::span<const double> w, double rho,
                                   const DiagnosticCaps& caps) {
  if (!(rho >= 0.0)) throw ConfigError("rho_dissimilarity: rho must be >= 0");
  const std::size_t n = oracle.num_samples();
  const std::size_t p = oracle.dim();
  check_dim_cap(p, caps);
  check_sample_cap(n, caps);
  if (n == 0) throw DimensionError("rho_dissimilarity: empty dataset");

  const double l2 = oracle.l2();
  const DenseMatrix h_data = dense_hessian(oracle, w, false, caps);
  const SymmetricEigen h_eig = eigh_small(h_data, caps.max_dim);

  // Eigenbasis of K = H + l2 I + rho I.
  const double shift = l2 + rho;
  Vector k(p);
  double kmax = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    k[j] = h_eig.values[j] + shift;
    kmax = std::max(kmax, k[j]);
  }
  const double floor = 1e-14 * kmax;
  for (double& v : k) v = std::max(v, floor);

  Vector delta(p);
  for (std::size_t j = 0; j < p; ++j) delta[j] = shift / k[j];

  RhoDissimilarity out;
  const DataMatrix& a = oracle.data();
  Vector row(p), c(p);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = oracle.sample_curvature(i, a.row_dot(i, w));
    std::fill(row.begin(), row.end(), 0.0);
    a.for_each_in_row(i, [&](std::size_t j, double v) { row[j] = v; });
    const double sq = dot(row, row);
    out.max_sample_curvature = std::max(out.max_sample_curvature, d * sq + l2);
    const double sd = std::sqrt(d);
    for (std::size_t j = 0; j < p; ++j)
      c[j] = sd * dot(h_eig.vectors.col(j), row) / std::sqrt(k[j]);
    out.tau = std::max(out.tau, rank_one_update_max_eigenvalue(delta, c));
  }
  out.mu = std::max(0.0, h_eig.values.front()) + l2;
  out.bound = std::min(static_cast<double>(n),
                       (out.max_sample_curvature + rho) / (out.mu + rho));
  return out;
}

double effective_dimension(std::span<const double> eigenvalues, double beta) {
  if (!(beta > 0.0)) throw ConfigError("effective_dimension: beta must be positive");
  double s = 0.0;
  for (double lam : eigenvalues) s += lam / (lam + beta);
  return s;
}

SpectrumReport sandwich_check(const ProblemOracle& oracle,
                              std::span<const double> w,
                              const NystromApprox& nys, double rho,
                              const DiagnosticCaps& caps) {
  const std::size_t p = oracle.dim();
  check_dim_cap(p, caps);
  if (nys.dim() != p) throw DimensionError("sandwich_check: dimension mismatch");
  if (!(rho > 0.0)) throw ConfigError("sandwich_check: rho must be positive");

  SpectrumReport rep;
  rep.rho = rho;
  rep.rank = nys.rank();
  rep.num_samples = oracle.num_samples();
  rep.hessian_batch =
      nys.hessian_batch.size() == 0 ? oracle.num_samples() : nys.hessian_batch.size();

  const DenseMatrix h = dense_hessian(oracle, w, false, caps);
  DenseMatrix h_rho = h;
  for (std::size_t j = 0; j < p; ++j) h_rho(j, j) += rho;

  const DenseMatrix s = dense_inv_sqrt(nys, rho);
  const SymmetricEigen sandwich = eigh_small(congruence(s, h_rho), caps.max_dim);
  rep.sandwich_min = sandwich.values.front();
  rep.sandwich_max = sandwich.values.back();

  const SymmetricEigen raw = eigh_small(h, caps.max_dim);
  const SymmetricEigen pre = eigh_small(congruence(s, h), caps.max_dim);
  rep.raw_eigenvalues = descending(raw.values);
  rep.precond_eigenvalues = descending(pre.values);
  rep.raw_kappa = raw.values.back() / raw.values.front();
  rep.precond_kappa = pre.values.back() / pre.values.front();
  rep.mu = raw.values.front();

  // E = H_S - H_hat with H_S the minibatch Hessian at the sketch's anchor.
  std::span<const double> anchor = nys.anchor.empty() ? w : std::span<const double>(nys.anchor);
  DenseMatrix h_s = nys.hessian_batch.size() == 0
                        ? dense_hessian(oracle, anchor, false, caps)
                        : dense_hessian(oracle, anchor, nys.hessian_batch, caps);
  const DenseMatrix h_hat = approx_dense(nys);
  for (std::size_t k = 0; k < h_s.data().size(); ++k) h_s.data()[k] -= h_hat.data()[k];
  rep.error_norm = spectral_norm_symmetric(h_s);

  rep.upper_certificate = 1.0 + rep.error_norm / rho;
  rep.kappa_certificate = (1.0 + rho / rep.mu) * rep.upper_certificate;
  const bool same_point =
      std::equal(anchor.begin(), anchor.end(), w.begin(), w.end());
  rep.certified = rep.hessian_batch == oracle.num_samples() && same_point;
  return rep;
}

SpectrumReport conditioning_report(const ProblemOracle& oracle,
                                   std::span<const double> w,
                                   const OptimizerConfig& config,
                                   const ConditioningOptions& options,
                                   const DiagnosticCaps& caps) {
  const std::size_t p = oracle.dim();
  check_dim_cap(p, caps);
  const OptimizerConfig cfg = resolve_config(config, oracle);
  const double rho = *cfg.rho;

  Rng rng(cfg.seed);
  const Batch batch = sample_batch(rng, oracle.num_samples(), *cfg.hessian_batch);
  const NystromApprox nys = sketch_hessian(oracle, w, batch, cfg.rank, rng);

  SpectrumReport rep = sandwich_check(oracle, w, nys, rho, caps);
  rep.label = options.label;

  // Spectra of the full Hessian of f (l2 included), as plotted before and
  // after preconditioning.
  const DenseMatrix h = dense_hessian(oracle, w, true, caps);
  const DenseMatrix s = dense_inv_sqrt(nys, rho);
  const SymmetricEigen raw = eigh_small(h, caps.max_dim);
  const SymmetricEigen pre = eigh_small(congruence(s, h), caps.max_dim);
  rep.raw_eigenvalues = descending(raw.values);
  rep.precond_eigenvalues = descending(pre.values);
  rep.raw_kappa = raw.values.back() / raw.values.front();
  rep.precond_kappa = pre.values.back() / pre.values.front();

  const std::vector<double> betas =
      options.betas.empty() ? std::vector<double>{rho} : options.betas;
  for (double beta : betas)
    rep.effective_dimensions.emplace_back(
        beta, effective_dimension(rep.raw_eigenvalues, beta));

  if (options.compute_tau && oracle.num_samples() <= caps.max_samples)
    rep.tau = rho_dissimilarity(oracle, w, rho, caps).tau;

  rep.top_m = std::min(options.top_m, p);
  return rep;
}

void write_spectrum_csv(std::ostream& out, const SpectrumReport& report) {
  out << "index,eig_raw,eig_precond\n";
  std::size_t m =
      std::min(report.raw_eigenvalues.size(), report.precond_eigenvalues.size());
  if (report.top_m > 0) m = std::min(m, report.top_m);
  const double raw_top = m > 0 ? report.raw_eigenvalues.front() : 1.0;
  const double pre_top = m > 0 ? report.precond_eigenvalues.front() : 1.0;
  for (std::size_t i = 0; i < m; ++i) {
    out << i + 1 << ',' << format_double(report.raw_eigenvalues[i] / raw_top) << ','
        << format_double(report.precond_eigenvalues[i] / pre_top) << '\n';
  }
}

nlohmann::json spectrum_summary(const SpectrumReport& report) {
  nlohmann::json j;
  j["label"] = report.label;
  j["rho"] = report.rho;
  j["rank"] = report.rank;
  j["hessian_batch"] = report.hessian_batch;
  j["num_samples"] = report.num_samples;
  auto side = [](const Vector& eig, double kappa) {
    nlohmann::json s;
    s["lambda_max"] = eig.empty() ? 0.0 : eig.front();
    s["lambda_min"] = eig.empty() ? 0.0 : eig.back();
    s["kappa"] = kappa;
    return s;
  };
  j["raw"] = side(report.raw_eigenvalues, report.raw_kappa);
  j["preconditioned"] = side(report.precond_eigenvalues, report.precond_kappa);
  j["sandwich"] = {{"lambda_min", report.sandwich_min},
                   {"lambda_max", report.sandwich_max},
                   {"error_norm", report.error_norm},
                   {"mu", report.mu},
                   {"upper_certificate", report.upper_certificate},
                   {"kappa_certificate", report.kappa_certificate},
                   {"certified", report.certified}};
  j["tau_rho"] = report.tau ? nlohmann::json(*report.tau) : nlohmann::json(nullptr);
  nlohmann::json deff = nlohmann::json::array();
  for (const auto& [beta, value] : report.effective_dimensions)
    deff.push_back({{"beta", beta}, {"d_eff", value}});
  j["effective_dimension"] = deff;
  return j;
}

}  // namespace sketchy
