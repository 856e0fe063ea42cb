#include "sketchy/nystrom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sketchy/errors.hpp"

namespace sketchy {
namespace {

void check_rho(double rho, const char* who) {
  if (!(rho > 0.0) || !std::isfinite(rho))
    throw ConfigError(std::string(who) + ": rho must be positive");
}

void check_vec(const NystromApprox& nys, std::span<const double> v,
               const char* who) {
  if (v.size() != nys.dim())
    throw DimensionError(std::string(who) + ": vector length mismatch");
}

// Computes V^T v, and the residual v - V V^T v.
Vector project(const NystromApprox& nys, std::span<const double> v,
               Vector& residual) {
  Vector coeffs = matvec_t(nys.basis, v);
  residual.assign(v.begin(), v.end());
  for (std::size_t k = 0; k < coeffs.size(); ++k)
    axpy(-coeffs[k], nys.basis.col(k), residual);
  return coeffs;
}

// V diag(f(lambda)) V^T v + g * (v - V V^T v)
template <typename F>
Vector spectral_apply(const NystromApprox& nys, std::span<const double> v,
                      F&& f, double g) {
  Vector out;
  Vector coeffs = project(nys, v, out);
  scale(g, out);
  for (std::size_t k = 0; k < coeffs.size(); ++k)
    axpy(coeffs[k] * f(nys.eigenvalues[k]), nys.basis.col(k), out);
  return out;
}

}  // namespace

NystromApprox NystromApprox::zero(std::size_t p) {
  NystromApprox nys;
  nys.basis = DenseMatrix(p, 0);
  return nys;
}

double ulp(double x) {
  const double a = std::abs(x);
  return std::nextafter(a, std::numeric_limits<double>::infinity()) - a;
}

NystromApprox nystrom_from_sketch(const DenseMatrix& sketch,
                                  const DenseMatrix& test_matrix) {
  const std::size_t p = sketch.rows();
  const std::size_t r = sketch.cols();
  if (test_matrix.rows() != p || test_matrix.cols() != r)
    throw DimensionError("nystrom: sketch and test matrix shapes differ");

  const double sketch_norm = r == 0 ? 0.0 : thin_svd(sketch).singular_values[0];
  if (sketch_norm == 0.0) {
    NystromApprox nys;
    nys.basis = test_matrix;
    nys.eigenvalues.assign(r, 0.0);
    return nys;
  }
  const double shift = std::sqrt(static_cast<double>(p)) * ulp(sketch_norm);

  DenseMatrix shifted = sketch;
  for (std::size_t k = 0; k < r; ++k)
    axpy(shift, test_matrix.col(k), shifted.col(k));

  DenseMatrix core = matmul_tn(test_matrix, shifted);
  for (std::size_t j = 0; j < r; ++j)
    for (std::size_t i = 0; i < j; ++i) {
      const double s = 0.5 * (core(i, j) + core(j, i));
      core(i, j) = s;
      core(j, i) = s;
    }

  DenseMatrix chol;
  try {
    chol = cholesky(core);
  } catch (const NumericalError&) {
    throw NumericalError("sketch not PSD");
  }
  const ThinSvd svd = thin_svd(solve_upper_right(shifted, chol));

  NystromApprox nys;
  nys.basis = svd.left;
  nys.shift = shift;
  nys.eigenvalues.resize(r);
  for (std::size_t k = 0; k < r; ++k) {
    const double s = svd.singular_values[k];
    nys.eigenvalues[k] = std::max(0.0, s * s - shift);
  }
  return nys;
}

NystromApprox rand_nys_approx(const BlockOperator& hvp, std::size_t p,
                              std::size_t r, Rng& rng) {
  if (r < 1 || r > p)
    throw ConfigError("nystrom: rank must satisfy 1 <= r <= p (r=" +
                      std::to_string(r) + ", p=" + std::to_string(p) + ")");
  DenseMatrix q;
  try {
    q = qr_econ(gaussian_matrix(rng, p, r));
  } catch (const NumericalError&) {
    q = qr_econ(gaussian_matrix(rng, p, r));
  }
  const DenseMatrix y = hvp(q);
  if (y.rows() != p || y.cols() != r)
    throw DimensionError("nystrom: operator returned a block of the wrong shape");
  return nystrom_from_sketch(y, q);
}

NystromApprox sketch_hessian(const ProblemOracle& oracle,
                             std::span<const double> w, const Batch& batch,
                             std::size_t r, Rng& rng) {
  NystromApprox nys = rand_nys_approx(
      [&](const DenseMatrix& q) {
        return oracle.minibatch_hvp_block(w, batch, q);
      },
      oracle.dim(), r, rng);
  nys.anchor.assign(w.begin(), w.end());
  nys.hessian_batch = batch;
  return nys;
}

Vector precond_solve(const NystromApprox& nys, double rho,
                     std::span<const double> v) {
  check_rho(rho, "precond_solve");
  check_vec(nys, v, "precond_solve");
  return spectral_apply(
      nys, v, [rho](double lam) { return 1.0 / (lam + rho); }, 1.0 / rho);
}

Vector precond_inv_sqrt(const NystromApprox& nys, double rho,
                        std::span<const double> v) {
  check_rho(rho, "precond_inv_sqrt");
  check_vec(nys, v, "precond_inv_sqrt");
  return spectral_apply(
      nys, v, [rho](double lam) { return 1.0 / std::sqrt(lam + rho); },
      1.0 / std::sqrt(rho));
}

Vector precond_apply(const NystromApprox& nys, double rho,
                     std::span<const double> v) {
  check_vec(nys, v, "precond_apply");
  return spectral_apply(
      nys, v, [rho](double lam) { return lam + rho; }, rho);
}

Vector approx_apply(const NystromApprox& nys, std::span<const double> v) {
  check_vec(nys, v, "approx_apply");
  return spectral_apply(nys, v, [](double lam) { return lam; }, 0.0);
}

DenseMatrix approx_dense(const NystromApprox& nys) {
  const std::size_t p = nys.dim();
  DenseMatrix h(p, p);
  for (std::size_t k = 0; k < nys.rank(); ++k) {
    auto v = nys.basis.col(k);
    for (std::size_t j = 0; j < p; ++j) {
      const double s = nys.eigenvalues[k] * v[j];
      axpy(s, v, h.col(j));
    }
  }
  return h;
}

}  // namespace sketchy
