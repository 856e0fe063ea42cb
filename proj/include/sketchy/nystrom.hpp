#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "sketchy/linalg.hpp"
#include "sketchy/oracles.hpp"
#include "sketchy/rng.hpp"

namespace sketchy {

/// Rank-r eigenpair factorization H_hat = V diag(lambda) V^T of a subsampled
/// Hessian. V has orthonormal columns; lambda is nonnegative and descending.
struct NystromApprox {
  DenseMatrix basis;
  Vector eigenvalues;
  double shift = 0.0;  // stability shift used during construction
  Vector anchor;       // iterate the Hessian was evaluated at (may be empty)
  Batch hessian_batch;

  std::size_t rank() const noexcept { return eigenvalues.size(); }
  std::size_t dim() const noexcept { return basis.rows(); }

  /// Rank-0 approximation in dimension p: the preconditioner reduces to rho*I.
  static NystromApprox zero(std::size_t p);
};

/// Applies the PSD operator to each column of its argument.
using BlockOperator = std::function<DenseMatrix(const DenseMatrix&)>;
/// Applies the PSD operator to one vector.
using VectorOperator = std::function<Vector(std::span<const double>)>;

/// Shifted Nystrom factorization from a sketch Y = H Q with orthonormal Q.
NystromApprox nystrom_from_sketch(const DenseMatrix& sketch,
                                  const DenseMatrix& test_matrix);

/// Randomized Nystrom approximation: Gaussian test matrix, orthonormalized,
/// one blocked operator application, then nystrom_from_sketch.
NystromApprox rand_nys_approx(const BlockOperator& hvp, std::size_t p,
                              std::size_t r, Rng& rng);

/// Builds the approximation of H_S(w) for a minibatch S of an oracle.
NystromApprox sketch_hessian(const ProblemOracle& oracle,
                             std::span<const double> w, const Batch& batch,
                             std::size_t r, Rng& rng);

/// (H_hat + rho I)^{-1} v in O(pr).
Vector precond_solve(const NystromApprox& nys, double rho,
                     std::span<const double> v);

/// (H_hat + rho I)^{-1/2} v in O(pr).
Vector precond_inv_sqrt(const NystromApprox& nys, double rho,
                        std::span<const double> v);

/// (H_hat + rho I) v.
Vector precond_apply(const NystromApprox& nys, double rho,
                     std::span<const double> v);

/// H_hat v.
Vector approx_apply(const NystromApprox& nys, std::span<const double> v);

/// Dense H_hat; diagnostic scale only.
DenseMatrix approx_dense(const NystromApprox& nys);

/// Distance from |x| to the next larger double.
double ulp(double x);

}  // namespace sketchy
