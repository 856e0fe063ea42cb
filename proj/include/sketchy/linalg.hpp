#pragma once

// Small dense kernels for the skinny p x r matrices that appear in sketching,
// plus a Jacobi eigensolver for desk-scale diagnostics. Everything is double
// precision and deterministic.

#include <cstddef>
#include <span>
#include <vector>

#include "sketchy/rng.hpp"

namespace sketchy {

using Vector = std::vector<double>;

/// Dense matrix stored column-major: entry (i, j) lives at data[i + j * rows].
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix diagonal(std::span<const double> d);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept {
    return data_[i + j * rows_];
  }
  double operator()(std::size_t i, std::size_t j) const noexcept {
    return data_[i + j * rows_];
  }

  std::span<double> col(std::size_t j) noexcept {
    return {data_.data() + j * rows_, rows_};
  }
  std::span<const double> col(std::size_t j) const noexcept {
    return {data_.data() + j * rows_, rows_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  DenseMatrix transposed() const;

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Vector helpers.
double dot(std::span<const double> x, std::span<const double> y);
double norm2(std::span<const double> x);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void scale(double alpha, std::span<double> x);

// Matrix products. matmul_tn computes A^T B.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);
Vector matvec(const DenseMatrix& a, std::span<const double> x);
Vector matvec_t(const DenseMatrix& a, std::span<const double> x);

double frobenius_norm(const DenseMatrix& a);
double max_abs(const DenseMatrix& a);

/// p x r matrix of i.i.d. standard normals, filled column by column.
DenseMatrix gaussian_matrix(Rng& rng, std::size_t p, std::size_t r);

/// Householder QR; returns the p x r factor with orthonormal columns.
/// Throws NumericalError("degenerate sketch matrix") when a column is
/// numerically in the span of the previous ones.
DenseMatrix qr_econ(const DenseMatrix& m);

/// Upper-triangular C with C^T C = A. Throws NumericalError("indefinite
/// matrix") on a non-positive pivot.
DenseMatrix cholesky(const DenseMatrix& a);

/// Solves X C = Y for X, with C upper triangular (X = Y C^{-1}).
DenseMatrix solve_upper_right(const DenseMatrix& y, const DenseMatrix& c);

struct ThinSvd {
  DenseMatrix left;       // p x r, orthonormal columns
  Vector singular_values; // length r, descending, nonnegative
};

/// Left singular vectors and singular values of a p x r matrix (r <= p),
/// computed from the eigendecomposition of the r x r Gram matrix.
ThinSvd thin_svd(const DenseMatrix& b);

struct SymmetricEigen {
  Vector values;        // ascending
  DenseMatrix vectors;  // column i pairs with values[i]
};

inline constexpr std::size_t kDefaultEighCap = 4096;

/// Cyclic Jacobi eigensolver for symmetric matrices up to `cap` rows.
SymmetricEigen eigh_small(const DenseMatrix& a,
                          std::size_t cap = kDefaultEighCap);

/// Returns the symmetric matrix V f(Lambda) V^T for an eigendecomposition.
template <typename F>
DenseMatrix spectral_function(const SymmetricEigen& eig, F&& f) {
  const std::size_t n = eig.vectors.rows();
  DenseMatrix out(n, n);
  for (std::size_t k = 0; k < eig.values.size(); ++k) {
    const double fk = f(eig.values[k]);
    auto v = eig.vectors.col(k);
    for (std::size_t j = 0; j < n; ++j) {
      const double s = fk * v[j];
      if (s == 0.0) continue;
      auto oc = out.col(j);
      for (std::size_t i = 0; i < n; ++i) oc[i] += v[i] * s;
    }
  }
  return out;
}

}  // namespace sketchy
