#include "sketchy/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "sketchy/errors.hpp"

namespace sketchy {
namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void require_square(const DenseMatrix& a, const char* who) {
  if (a.rows() != a.cols()) {
    throw DimensionError(std::string(who) + ": matrix must be square");
  }
}

// Orthogonalizes column j of v against columns [0, j) twice (classical
// Gram-Schmidt with reorthogonalization) and returns the remaining norm.
double reorthogonalize(DenseMatrix& v, std::size_t j) {
  auto cj = v.col(j);
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t k = 0; k < j; ++k) {
      const double h = dot(v.col(k), cj);
      axpy(-h, v.col(k), cj);
    }
  }
  return norm2(cj);
}

}  // namespace

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::diagonal(std::span<const double> d) {
  DenseMatrix m(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
  return m;
}

DenseMatrix DenseMatrix::transposed() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t j = 0; j < cols_; ++j)
    for (std::size_t i = 0; i < rows_; ++i) t(j, i) = (*this)(i, j);
  return t;
}

double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

double norm2(std::span<const double> x) {
  // Scaled accumulation so huge or tiny entries do not overflow/underflow.
  double scale_ = 0.0;
  double ssq = 1.0;
  for (double v : x) {
    if (v == 0.0) continue;
    const double a = std::abs(v);
    if (scale_ < a) {
      ssq = 1.0 + ssq * (scale_ / a) * (scale_ / a);
      scale_ = a;
    } else {
      ssq += (a / scale_) * (a / scale_);
    }
  }
  return scale_ * std::sqrt(ssq);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw DimensionError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(double alpha, std::span<double> x) {
  for (double& v : x) v *= alpha;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimension");
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t j = 0; j < b.cols(); ++j) {
    auto cj = c.col(j);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double bkj = b(k, j);
      if (bkj != 0.0) axpy(bkj, a.col(k), cj);
    }
  }
  return c;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) throw DimensionError("matmul_tn: row mismatch");
  DenseMatrix c(a.cols(), b.cols());
  for (std::size_t j = 0; j < b.cols(); ++j)
    for (std::size_t i = 0; i < a.cols(); ++i) c(i, j) = dot(a.col(i), b.col(j));
  return c;
}

Vector matvec(const DenseMatrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw DimensionError("matvec: length mismatch");
  Vector y(a.rows(), 0.0);
  for (std::size_t j = 0; j < a.cols(); ++j)
    if (x[j] != 0.0) axpy(x[j], a.col(j), y);
  return y;
}

Vector matvec_t(const DenseMatrix& a, std::span<const double> x) {
  if (a.rows() != x.size()) throw DimensionError("matvec_t: length mismatch");
  Vector y(a.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) y[j] = dot(a.col(j), x);
  return y;
}

double frobenius_norm(const DenseMatrix& a) { return norm2(a.data()); }

double max_abs(const DenseMatrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

DenseMatrix gaussian_matrix(Rng& rng, std::size_t p, std::size_t r) {
  DenseMatrix m(p, r);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

DenseMatrix qr_econ(const DenseMatrix& m) {
  const std::size_t p = m.rows();
  const std::size_t r = m.cols();
  if (r > p) throw DimensionError("qr_econ: more columns than rows");
  DenseMatrix a = m;
  std::vector<Vector> reflectors;
  reflectors.reserve(r);
  const double tol = static_cast<double>(std::max<std::size_t>(p, 1)) * kEps *
                     frobenius_norm(m);

  for (std::size_t k = 0; k < r; ++k) {
    auto ck = a.col(k).subspan(k);
    const double xnorm = norm2(ck);
    if (!(xnorm > tol)) throw NumericalError("degenerate sketch matrix");
    const double alpha = ck[0] >= 0.0 ? -xnorm : xnorm;
    Vector v(ck.begin(), ck.end());
    v[0] -= alpha;
    const double vnorm = norm2(v);
    scale(1.0 / vnorm, v);
    for (std::size_t j = k; j < r; ++j) {
      auto cj = a.col(j).subspan(k);
      axpy(-2.0 * dot(v, cj), v, cj);
    }
    reflectors.push_back(std::move(v));
  }

  // Accumulate Q = H_0 H_1 ... H_{r-1} applied to the first r unit vectors.
  DenseMatrix q(p, r);
  for (std::size_t j = 0; j < r; ++j) q(j, j) = 1.0;
  for (std::size_t kk = r; kk-- > 0;) {
    const Vector& v = reflectors[kk];
    for (std::size_t j = 0; j < r; ++j) {
      auto cj = q.col(j).subspan(kk);
      axpy(-2.0 * dot(v, cj), v, cj);
    }
  }
  return q;
}

DenseMatrix cholesky(const DenseMatrix& a) {
  require_square(a, "cholesky");
  const std::size_t n = a.rows();
  const double amax = max_abs(a);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < j; ++i)
      if (std::abs(a(i, j) - a(j, i)) > 1e-10 * amax)
        throw NumericalError("cholesky: matrix is not symmetric");

  DenseMatrix c(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i <= j; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < i; ++k) s -= c(k, i) * c(k, j);
      if (i == j) {
        if (!(s > 0.0)) throw NumericalError("indefinite matrix");
        c(j, j) = std::sqrt(s);
      } else {
        c(i, j) = s / c(i, i);
      }
    }
  }
  return c;
}

DenseMatrix solve_upper_right(const DenseMatrix& y, const DenseMatrix& c) {
  require_square(c, "solve_upper_right");
  if (y.cols() != c.rows())
    throw DimensionError("solve_upper_right: shape mismatch");
  DenseMatrix x = y;
  for (std::size_t j = 0; j < c.cols(); ++j) {
    auto xj = x.col(j);
    for (std::size_t k = 0; k < j; ++k) axpy(-c(k, j), x.col(k), xj);
    scale(1.0 / c(j, j), xj);
  }
  return x;
}

ThinSvd thin_svd(const DenseMatrix& b) {
  const std::size_t p = b.rows();
  const std::size_t r = b.cols();
  if (r > p) throw DimensionError("thin_svd: more columns than rows");

  const SymmetricEigen gram = eigh_small(matmul_tn(b, b));
  ThinSvd out{DenseMatrix(p, r), Vector(r)};
  for (std::size_t k = 0; k < r; ++k) {
    out.singular_values[k] = std::sqrt(std::max(0.0, gram.values[r - 1 - k]));
  }
  const double cutoff =
      r == 0 ? 0.0 : std::sqrt(kEps) * out.singular_values[0];

  std::size_t next_unit = 0;
  for (std::size_t k = 0; k < r; ++k) {
    auto vk = out.left.col(k);
    const double sigma = out.singular_values[k];
    bool filled = false;
    if (sigma > cutoff && sigma > 0.0) {
      const Vector bw = matvec(b, gram.vectors.col(r - 1 - k));
      std::copy(bw.begin(), bw.end(), vk.begin());
      const double remaining = reorthogonalize(out.left, k);
      if (remaining > 0.1 * sigma) {
        scale(1.0 / remaining, vk);
        filled = true;
      }
    }
    // Below the cutoff the direction is numerically undetermined; complete
    // the basis with unit vectors projected off the existing columns.
    while (!filled) {
      if (next_unit >= p) throw NumericalError("thin_svd: basis completion");
      std::fill(vk.begin(), vk.end(), 0.0);
      vk[next_unit++] = 1.0;
      const double remaining = reorthogonalize(out.left, k);
      if (remaining > 0.5) {
        scale(1.0 / remaining, vk);
        filled = true;
      }
    }
  }
  return out;
}

SymmetricEigen eigh_small(const DenseMatrix& a_in, std::size_t cap) {
  require_square(a_in, "eigh_small");
  const std::size_t n = a_in.rows();
  if (n > cap) {
    throw CapExceededError("diagnostic matrix too large: " + std::to_string(n) +
                           " > cap " + std::to_string(cap));
  }
  DenseMatrix a = a_in;
  // Symmetrize so roundoff asymmetry in the input does not bias the result.
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < j; ++i) {
      const double s = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = s;
      a(j, i) = s;
    }
  DenseMatrix v = DenseMatrix::identity(n);
  const double total = frobenius_norm(a);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < j; ++i) off += a(i, j) * a(i, j);
    if (std::sqrt(2.0 * off) <= kEps * total) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;

        auto cp = a.col(p);
        auto cq = a.col(q);
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = cp[k];
          const double akq = cq[k];
          cp[k] = c * akp - s * akq;
          cq[k] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;

        auto vp = v.col(p);
        auto vq = v.col(q);
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vp[k];
          const double vkq = vq[k];
          vp[k] = c * vkp - s * vkq;
          vq[k] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });
  SymmetricEigen out{Vector(n), DenseMatrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    auto src = v.col(order[k]);
    std::copy(src.begin(), src.end(), out.vectors.col(k).begin());
  }
  return out;
}

}  // namespace sketchy
