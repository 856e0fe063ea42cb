#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sketchy/linalg.hpp"
#include "sketchy/rng.hpp"

namespace sketchy {

enum class Task { ridge, logistic };

std::string to_string(Task task);
Task task_from_string(const std::string& name);

/// Sample matrix A (n x p) with one label per row. Storage is either dense
/// row-major or compressed sparse rows with strictly increasing column
/// indices inside each row.
class DataMatrix {
 public:
  DataMatrix() = default;

  static DataMatrix dense(std::size_t n, std::size_t p,
                          std::vector<double> row_major, Vector labels);
  static DataMatrix sparse(std::size_t n, std::size_t p,
                           std::vector<std::size_t> row_ptr,
                           std::vector<std::uint32_t> col_idx,
                           std::vector<double> values, Vector labels);

  std::size_t rows() const noexcept { return n_; }
  std::size_t cols() const noexcept { return p_; }
  bool is_sparse() const noexcept { return sparse_; }
  std::span<const double> labels() const noexcept { return labels_; }
  std::size_t nonzeros() const noexcept;

  double row_dot(std::size_t i, std::span<const double> v) const;
  void add_row(std::size_t i, double alpha, std::span<double> out) const;
  double row_squared_norm(std::size_t i) const;

  // Calls f(column, value) for each stored entry of row i.
  template <typename F>
  void for_each_in_row(std::size_t i, F&& f) const {
    if (sparse_) {
      for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
        f(static_cast<std::size_t>(col_idx_[k]), values_[k]);
    } else {
      const double* row = values_.data() + i * p_;
      for (std::size_t j = 0; j < p_; ++j) f(j, row[j]);
    }
  }

  DataMatrix to_dense() const;
  DataMatrix to_sparse() const;
  DataMatrix select_rows(std::span<const std::size_t> rows) const;
  DataMatrix with_labels(Vector labels) const;

  // Dense copy of A as a DenseMatrix (n x p); diagnostic scale only.
  DenseMatrix as_dense_matrix() const;

  std::span<const std::size_t> row_ptr() const noexcept { return row_ptr_; }
  std::span<const std::uint32_t> col_idx() const noexcept { return col_idx_; }
  std::span<const double> values() const noexcept { return values_; }

 private:
  void validate() const;

  std::size_t n_ = 0;
  std::size_t p_ = 0;
  bool sparse_ = false;
  std::vector<std::size_t> row_ptr_;
  std::vector<std::uint32_t> col_idx_;
  std::vector<double> values_;  // dense row-major, or CSR values
  Vector labels_;
};

/// Row indices drawn uniformly without replacement.
struct Batch {
  std::vector<std::size_t> indices;
  std::size_t size() const noexcept { return indices.size(); }
};

/// Partial Fisher-Yates over a persistent index pool: O(b) per draw.
class BatchSampler {
 public:
  explicit BatchSampler(std::size_t n);
  Batch draw(Rng& rng, std::size_t b);
  std::size_t population() const noexcept { return pool_.size(); }

 private:
  std::vector<std::size_t> pool_;
};

Batch sample_batch(Rng& rng, std::size_t n, std::size_t b);
Batch full_batch(std::size_t n);

/// Finite-sum objective f(w) = (1/n) sum_i f_i(w) + (l2/2) |w|^2 for ridge
/// (f_i = (a_i^T w - b_i)^2 / 2) or logistic regression
/// (f_i = log(1 + exp(-y_i a_i^T w)), y_i in {-1, +1}).
class ProblemOracle {
 public:
  ProblemOracle(DataMatrix data, Task task, double l2);

  const DataMatrix& data() const noexcept { return data_; }
  Task task() const noexcept { return task_; }
  double l2() const noexcept { return l2_; }
  std::size_t num_samples() const noexcept { return data_.rows(); }
  std::size_t dim() const noexcept { return data_.cols(); }

  // f_i(w) given the margin a_i^T w.
  double sample_loss(std::size_t i, double margin) const;
  // d f_i / d(a_i^T w).
  double sample_slope(std::size_t i, double margin) const;
  // Second derivative d_i with respect to the margin.
  double sample_curvature(std::size_t i, double margin) const;

  double full_loss(std::span<const double> w) const;
  // Mean of f_i over all rows, without the l2 term.
  double data_loss(std::span<const double> w) const;
  // (1/|B|) sum_{i in B} f_i(w) + (l2/2)|w|^2.
  double batch_loss(std::span<const double> w, const Batch& batch) const;

  Vector minibatch_gradient(std::span<const double> w, const Batch& batch) const;
  Vector full_gradient(std::span<const double> w) const;

  /// (1/|S|) sum_{i in S} d_i(w) a_i a_i^T v. The l2 term is not included.
  Vector minibatch_hvp(std::span<const double> w, const Batch& batch,
                       std::span<const double> v) const;
  /// Same operator applied to every column of vs in one pass over the rows.
  DenseMatrix minibatch_hvp_block(std::span<const double> w, const Batch& batch,
                                  const DenseMatrix& vs) const;

  /// Curvature weights d_i(w) for every row.
  Vector curvature_weights(std::span<const double> w) const;

  /// Upper bound on the smoothness constant of f, including l2.
  double smoothness_upper_bound() const;

  /// Fraction of rows with sign(a_i^T w) == y_i, where a zero margin counts
  /// as +1. Logistic tasks only.
  double accuracy(std::span<const double> w) const;

 private:
  void check_dim(std::span<const double> w, const char* who) const;

  DataMatrix data_;
  Task task_;
  double l2_;
};

// Numerically stable log(1 + exp(x)) and logistic sigmoid.
double softplus(double x);
double sigmoid(double x);

}  // namespace sketchy
