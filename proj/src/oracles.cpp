#include "sketchy/oracles.hpp"

#include <cmath>
#include <numeric>
#include <utility>

#include "sketchy/errors.hpp"

namespace sketchy {

std::string to_string(Task task) {
  return task == Task::ridge ? "ridge" : "logistic";
}

Task task_from_string(const std::string& name) {
  if (name == "ridge") return Task::ridge;
  if (name == "logistic") return Task::logistic;
  throw ConfigError("unknown task '" + name + "' (expected ridge or logistic)");
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------- DataMatrix

DataMatrix DataMatrix::dense(std::size_t n, std::size_t p,
                             std::vector<double> row_major, Vector labels) {
  if (row_major.size() != n * p)
    throw DimensionError("dense data: expected n*p values");
  DataMatrix m;
  m.n_ = n;
  m.p_ = p;
  m.sparse_ = false;
  m.values_ = std::move(row_major);
  m.labels_ = std::move(labels);
  m.validate();
  return m;
}

DataMatrix DataMatrix::sparse(std::size_t n, std::size_t p,
                              std::vector<std::size_t> row_ptr,
                              std::vector<std::uint32_t> col_idx,
                              std::vector<double> values, Vector labels) {
  DataMatrix m;
  m.n_ = n;
  m.p_ = p;
  m.sparse_ = true;
  m.row_ptr_ = std::move(row_ptr);
  m.col_idx_ = std::move(col_idx);
  m.values_ = std::move(values);
  m.labels_ = std::move(labels);
  m.validate();
  return m;
}

void DataMatrix::validate() const {
  if (labels_.size() != n_) throw DimensionError("data: one label per row");
  for (double y : labels_)
    if (!std::isfinite(y)) throw Error("data: non-finite label");
  for (double v : values_)
    if (!std::isfinite(v)) throw Error("data: non-finite value");
  if (!sparse_) return;
  if (row_ptr_.size() != n_ + 1 || row_ptr_.front() != 0 ||
      row_ptr_.back() != values_.size() || col_idx_.size() != values_.size())
    throw DimensionError("sparse data: inconsistent CSR arrays");
  for (std::size_t i = 0; i < n_; ++i) {
    if (row_ptr_[i] > row_ptr_[i + 1])
      throw DimensionError("sparse data: row pointers decrease");
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
      if (col_idx_[k] >= p_)
        throw DimensionError("sparse data: column index out of range");
      if (k > row_ptr_[i] && col_idx_[k] <= col_idx_[k - 1])
        throw DimensionError("sparse data: column indices not increasing");
    }
  }
}

std::size_t DataMatrix::nonzeros() const noexcept {
  if (sparse_) return values_.size();
  std::size_t nnz = 0;
  for (double v : values_) nnz += v != 0.0;
  return nnz;
}

double DataMatrix::row_dot(std::size_t i, std::span<const double> v) const {
  double s = 0.0;
  if (sparse_) {
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
      s += values_[k] * v[col_idx_[k]];
  } else {
    const double* row = values_.data() + i * p_;
    for (std::size_t j = 0; j < p_; ++j) s += row[j] * v[j];
  }
  return s;
}

void DataMatrix::add_row(std::size_t i, double alpha,
                         std::span<double> out) const {
  if (alpha == 0.0) return;
  if (sparse_) {
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
      out[col_idx_[k]] += alpha * values_[k];
  } else {
    const double* row = values_.data() + i * p_;
    for (std::size_t j = 0; j < p_; ++j) out[j] += alpha * row[j];
  }
}

double DataMatrix::row_squared_norm(std::size_t i) const {
  double s = 0.0;
  for_each_in_row(i, [&](std::size_t, double v) { s += v * v; });
  return s;
}

DataMatrix DataMatrix::to_dense() const {
  if (!sparse_) return *this;
  std::vector<double> dense(n_ * p_, 0.0);
  for (std::size_t i = 0; i < n_; ++i)
    for_each_in_row(i, [&](std::size_t j, double v) { dense[i * p_ + j] = v; });
  return DataMatrix::dense(n_, p_, std::move(dense), labels_);
}

DataMatrix DataMatrix::to_sparse() const {
  if (sparse_) return *this;
  std::vector<std::size_t> ptr{0};
  std::vector<std::uint32_t> idx;
  std::vector<double> vals;
  for (std::size_t i = 0; i < n_; ++i) {
    for_each_in_row(i, [&](std::size_t j, double v) {
      if (v != 0.0) {
        idx.push_back(static_cast<std::uint32_t>(j));
        vals.push_back(v);
      }
    });
    ptr.push_back(vals.size());
  }
  return DataMatrix::sparse(n_, p_, std::move(ptr), std::move(idx),
                            std::move(vals), labels_);
}

DataMatrix DataMatrix::select_rows(std::span<const std::size_t> rows) const {
  Vector labels;
  labels.reserve(rows.size());
  for (std::size_t i : rows) {
    if (i >= n_) throw DimensionError("select_rows: index out of range");
    labels.push_back(labels_[i]);
  }
  if (!sparse_) {
    std::vector<double> dense;
    dense.reserve(rows.size() * p_);
    for (std::size_t i : rows)
      dense.insert(dense.end(), values_.begin() + i * p_,
                   values_.begin() + (i + 1) * p_);
    return DataMatrix::dense(rows.size(), p_, std::move(dense),
                             std::move(labels));
  }
  std::vector<std::size_t> ptr{0};
  std::vector<std::uint32_t> idx;
  std::vector<double> vals;
  for (std::size_t i : rows) {
    idx.insert(idx.end(), col_idx_.begin() + row_ptr_[i],
               col_idx_.begin() + row_ptr_[i + 1]);
    vals.insert(vals.end(), values_.begin() + row_ptr_[i],
                values_.begin() + row_ptr_[i + 1]);
    ptr.push_back(vals.size());
  }
  return DataMatrix::sparse(rows.size(), p_, std::move(ptr), std::move(idx),
                            std::move(vals), std::move(labels));
}

DataMatrix DataMatrix::with_labels(Vector labels) const {
  DataMatrix m = *this;
  m.labels_ = std::move(labels);
  m.validate();
  return m;
}

DenseMatrix DataMatrix::as_dense_matrix() const {
  DenseMatrix a(n_, p_);
  for (std::size_t i = 0; i < n_; ++i)
    for_each_in_row(i, [&](std::size_t j, double v) { a(i, j) = v; });
  return a;
}

// ------------------------------------------------------------------ batches

BatchSampler::BatchSampler(std::size_t n) : pool_(n) {
  std::iota(pool_.begin(), pool_.end(), std::size_t{0});
}

Batch BatchSampler::draw(Rng& rng, std::size_t b) {
  const std::size_t n = pool_.size();
  if (b == 0 || b > n)
    throw DimensionError("sample_batch: need 1 <= b <= n (b=" +
                         std::to_string(b) + ", n=" + std::to_string(n) + ")");
  Batch batch;
  batch.indices.reserve(b);
  for (std::size_t k = 0; k < b; ++k) {
    const std::size_t j = k + static_cast<std::size_t>(rng.uniform_index(n - k));
    std::swap(pool_[k], pool_[j]);
    batch.indices.push_back(pool_[k]);
  }
  return batch;
}

Batch sample_batch(Rng& rng, std::size_t n, std::size_t b) {
  BatchSampler sampler(n);
  return sampler.draw(rng, b);
}

Batch full_batch(std::size_t n) {
  Batch b;
  b.indices.resize(n);
  std::iota(b.indices.begin(), b.indices.end(), std::size_t{0});
  return b;
}

// ------------------------------------------------------------ ProblemOracle

ProblemOracle::ProblemOracle(DataMatrix data, Task task, double l2)
    : data_(std::move(data)), task_(task), l2_(l2) {
  if (!(l2_ >= 0.0) || !std::isfinite(l2_))
    throw ConfigError("l2 regularization must be finite and >= 0");
  if (task_ == Task::logistic) {
    for (double y : data_.labels())
      if (y != 1.0 && y != -1.0)
        throw Error("logistic labels must be -1 or +1");
  }
}

void ProblemOracle::check_dim(std::span<const double> w, const char* who) const {
  if (w.size() != dim())
    throw DimensionError(std::string(who) + ": expected dimension " +
                         std::to_string(dim()) + ", got " +
                         std::to_string(w.size()));
}

namespace {

void check_batch(const Batch& batch, std::size_t n, const char* who) {
  if (batch.size() == 0) throw DimensionError(std::string(who) + ": empty batch");
  for (std::size_t i : batch.indices)
    if (i >= n) throw DimensionError(std::string(who) + ": batch index out of range");
}

}  // namespace

double ProblemOracle::sample_loss(std::size_t i, double margin) const {
  const double y = data_.labels()[i];
  if (task_ == Task::ridge) {
    const double r = margin - y;
    return 0.5 * r * r;
  }
  return softplus(-y * margin);
}

double ProblemOracle::sample_slope(std::size_t i, double margin) const {
  const double y = data_.labels()[i];
  if (task_ == Task::ridge) return margin - y;
  return -y * sigmoid(-y * margin);
}

double ProblemOracle::sample_curvature(std::size_t i, double margin) const {
  if (task_ == Task::ridge) return 1.0;
  const double t = data_.labels()[i] * margin;
  return sigmoid(t) * sigmoid(-t);
}

double ProblemOracle::data_loss(std::span<const double> w) const {
  check_dim(w, "data_loss");
  const std::size_t n = num_samples();
  if (n == 0) throw DimensionError("data_loss: empty dataset");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += sample_loss(i, data_.row_dot(i, w));
  return s / static_cast<double>(n);
}

double ProblemOracle::full_loss(std::span<const double> w) const {
  const double reg = l2_ == 0.0 ? 0.0 : 0.5 * l2_ * dot(w, w);
  return data_loss(w) + reg;
}

double ProblemOracle::batch_loss(std::span<const double> w,
                                 const Batch& batch) const {
  check_dim(w, "batch_loss");
  check_batch(batch, num_samples(), "batch_loss");
  double s = 0.0;
  for (std::size_t i : batch.indices) s += sample_loss(i, data_.row_dot(i, w));
  return s / static_cast<double>(batch.size()) + 0.5 * l2_ * dot(w, w);
}

Vector ProblemOracle::minibatch_gradient(std::span<const double> w,
                                         const Batch& batch) const {
  check_dim(w, "minibatch_gradient");
  check_batch(batch, num_samples(), "minibatch_gradient");
  Vector g(dim(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i : batch.indices) {
    const double slope = sample_slope(i, data_.row_dot(i, w));
    data_.add_row(i, slope * inv_b, g);
  }
  if (l2_ != 0.0) axpy(l2_, w, g);
  return g;
}

Vector ProblemOracle::full_gradient(std::span<const double> w) const {
  return minibatch_gradient(w, full_batch(num_samples()));
}

Vector ProblemOracle::minibatch_hvp(std::span<const double> w,
                                    const Batch& batch,
                                    std::span<const double> v) const {
  check_dim(w, "minibatch_hvp");
  check_dim(v, "minibatch_hvp");
  check_batch(batch, num_samples(), "minibatch_hvp");
  Vector out(dim(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i : batch.indices) {
    const double d = task_ == Task::ridge
                         ? 1.0
                         : sample_curvature(i, data_.row_dot(i, w));
    data_.add_row(i, d * data_.row_dot(i, v) * inv_b, out);
  }
  return out;
}

DenseMatrix ProblemOracle::minibatch_hvp_block(std::span<const double> w,
                                               const Batch& batch,
                                               const DenseMatrix& vs) const {
  check_dim(w, "minibatch_hvp_block");
  if (vs.rows() != dim())
    throw DimensionError("minibatch_hvp_block: block has wrong row count");
  check_batch(batch, num_samples(), "minibatch_hvp_block");
  const std::size_t r = vs.cols();
  DenseMatrix out(dim(), r);
  Vector proj(r);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i : batch.indices) {
    const double d = task_ == Task::ridge
                         ? 1.0
                         : sample_curvature(i, data_.row_dot(i, w));
    std::fill(proj.begin(), proj.end(), 0.0);
    data_.for_each_in_row(i, [&](std::size_t j, double a) {
      for (std::size_t k = 0; k < r; ++k) proj[k] += a * vs(j, k);
    });
    for (std::size_t k = 0; k < r; ++k)
      data_.add_row(i, d * proj[k] * inv_b, out.col(k));
  }
  return out;
}

Vector ProblemOracle::curvature_weights(std::span<const double> w) const {
  check_dim(w, "curvature_weights");
  Vector d(num_samples());
  for (std::size_t i = 0; i < d.size(); ++i)
    d[i] = sample_curvature(i, data_.row_dot(i, w));
  return d;
}

double ProblemOracle::smoothness_upper_bound() const {
  const std::size_t n = num_samples();
  if (n == 0) return l2_;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += data_.row_squared_norm(i);
  s /= static_cast<double>(n);
  if (task_ == Task::logistic) s *= 0.25;
  return s + l2_;
}

double ProblemOracle::accuracy(std::span<const double> w) const {
  check_dim(w, "accuracy");
  if (task_ != Task::logistic)
    throw Error("accuracy is only defined for logistic tasks");
  const std::size_t n = num_samples();
  if (n == 0) throw DimensionError("accuracy: empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pred = data_.row_dot(i, w) >= 0.0 ? 1.0 : -1.0;
    correct += pred == data_.labels()[i];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace sketchy
