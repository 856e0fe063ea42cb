#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "sketchy/linalg.hpp"
#include "sketchy/oracles.hpp"

namespace sketchy {

/// A data matrix plus a human-readable record of where it came from.
struct RawDataset {
  DataMatrix matrix;
  std::string provenance;
};

/// Reads "<label> <idx>:<val> ..." lines with 1-based, strictly increasing
/// indices. Blank lines and text after '#' are ignored. The feature count is
/// the largest index seen unless num_features is given.
RawDataset parse_libsvm(std::istream& in,
                        std::optional<std::size_t> num_features = {});
/// Reads a file; paths ending in ".gz" are decompressed on the fly.
RawDataset load_libsvm(const std::string& path,
                       std::optional<std::size_t> num_features = {});
/// Writes libsvm text with shortest round-trip number formatting.
void write_libsvm(std::ostream& out, const DataMatrix& data);

RawDataset normalize_rows(const RawDataset& ds);

/// Per-feature mean and population standard deviation of a training split.
struct FeatureStats {
  Vector mean;
  Vector stddev;
};
FeatureStats feature_stats(const DataMatrix& train);
/// (x - mean) / stddev per feature; zero-variance features are only centered.
/// Output is dense.
RawDataset standardize(const RawDataset& ds, const FeatureStats& stats);

enum class FeatureKind { rff_cosine, relu };

/// Frozen random feature map. rff-cosine: sqrt(2/D) cos(W^T a + b) with
/// W ~ N(0, 1/bandwidth^2) and b ~ U[0, 2 pi); relu: max(0, W^T a) with
/// W ~ N(0, 1/p).
class FeatureMap {
 public:
  FeatureMap(FeatureKind kind, std::size_t input_dim, std::size_t output_dim,
             double bandwidth, std::uint64_t seed);

  FeatureKind kind() const noexcept { return kind_; }
  std::size_t input_dim() const noexcept { return weights_.rows(); }
  std::size_t output_dim() const noexcept { return weights_.cols(); }
  double bandwidth() const noexcept { return bandwidth_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const DenseMatrix& weights() const noexcept { return weights_; }
  const Vector& offsets() const noexcept { return offsets_; }

  Vector apply(std::span<const double> x) const;

 private:
  FeatureKind kind_;
  double bandwidth_;
  std::uint64_t seed_;
  DenseMatrix weights_;  // input_dim x output_dim
  Vector offsets_;       // rff only
};

FeatureKind feature_kind_from_string(const std::string& name);
std::string to_string(FeatureKind kind);

RawDataset random_features(const RawDataset& ds, const FeatureMap& map);

struct Split {
  RawDataset train;
  RawDataset test;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
};
/// Uniformly random partition with round(fraction * n) training rows
/// (clamped so both sides are nonempty).
Split split(const RawDataset& ds, double fraction, std::uint64_t seed);

struct ConditionBound {
  double value = 0.0;
  double sigma_first = 0.0;
  double sigma_r = 0.0;
  std::size_t rank_used = 0;
  // Set when rank(A) < r and the smallest positive singular value was used.
  bool upper_biased = false;
};
/// (s_1^2/n + l2) / (s_r^2/n + l2) from the eigenvalues of the smaller Gram
/// matrix of A. Requires min(n, p) <= cap.
ConditionBound condition_lower_bound(const DataMatrix& data, double l2,
                                     std::size_t r = 100,
                                     std::size_t cap = kDefaultEighCap);

/// FNV-1a 64-bit checksum of a file's bytes, as 16 hex digits.
std::string file_checksum(const std::string& path);

}  // namespace sketchy
