#include "sketchy/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

#include "sketchy/errors.hpp"
#include "sketchy/format.hpp"
#include "sketchy/rng.hpp"

namespace sketchy {
namespace {

bool parse_real(std::string_view tok, double& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  if (tok.empty()) return false;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size() &&
         std::isfinite(out);
}

bool parse_index(std::string_view tok, std::uint64_t& out) {
  if (tok.empty()) return false;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

std::string read_gzip(const std::string& path) {
  gzFile file = gzopen(path.c_str(), "rb");
  if (file == nullptr) throw Error("cannot open '" + path + "'");
  std::string out;
  char buf[1 << 16];
  int got = 0;
  while ((got = gzread(file, buf, sizeof(buf))) > 0)
    out.append(buf, static_cast<std::size_t>(got));
  const bool failed = got < 0;
  gzclose(file);
  if (failed) throw Error("error decompressing '" + path + "'");
  return out;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

RawDataset parse_libsvm(std::istream& in,
                        std::optional<std::size_t> num_features) {
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::uint32_t> col_idx;
  std::vector<double> values;
  Vector labels;
  std::size_t max_index = 0;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (const auto hash = view.find('#'); hash != std::string_view::npos)
      view = view.substr(0, hash);

    std::size_t pos = 0;
    auto next_token = [&]() -> std::string_view {
      while (pos < view.size() && std::isspace(static_cast<unsigned char>(view[pos])))
        ++pos;
      const std::size_t start = pos;
      while (pos < view.size() && !std::isspace(static_cast<unsigned char>(view[pos])))
        ++pos;
      return view.substr(start, pos - start);
    };

    std::string_view tok = next_token();
    if (tok.empty()) continue;
    double label = 0.0;
    if (!parse_real(tok, label))
      throw ParseError("malformed label '" + std::string(tok) + "'", line_no);

    std::uint64_t prev = 0;
    while (!(tok = next_token()).empty()) {
      const auto colon = tok.find(':');
      if (colon == std::string_view::npos)
        throw ParseError("malformed token '" + std::string(tok) + "'", line_no);
      const std::string_view idx_tok = tok.substr(0, colon);
      if (idx_tok == "qid") continue;
      std::uint64_t idx = 0;
      double val = 0.0;
      if (!parse_index(idx_tok, idx) || !parse_real(tok.substr(colon + 1), val))
        throw ParseError("malformed token '" + std::string(tok) + "'", line_no);
      if (idx == 0) throw ParseError("feature index 0 (indices are 1-based)", line_no);
      if (idx <= prev)
        throw ParseError("feature indices must be strictly increasing", line_no);
      if (idx > std::numeric_limits<std::uint32_t>::max())
        throw ParseError("feature index too large", line_no);
      if (num_features && idx > *num_features)
        throw ParseError("feature index " + std::to_string(idx) +
                             " exceeds declared feature count " +
                             std::to_string(*num_features),
                         line_no);
      prev = idx;
      col_idx.push_back(static_cast<std::uint32_t>(idx - 1));
      values.push_back(val);
      max_index = std::max<std::size_t>(max_index, idx);
    }
    labels.push_back(label);
    row_ptr.push_back(values.size());
  }
  if (in.bad()) throw Error("read error while parsing libsvm data");

  const std::size_t n = labels.size();
  const std::size_t p = num_features.value_or(max_index);
  RawDataset ds;
  ds.matrix = DataMatrix::sparse(n, p, std::move(row_ptr), std::move(col_idx),
                                 std::move(values), std::move(labels));
  ds.provenance = "libsvm";
  return ds;
}

RawDataset load_libsvm(const std::string& path,
                       std::optional<std::size_t> num_features) {
  RawDataset ds;
  if (ends_with(path, ".gz")) {
    std::istringstream in(read_gzip(path));
    ds = parse_libsvm(in, num_features);
  } else {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    ds = parse_libsvm(in, num_features);
  }
  ds.provenance = path;
  return ds;
}

void write_libsvm(std::ostream& out, const DataMatrix& data) {
  for (std::size_t i = 0; i < data.rows(); ++i) {
    out << format_double(data.labels()[i]);
    data.for_each_in_row(i, [&](std::size_t j, double v) {
      if (v != 0.0 || data.is_sparse())
        out << ' ' << (j + 1) << ':' << format_double(v);
    });
    out << '\n';
  }
}

RawDataset normalize_rows(const RawDataset& ds) {
  const DataMatrix& a = ds.matrix;
  Vector inv_norms(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double nrm = std::sqrt(a.row_squared_norm(i));
    inv_norms[i] = nrm > 0.0 ? 1.0 / nrm : 1.0;
  }
  RawDataset out;
  out.provenance = ds.provenance + " | normalize_rows";
  if (a.is_sparse()) {
    std::vector<double> vals(a.values().begin(), a.values().end());
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t k = a.row_ptr()[i]; k < a.row_ptr()[i + 1]; ++k)
        vals[k] *= inv_norms[i];
    out.matrix = DataMatrix::sparse(
        a.rows(), a.cols(),
        std::vector<std::size_t>(a.row_ptr().begin(), a.row_ptr().end()),
        std::vector<std::uint32_t>(a.col_idx().begin(), a.col_idx().end()),
        std::move(vals), Vector(a.labels().begin(), a.labels().end()));
  } else {
    std::vector<double> vals(a.values().begin(), a.values().end());
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) vals[i * a.cols() + j] *= inv_norms[i];
    out.matrix = DataMatrix::dense(a.rows(), a.cols(), std::move(vals),
                                   Vector(a.labels().begin(), a.labels().end()));
  }
  return out;
}

FeatureStats feature_stats(const DataMatrix& train) {
  const std::size_t n = train.rows();
  const std::size_t p = train.cols();
  if (n == 0) throw DimensionError("feature_stats: empty training split");
  FeatureStats st{Vector(p, 0.0), Vector(p, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    train.for_each_in_row(i, [&](std::size_t j, double v) { st.mean[j] += v; });
  for (double& m : st.mean) m /= static_cast<double>(n);
  // Two-pass variance; implicit zeros of sparse rows contribute mean^2.
  Vector nonzeros(p, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    train.for_each_in_row(i, [&](std::size_t j, double v) {
      const double d = v - st.mean[j];
      st.stddev[j] += d * d;
      nonzeros[j] += 1.0;
    });
  for (std::size_t j = 0; j < p; ++j) {
    const double implicit = static_cast<double>(n) - nonzeros[j];
    const double var =
        (st.stddev[j] + implicit * st.mean[j] * st.mean[j]) / static_cast<double>(n);
    st.stddev[j] = std::sqrt(var);
  }
  return st;
}

RawDataset standardize(const RawDataset& ds, const FeatureStats& stats) {
  const DataMatrix& a = ds.matrix;
  const std::size_t n = a.rows();
  const std::size_t p = a.cols();
  if (stats.mean.size() != p || stats.stddev.size() != p)
    throw DimensionError("standardize: statistics have the wrong dimension");
  std::vector<double> dense(n * p, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    a.for_each_in_row(i, [&](std::size_t j, double v) { dense[i * p + j] = v; });
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      double& x = dense[i * p + j];
      x -= stats.mean[j];
      if (stats.stddev[j] > 0.0) x /= stats.stddev[j];
    }
  RawDataset out;
  out.matrix = DataMatrix::dense(n, p, std::move(dense),
                                 Vector(a.labels().begin(), a.labels().end()));
  out.provenance = ds.provenance + " | standardize";
  return out;
}

FeatureKind feature_kind_from_string(const std::string& name) {
  if (name == "rff" || name == "rff-cosine") return FeatureKind::rff_cosine;
  if (name == "relu") return FeatureKind::relu;
  throw ConfigError("unknown random feature kind '" + name +
                    "' (expected rff or relu)");
}

std::string to_string(FeatureKind kind) {
  return kind == FeatureKind::rff_cosine ? "rff" : "relu";
}

FeatureMap::FeatureMap(FeatureKind kind, std::size_t input_dim,
                       std::size_t output_dim, double bandwidth,
                       std::uint64_t seed)
    : kind_(kind), bandwidth_(bandwidth), seed_(seed) {
  if (output_dim < 1) throw ConfigError("random features: dimension must be >= 1");
  if (kind == FeatureKind::rff_cosine && !(bandwidth > 0.0))
    throw ConfigError("random features: bandwidth must be positive");
  if (input_dim < 1) throw ConfigError("random features: input has no features");
  Rng rng(seed);
  weights_ = gaussian_matrix(rng, input_dim, output_dim);
  const double w_scale = kind == FeatureKind::rff_cosine
                             ? 1.0 / bandwidth
                             : 1.0 / std::sqrt(static_cast<double>(input_dim));
  scale(w_scale, weights_.data());
  if (kind == FeatureKind::rff_cosine) {
    offsets_.resize(output_dim);
    for (double& b : offsets_) b = 2.0 * std::numbers::pi * rng.uniform();
  }
}

Vector FeatureMap::apply(std::span<const double> x) const {
  if (x.size() != input_dim())
    throw DimensionError("random features: input dimension mismatch");
  Vector z = matvec_t(weights_, x);
  if (kind_ == FeatureKind::rff_cosine) {
    const double amp = std::sqrt(2.0 / static_cast<double>(output_dim()));
    for (std::size_t k = 0; k < z.size(); ++k) z[k] = amp * std::cos(z[k] + offsets_[k]);
  } else {
    for (double& v : z) v = std::max(0.0, v);
  }
  return z;
}

RawDataset random_features(const RawDataset& ds, const FeatureMap& map) {
  const DataMatrix& a = ds.matrix;
  if (a.cols() != map.input_dim())
    throw DimensionError("random features: map expects " +
                         std::to_string(map.input_dim()) + " features, data has " +
                         std::to_string(a.cols()));
  const std::size_t n = a.rows();
  const std::size_t d = map.output_dim();
  std::vector<double> out(n * d);
  Vector x(a.cols());
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(x.begin(), x.end(), 0.0);
    a.for_each_in_row(i, [&](std::size_t j, double v) { x[j] = v; });
    const Vector z = map.apply(x);
    std::copy(z.begin(), z.end(), out.begin() + i * d);
  }
  RawDataset res;
  res.matrix = DataMatrix::dense(n, d, std::move(out),
                                 Vector(a.labels().begin(), a.labels().end()));
  res.provenance = ds.provenance + " | random_features(" + to_string(map.kind()) +
                   ", D=" + std::to_string(d) + ", seed=" +
                   std::to_string(map.seed()) + ")";
  return res;
}

Split split(const RawDataset& ds, double fraction, std::uint64_t seed) {
  const std::size_t n = ds.matrix.rows();
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ConfigError("split: fraction must lie strictly between 0 and 1");
  if (n < 2) throw ConfigError("split: need at least 2 rows");
  std::size_t n_train =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  Rng rng(seed);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n; i-- > 1;)
    std::swap(perm[i], perm[rng.uniform_index(i + 1)]);

  Split out;
  out.train_rows.assign(perm.begin(), perm.begin() + n_train);
  out.test_rows.assign(perm.begin() + n_train, perm.end());
  std::sort(out.train_rows.begin(), out.train_rows.end());
  std::sort(out.test_rows.begin(), out.test_rows.end());
  out.train.matrix = ds.matrix.select_rows(out.train_rows);
  out.test.matrix = ds.matrix.select_rows(out.test_rows);
  const std::string tag = " | split(" + format_double(fraction) + ", seed=" +
                          std::to_string(seed) + ")";
  out.train.provenance = ds.provenance + tag + "[train]";
  out.test.provenance = ds.provenance + tag + "[test]";
  return out;
}

ConditionBound condition_lower_bound(const DataMatrix& data, double l2,
                                     std::size_t r, std::size_t cap) {
  const std::size_t n = data.rows();
  const std::size_t p = data.cols();
  const std::size_t m = std::min(n, p);
  if (r < 1 || r > m)
    throw ConfigError("condition_lower_bound: need 1 <= r <= min(n, p)");
  if (m > cap)
    throw CapExceededError("condition_lower_bound: Gram size " +
                           std::to_string(m) + " exceeds cap " +
                           std::to_string(cap));

  DenseMatrix gram(m, m);
  if (p <= n) {
    Vector row(p);
    for (std::size_t i = 0; i < n; ++i) {
      std::fill(row.begin(), row.end(), 0.0);
      data.for_each_in_row(i, [&](std::size_t j, double v) { row[j] = v; });
      data.for_each_in_row(i, [&](std::size_t j, double v) {
        if (v != 0.0) axpy(v, row, gram.col(j));
      });
    }
  } else {
    const DataMatrix sp = data.to_sparse();
    auto sparse_dot = [&](std::size_t a, std::size_t b) {
      std::size_t ka = sp.row_ptr()[a], kb = sp.row_ptr()[b];
      const std::size_t ea = sp.row_ptr()[a + 1], eb = sp.row_ptr()[b + 1];
      double s = 0.0;
      while (ka < ea && kb < eb) {
        if (sp.col_idx()[ka] == sp.col_idx()[kb]) {
          s += sp.values()[ka++] * sp.values()[kb++];
        } else if (sp.col_idx()[ka] < sp.col_idx()[kb]) {
          ++ka;
        } else {
          ++kb;
        }
      }
      return s;
    };
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i <= j; ++i) {
        const double s = sparse_dot(i, j);
        gram(i, j) = s;
        gram(j, i) = s;
      }
  }

  const SymmetricEigen eig = eigh_small(gram, cap);
  // Descending squared singular values.
  Vector sq(eig.values.rbegin(), eig.values.rend());
  for (double& v : sq) v = std::max(0.0, v);
  const double tol = static_cast<double>(std::max(n, p)) *
                     std::numeric_limits<double>::epsilon() * sq[0];
  ConditionBound out;
  out.sigma_first = std::sqrt(sq[0]);
  std::size_t idx = r - 1;
  if (!(sq[idx] > tol)) {
    out.upper_biased = true;
    while (idx > 0 && !(sq[idx] > tol)) --idx;
  }
  out.rank_used = idx + 1;
  out.sigma_r = std::sqrt(sq[idx]);
  const double nn = static_cast<double>(n);
  out.value = (sq[0] / nn + l2) / (sq[idx] / nn + l2);
  return out;
}

std::string file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize k = 0; k < in.gcount(); ++k) {
      h ^= static_cast<unsigned char>(buf[k]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace sketchy
