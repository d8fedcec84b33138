#pragma once

#include <algorithm>
#include <charconv>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "constraints.hpp"
#include "losses.hpp"

namespace ncadmm {

struct DatasetMeta {
  std::string name;
  std::string source;  // "graph_guided", "overlap", "libsvm", ...
  Index n = 0;
  Index d = 0;
  Index classes = 2;
  std::uint64_t seed = 0;
};

/// Features plus labels: ±1 for binary data, class indices 0..m−1 otherwise.
template <class Features>
struct Dataset {
  Features features;
  std::vector<double> labels;
  DatasetMeta meta;

  Index n() const { return features.rows(); }
  Index d() const { return features.cols(); }
  bool binary() const { return meta.classes == 2; }

  Vector binary_labels() const {
    if (!binary()) throw InputError("dataset is not binary");
    return Eigen::Map<const Vector>(labels.data(), static_cast<Index>(labels.size()));
  }
  std::vector<Index> class_labels() const {
    std::vector<Index> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const double v = binary() ? (labels[i] > 0.0 ? 1.0 : 0.0) : labels[i];
      out[i] = static_cast<Index>(v);
    }
    return out;
  }
};

using DenseDataset = Dataset<RowMatrix>;
using SparseDataset = Dataset<SparseRowMatrix>;

struct PrecisionModel {
  Matrix lambda;       // symmetric positive definite
  Support support;     // off-diagonal nonzeros of lambda
  double shift = 0.0;  // added to the diagonal
};

inline double sign_label(double v) { return v >= 0.0 ? 1.0 : -1.0; }

/// Off-diagonal entries are 0 with probability 0.95 and otherwise uniform on
/// ±[0.25, 0.75]; the matrix is symmetrized and its diagonal shifted so the
/// smallest eigenvalue is at least 0.1.
inline PrecisionModel gen_precision(Index d, std::uint64_t seed) {
  if (d < 1) throw ConfigError("d must be at least 1");
  CounterRng rng = make_rng(seed, Stream::kPrecision);
  Matrix raw = Matrix::Zero(d, d);
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < d; ++j) {
      if (i == j) continue;
      const double keep = rng.uniform();
      const double mag = 0.25 + 0.5 * rng.uniform();
      const double sgn = rng.uniform() < 0.5 ? -1.0 : 1.0;
      if (keep >= 0.95) raw(i, j) = sgn * mag;
    }
  }
  PrecisionModel pm;
  pm.lambda = 0.5 * (raw + raw.transpose());
  const double lo = Eigen::SelfAdjointEigenSolver<Matrix>(pm.lambda, Eigen::EigenvaluesOnly).eigenvalues()[0];
  pm.shift = std::max(0.0, 0.1 - lo);
  pm.lambda.diagonal().array() += pm.shift;
  pm.support = (pm.lambda.array() != 0.0).matrix();
  pm.support.diagonal().setConstant(false);
  return pm;
}

struct GraphGuidedData {
  DenseDataset data;
  PrecisionModel precision;
  Vector x_star;
};

/// a_i ~ N(0, Λ⁻¹) via a = L⁻ᵀz with Λ = LLᵀ, x* ~ N(0, I),
/// b_i = sign(a_iᵀx* + ε_i) with ε_i ~ U[0, 1].
inline GraphGuidedData gen_graph_guided(Index n, Index d, std::uint64_t seed) {
  if (n < 1) throw ConfigError("n must be at least 1");
  GraphGuidedData g;
  g.precision = gen_precision(d, seed);
  Eigen::LLT<Matrix> llt(g.precision.lambda);
  if (llt.info() != Eigen::Success) throw NumericalError("precision matrix is not positive definite");
  CounterRng truth = make_rng(seed, Stream::kTruth);
  g.x_star = normal_vector(truth, d);

  CounterRng feat = make_rng(seed, Stream::kFeatures);
  Matrix z(d, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) z(j, i) = feat.normal();
  const Matrix a = llt.matrixU().solve(z);  // Lᵀa = z
  g.data.features = a.transpose();

  CounterRng noise = make_rng(seed, Stream::kNoise);
  g.data.labels.resize(static_cast<std::size_t>(n));
  const Vector score = g.data.features * g.x_star;
  for (Index i = 0; i < n; ++i) g.data.labels[i] = sign_label(score[i] + noise.uniform());
  g.data.meta = {"graph_guided", "graph_guided", n, d, 2, seed};
  return g;
}

struct OverlapData {
  DenseDataset data;
  Vector x_star;
};

/// x* = vec(X) for a grid×grid X whose first column alone is N(0, 1);
/// a_i ~ N(0, I), ε_i ~ N(0, 1).
inline OverlapData gen_overlap(Index n, std::uint64_t seed, Index grid = 20) {
  if (n < 1 || grid < 1) throw ConfigError("n and grid must be at least 1");
  const Index d = grid * grid;
  OverlapData o;
  CounterRng truth = make_rng(seed, Stream::kTruth);
  o.x_star = Vector::Zero(d);
  for (Index r = 0; r < grid; ++r) o.x_star[r] = truth.normal();  // column 0, column-major

  CounterRng feat = make_rng(seed, Stream::kFeatures);
  o.data.features.resize(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) o.data.features(i, j) = feat.normal();

  CounterRng noise = make_rng(seed, Stream::kNoise);
  const Vector score = o.data.features * o.x_star;
  o.data.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) o.data.labels[i] = sign_label(score[i] + noise.normal());
  o.data.meta = {"overlap", "overlap", n, d, 2, seed};
  return o;
}

struct MulticlassData {
  DenseDataset data;
  Matrix w_star;  // classes × d
};

/// Synthetic stand-in for the multiclass benchmarks: a_i ~ N(0, I), W* ~ N(0, 1),
/// b_i = argmax_c (W* a_i + ε_i)_c with ε_i ~ N(0, I).
inline MulticlassData gen_multiclass(Index n, Index d, Index classes, std::uint64_t seed) {
  if (n < 1 || d < 1 || classes < 2) throw ConfigError("multiclass data needs n, d >= 1 and at least two classes");
  MulticlassData mc;
  CounterRng truth = make_rng(seed, Stream::kTruth);
  mc.w_star.resize(classes, d);
  for (Index c = 0; c < classes; ++c)
    for (Index j = 0; j < d; ++j) mc.w_star(c, j) = truth.normal();

  CounterRng feat = make_rng(seed, Stream::kFeatures);
  mc.data.features.resize(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) mc.data.features(i, j) = feat.normal();

  CounterRng noise = make_rng(seed, Stream::kNoise);
  mc.data.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Vector s = mc.w_star * mc.data.features.row(i).transpose();
    for (Index c = 0; c < classes; ++c) s[c] += noise.normal();
    Index best = 0;
    s.maxCoeff(&best);
    mc.data.labels[static_cast<std::size_t>(i)] = static_cast<double>(best);
  }
  mc.data.meta = {"multiclass", "multiclass", n, d, classes, seed};
  return mc;
}

enum class LabelMode { kAuto, kBinary, kMulticlass };

struct LibsvmOptions {
  LabelMode labels = LabelMode::kAuto;
  Index dim = 0;  // 0: largest index seen
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace detail

/// Reads `label idx:val ...` lines (1-based, strictly increasing indices).
/// Blank lines and `#` comments are skipped. Two distinct labels map the
/// smaller to −1 and the larger to +1; more map to 0..m−1 in sorted order.
inline SparseDataset parse_libsvm(std::istream& in, const LibsvmOptions& opt = {}) {
  std::vector<Eigen::Triplet<double>> trip;
  std::vector<double> raw;
  Index max_col = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = line;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = detail::trim(s);
    if (s.empty()) continue;

    const Index row = static_cast<Index>(raw.size());
    std::size_t pos = 0;
    auto next_token = [&]() -> std::string_view {
      while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
      const std::size_t start = pos;
      while (pos < s.size() && s[pos] != ' ' && s[pos] != '\t') ++pos;
      return s.substr(start, pos - start);
    };
    double label = 0.0;
    if (!detail::parse_number(next_token(), label) || !std::isfinite(label)) throw ParseError(lineno, "bad label");
    raw.push_back(label);
    long long last = 0;
    for (std::string_view tok = next_token(); !tok.empty(); tok = next_token()) {
      const std::size_t colon = tok.find(':');
      if (colon == std::string_view::npos) throw ParseError(lineno, "expected idx:val, got '" + std::string(tok) + "'");
      long long idx = 0;
      double val = 0.0;
      if (!detail::parse_number(tok.substr(0, colon), idx) || idx < 1)
        throw ParseError(lineno, "bad feature index in '" + std::string(tok) + "'");
      if (!detail::parse_number(tok.substr(colon + 1), val) || !std::isfinite(val))
        throw ParseError(lineno, "bad feature value in '" + std::string(tok) + "'");
      if (idx <= last) throw ParseError(lineno, "feature indices must be strictly increasing");
      last = idx;
      if (opt.dim > 0 && idx > opt.dim) throw ParseError(lineno, "feature index exceeds the declared dimension");
      max_col = std::max<Index>(max_col, static_cast<Index>(idx));
      if (val != 0.0) trip.emplace_back(row, static_cast<Index>(idx - 1), val);
    }
  }
  if (raw.empty()) throw InputError("empty dataset");

  SparseDataset ds;
  const Index d = opt.dim > 0 ? opt.dim : max_col;
  ds.features.resize(static_cast<Index>(raw.size()), d);
  ds.features.setFromTriplets(trip.begin(), trip.end());
  ds.features.makeCompressed();

  std::vector<double> distinct = raw;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  const bool binary = opt.labels == LabelMode::kBinary || (opt.labels == LabelMode::kAuto && distinct.size() == 2);
  if (binary && distinct.size() > 2) throw InputError("binary label mode needs at most two distinct labels");
  ds.labels.resize(raw.size());
  if (binary) {
    // A single label value keeps its sign.
    for (std::size_t i = 0; i < raw.size(); ++i)
      ds.labels[i] = distinct.size() == 2 ? (raw[i] == distinct[0] ? -1.0 : 1.0) : sign_label(raw[i]);
  } else {
    std::map<double, Index> rank;
    for (std::size_t k = 0; k < distinct.size(); ++k) rank[distinct[k]] = static_cast<Index>(k);
    for (std::size_t i = 0; i < raw.size(); ++i) ds.labels[i] = static_cast<double>(rank[raw[i]]);
  }
  ds.meta = {"", "libsvm", ds.n(), d, binary ? Index{2} : static_cast<Index>(distinct.size()), 0};
  return ds;
}

namespace detail {

inline void write_double(std::ostream& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.write(buf, res.ptr - buf);
}

}  // namespace detail

/// Writes labels as +1/−1 (binary) or the class index, and every nonzero feature
/// with the shortest round-tripping representation.
template <class Features>
void write_libsvm(std::ostream& out, const Dataset<Features>& ds) {
  for (Index i = 0; i < ds.n(); ++i) {
    const double lab = ds.labels[static_cast<std::size_t>(i)];
    if (ds.binary()) {
      out << (lab > 0.0 ? "+1" : "-1");
    } else {
      out << static_cast<long long>(lab);
    }
    detail::for_each_nonzero(ds.features, i, [&](Index j, double v) {
      if (v == 0.0) return;
      out << ' ' << (j + 1) << ':';
      detail::write_double(out, v);
    });
    out << '\n';
  }
}

/// Rows `idx` of a dataset, in that order.
template <class Features>
Dataset<Features> take_rows(const Dataset<Features>& ds, const std::vector<Index>& idx) {
  Dataset<Features> out;
  out.meta = ds.meta;
  out.meta.n = static_cast<Index>(idx.size());
  out.labels.reserve(idx.size());
  for (Index i : idx) out.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
  if constexpr (detail::is_sparse_v<Features>) {
    std::vector<Eigen::Triplet<double>> trip;
    for (std::size_t r = 0; r < idx.size(); ++r)
      detail::for_each_nonzero(ds.features, idx[r], [&](Index j, double v) { trip.emplace_back(r, j, v); });
    out.features.resize(static_cast<Index>(idx.size()), ds.d());
    out.features.setFromTriplets(trip.begin(), trip.end());
    out.features.makeCompressed();
  } else {
    out.features.resize(static_cast<Index>(idx.size()), ds.d());
    for (std::size_t r = 0; r < idx.size(); ++r) out.features.row(static_cast<Index>(r)) = ds.features.row(idx[r]);
  }
  return out;
}

template <class Features>
struct SplitResult {
  Dataset<Features> train;
  Dataset<Features> test;
  std::vector<Index> train_idx;
  std::vector<Index> test_idx;
};

/// Seeded Fisher-Yates shuffle, then the first round(fraction·n) rows train.
template <class Features>
SplitResult<Features> split(const Dataset<Features>& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must lie in (0, 1)");
  const Index n = ds.n();
  const Index n_train = static_cast<Index>(std::llround(fraction * static_cast<double>(n)));
  if (n_train < 1 || n_train >= n) throw ConfigError("split leaves the train or test part empty");
  std::vector<Index> perm = iota_indices(n);
  CounterRng rng = make_rng(seed, Stream::kSplit);
  for (Index i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(static_cast<std::uint64_t>(i + 1))]);
  SplitResult<Features> s;
  s.train_idx.assign(perm.begin(), perm.begin() + n_train);
  s.test_idx.assign(perm.begin() + n_train, perm.end());
  s.train = take_rows(ds, s.train_idx);
  s.test = take_rows(ds, s.test_idx);
  return s;
}

}  // namespace ncadmm
