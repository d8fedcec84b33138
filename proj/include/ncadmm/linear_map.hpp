#pragma once

#include <utility>
#include <variant>

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCore>

#include "core.hpp"

namespace ncadmm {

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// A matrix stored dense or sparse (CSR). Sparse storage is picked
/// automatically when fewer than `sparse_threshold` of the entries are nonzero.
class LinearMap {
 public:
  static constexpr double kSparseThreshold = 0.10;

  LinearMap() : storage_(Matrix(0, 0)) {}
  explicit LinearMap(Matrix m) : storage_(std::move(m)) {}
  explicit LinearMap(SparseRowMatrix m) : storage_(std::move(m)) { std::get<1>(storage_).makeCompressed(); }

  static LinearMap from_dense(const Matrix& m, double sparse_threshold = kSparseThreshold) {
    const double total = static_cast<double>(m.size());
    const double nnz = static_cast<double>((m.array() != 0.0).count());
    if (total > 0 && nnz / total < sparse_threshold) return LinearMap(SparseRowMatrix(m.sparseView()));
    return LinearMap(m);
  }

  static LinearMap from_triplets(Index rows, Index cols, const std::vector<Eigen::Triplet<double>>& t,
                                 double sparse_threshold = kSparseThreshold) {
    SparseRowMatrix s(rows, cols);
    s.setFromTriplets(t.begin(), t.end());
    const double total = static_cast<double>(rows) * static_cast<double>(cols);
    if (total > 0 && static_cast<double>(s.nonZeros()) / total >= sparse_threshold) return LinearMap(Matrix(s));
    return LinearMap(std::move(s));
  }

  static LinearMap identity(Index n, double scale = 1.0) {
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) t.emplace_back(i, i, scale);
    return from_triplets(n, n, t);
  }

  bool is_sparse() const { return storage_.index() == 1; }

  Index rows() const {
    return std::visit([](const auto& m) { return static_cast<Index>(m.rows()); }, storage_);
  }
  Index cols() const {
    return std::visit([](const auto& m) { return static_cast<Index>(m.cols()); }, storage_);
  }

  Vector apply(const Vector& x) const {
    return std::visit([&](const auto& m) -> Vector { return m * x; }, storage_);
  }
  Vector apply_transpose(const Vector& v) const {
    return std::visit([&](const auto& m) -> Vector { return m.transpose() * v; }, storage_);
  }

  Matrix dense() const {
    return std::visit([](const auto& m) -> Matrix { return Matrix(m); }, storage_);
  }

  /// AᵀA as a dense matrix.
  Matrix gram() const {
    return std::visit(
        [](const auto& m) -> Matrix {
          if constexpr (std::is_same_v<std::decay_t<decltype(m)>, Matrix>) {
            return m.transpose() * m;
          } else {
            return Matrix(SparseRowMatrix(m.transpose() * m));
          }
        },
        storage_);
  }

  bool is_negative_identity() const {
    if (rows() != cols()) return false;
    return std::visit(
        [](const auto& m) {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, Matrix>) {
            return m.size() == 0 || (m + Matrix::Identity(m.rows(), m.cols())).cwiseAbs().maxCoeff() == 0.0;
          } else {
            for (Index r = 0; r < m.outerSize(); ++r) {
              for (typename M::InnerIterator it(m, r); it; ++it) {
                if (it.value() != (it.col() == r ? -1.0 : 0.0)) return false;
              }
              if (m.coeff(r, r) != -1.0) return false;
            }
            return true;
          }
        },
        storage_);
  }

 private:
  std::variant<Matrix, SparseRowMatrix> storage_;
};

/// Extreme eigenvalues of a symmetric positive semidefinite operator.
struct ExtremeEigenvalues {
  double min = 0.0;
  double max = 0.0;
};

inline constexpr Index kDenseEigenLimit = 2000;

/// Extreme eigenvalues of AᵀA. Dense symmetric eigensolve for d up to 2000,
/// otherwise power iteration for the top and shifted power iteration for the bottom.
inline ExtremeEigenvalues gram_extreme_eigenvalues(const LinearMap& a, double tol = 1e-10) {
  const Index d = a.cols();
  if (d == 0) return {};
  if (d <= kDenseEigenLimit) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(a.gram(), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("eigensolve of AᵀA failed");
    return {es.eigenvalues()[0], es.eigenvalues()[d - 1]};
  }
  auto power = [&](auto&& op) {
    CounterRng rng(0x5eed, 99);
    Vector v = normal_vector(rng, d);
    v.normalize();
    double lambda = 0.0;
    for (int it = 0; it < 100000; ++it) {
      Vector w = op(v);
      const double next = v.dot(w);
      const double nw = w.norm();
      if (nw == 0.0) return 0.0;
      v = w / nw;
      if (std::abs(next - lambda) <= tol * std::max(1.0, std::abs(next))) return next;
      lambda = next;
    }
    return lambda;
  };
  const double top = power([&](const Vector& v) { return Vector(a.apply_transpose(a.apply(v))); });
  const double shifted = power([&](const Vector& v) { return Vector(top * v - a.apply_transpose(a.apply(v))); });
  return {top - shifted, top};
}

}  // namespace ncadmm
