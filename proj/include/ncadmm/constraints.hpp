#pragma once

#include <optional>

#include "regularizer.hpp"
#include "linear_map.hpp"

namespace ncadmm {

/// Ax + By = c with cached extreme eigenvalues of AᵀA.
class ConstraintSystem {
 public:
  ConstraintSystem() = default;

  /// Computes the spectrum of AᵀA unless `known` supplies it (for structured A).
  ConstraintSystem(LinearMap a, LinearMap b, Vector c, std::optional<ExtremeEigenvalues> known = std::nullopt)
      : a_(std::move(a)), b_(std::move(b)), c_(std::move(c)) {
    if (b_.rows() != a_.rows() || c_.size() != a_.rows()) throw InputError("constraint dimensions disagree");
    const ExtremeEigenvalues ev = known ? *known : gram_extreme_eigenvalues(a_);
    phi_min_a_ = ev.min;
    norm_ata_ = ev.max;
    b_negative_identity_ = b_.is_negative_identity();
  }

  /// A with B = −I and c = 0.
  static ConstraintSystem with_negative_identity(LinearMap a, std::optional<ExtremeEigenvalues> known = std::nullopt) {
    const Index q = a.rows();
    return ConstraintSystem(std::move(a), LinearMap::identity(q, -1.0), Vector::Zero(q), known);
  }

  const LinearMap& a() const { return a_; }
  const LinearMap& b() const { return b_; }
  const Vector& c() const { return c_; }
  Index q() const { return a_.rows(); }
  Index d() const { return a_.cols(); }
  Index p() const { return b_.cols(); }

  /// Smallest eigenvalue of AᵀA.
  double phi_min_a() const { return phi_min_a_; }
  /// Largest eigenvalue of AᵀA (= ‖AᵀA‖).
  double norm_ata() const { return norm_ata_; }
  bool b_is_negative_identity() const { return b_negative_identity_; }
  bool c_is_zero() const { return c_.size() == 0 || c_.cwiseAbs().maxCoeff() == 0.0; }
  bool full_column_rank(double tol = 1e-12) const { return phi_min_a_ > tol * std::max(1.0, norm_ata_); }

  /// Ax + By − c
  Vector residual(const Vector& x, const Vector& y) const { return a_.apply(x) + b_.apply(y) - c_; }

 private:
  LinearMap a_;
  LinearMap b_;
  Vector c_;
  double phi_min_a_ = 0.0;
  double norm_ata_ = 0.0;
  bool b_negative_identity_ = false;
};

/// Boolean symmetric support (diagonal ignored), row-major d×d.
using Support = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// One row w(e_i − e_j)ᵀ per upper-triangle edge (i < j), followed by I_d.
/// B = −I, c = 0. `edge_weight` defaults to 1; see certifiable_edge_weight().
inline ConstraintSystem build_graph_guided_a(const Support& support, double edge_weight = 1.0) {
  if (support.rows() != support.cols()) throw InputError("support must be square");
  if (!(edge_weight >= 0.0)) throw InputError("edge weight must be nonnegative");
  const Index d = support.rows();
  std::vector<Eigen::Triplet<double>> t;
  Index row = 0;
  for (Index i = 0; i < d; ++i) {
    for (Index j = i + 1; j < d; ++j) {
      if (!support(i, j)) continue;
      t.emplace_back(row, i, edge_weight);
      t.emplace_back(row, j, -edge_weight);
      ++row;
    }
  }
  for (Index i = 0; i < d; ++i) t.emplace_back(row + i, i, 1.0);
  return ConstraintSystem::with_negative_identity(LinearMap::from_triplets(row + d, d, t));
}

/// Number of edges (i < j) in a support pattern.
inline Index count_edges(const Support& support) {
  Index e = 0;
  for (Index i = 0; i < support.rows(); ++i)
    for (Index j = i + 1; j < support.cols(); ++j) e += support(i, j) ? 1 : 0;
  return e;
}

/// Edge weight w making ‖AᵀA‖ − φ_min(AᵀA) = φ_min(AᵀA)/40 for the graph-guided A,
/// i.e. w² λ_max(Laplacian) = 1/40. The step-size conditions only admit a
/// positive descent constant γ when the spread of AᵀA's spectrum is a small
/// fraction of its smallest eigenvalue; 1/40 makes the closed-form step choice
/// in suggest_params exact. Returns 1 for an empty graph.
inline double certifiable_edge_weight(const Support& support) {
  const Index d = support.rows();
  Matrix lap = Matrix::Zero(d, d);
  for (Index i = 0; i < d; ++i) {
    for (Index j = i + 1; j < d; ++j) {
      if (!support(i, j)) continue;
      lap(i, i) += 1.0;
      lap(j, j) += 1.0;
      lap(i, j) -= 1.0;
      lap(j, i) -= 1.0;
    }
  }
  if (d == 0 || lap.cwiseAbs().maxCoeff() == 0.0) return 1.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(lap, Eigen::EigenvaluesOnly);
  return 1.0 / std::sqrt(40.0 * es.eigenvalues()[d - 1]);
}

/// A = [I_d; ...; I_d] (k copies), B = −I_{kd}, c = 0, AᵀA = kI.
inline ConstraintSystem build_overlap_a(Index d, Index k) {
  if (k < 1) throw ConfigError("overlap: k must be at least 1");
  if (d < 1) throw ConfigError("overlap: d must be at least 1");
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(static_cast<std::size_t>(d * k));
  for (Index r = 0; r < k; ++r)
    for (Index i = 0; i < d; ++i) t.emplace_back(r * d + i, i, 1.0);
  const double kk = static_cast<double>(k);
  return ConstraintSystem::with_negative_identity(LinearMap::from_triplets(k * d, d, t), ExtremeEigenvalues{kk, kk});
}

struct MultitaskConstraints {
  ConstraintSystem constraints;
  BlockSeparableRegularizer regularizer;
};

/// X = Y split for the sparse + low-rank multitask model: A = [I; I] on vec(X) ∈ R^{md},
/// g(y) = ν1κ0‖y_[0,md)‖₁ + ν2‖mat(y_[md,2md))‖*.
inline MultitaskConstraints build_multitask_constraints(Index m, Index d, double nu1, double kappa0, double nu2) {
  if (m < 1 || d < 1) throw ConfigError("multitask: m and d must be at least 1");
  const Index md = m * d;
  ConstraintSystem cs = build_overlap_a(md, 2);
  BlockSeparableRegularizer reg(2 * md, {RegularizerBlock::l1(0, md, nu1 * kappa0),
                                         RegularizerBlock::nuclear(md, m, d, nu2)});
  return {std::move(cs), std::move(reg)};
}

}  // namespace ncadmm
