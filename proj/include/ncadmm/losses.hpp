#pragma once

#include <algorithm>
#include <span>
#include <type_traits>

#include "linear_map.hpp"

namespace ncadmm {

// Row access shared by dense and CSR feature matrices.
namespace detail {

template <class F>
inline constexpr bool is_sparse_v = std::is_base_of_v<Eigen::SparseMatrixBase<F>, F>;

template <class F, class Fn>
void for_each_nonzero(const F& features, Index i, Fn&& fn) {
  if constexpr (is_sparse_v<F>) {
    for (typename F::InnerIterator it(features, i); it; ++it) fn(static_cast<Index>(it.col()), it.value());
  } else {
    const Index d = features.cols();
    for (Index j = 0; j < d; ++j) fn(j, features(i, j));
  }
}

template <class F>
double row_dot(const F& features, Index i, const Vector& x) {
  if constexpr (is_sparse_v<F>) {
    double s = 0.0;
    for_each_nonzero(features, i, [&](Index j, double v) { s += v * x[j]; });
    return s;
  } else {
    return features.row(i).dot(x.transpose());
  }
}

template <class F>
void row_axpy(const F& features, Index i, double alpha, Vector& out) {
  if constexpr (is_sparse_v<F>) {
    for_each_nonzero(features, i, [&](Index j, double v) { out[j] += alpha * v; });
  } else {
    out.noalias() += alpha * features.row(i).transpose();
  }
}

template <class F>
double max_row_squared_norm(const F& features) {
  double best = 0.0;
  for (Index i = 0; i < features.rows(); ++i) {
    double s = 0.0;
    for_each_nonzero(features, i, [&](Index, double v) { s += v * v; });
    best = std::max(best, s);
  }
  return best;
}

inline void check_indices(std::span<const Index> idx, Index n) {
  for (Index i : idx) {
    if (i < 0 || i >= n) throw InputError("sample index " + std::to_string(i) + " out of range [0, " +
                                          std::to_string(n) + ")");
  }
}

}  // namespace detail

/// Largest |d²/du² (1 + eᵘ)⁻¹| found by a dense scan of u ∈ [-10, 10].
/// The analytic supremum is √3/18 ≈ 0.0962.
inline double sigmoid_curvature_bound() {
  static const double value = [] {
    double best = 0.0;
    constexpr int kSteps = 2000000;
    for (int k = 0; k <= kSteps; ++k) {
      const double u = -10.0 + 20.0 * k / kSteps;
      const double s = 1.0 / (1.0 + std::exp(-u));  // σ(u)
      // ℓ(u) = σ(−u), ℓ''(u) = σ(u)σ(−u)(σ(u) − σ(−u))
      best = std::max(best, std::abs(s * (1.0 - s) * (2.0 * s - 1.0)));
    }
    return best;
  }();
  return value;
}

// Common surface of the smooth losses: f(x) = (1/n) Σ f_i(x).
template <class Derived>
class SmoothLossBase {
 public:
  /// (1/|I|) Σ_{i∈I} f_i(x)
  double value(const Vector& x, std::span<const Index> idx) const {
    detail::check_indices(idx, self().n());
    if (idx.empty()) throw ConfigError("empty index set");
    double s = 0.0;
    for (Index i : idx) s += self().component_value(i, x);
    return s / static_cast<double>(idx.size());
  }

  /// (1/|I|) Σ_{i∈I} ∇f_i(x), summed in the order given.
  Vector mean_gradient(const Vector& x, std::span<const Index> idx) const {
    detail::check_indices(idx, self().n());
    if (idx.empty()) throw ConfigError("empty index set");
    Vector g = Vector::Zero(self().dim());
    for (Index i : idx) self().add_component_gradient(i, x, 1.0, g);
    g /= static_cast<double>(idx.size());
    return g;
  }

  double full_value(const Vector& x) const { return value(x, all_indices()); }
  Vector full_gradient(const Vector& x) const { return mean_gradient(x, all_indices()); }

  Vector component_gradient(Index i, const Vector& x) const {
    Vector g = Vector::Zero(self().dim());
    self().add_component_gradient(i, x, 1.0, g);
    return g;
  }

  const std::vector<Index>& all_indices() const {
    if (static_cast<Index>(all_.size()) != self().n()) all_ = iota_indices(self().n());
    return all_;
  }

 private:
  const Derived& self() const { return static_cast<const Derived&>(*this); }
  mutable std::vector<Index> all_;
};

/// f_i(x) = 1 / (1 + exp(b_i a_iᵀx)) with labels b_i ∈ {−1, +1}.
template <class Features = RowMatrix>
class SigmoidLoss : public SmoothLossBase<SigmoidLoss<Features>> {
 public:
  SigmoidLoss(Features features, Vector labels) : features_(std::move(features)), labels_(std::move(labels)) {
    if (features_.rows() != labels_.size()) throw InputError("SigmoidLoss: features/labels size mismatch");
    for (Index i = 0; i < labels_.size(); ++i) {
      if (labels_[i] != 1.0 && labels_[i] != -1.0) throw InputError("SigmoidLoss: labels must be ±1");
    }
    // Prime the index cache so concurrent readers never race on it.
    this->all_indices();
  }

  Index n() const { return features_.rows(); }
  Index dim() const { return features_.cols(); }
  const Features& features() const { return features_; }
  const Vector& labels() const { return labels_; }

  double component_value(Index i, const Vector& x) const {
    const double u = labels_[i] * detail::row_dot(features_, i, x);
    return 1.0 / (1.0 + std::exp(u));
  }

  /// out += scale · ∇f_i(x), where ∇f_i(x) = −b_i a_i eᵘ/(1+eᵘ)², u = b_i a_iᵀx.
  void add_component_gradient(Index i, const Vector& x, double scale, Vector& out) const {
    const double b = labels_[i];
    const double u = b * detail::row_dot(features_, i, x);
    const double s = 1.0 / (1.0 + std::exp(-std::abs(u)));
    detail::row_axpy(features_, i, -scale * b * s * (1.0 - s), out);
  }

  /// L = max_i ‖a_i‖² · sup|ℓ''|.
  double lipschitz_bound() const { return detail::max_row_squared_norm(features_) * sigmoid_curvature_bound(); }

  double data_loss(Index i, const Vector& x) const { return component_value(i, x); }

  bool misclassified(Index i, const Vector& x) const {
    const double score = detail::row_dot(features_, i, x);
    const double pred = score >= 0.0 ? 1.0 : -1.0;
    return pred != labels_[i];
  }

 private:
  Features features_;
  Vector labels_;
};

/// Multinomial logistic loss on X ∈ R^{m×d} (stored column-major as a vector of
/// length m·d) plus the smooth part of the log-sum penalty:
///   f̄_i(X) = log Σ_c exp(X_c·a_i) − X_{b_i}·a_i + ν1 Σ_{c,j} (κ(|X_cj|) − κ0 |X_cj|),
/// with κ(α) = β log(1 + α/θ) and κ0 = κ'(0) = β/θ.
template <class Features = RowMatrix>
class SmoothedMultiTaskLoss : public SmoothLossBase<SmoothedMultiTaskLoss<Features>> {
 public:
  SmoothedMultiTaskLoss(Features features, std::vector<Index> labels, Index classes, double nu1, double beta = 1.0,
                        double theta = 1.0)
      : features_(std::move(features)),
        labels_(std::move(labels)),
        classes_(classes),
        nu1_(nu1),
        beta_(beta),
        theta_(theta) {
    if (!(beta_ >= 0.0) || !(theta_ > 0.0)) throw ConfigError("log-sum penalty needs beta >= 0 and theta > 0");
    if (!(nu1_ >= 0.0)) throw ConfigError("nu1 must be nonnegative");
    if (classes_ < 1) throw ConfigError("need at least one class");
    if (static_cast<Index>(labels_.size()) != features_.rows())
      throw InputError("SmoothedMultiTaskLoss: features/labels size mismatch");
    for (Index b : labels_) {
      if (b < 0 || b >= classes_) throw InputError("SmoothedMultiTaskLoss: label outside [0, m)");
    }
    this->all_indices();
  }

  Index n() const { return features_.rows(); }
  Index dim() const { return classes_ * features_.cols(); }
  Index classes() const { return classes_; }
  Index feature_dim() const { return features_.cols(); }
  double nu1() const { return nu1_; }
  double beta() const { return beta_; }
  double theta() const { return theta_; }
  double kappa0() const { return beta_ / theta_; }
  const Features& features() const { return features_; }
  const std::vector<Index>& labels() const { return labels_; }

  /// ν1 Σ (κ(|X|) − κ0|X|); always ≤ 0 since κ is concave with κ(0) = 0.
  double penalty_value(const Vector& x) const {
    if (nu1_ == 0.0 || beta_ == 0.0) return 0.0;
    double s = 0.0;
    for (Index k = 0; k < x.size(); ++k) {
      const double a = std::abs(x[k]);
      s += beta_ * std::log1p(a / theta_) - kappa0() * a;
    }
    return nu1_ * s;
  }

  /// out += scale · ν1 sign(X)(β/(θ+|X|) − β/θ); exactly zero where X = 0.
  void add_penalty_gradient(const Vector& x, double scale, Vector& out) const {
    if (nu1_ == 0.0 || beta_ == 0.0) return;
    for (Index k = 0; k < x.size(); ++k) {
      if (x[k] == 0.0) continue;
      const double a = std::abs(x[k]);
      out[k] += scale * nu1_ * std::copysign(1.0, x[k]) * (beta_ / (theta_ + a) - kappa0());
    }
  }

  double data_loss(Index i, const Vector& x) const {
    const Vector s = scores(i, x);
    const double mx = s.maxCoeff();
    return mx + std::log((s.array() - mx).exp().sum()) - s[labels_[i]];
  }

  double component_value(Index i, const Vector& x) const { return data_loss(i, x) + penalty_value(x); }

  void add_component_gradient(Index i, const Vector& x, double scale, Vector& out) const {
    Vector p = scores(i, x);
    p.array() -= p.maxCoeff();
    p = p.array().exp().matrix();
    p /= p.sum();
    p[labels_[i]] -= 1.0;
    const Index m = classes_;
    detail::for_each_nonzero(features_, i, [&](Index j, double v) {
      if (v == 0.0) return;
      out.segment(j * m, m).noalias() += (scale * v) * p;
    });
    add_penalty_gradient(x, scale, out);
  }

  /// L = ½ max_i ‖a_i‖² + ν1 β/θ².
  double lipschitz_bound() const {
    return 0.5 * detail::max_row_squared_norm(features_) + nu1_ * beta_ / (theta_ * theta_);
  }

  bool misclassified(Index i, const Vector& x) const {
    const Vector s = scores(i, x);
    Index best = 0;
    s.maxCoeff(&best);
    return best != labels_[i];
  }

 private:
  Vector scores(Index i, const Vector& x) const {
    const Index m = classes_;
    Vector s = Vector::Zero(m);
    detail::for_each_nonzero(features_, i, [&](Index j, double v) {
      if (v == 0.0) return;
      s.noalias() += v * x.segment(j * m, m);
    });
    return s;
  }

  Features features_;
  std::vector<Index> labels_;
  Index classes_;
  double nu1_;
  double beta_;
  double theta_;
};

}  // namespace ncadmm
