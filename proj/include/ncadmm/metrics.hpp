#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "params.hpp"

namespace ncadmm {

struct StationarityReport {
  double feasibility_sq = 0.0;    // ‖Ax + By − c‖²
  double dual_sq = 0.0;           // ‖∇f(x) − Aᵀλ‖²
  double subgrad_dist_sq = 0.0;   // dist(Bᵀλ, ∂g(y))²
  double epsilon = 0.0;           // max of the three
};

/// Squared distance from v to ∂(ν‖·‖₁)(y), coordinatewise.
inline double l1_subgradient_dist_sq(const Eigen::Ref<const Vector>& v, const Eigen::Ref<const Vector>& y, double nu) {
  double s = 0.0;
  for (Index i = 0; i < v.size(); ++i) {
    const double e = y[i] != 0.0 ? std::abs(v[i] - std::copysign(nu, y[i])) : std::max(std::abs(v[i]) - nu, 0.0);
    s += e * e;
  }
  return s;
}

/// Residuals of the ε-stationarity conditions at (x, y, λ).
/// ℓ1 blocks use the exact subgradient distance. Nuclear blocks use the bound
/// ‖ρBᵀA(x − x_prev)‖² on that block, which needs the previous primal iterate.
template <class Loss>
StationarityReport stationarity(const CompositeProblem<Loss>& problem, const Vector& x, const Vector& y,
                                const Vector& lambda, const Vector* x_prev = nullptr, double rho = 0.0) {
  const ConstraintSystem& cs = problem.constraints;
  StationarityReport rep;
  rep.feasibility_sq = cs.residual(x, y).squaredNorm();
  rep.dual_sq = (problem.loss.full_gradient(x) - cs.a().apply_transpose(lambda)).squaredNorm();
  const Vector v = cs.b().apply_transpose(lambda);
  std::optional<Vector> coupling;
  for (const auto& b : problem.regularizer.blocks()) {
    if (b.kind == BlockKind::kL1) {
      rep.subgrad_dist_sq += l1_subgradient_dist_sq(v.segment(b.begin, b.length), y.segment(b.begin, b.length), b.weight);
    } else if (b.kind == BlockKind::kNuclear) {
      if (x_prev == nullptr) throw CapabilityError("nuclear-norm stationarity needs the previous iterate");
      if (!coupling) coupling = rho * cs.b().apply_transpose(cs.a().apply(x - *x_prev));
      rep.subgrad_dist_sq += coupling->segment(b.begin, b.length).squaredNorm();
    } else {
      throw UnsupportedError("stationarity: unsupported regularizer block");
    }
  }
  rep.epsilon = std::max({rep.feasibility_sq, rep.dual_sq, rep.subgrad_dist_sq});
  return rep;
}

/// One stored iterate for offline Lyapunov evaluation.
struct IterateRecord {
  Vector x;
  Vector y;
  Vector lambda;
  std::optional<Vector> snapshot;       // SVRG x̃ of the current epoch
  std::optional<RowMatrix> points;      // SAGA z_i, one per row
};

enum class LyapunovKind { kPsi, kPhi, kTheta };

struct LyapunovTrace {
  LyapunovKind kind = LyapunovKind::kPsi;
  std::vector<double> values;
};

/// Σ_i ‖x − z_i‖² over the rows of `points`.
inline double point_spread_sq(const Vector& x, const RowMatrix& points) {
  return (points.rowwise() - x.transpose()).squaredNorm();
}

/// Ψ̂ = L_ρ(x, y, λ) + (ζ/ρ)‖x − x_prev‖².
template <class Loss>
double lyapunov_psi_value(const CompositeProblem<Loss>& problem, const Vector& x, const Vector& y,
                          const Vector& lambda, const Vector& x_prev, const TheoryConstants& k) {
  return problem.augmented_lagrangian(x, y, lambda, k.rho) + k.zeta / k.rho * (x - x_prev).squaredNorm();
}

/// Ψ̂_t over consecutive iterates, with x_{−1} = x_0.
template <class Loss>
LyapunovTrace lyapunov_psi(const CompositeProblem<Loss>& problem, const std::vector<IterateRecord>& it,
                           const TheoryConstants& k) {
  LyapunovTrace out{LyapunovKind::kPsi, {}};
  out.values.reserve(it.size());
  for (std::size_t t = 0; t < it.size(); ++t) {
    const Vector& prev = it[t == 0 ? 0 : t - 1].x;
    out.values.push_back(lyapunov_psi_value(problem, it[t].x, it[t].y, it[t].lambda, prev, k));
  }
  return out;
}

/// Weight h for inner index j of an epoch of length m (j = 0 reuses h_1).
inline double svrg_weight(const std::vector<double>& h, std::int64_t j) {
  const std::size_t idx = static_cast<std::size_t>(std::max<std::int64_t>(j, 1) - 1);
  return h.at(std::min(idx, h.size() - 1));
}

/// Φ̂_t = L_ρ + h_j(‖x_t − x̃‖² + ‖x_{t−1} − x̃‖²) + (ζ/ρ)‖x_t − x_{t−1}‖², where
/// x̃ is the snapshot of the epoch containing t and j = t mod m.
/// Every record must carry its epoch's snapshot.
template <class Loss>
LyapunovTrace lyapunov_phi(const CompositeProblem<Loss>& problem, const std::vector<IterateRecord>& it,
                           const RecursionSchedule& h, const TheoryConstants& k) {
  LyapunovTrace out{LyapunovKind::kPhi, {}};
  const std::int64_t m = static_cast<std::int64_t>(h.values.size());
  for (std::size_t t = 0; t < it.size(); ++t) {
    if (!it[t].snapshot) throw CapabilityError("Phi needs the SVRG snapshot at every iterate");
    const Vector& snap = *it[t].snapshot;
    const Vector& prev = it[t == 0 ? 0 : t - 1].x;
    const std::int64_t j = static_cast<std::int64_t>(t) % m;
    // At an epoch start x_t becomes the new x̃, so both spread terms vanish.
    const double spread = j == 0 ? 0.0 : (it[t].x - snap).squaredNorm() + (prev - snap).squaredNorm();
    out.values.push_back(lyapunov_psi_value(problem, it[t].x, it[t].y, it[t].lambda, prev, k) +
                         svrg_weight(h.values, j) * spread);
  }
  return out;
}

/// α_t with α_0 := α_1 and α_t := 0 past the schedule's end.
inline double saga_weight(const std::vector<double>& alpha, std::int64_t t) {
  if (alpha.empty()) return 0.0;
  const std::int64_t idx = std::max<std::int64_t>(t, 1) - 1;
  return idx < static_cast<std::int64_t>(alpha.size()) ? alpha[static_cast<std::size_t>(idx)] : 0.0;
}

/// Θ̂_t = L_ρ + (α_t/n) Σ_i (‖x_t − z_i^t‖² + ‖x_{t−1} − z_i^{t−1}‖²) + (ζ/ρ)‖x_t − x_{t−1}‖².
template <class Loss>
LyapunovTrace lyapunov_theta(const CompositeProblem<Loss>& problem, const std::vector<IterateRecord>& it,
                             const RecursionSchedule& alpha, const TheoryConstants& k) {
  LyapunovTrace out{LyapunovKind::kTheta, {}};
  const double n = static_cast<double>(problem.n());
  double prev_spread = 0.0;
  for (std::size_t t = 0; t < it.size(); ++t) {
    if (!it[t].points) throw CapabilityError("Theta needs stored SAGA points (store_saga_points)");
    const double spread = point_spread_sq(it[t].x, *it[t].points);
    if (t == 0) prev_spread = spread;
    const Vector& prev = it[t == 0 ? 0 : t - 1].x;
    out.values.push_back(lyapunov_psi_value(problem, it[t].x, it[t].y, it[t].lambda, prev, k) +
                         saga_weight(alpha.values, static_cast<std::int64_t>(t)) / n * (spread + prev_spread));
    prev_spread = spread;
  }
  return out;
}

struct VarianceReport {
  double empirical = 0.0;  // E‖ĝ − ∇f(x)‖²
  double bound = 0.0;
  bool exact = false;      // enumerated rather than sampled
};

namespace detail {

// E‖Δ‖² for a with-replacement batch of size M equals the single-draw variance
// divided by M, so the single-index terms are all that is ever evaluated.
template <class Fn>
VarianceReport batch_variance(Index n, Index M, std::size_t draws, std::uint64_t seed, Fn&& single_delta) {
  if (M < 1) throw ConfigError("mini-batch size must be at least 1");
  VarianceReport rep;
  constexpr Index kEnumerateLimit = 8;
  if (n <= kEnumerateLimit || draws == 0) {
    double s = 0.0;
    for (Index i = 0; i < n; ++i) s += single_delta(i).squaredNorm();
    rep.empirical = s / static_cast<double>(n) / static_cast<double>(M);
    rep.exact = true;
    return rep;
  }
  CounterRng rng = make_rng(seed, Stream::kDiagnostics);
  double s = 0.0;
  for (std::size_t k = 0; k < draws; ++k) {
    Vector acc = Vector::Zero(single_delta(0).size());
    for (Index j = 0; j < M; ++j) acc += single_delta(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
    s += (acc / static_cast<double>(M)).squaredNorm();
  }
  rep.empirical = s / static_cast<double>(draws);
  return rep;
}

}  // namespace detail

/// Variance of the SVRG estimator at x with snapshot x̃, against (L²/M)‖x − x̃‖².
template <class Loss>
VarianceReport svrg_variance(const CompositeProblem<Loss>& problem, const Vector& x, const Vector& snapshot, Index M,
                             double L, std::size_t draws = 0, std::uint64_t seed = 0) {
  const Vector mu = problem.loss.full_gradient(snapshot);
  const Vector full = problem.loss.full_gradient(x);
  auto delta = [&](Index i) -> Vector {
    Vector g = mu - full;
    problem.loss.add_component_gradient(i, x, 1.0, g);
    problem.loss.add_component_gradient(i, snapshot, -1.0, g);
    return g;
  };
  VarianceReport rep = detail::batch_variance(problem.n(), M, draws, seed, delta);
  rep.bound = L * L / static_cast<double>(M) * (x - snapshot).squaredNorm();
  return rep;
}

/// Variance of the SAGA estimator at x with stored points z_i, against (L²/(Mn))Σ‖x − z_i‖².
template <class Loss>
VarianceReport saga_variance(const CompositeProblem<Loss>& problem, const Vector& x, const RowMatrix& points, Index M,
                             double L, std::size_t draws = 0, std::uint64_t seed = 0) {
  if (points.rows() != problem.n()) throw CapabilityError("SAGA variance needs one stored point per sample");
  Vector psi = Vector::Zero(problem.d());
  for (Index i = 0; i < problem.n(); ++i) problem.loss.add_component_gradient(i, points.row(i).transpose(), 1.0, psi);
  psi /= static_cast<double>(problem.n());
  const Vector full = problem.loss.full_gradient(x);
  auto delta = [&](Index i) -> Vector {
    Vector g = psi - full;
    problem.loss.add_component_gradient(i, x, 1.0, g);
    problem.loss.add_component_gradient(i, points.row(i).transpose(), -1.0, g);
    return g;
  };
  VarianceReport rep = detail::batch_variance(problem.n(), M, draws, seed, delta);
  rep.bound = L * L / (static_cast<double>(M) * static_cast<double>(problem.n())) * point_spread_sq(x, points);
  return rep;
}

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::size_t points = 0;
  bool flat = true;  // fewer than two positive samples: no decay to measure
};

/// Least-squares fit of log y against log T over T ∈ [t_lo, t_hi], sampled at
/// (roughly) log-spaced T so every decade weighs the same. `y[k]` belongs to T = k + 1.
inline SlopeFit loglog_slope(const std::vector<double>& y, std::size_t t_lo, std::size_t t_hi,
                             std::size_t per_decade = 20) {
  SlopeFit fit;
  t_lo = std::max<std::size_t>(t_lo, 1);
  t_hi = std::min(t_hi, y.size());
  if (t_hi <= t_lo) return fit;
  std::vector<std::size_t> ts;
  const double decades = std::log10(static_cast<double>(t_hi) / static_cast<double>(t_lo));
  const std::size_t count = std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(decades * per_decade)) + 1);
  for (std::size_t k = 0; k < count; ++k) {
    const double tt = static_cast<double>(t_lo) * std::pow(10.0, decades * static_cast<double>(k) / (count - 1));
    const std::size_t T = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(tt)), t_lo, t_hi);
    if (ts.empty() || ts.back() != T) ts.push_back(T);
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = 0;
  for (std::size_t T : ts) {
    const double v = y[T - 1];
    if (!(v > 0.0) || !std::isfinite(v)) continue;
    const double lx = std::log(static_cast<double>(T)), ly = std::log(v);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++n;
  }
  fit.points = n;
  if (n < 2) return fit;
  const double denom = static_cast<double>(n) * sxx - sx * sx;
  if (denom <= 0.0) return fit;
  fit.slope = (static_cast<double>(n) * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / static_cast<double>(n);
  fit.flat = false;
  return fit;
}

struct RateSummary {
  std::vector<double> theta;           // θ_k = ‖x_{k+2} − x_{k+1}‖² + ‖x_{k+1} − x_k‖², k = 0..T−2
  std::vector<double> min_theta_by_T;  // running minimum, entry k is min over the first k+1 values
  SlopeFit tail;                       // fit over T ∈ [√T_max, T_max]
};

/// θ and its running minimum from per-step squared moves s_t = ‖x_{t+1} − x_t‖².
/// Every θ spans two real steps; a start-up term with x_{−1} = x_0 would count one
/// step only and pin the running minimum near zero iterations.
inline RateSummary rate_summary(const std::vector<double>& step_sq) {
  RateSummary rs;
  if (step_sq.size() < 2) return rs;
  const std::size_t count = step_sq.size() - 1;
  rs.theta.resize(count);
  rs.min_theta_by_T.resize(count);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < count; ++k) {
    rs.theta[k] = step_sq[k] + step_sq[k + 1];
    best = std::min(best, rs.theta[k]);
    rs.min_theta_by_T[k] = best;
  }
  if (count >= 4) {
    const std::size_t lo = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(count))));
    rs.tail = loglog_slope(rs.min_theta_by_T, lo, count);
  }
  return rs;
}

}  // namespace ncadmm
