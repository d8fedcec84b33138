#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "problem.hpp"

namespace ncadmm {

/// Lipschitz constant of every ∇f_i (hence of ∇f) from the loss's curvature bound.
template <class Loss>
double estimate_lipschitz(const CompositeProblem<Loss>& problem) {
  return problem.loss.lipschitz_bound();
}

/// Constants shared by all three step-size analyses, for one (η, ρ, r).
/// H = rI − ρηAᵀA, so its spectrum follows from that of AᵀA.
struct TheoryConstants {
  double L = 0.0;
  double L_tilde = 0.0;
  double phi_min_a = 0.0;
  double norm_ata = 0.0;
  double eta = 0.0;
  double rho = 0.0;
  double r = 0.0;
  double phi_max_h = 0.0;
  double phi_min_h = 0.0;
  double zeta = 0.0;
  double zeta1 = 0.0;
  double phi_h = 0.0;

  bool operator==(const TheoryConstants&) const = default;

  static TheoryConstants compute(double L, double phi_min_a, double norm_ata, double eta, double rho, double r) {
    TheoryConstants t;
    t.L = L;
    t.L_tilde = L + 1.0;
    t.phi_min_a = phi_min_a;
    t.norm_ata = norm_ata;
    t.eta = eta;
    t.rho = rho;
    t.r = r;
    t.phi_max_h = r - rho * eta * phi_min_a;
    t.phi_min_h = r - rho * eta * norm_ata;
    const double e2 = eta * eta;
    t.zeta = 5.0 * (L * L * e2 + t.phi_max_h * t.phi_max_h) / (phi_min_a * e2);
    t.zeta1 = 5.0 * t.phi_max_h * t.phi_max_h / (phi_min_a * e2);
    t.phi_h = t.phi_min_h * t.phi_min_h + 20.0 * t.phi_max_h * t.phi_max_h;
    return t;
  }

  static TheoryConstants compute(double L, const ConstraintSystem& cs, double eta, double rho, double r) {
    return compute(L, cs.phi_min_a(), cs.norm_ata(), eta, rho, r);
  }

  /// φ_min^H/η + φ_min^A ρ/2 − L̃/2 − 5(L²η² + 2(φ_max^H)²)/(ρ φ_min^A η²)
  double gamma() const {
    return phi_min_h / eta + 0.5 * phi_min_a * rho - 0.5 * L_tilde -
           5.0 * (L * L * eta * eta + 2.0 * phi_max_h * phi_max_h) / (rho * phi_min_a * eta * eta);
  }
};

/// ρ* = (L̃ + s + √(40L² + (L̃ + s)²)) / (2 φ_min^A), the positive root of
/// φ ρ² − (L̃ + s) ρ − 10L²/φ = 0. `shift` is 0 (STOC), 2ĥ (SVRG) or 2α̂ (SAGA).
inline double rho_star(double L, double phi_min_a, double shift = 0.0) {
  const double le = L + 1.0 + shift;
  return (le + std::sqrt(40.0 * L * L + le * le)) / (2.0 * phi_min_a);
}

enum class ScheduleKind { kSvrgH, kSagaAlpha };

struct RecursionSchedule {
  ScheduleKind kind = ScheduleKind::kSvrgH;
  std::vector<double> values;  // h_1..h_m or α_1..α_T
  double beta = 1.0;
  double hat = 0.0;  // ĥ or α̂
};

/// h_m = 10L²/(φρM); h_t = (2+β)h_{t+1} + (10+φρ)L²/(2ρφM) for t < m.
/// Steady state across epochs, so ĥ = min{(1+1/β)h_{t+1}, h_1}.
inline RecursionSchedule svrg_h_schedule(double L, double phi_min_a, double rho, Index M, Index m, double beta) {
  if (m < 1) throw ConfigError("epoch length m must be at least 1");
  if (M < 1) throw ConfigError("mini-batch size must be at least 1");
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  RecursionSchedule s{ScheduleKind::kSvrgH, std::vector<double>(static_cast<std::size_t>(m)), beta, 0.0};
  const double mm = static_cast<double>(M);
  const double step = (10.0 + phi_min_a * rho) * L * L / (2.0 * rho * phi_min_a * mm);
  s.values.back() = 10.0 * L * L / (phi_min_a * rho * mm);
  for (Index t = m - 2; t >= 0; --t) s.values[t] = (2.0 + beta) * s.values[t + 1] + step;
  double hat = s.values.front();
  for (Index t = 0; t + 1 < m; ++t) hat = std::min(hat, (1.0 + 1.0 / beta) * s.values[t + 1]);
  s.hat = hat;
  return s;
}

/// α_t = (10L² + φρL²)/(2ρφM) + ((2n−M)/n + (n−M)β/n) α_{t+1}, with α_{T+1} = 0.
/// α̂ = min_t (n−M)(1+1/β)α_{t+1}/n over t = 1..T.
inline RecursionSchedule saga_alpha_schedule(double L, double phi_min_a, double rho, Index M, Index n, std::int64_t T,
                                             double beta) {
  if (T < 1) throw ConfigError("SAGA schedule needs T >= 1");
  if (M < 1 || M > n) throw ConfigError("SAGA schedule needs 1 <= M <= n");
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  RecursionSchedule s{ScheduleKind::kSagaAlpha, std::vector<double>(static_cast<std::size_t>(T)), beta, 0.0};
  const double nn = static_cast<double>(n), mm = static_cast<double>(M);
  const double constant = (10.0 * L * L + phi_min_a * rho * L * L) / (2.0 * rho * phi_min_a * mm);
  const double factor = (2.0 * nn - mm) / nn + (nn - mm) * beta / nn;
  double next = 0.0;
  for (std::int64_t t = T - 1; t >= 0; --t) {
    s.values[static_cast<std::size_t>(t)] = constant + factor * next;
    next = s.values[static_cast<std::size_t>(t)];
  }
  // t = T contributes α_{T+1} = 0.
  s.hat = 0.0;
  return s;
}

/// Accept/reject record for one (variant, η, ρ, r) with every constant used.
struct Certificate {
  Variant variant = Variant::kStoc;
  double eta = 0.0;
  double rho = 0.0;
  double r = 0.0;
  double beta = 1.0;
  Index batch_size = 1;
  Index epoch_length = 0;
  Index n = 0;
  std::int64_t iterations = 0;
  TheoryConstants constants;
  double shift = 0.0;  // 2ĥ or 2α̂ added to L̃ in the interval formulas
  double rho_star = 0.0;
  double rho_0 = 0.0;
  double delta = 0.0;
  double varphi = 0.0;
  int interval_case = 0;  // 1: ρ ∈ (ρ0, ρ*), 2: ρ = ρ*, 3: ρ > ρ*, 0: none
  double eta_lower = 0.0;
  double eta_upper = 0.0;
  bool in_interval = false;
  double gamma = 0.0;  // descent constant before schedule penalties
  std::vector<double> schedule;
  double schedule_hat = 0.0;
  std::vector<double> gamma_t;  // Γ_t (SVRG / SAGA)
  double min_gamma = 0.0;
  bool accepted = false;
  std::string reason;

  bool operator==(const Certificate&) const = default;
};

namespace detail {

// Case analysis of the (η, ρ) conditions shared by the three variants.
inline void evaluate_interval(Certificate& c) {
  const TheoryConstants& k = c.constants;
  const double L = k.L, phi = k.phi_min_a, rho = c.rho, eta = c.eta;
  const double a = k.phi_min_h, b = k.phi_max_h;
  const double le = k.L_tilde + c.shift;
  c.rho_star = rho_star(L, phi, c.shift);
  c.rho_0 = 10.0 * b * (le * b + std::sqrt(le * le * b * b + 2.0 * L * L * k.phi_h)) / (phi * k.phi_h);
  c.varphi = le + 10.0 * L * L / (rho * phi) - phi * rho;
  c.delta = a * a - 20.0 * b * b * c.varphi / (rho * phi);
  // r = ηρ‖AᵀA‖ + 1 puts η exactly on this cap, so allow rounding slack.
  const double eta_cap = (c.r - 1.0) / (rho * k.norm_ata) * (1.0 + 1e-12);
  const bool at_star = std::abs(rho - c.rho_star) <= 1e-12 * c.rho_star;

  c.interval_case = 0;
  c.in_interval = false;
  if (at_star) {
    c.interval_case = 2;
    c.eta_lower = 10.0 * b * b / (rho * phi * a);
    c.eta_upper = eta_cap;
    c.in_interval = eta > c.eta_lower && eta <= c.eta_upper;
  } else if (rho > c.rho_star) {
    c.interval_case = 3;
    if (c.delta < 0.0) {
      c.reason = "negative discriminant";
      return;
    }
    c.eta_lower = (a - std::sqrt(c.delta)) / c.varphi;
    c.eta_upper = eta_cap;
    c.in_interval = eta > c.eta_lower && eta <= c.eta_upper;
  } else if (rho > c.rho_0) {
    c.interval_case = 1;
    if (c.delta < 0.0) {
      c.reason = "negative discriminant";
      return;
    }
    c.eta_lower = (a - std::sqrt(c.delta)) / c.varphi;
    c.eta_upper = (a + std::sqrt(c.delta)) / c.varphi;
    c.in_interval = eta > c.eta_lower && eta < c.eta_upper;
  } else {
    c.reason = "rho not above rho_0";
  }
}

inline Certificate start_certificate(Variant v, double L, const ConstraintSystem& cs, double eta, double rho,
                                     double r) {
  if (!(eta > 0.0) || !(rho > 0.0) || !(r > 0.0)) throw ConfigError("eta, rho and r must be positive");
  if (!(L > 0.0)) throw ConfigError("Lipschitz constant must be positive");
  if (!(cs.phi_min_a() > 0.0)) throw ConfigError("A must have full column rank (phi_min_A > 0)");
  Certificate c;
  c.variant = v;
  c.eta = eta;
  c.rho = rho;
  c.r = r;
  c.constants = TheoryConstants::compute(L, cs, eta, rho, r);
  c.gamma = c.constants.gamma();
  return c;
}

inline void finish_certificate(Certificate& c) {
  const bool h_ok = c.constants.phi_min_h >= 1.0 - 1e-10;
  c.accepted = h_ok && c.in_interval && c.min_gamma > 0.0 && std::isfinite(c.min_gamma);
  if (c.accepted) {
    c.reason.clear();
  } else if (c.reason.empty()) {
    if (!h_ok) c.reason = "r below eta*rho*||A^T A|| + 1";
    else if (!(c.min_gamma > 0.0) || !std::isfinite(c.min_gamma)) c.reason = "descent constant not positive";
    else c.reason = "eta outside the admissible interval";
  }
}

}  // namespace detail

/// Certificate for the plain mini-batch scheme (also covers the deterministic one).
inline Certificate stoc_feasible(double L, const ConstraintSystem& cs, double eta, double rho, double r) {
  Certificate c = detail::start_certificate(Variant::kStoc, L, cs, eta, rho, r);
  detail::evaluate_interval(c);
  c.min_gamma = c.gamma;
  detail::finish_certificate(c);
  return c;
}

inline Certificate svrg_feasible(double L, const ConstraintSystem& cs, double eta, double rho, double r, Index m,
                                 Index M, double beta = 1.0) {
  Certificate c = detail::start_certificate(Variant::kSvrg, L, cs, eta, rho, r);
  const RecursionSchedule h = svrg_h_schedule(L, cs.phi_min_a(), rho, M, m, beta);
  c.beta = beta;
  c.batch_size = M;
  c.epoch_length = m;
  c.schedule = h.values;
  c.schedule_hat = h.hat;
  c.shift = 2.0 * h.hat;
  detail::evaluate_interval(c);
  c.gamma_t.resize(static_cast<std::size_t>(m));
  for (Index t = 0; t + 1 < m; ++t) c.gamma_t[t] = c.gamma - (1.0 + 1.0 / beta) * h.values[t + 1];
  c.gamma_t.back() = c.gamma - h.values.front();
  c.min_gamma = *std::min_element(c.gamma_t.begin(), c.gamma_t.end());
  detail::finish_certificate(c);
  return c;
}

inline Certificate saga_feasible(double L, const ConstraintSystem& cs, double eta, double rho, double r,
                                 std::int64_t T, Index n, Index M, double beta = 1.0) {
  Certificate c = detail::start_certificate(Variant::kSaga, L, cs, eta, rho, r);
  const RecursionSchedule al = saga_alpha_schedule(L, cs.phi_min_a(), rho, M, n, T, beta);
  c.beta = beta;
  c.batch_size = M;
  c.n = n;
  c.iterations = T;
  c.schedule = al.values;
  c.schedule_hat = al.hat;
  c.shift = 2.0 * al.hat;
  detail::evaluate_interval(c);
  const double w = static_cast<double>(n - M) / static_cast<double>(n) * (1.0 + 1.0 / beta);
  c.gamma_t.resize(static_cast<std::size_t>(T));
  for (std::int64_t t = 0; t < T; ++t) {
    const double next = t + 1 < T ? al.values[static_cast<std::size_t>(t + 1)] : 0.0;
    c.gamma_t[static_cast<std::size_t>(t)] = n == M ? c.gamma : c.gamma - w * next;
  }
  c.min_gamma = *std::min_element(c.gamma_t.begin(), c.gamma_t.end());
  detail::finish_certificate(c);
  return c;
}

/// Sizes the variance-reduced certificates depend on.
struct CertificateShape {
  Index n = 1;
  Index batch_size = 1;
  Index epoch_length = 1;
  std::int64_t iterations = 1;
  double beta = 1.0;
};

inline Certificate certify(Variant v, double L, const ConstraintSystem& cs, double eta, double rho, double r,
                           const CertificateShape& s) {
  switch (v) {
    case Variant::kDete: {
      Certificate c = stoc_feasible(L, cs, eta, rho, r);
      c.variant = Variant::kDete;
      return c;
    }
    case Variant::kStoc: return stoc_feasible(L, cs, eta, rho, r);
    case Variant::kSvrg: return svrg_feasible(L, cs, eta, rho, r, s.epoch_length, s.batch_size, s.beta);
    case Variant::kSaga: return saga_feasible(L, cs, eta, rho, r, s.iterations, s.n, s.batch_size, s.beta);
  }
  throw ConfigError("unknown variant");
}

enum class RPolicy { kMinimal, kFixed };

struct SuggestOptions {
  RPolicy r_policy = RPolicy::kMinimal;
  double fixed_r = 0.0;
  std::optional<double> fixed_eta;
  CertificateShape shape;
};

struct GridPoint {
  double eta = 0.0;
  double rho = 0.0;
  double r = 0.0;
  double min_gamma = 0.0;
  bool accepted = false;
};

struct Suggestion {
  bool found = false;
  SolverConfig config;
  Certificate certificate;
  bool from_grid = false;
  std::vector<GridPoint> grid;  // filled when the closed-form pick was rejected
};

namespace detail {

// ρ* with the schedule shift evaluated at ρ itself (ĥ, α̂ scale like 1/ρ).
inline double variant_rho_star(Variant v, double L, const ConstraintSystem& cs, double rho, const CertificateShape& s) {
  const double phi = cs.phi_min_a();
  double shift = 0.0;
  if (v == Variant::kSvrg) shift = 2.0 * svrg_h_schedule(L, phi, rho, s.batch_size, s.epoch_length, s.beta).hat;
  return rho_star(L, phi, shift);
}

// Step size maximizing γ at fixed ρ when φ_min^H = 1: with u = 1/η,
// γ(u) = u + C − (10/(ρφ))(u + ρD)², D = ‖AᵀA‖ − φ_min^A, maximized at u = ρφ/20 − ρD.
inline double closed_form_eta(double rho, const ConstraintSystem& cs) {
  const double phi = cs.phi_min_a(), spread = cs.norm_ata() - cs.phi_min_a();
  const double u = rho * phi / 20.0 - rho * spread;
  if (u > 0.0) return 1.0 / u;
  return 1e3 / (rho * phi);
}

}  // namespace detail

/// Picks (η, ρ, r) that pass the variant's certificate: ρ = 2ρ*, η maximizing γ with r = ηρ‖AᵀA‖ + 1
/// (or the fixed r), then a geometric grid over (η, ρ) if that pick is rejected.
template <class Loss>
Suggestion suggest_params(const CompositeProblem<Loss>& problem, Variant v, SuggestOptions opt = {}) {
  const double L = estimate_lipschitz(problem);
  if (!(L > 0.0)) throw ConfigError("degenerate problem: Lipschitz constant is zero");
  const ConstraintSystem& cs = problem.constraints;
  if (!(cs.phi_min_a() > 0.0)) throw ConfigError("A must have full column rank (phi_min_A > 0)");
  opt.shape.n = problem.n();

  auto resolve_r = [&](double eta, double rho) {
    return opt.r_policy == RPolicy::kMinimal ? minimal_r(eta, rho, cs) : opt.fixed_r;
  };
  auto clamp_eta = [&](double eta, double rho) {
    if (opt.fixed_eta) return *opt.fixed_eta;
    if (opt.r_policy == RPolicy::kFixed) return std::min(eta, (opt.fixed_r - 1.0) / (rho * cs.norm_ata()));
    return eta;
  };
  auto make = [&](double eta, double rho, const Certificate& c) {
    Suggestion s;
    s.found = true;
    s.certificate = c;
    s.config.variant = v;
    s.config.eta = eta;
    s.config.rho = rho;
    s.config.r = c.r;
    s.config.batch_size = opt.shape.batch_size;
    s.config.epoch_length = opt.shape.epoch_length;
    s.config.iterations = opt.shape.iterations;
    return s;
  };

  double rho = 2.0 * rho_star(L, cs.phi_min_a());
  if (v == Variant::kSvrg) {
    for (int it = 0; it < 50; ++it) rho = 2.0 * detail::variant_rho_star(v, L, cs, rho, opt.shape);
  }
  {
    const double eta = clamp_eta(detail::closed_form_eta(rho, cs), rho);
    const Certificate c = certify(v, L, cs, eta, rho, resolve_r(eta, rho), opt.shape);
    if (c.accepted) return make(eta, rho, c);
  }

  Suggestion out;
  out.from_grid = true;
  const double rho_base = rho_star(L, cs.phi_min_a());
  for (int i = 0; i <= 120; ++i) {
    const double rho_i = rho_base * 1.05 * std::pow(10.0, i / 8.0);
    std::vector<double> etas;
    if (opt.fixed_eta) {
      etas.push_back(*opt.fixed_eta);
    } else {
      etas.push_back(detail::closed_form_eta(rho_i, cs));
      for (int k = -24; k <= 48; ++k) etas.push_back(std::pow(10.0, k / 8.0) / (rho_i * cs.phi_min_a()));
    }
    std::optional<Suggestion> best;
    for (double e : etas) {
      const double eta = clamp_eta(e, rho_i);
      if (!(eta > 0.0)) continue;
      const double r = resolve_r(eta, rho_i);
      const Certificate c = certify(v, L, cs, eta, rho_i, r, opt.shape);
      out.grid.push_back({eta, rho_i, r, c.min_gamma, c.accepted});
      if (c.accepted && (!best || c.min_gamma > best->certificate.min_gamma)) best = make(eta, rho_i, c);
    }
    if (best) {
      best->from_grid = true;
      best->grid = std::move(out.grid);
      return *best;
    }
  }
  return out;
}

/// Empirical stand-in for σ²: max_i ‖∇f_i(x) − ∇f(x)‖². An estimate, not a bound.
template <class Loss>
double estimate_sigma_sq(const CompositeProblem<Loss>& problem, const Vector& x) {
  const Vector full = problem.loss.full_gradient(x);
  double best = 0.0;
  for (Index i = 0; i < problem.n(); ++i) best = std::max(best, (problem.loss.component_gradient(i, x) - full).squaredNorm());
  return best;
}

/// Mini-batch size the plain stochastic scheme's rate statement asks for at accuracy ε
/// (informational; σ² is only estimated). Assumes ‖B‖ = 1.
inline double min_batch_for_accuracy(const TheoryConstants& k, double sigma_sq, double epsilon) {
  const double rho = k.rho, phi = k.phi_min_a;
  const double k1 = 3.0 * (k.L * k.L + k.phi_max_h * k.phi_max_h / (k.eta * k.eta));
  const double k2 = k.zeta / (rho * rho);
  const double k3 = rho * rho * k.norm_ata;
  const double k4 = (phi * rho + 20.0) / (2.0 * phi * rho);
  return 2.0 * sigma_sq / epsilon * std::max({k1 * k4 + 3.0, k2 * k4 + 10.0 / (phi * rho * rho), k3 * k4});
}

}  // namespace ncadmm
