#pragma once

#include <chrono>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "metrics.hpp"

namespace ncadmm {

/// Evolving iterate plus the variance-reduction memory of SVRG / SAGA.
struct SolverState {
  Vector x;
  Vector y;
  Vector lambda;
  std::int64_t t = 0;

  // SVRG
  Vector snapshot;
  Vector snapshot_grad;  // ∇f(x̃)
  std::int64_t epoch = 0;

  // SAGA
  RowMatrix grad_table;  // row i holds ∇f_i(z_i)
  Vector psi;            // row mean of grad_table
  RowMatrix points;      // z_i, only with store_saga_points
};

struct TraceRecord {
  std::int64_t t = 0;
  double wall_time = 0.0;
  std::int64_t ifo = 0;
  double objective = 0.0;            // f(x) + g(y)
  double objective_composite = 0.0;  // f(x) + g(Ax), NaN unless B = −I and c = 0
  double feasibility = 0.0;
  double dual_residual = 0.0;
  double subgrad_dist_sq = 0.0;
  double test_error = std::numeric_limits<double>::quiet_NaN();
  double test_loss = std::numeric_limits<double>::quiet_NaN();
  double lyapunov = std::numeric_limits<double>::quiet_NaN();
};

/// One completed step, handed to RunOptions::on_step before state moves on.
struct StepView {
  std::int64_t t = 0;  // index of the new iterate, t + 1 in x_{t+1}
  const Vector& x_prev;
  const Vector& x;
  const Vector& y;
  const Vector& lambda_prev;
  const Vector& lambda;
  const Vector& g_hat;
  const SolverState& state;
};

/// Which Lyapunov sequence the trace's `lyapunov` column carries.
struct LyapunovSpec {
  LyapunovKind kind = LyapunovKind::kPsi;
  TheoryConstants constants;
  std::vector<double> schedule;  // h_1..h_m (Phi) or α_1..α_T (Theta)
};

struct TestMetrics {
  double error = 0.0;
  double loss = 0.0;
};

struct RunOptions {
  std::int64_t trace_stride = 1;
  std::function<void(const TraceRecord&)> on_record;
  std::function<void(const StepView&)> on_step;
  std::function<TestMetrics(const Vector& x)> test_metrics;
  std::optional<LyapunovSpec> lyapunov;
  /// Stop early (without error) once this much solver time has elapsed.
  double time_budget = std::numeric_limits<double>::infinity();
  bool keep_iterates = false;
  /// Overrides the seeded standard-normal start.
  std::optional<Vector> x0;
  std::optional<Vector> y0;
};

struct RunResult {
  std::vector<TraceRecord> trace;
  SolverState final_state;
  // Iterate k ∈ [1, T] drawn uniformly from the seeded output stream.
  std::int64_t output_index = 0;
  Vector output_x;
  Vector output_y;
  Vector output_lambda;
  std::vector<double> step_sq;  // ‖x_{t+1} − x_t‖² for every step taken
  std::vector<IterateRecord> iterates;
  std::int64_t ifo = 0;
  double wall_time = 0.0;
  bool stopped_by_budget = false;
};

/// y_{t+1} = argmin_y L_ρ(x_t, y, λ_t) = prox_{g/ρ}(Ax_t − c − λ_t/ρ) for B = −I.
template <class Loss>
Vector y_update(const CompositeProblem<Loss>& problem, const Vector& x, const Vector& lambda, double rho) {
  const ConstraintSystem& cs = problem.constraints;
  if (!cs.b_is_negative_identity()) throw UnsupportedError("closed-form y-update requires B = -I");
  Vector v = cs.a().apply(x) - lambda / rho;
  if (!cs.c_is_zero()) v -= cs.c();
  return problem.regularizer.prox(v, rho);
}

/// x_{t+1} = x_t − (η/r)[ĝ + ρAᵀ(Ax_t + By_{t+1} − c − λ_t/ρ)].
inline Vector x_update_uzawa(const ConstraintSystem& cs, const Vector& x, const Vector& y, const Vector& lambda,
                             const Vector& g_hat, double eta, double rho, double r) {
  const Vector inner = cs.residual(x, y) - lambda / rho;
  return x - (eta / r) * (g_hat + rho * cs.a().apply_transpose(inner));
}

/// λ_{t+1} = λ_t − ρ(Ax_{t+1} + By_{t+1} − c).
inline Vector lambda_update(const ConstraintSystem& cs, const Vector& x, const Vector& y, const Vector& lambda,
                            double rho) {
  return lambda - rho * cs.residual(x, y);
}

/// Mean of ∇f_i(x) over the batch (in batch order).
template <class Loss>
Vector stoc_gradient(const CompositeProblem<Loss>& problem, const Vector& x, std::span<const Index> batch) {
  return problem.loss.mean_gradient(x, batch);
}

namespace detail {

inline bool is_full_ordered(std::span<const Index> batch, Index n) {
  if (static_cast<Index>(batch.size()) != n) return false;
  for (Index i = 0; i < n; ++i) {
    if (batch[static_cast<std::size_t>(i)] != i) return false;
  }
  return true;
}

}  // namespace detail

/// (1/M) Σ_{i∈I} (∇f_i(x) − ∇f_i(x̃)) + ∇f(x̃). A full ordered batch returns ∇f(x) directly.
template <class Loss>
Vector svrg_gradient(const CompositeProblem<Loss>& problem, const SolverState& s, const Vector& x,
                     std::span<const Index> batch) {
  if (batch.empty()) throw ConfigError("empty mini-batch");
  if (s.snapshot.size() != x.size() || s.snapshot_grad.size() != x.size())
    throw InternalError("SVRG snapshot missing or stale");
  if (detail::is_full_ordered(batch, problem.n())) return problem.loss.full_gradient(x);
  detail::check_indices(batch, problem.n());
  Vector g = Vector::Zero(x.size());
  for (Index i : batch) {
    problem.loss.add_component_gradient(i, x, 1.0, g);
    problem.loss.add_component_gradient(i, s.snapshot, -1.0, g);
  }
  g /= static_cast<double>(batch.size());
  g += s.snapshot_grad;
  return g;
}

/// Fills the SAGA table at z_i = x for every i.
template <class Loss>
void saga_init(const CompositeProblem<Loss>& problem, SolverState& s, const Vector& x, bool store_points) {
  const Index n = problem.n(), d = problem.d();
  s.grad_table.setZero(n, d);
  Vector row(d);
  for (Index i = 0; i < n; ++i) {
    row.setZero();
    problem.loss.add_component_gradient(i, x, 1.0, row);
    s.grad_table.row(i) = row.transpose();
  }
  s.psi = problem.loss.full_gradient(x);
  if (store_points) s.points = x.transpose().replicate(n, 1);
}

/// ĝ = (1/M) Σ_{i∈I} (∇f_i(x_t) − ∇f_i(z_i)) + ψ_t. A full ordered batch returns ∇f(x_t) directly.
template <class Loss>
Vector saga_gradient(const CompositeProblem<Loss>& problem, const SolverState& s, const Vector& x,
                     std::span<const Index> batch) {
  if (batch.empty()) throw ConfigError("empty mini-batch");
  if (detail::is_full_ordered(batch, problem.n())) return problem.loss.full_gradient(x);
  detail::check_indices(batch, problem.n());
  Vector g = Vector::Zero(x.size());
  for (Index i : batch) {
    problem.loss.add_component_gradient(i, x, 1.0, g);
    g -= s.grad_table.row(i).transpose();
  }
  g /= static_cast<double>(batch.size());
  g += s.psi;
  return g;
}

/// z_i ← x_{t+1} for the (deduplicated) batch, with ψ updated incrementally.
template <class Loss>
void saga_table_update(const CompositeProblem<Loss>& problem, SolverState& s, const Vector& x_next,
                       std::span<const Index> batch, bool check) {
  const Index n = problem.n();
  if (detail::is_full_ordered(batch, n)) {
    saga_init(problem, s, x_next, s.points.size() > 0);
    return;
  }
  std::vector<Index> uniq(batch.begin(), batch.end());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  Vector fresh(problem.d());
  for (Index i : uniq) {
    fresh.setZero();
    problem.loss.add_component_gradient(i, x_next, 1.0, fresh);
    s.psi += (fresh - s.grad_table.row(i).transpose()) / static_cast<double>(n);
    s.grad_table.row(i) = fresh.transpose();
    if (s.points.size() > 0) s.points.row(i) = x_next.transpose();
  }
  if (check) {
    const Vector mean = s.grad_table.colwise().mean().transpose();
    if ((mean - s.psi).norm() > 1e-8 * std::max(1.0, mean.norm())) throw InternalError("SAGA running mean drifted");
  }
}

/// Combined SAGA step: estimator at x_t, then the table refresh at x_{t+1}.
template <class Loss>
Vector saga_gradient_and_update(const CompositeProblem<Loss>& problem, SolverState& s, const Vector& x,
                                const Vector& x_next, std::span<const Index> batch, bool check = false) {
  Vector g = saga_gradient(problem, s, x, batch);
  saga_table_update(problem, s, x_next, batch, check);
  return g;
}

/// M indices drawn uniformly with replacement; M = n yields 0..n−1 in order.
inline void draw_batch(CounterRng& rng, Index n, Index M, std::vector<Index>& out) {
  out.resize(static_cast<std::size_t>(M));
  if (M == n) {
    std::iota(out.begin(), out.end(), Index{0});
    return;
  }
  for (auto& i : out) i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
}

namespace detail {

template <class Loss>
class Runner {
 public:
  Runner(const CompositeProblem<Loss>& p, const SolverConfig& c, const RunOptions& o)
      : problem_(p), cs_(p.constraints), cfg_(c), opt_(o), r_(c.resolved_r(p.constraints)) {}

  RunResult run() {
    validate(cfg_, problem_.n(), cs_);
    if (opt_.trace_stride < 1) throw ConfigError("trace stride must be at least 1");
    if (opt_.lyapunov && opt_.lyapunov->kind == LyapunovKind::kTheta && !cfg_.store_saga_points)
      throw CapabilityError("Theta needs store_saga_points");
    const Index n = problem_.n(), d = problem_.d();
    const std::int64_t T = cfg_.iterations;
    composite_ok_ = cs_.b_is_negative_identity() && cs_.c_is_zero();

    CounterRng init = make_rng(cfg_.seed, Stream::kInit);
    s_.x = opt_.x0 ? *opt_.x0 : normal_vector(init, d);
    s_.y = opt_.y0 ? *opt_.y0 : normal_vector(init, problem_.p());
    if (s_.x.size() != d || s_.y.size() != problem_.p()) throw InputError("initial point has the wrong dimension");
    s_.lambda = Vector::Zero(problem_.q());
    x_prev_ = s_.x;

    CounterRng out_rng = make_rng(cfg_.seed, Stream::kOutputIndex);
    res_.output_index = T > 0 ? static_cast<std::int64_t>(out_rng.below(static_cast<std::uint64_t>(T))) + 1 : 0;
    res_.output_x = s_.x;
    res_.output_y = s_.y;
    res_.output_lambda = s_.lambda;
    res_.step_sq.reserve(static_cast<std::size_t>(T));

    const auto clock_start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count() - paused_;
    };

    if (cfg_.variant == Variant::kSaga) {
      saga_init(problem_, s_, s_.x, cfg_.store_saga_points);
      ifo_ += n;
    }
    if (cfg_.variant == Variant::kSvrg) {
      s_.snapshot = s_.x;
      s_.snapshot_grad = problem_.loss.full_gradient(s_.x);
      ifo_ += n;
    }
    if (opt_.lyapunov && cfg_.variant == Variant::kSaga && cfg_.store_saga_points)
      prev_spread_ = point_spread_sq(s_.x, s_.points);

    if (T > 0) record(elapsed());

    CounterRng batch_rng = make_rng(cfg_.seed, Stream::kBatch);
    std::vector<Index> batch;
    Vector g_hat;
    for (std::int64_t t = 0; t < T; ++t) {
      if (elapsed() > opt_.time_budget) {
        res_.stopped_by_budget = true;
        break;
      }
      // SVRG: snapshot refresh at every epoch boundary after the first.
      if (cfg_.variant == Variant::kSvrg && t > 0 && t % cfg_.epoch_length == 0) {
        s_.snapshot = s_.x;
        s_.snapshot_grad = problem_.loss.full_gradient(s_.x);
        ++s_.epoch;
        ifo_ += n;
      }
      if (cfg_.variant == Variant::kSvrg && cfg_.check_invariants) {
        const Vector fresh = problem_.loss.full_gradient(s_.snapshot);
        if ((fresh - s_.snapshot_grad).norm() > 1e-12 * std::max(1.0, fresh.norm()))
          throw InternalError("SVRG snapshot gradient is stale");
      }

      const Vector y_next = y_update(problem_, s_.x, s_.lambda, cfg_.rho);
      switch (cfg_.variant) {
        case Variant::kDete:
          g_hat = problem_.loss.full_gradient(s_.x);
          ifo_ += n;
          break;
        case Variant::kStoc:
          draw_batch(batch_rng, n, cfg_.batch_size, batch);
          g_hat = stoc_gradient(problem_, s_.x, batch);
          ifo_ += cfg_.batch_size;
          break;
        case Variant::kSvrg:
          draw_batch(batch_rng, n, cfg_.batch_size, batch);
          g_hat = svrg_gradient(problem_, s_, s_.x, batch);
          ifo_ += cfg_.batch_size;
          break;
        case Variant::kSaga:
          draw_batch(batch_rng, n, cfg_.batch_size, batch);
          g_hat = saga_gradient(problem_, s_, s_.x, batch);
          ifo_ += cfg_.batch_size;
          break;
      }
      Vector x_next = x_update_uzawa(cs_, s_.x, y_next, s_.lambda, g_hat, cfg_.eta, cfg_.rho, r_);
      Vector lambda_next = lambda_update(cs_, x_next, y_next, s_.lambda, cfg_.rho);
      if (cfg_.variant == Variant::kSaga) {
        if (opt_.lyapunov && cfg_.store_saga_points) prev_spread_ = point_spread_sq(s_.x, s_.points);
        saga_table_update(problem_, s_, x_next, batch, cfg_.check_invariants);
      }

      const double xn = x_next.norm();
      if (!x_next.allFinite() || !y_next.allFinite() || !lambda_next.allFinite())
        throw DivergenceError(t + 1, "non-finite iterate");
      if (xn > 1e12) throw DivergenceError(t + 1, "|x| exceeded 1e12");

      res_.step_sq.push_back((x_next - s_.x).squaredNorm());
      if (opt_.on_step) {
        pause_begin();
        opt_.on_step(StepView{t + 1, s_.x, x_next, y_next, s_.lambda, lambda_next, g_hat, s_});
        pause_end();
      }
      x_prev_ = std::move(s_.x);
      s_.x = std::move(x_next);
      s_.y = y_next;
      s_.lambda = std::move(lambda_next);
      s_.t = t + 1;

      if (s_.t == res_.output_index) {
        res_.output_x = s_.x;
        res_.output_y = s_.y;
        res_.output_lambda = s_.lambda;
      }
      if (s_.t % opt_.trace_stride == 0 || s_.t == T) record(elapsed());
    }

    res_.wall_time = elapsed();
    res_.ifo = ifo_;
    res_.final_state = std::move(s_);
    return std::move(res_);
  }

 private:
  void pause_begin() { pause_start_ = std::chrono::steady_clock::now(); }
  void pause_end() {
    paused_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - pause_start_).count();
  }

  void record(double wall) {
    pause_begin();
    TraceRecord rec;
    rec.t = s_.t;
    rec.wall_time = wall;
    rec.ifo = ifo_;
    const double f = problem_.loss.full_value(s_.x);
    rec.objective = f + problem_.regularizer.value(s_.y);
    rec.objective_composite = composite_ok_ ? f + problem_.regularizer.value(cs_.a().apply(s_.x))
                                            : std::numeric_limits<double>::quiet_NaN();
    const StationarityReport st = stationarity(problem_, s_.x, s_.y, s_.lambda, &x_prev_, cfg_.rho);
    rec.feasibility = st.feasibility_sq;
    rec.dual_residual = st.dual_sq;
    rec.subgrad_dist_sq = st.subgrad_dist_sq;
    if (opt_.test_metrics) {
      const TestMetrics tm = opt_.test_metrics(s_.x);
      rec.test_error = tm.error;
      rec.test_loss = tm.loss;
    }
    if (opt_.lyapunov) rec.lyapunov = lyapunov_value(*opt_.lyapunov);
    if (opt_.keep_iterates) {
      IterateRecord it{s_.x, s_.y, s_.lambda, std::nullopt, std::nullopt};
      if (cfg_.variant == Variant::kSvrg) it.snapshot = s_.snapshot;
      if (cfg_.variant == Variant::kSaga && cfg_.store_saga_points) it.points = s_.points;
      res_.iterates.push_back(std::move(it));
    }
    res_.trace.push_back(rec);
    if (opt_.on_record) opt_.on_record(rec);
    pause_end();
  }

  double lyapunov_value(const LyapunovSpec& spec) {
    const TheoryConstants& k = spec.constants;
    const double base = lyapunov_psi_value(problem_, s_.x, s_.y, s_.lambda, x_prev_, k);
    switch (spec.kind) {
      case LyapunovKind::kPsi: return base;
      case LyapunovKind::kPhi: {
        if (cfg_.variant != Variant::kSvrg) throw CapabilityError("Phi is defined for SVRG runs");
        // The snapshot for the next epoch is taken lazily, so at an epoch
        // boundary x_t is already x̃ and the spread terms vanish.
        const std::int64_t j = s_.t % cfg_.epoch_length;
        if (j == 0) return base;
        return base + svrg_weight(spec.schedule, j) *
                          ((s_.x - s_.snapshot).squaredNorm() + (x_prev_ - s_.snapshot).squaredNorm());
      }
      case LyapunovKind::kTheta: {
        if (cfg_.variant != Variant::kSaga) throw CapabilityError("Theta is defined for SAGA runs");
        const double spread = point_spread_sq(s_.x, s_.points);
        return base + saga_weight(spec.schedule, s_.t) / static_cast<double>(problem_.n()) * (spread + prev_spread_);
      }
    }
    return base;
  }

  const CompositeProblem<Loss>& problem_;
  const ConstraintSystem& cs_;
  SolverConfig cfg_;
  const RunOptions& opt_;
  double r_;
  bool composite_ok_ = false;
  SolverState s_;
  Vector x_prev_;
  RunResult res_;
  std::int64_t ifo_ = 0;
  double paused_ = 0.0;
  std::chrono::steady_clock::time_point pause_start_;
  double prev_spread_ = 0.0;
};

}  // namespace detail

/// Runs T effective iterations of the configured variant from a seeded start.
/// Throws DivergenceError on a non-finite iterate or ‖x‖ > 1e12.
template <class Loss>
RunResult run(const CompositeProblem<Loss>& problem, const SolverConfig& config, const RunOptions& options = {}) {
  return detail::Runner<Loss>(problem, config, options).run();
}

}  // namespace ncadmm
