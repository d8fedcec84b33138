#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace ncadmm;
using ncadmm::testing::sigmoid_problem;

TEST(Stationarity, ZeroMultiplierAtZeroIsSubgradientExact) {
  for (double nu : {0.0, 0.3, 5.0}) {
    auto p = sigmoid_problem(build_overlap_a(3, 2), 5, nu, 1);
    const StationarityReport r = stationarity(p, Vector::Ones(3), Vector::Zero(6), Vector::Zero(6));
    EXPECT_EQ(r.subgrad_dist_sq, 0.0);
  }
}

TEST(Stationarity, L1DistanceWorkedExample) {
  Vector v(2), y(2);
  v << 1.5, 2.0;
  y << 1.0, 0.0;
  EXPECT_DOUBLE_EQ(l1_subgradient_dist_sq(v, y, 1.0), 1.25);
  // Same numbers through the report: B = −I, so v = Bᵀλ = −λ.
  auto p = sigmoid_problem(build_overlap_a(2, 1), 4, 1.0, 2);
  const StationarityReport r = stationarity(p, Vector::Zero(2), y, -v);
  EXPECT_DOUBLE_EQ(r.subgrad_dist_sq, 1.25);
  EXPECT_EQ(r.epsilon, std::max({r.feasibility_sq, r.dual_sq, r.subgrad_dist_sq}));
}

TEST(Stationarity, L1DistanceMatchesBruteForce) {
  CounterRng rng(3, 0);
  for (int k = 0; k < 50; ++k) {
    const double nu = rng.uniform();
    Vector v = normal_vector(rng, 5), y = normal_vector(rng, 5);
    for (Index i = 0; i < 5; ++i)
      if (rng.uniform() < 0.4) y[i] = 0.0;
    double brute = 0.0;
    for (Index i = 0; i < 5; ++i) {
      if (y[i] != 0.0) {
        const double e = v[i] - std::copysign(nu, y[i]);
        brute += e * e;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      const int steps = static_cast<int>(std::ceil(2.0 * nu / 1e-3));
      for (int j = 0; j <= steps; ++j) {
        const double s = std::min(nu, -nu + j * 1e-3);
        best = std::min(best, (v[i] - s) * (v[i] - s));
      }
      brute += best;
    }
    EXPECT_NEAR(std::sqrt(l1_subgradient_dist_sq(v, y, nu)), std::sqrt(brute), 2e-3);
  }
}

TEST(Stationarity, FirstOrderExactPointHasZeroResiduals) {
  // A = [I; I] with ℓ1 on the first copy only. At x = 0 take λ = (∇f(0), 0):
  // feasible, Aᵀλ = ∇f(0), and −∇f(0) lies in ν[−1, 1] once ν ≥ ‖∇f(0)‖∞.
  const Index d = 4;
  ConstraintSystem cs = build_overlap_a(d, 2);
  SigmoidLoss<> loss(ncadmm::testing::random_features(12, d, 4), ncadmm::testing::random_signs(12, 4));
  const Vector g0 = loss.full_gradient(Vector::Zero(d));
  const double nu = 2.0 * g0.cwiseAbs().maxCoeff();
  BlockSeparableRegularizer reg(2 * d, {RegularizerBlock::l1(0, d, nu), RegularizerBlock::l1(d, d, 0.0)});
  auto p = make_problem(std::move(loss), std::move(reg), std::move(cs));
  Vector lam = Vector::Zero(2 * d);
  lam.head(d) = g0;
  const StationarityReport r = stationarity(p, Vector::Zero(d), Vector::Zero(2 * d), lam);
  EXPECT_LE(r.feasibility_sq, 1e-10);
  EXPECT_LE(r.dual_sq, 1e-10);
  EXPECT_LE(r.subgrad_dist_sq, 1e-10);
}

TEST(Stationarity, NuclearBlockNeedsPreviousIterate) {
  auto mt = build_multitask_constraints(2, 2, 0.1, 1.0, 0.2);
  const Index d = 4;
  SigmoidLoss<> loss(ncadmm::testing::random_features(5, d, 5), ncadmm::testing::random_signs(5, 5));
  auto p = make_problem(std::move(loss), mt.regularizer, mt.constraints);
  const Vector x = Vector::Ones(d);
  const Vector y = p.constraints.a().apply(x);
  const Vector lam = Vector::Zero(p.q());
  EXPECT_THROW(stationarity(p, x, y, lam), CapabilityError);
  // With x_prev = x only the ℓ1 block (weight ν1κ0 = 0.1, y = 1) contributes.
  const double l1_only = stationarity(p, x, y, lam, &x, 3.0).subgrad_dist_sq;
  EXPECT_NEAR(l1_only, 4 * 0.01, 1e-15);
  const Vector prev = Vector::Zero(d);
  EXPECT_GT(stationarity(p, x, y, lam, &prev, 3.0).subgrad_dist_sq, l1_only);
}

namespace {

IterateRecord state(const Vector& x, const Vector& y, const Vector& lam) { return {x, y, lam, std::nullopt, std::nullopt}; }

}  // namespace

TEST(Lyapunov, ConstantTrajectoryIsAugmentedLagrangian) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 6, 0.1, 6);
  CounterRng rng(7, 0);
  const Vector x = normal_vector(rng, 3), y = normal_vector(rng, 3), lam = normal_vector(rng, 3);
  const TheoryConstants k = TheoryConstants::compute(1.0, p.constraints, 0.1, 5.0, minimal_r(0.1, 5.0, p.constraints));
  const std::vector<IterateRecord> it(4, state(x, y, lam));
  const double lr = p.augmented_lagrangian(x, y, lam, 5.0);
  for (double v : lyapunov_psi(p, it, k).values) EXPECT_EQ(v, lr);

  // Θ̂ with every z_i = x carries no extra term either.
  std::vector<IterateRecord> saga = it;
  for (auto& s : saga) s.points = RowMatrix(x.transpose().replicate(6, 1));
  const RecursionSchedule alpha = saga_alpha_schedule(1.0, 1.0, 5.0, 2, 6, 4, 1.0);
  for (double v : lyapunov_theta(p, saga, alpha, k).values) EXPECT_EQ(v, lr);
}

TEST(Lyapunov, TwoIterateHandComputed) {
  auto p = sigmoid_problem(build_overlap_a(2, 1), 4, 0.2, 8);
  Vector x0(2), x1(2), y(2), lam(2);
  x0 << 0.0, 0.0;
  x1 << 0.3, -0.4;
  y << 0.1, 0.0;
  lam << 0.5, -0.5;
  const double eta = 0.5, rho = 4.0, L = 2.0;
  const TheoryConstants k = TheoryConstants::compute(L, p.constraints, eta, rho, minimal_r(eta, rho, p.constraints));
  // A = I: φ_max^H = r − ρη = 1, ζ = 5(L²η² + 1)/η² = 5·(1 + 1)/0.25 = 40.
  EXPECT_DOUBLE_EQ(k.zeta, 40.0);
  const std::vector<IterateRecord> it{state(x0, y, lam), state(x1, y, lam)};
  const LyapunovTrace tr = lyapunov_psi(p, it, k);
  const double expect = p.augmented_lagrangian(x1, y, lam, rho) + 40.0 / 4.0 * 0.25;
  EXPECT_NEAR(tr.values[1], expect, 1e-14);
}

TEST(Lyapunov, DeterministicRunDecreasesUnderCertificate) {
  auto check = [](const auto& p) {
    const Suggestion s = suggest_params(p, Variant::kDete);
    ASSERT_TRUE(s.found);
    SolverConfig c = s.config;
    c.iterations = 2000;
    RunOptions o;
    o.keep_iterates = true;
    const RunResult r = run(p, c, o);
    const LyapunovTrace tr = lyapunov_psi(p, r.iterates, s.certificate.constants);
    for (std::size_t t = 0; t + 1 < tr.values.size(); ++t)
      ASSERT_LE(tr.values[t + 1], tr.values[t] - s.certificate.gamma * r.step_sq[t] + 1e-9) << "t = " << t;
  };
  check(sigmoid_problem(build_overlap_a(3, 1), 20, 0.1, 9));
  check(sigmoid_problem(build_overlap_a(4, 2), 30, 0.05, 10));
  check(ncadmm::testing::graph_guided_problem(40, 6, 11, 0.01));
}

TEST(Lyapunov, TraceColumnMatchesOfflinePsi) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 20, 0.1, 12);
  const Suggestion s = suggest_params(p, Variant::kStoc);
  SolverConfig c = s.config;
  c.iterations = 50;
  c.batch_size = 4;
  RunOptions o;
  o.keep_iterates = true;
  o.lyapunov = LyapunovSpec{LyapunovKind::kPsi, s.certificate.constants, {}};
  const RunResult r = run(p, c, o);
  const LyapunovTrace tr = lyapunov_psi(p, r.iterates, s.certificate.constants);
  ASSERT_EQ(tr.values.size(), r.trace.size());
  for (std::size_t t = 0; t < tr.values.size(); ++t) EXPECT_EQ(tr.values[t], r.trace[t].lyapunov);
}

TEST(Lyapunov, SvrgPhiMatchesOfflineAndResetsAtEpochStart) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 12, 0.1, 13);
  SolverConfig c;
  c.variant = Variant::kSvrg;
  c.eta = 0.2;
  c.rho = 10.0;
  c.batch_size = 2;
  c.epoch_length = 4;
  c.iterations = 20;
  const TheoryConstants k = TheoryConstants::compute(estimate_lipschitz(p), p.constraints, c.eta, c.rho,
                                                     c.resolved_r(p.constraints));
  const RecursionSchedule h = svrg_h_schedule(k.L, k.phi_min_a, c.rho, c.batch_size, c.epoch_length, 1.0);
  RunOptions o;
  o.keep_iterates = true;
  o.lyapunov = LyapunovSpec{LyapunovKind::kPhi, k, h.values};
  const RunResult r = run(p, c, o);
  const LyapunovTrace tr = lyapunov_phi(p, r.iterates, h, k);
  const LyapunovTrace psi = lyapunov_psi(p, r.iterates, k);
  for (std::size_t t = 0; t < tr.values.size(); ++t) {
    EXPECT_NEAR(tr.values[t], r.trace[t].lyapunov, 1e-12 * std::max(1.0, std::abs(tr.values[t])));
    if (t % 4 == 0) EXPECT_EQ(tr.values[t], psi.values[t]);
    else EXPECT_GE(tr.values[t], psi.values[t]);
  }
}

TEST(Lyapunov, ThetaNeedsStoredPoints) {
  auto p = sigmoid_problem(build_overlap_a(2, 1), 5, 0.1, 14);
  const TheoryConstants k = TheoryConstants::compute(1.0, p.constraints, 0.1, 5.0, 2.0);
  const std::vector<IterateRecord> it{state(Vector::Zero(2), Vector::Zero(2), Vector::Zero(2))};
  EXPECT_THROW(lyapunov_theta(p, it, saga_alpha_schedule(1.0, 1.0, 5.0, 1, 5, 1, 1.0), k), CapabilityError);
  SolverConfig c;
  c.variant = Variant::kSaga;
  c.iterations = 3;
  RunOptions o;
  o.lyapunov = LyapunovSpec{LyapunovKind::kTheta, k, {1.0, 1.0, 1.0}};
  EXPECT_THROW(run(p, c, o), CapabilityError);
}

TEST(Lyapunov, SagaThetaMatchesOffline) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 10, 0.1, 15);
  SolverConfig c;
  c.variant = Variant::kSaga;
  c.eta = 0.2;
  c.rho = 10.0;
  c.batch_size = 3;
  c.iterations = 15;
  c.store_saga_points = true;
  const TheoryConstants k = TheoryConstants::compute(estimate_lipschitz(p), p.constraints, c.eta, c.rho,
                                                     c.resolved_r(p.constraints));
  const RecursionSchedule a = saga_alpha_schedule(k.L, k.phi_min_a, c.rho, 3, 10, 15, 1.0);
  RunOptions o;
  o.keep_iterates = true;
  o.lyapunov = LyapunovSpec{LyapunovKind::kTheta, k, a.values};
  const RunResult r = run(p, c, o);
  const LyapunovTrace tr = lyapunov_theta(p, r.iterates, a, k);
  for (std::size_t t = 0; t < tr.values.size(); ++t)
    EXPECT_NEAR(tr.values[t], r.trace[t].lyapunov, 1e-12 * std::max(1.0, std::abs(tr.values[t])));
}

TEST(Lyapunov, SvrgMeanPhiNonIncreasingAcrossSeeds) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 16, 0.05, 16);
  SuggestOptions so;
  so.shape.batch_size = 4;
  so.shape.epoch_length = 4;
  const Suggestion s = suggest_params(p, Variant::kSvrg, so);
  ASSERT_TRUE(s.found);
  const std::int64_t T = 40;
  const int seeds = 20;
  std::vector<std::vector<double>> runs;
  for (int k = 0; k < seeds; ++k) {
    SolverConfig c = s.config;
    c.iterations = T;
    c.seed = 100 + static_cast<std::uint64_t>(k);
    RunOptions o;
    o.lyapunov = LyapunovSpec{LyapunovKind::kPhi, s.certificate.constants, s.certificate.schedule};
    std::vector<double> v;
    for (const auto& rec : run(p, c, o).trace) v.push_back(rec.lyapunov);
    runs.push_back(std::move(v));
  }
  for (std::size_t t = 0; t + 1 < runs[0].size(); ++t) {
    double mean = 0.0, sq = 0.0;
    for (const auto& v : runs) {
      const double dlt = v[t + 1] - v[t];
      mean += dlt / seeds;
      sq += dlt * dlt / seeds;
    }
    const double se = std::sqrt(std::max(0.0, sq - mean * mean) / seeds);
    EXPECT_LE(mean, 2.0 * se + 1e-12) << "t = " << t;
  }
}

TEST(Variance, SvrgAtSnapshotIsZero) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 6, 0.1, 17);
  const Vector x = Vector::LinSpaced(3, -1.0, 1.0);
  const VarianceReport r = svrg_variance(p, x, x, 1, estimate_lipschitz(p));
  EXPECT_TRUE(r.exact);
  EXPECT_EQ(r.bound, 0.0);
  EXPECT_LE(r.empirical, 1e-30);
}

TEST(Variance, EnumeratedWithinBounds) {
  for (Index n = 3; n <= 6; ++n) {
    auto p = sigmoid_problem(build_overlap_a(4, 1), n, 0.1, 18 + static_cast<std::uint64_t>(n));
    const double L = estimate_lipschitz(p);
    CounterRng rng(30, static_cast<std::uint64_t>(n));
    const Vector x = normal_vector(rng, 4), snap = normal_vector(rng, 4);
    RowMatrix pts(n, 4);
    for (Index i = 0; i < n; ++i) pts.row(i) = normal_vector(rng, 4).transpose();
    const VarianceReport sv = svrg_variance(p, x, snap, 1, L);
    const VarianceReport sa = saga_variance(p, x, pts, 1, L);
    EXPECT_TRUE(sv.exact && sa.exact);
    EXPECT_LE(sv.empirical, sv.bound);
    EXPECT_LE(sa.empirical, sa.bound);
  }
}

TEST(Variance, BoundScalesInverselyWithBatch) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 8, 0.1, 25);
  const double L = estimate_lipschitz(p);
  CounterRng rng(26, 0);
  const Vector x = normal_vector(rng, 3), snap = normal_vector(rng, 3);
  const VarianceReport a = svrg_variance(p, x, snap, 1, L), b = svrg_variance(p, x, snap, 4, L);
  EXPECT_DOUBLE_EQ(b.bound / a.bound, 0.25);
  EXPECT_NEAR(b.empirical / a.empirical, 0.25, 1e-12);
}

TEST(Variance, MonteCarloTracksExactValue) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 20, 0.1, 27);
  const double L = estimate_lipschitz(p);
  CounterRng rng(28, 0);
  const Vector x = normal_vector(rng, 3), snap = normal_vector(rng, 3);
  const VarianceReport exact = svrg_variance(p, x, snap, 2, L, 0);
  const VarianceReport mc = svrg_variance(p, x, snap, 2, L, 20000, 5);
  EXPECT_TRUE(exact.exact);
  EXPECT_FALSE(mc.exact);
  EXPECT_NEAR(mc.empirical, exact.empirical, 0.1 * exact.empirical);
}

TEST(RateSummary, ConstantIteratesAreFlat) {
  const RateSummary rs = rate_summary(std::vector<double>(50, 0.0));
  for (double t : rs.theta) EXPECT_EQ(t, 0.0);
  EXPECT_TRUE(rs.tail.flat);
}

TEST(RateSummary, ThetaAndRunningMinimum) {
  const std::vector<double> s{4.0, 1.0, 9.0, 0.5, 3.0};
  const RateSummary rs = rate_summary(s);
  const std::vector<double> theta{5.0, 10.0, 9.5, 3.5};
  const std::vector<double> best{5.0, 5.0, 5.0, 3.5};
  EXPECT_EQ(rs.theta, theta);
  EXPECT_EQ(rs.min_theta_by_T, best);
}

TEST(RateSummary, EveryThetaSpansTwoSteps) {
  const RateSummary rs = rate_summary(std::vector<double>(10, 1.0));
  ASSERT_EQ(rs.theta.size(), 9u);
  for (double t : rs.theta) EXPECT_EQ(t, 2.0);
  EXPECT_EQ(rs.min_theta_by_T.front(), 2.0);
  EXPECT_TRUE(rate_summary({1.0}).theta.empty());
}

TEST(RateSummary, DoublingHorizonNeverRaisesMinimum) {
  CounterRng rng(29, 0);
  std::vector<double> s(4096);
  for (auto& v : s) v = std::exp(3.0 * rng.normal());
  const RateSummary rs = rate_summary(s);
  for (std::size_t T = 1; 2 * T <= rs.min_theta_by_T.size(); T *= 2) EXPECT_LE(rs.min_theta_by_T[2 * T - 1], rs.min_theta_by_T[T - 1]);
}

TEST(RateSummary, SlopeOfInversePowerLaw) {
  std::vector<double> y(10000);
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = 3.0 / static_cast<double>(k + 1);
  const SlopeFit f = loglog_slope(y, 100, 10000);
  EXPECT_NEAR(f.slope, -1.0, 1e-9);
  EXPECT_NEAR(std::exp(f.intercept), 3.0, 1e-6);
}

TEST(RateSummary, DeterministicTinyInstanceDecaysFast) {
  auto p = ncadmm::testing::graph_guided_problem(40, 6, 31, 0.01);
  const Suggestion s = suggest_params(p, Variant::kDete);
  ASSERT_TRUE(s.found);
  SolverConfig c = s.config;
  c.iterations = 10000;
  RunOptions o;
  o.trace_stride = 10000;
  const RunResult r = run(p, c, o);
  const RateSummary rs = rate_summary(r.step_sq);
  const SlopeFit f = loglog_slope(rs.min_theta_by_T, 100, 10000);
  ASSERT_FALSE(f.flat);
  EXPECT_LE(f.slope, -0.8);
}

TEST(Stationarity, LongerCertifiedRunImproves) {
  auto p = ncadmm::testing::graph_guided_problem(40, 6, 32, 0.01);
  const Suggestion s = suggest_params(p, Variant::kDete);
  ASSERT_TRUE(s.found);
  auto eps_at = [&](std::int64_t T) {
    SolverConfig c = s.config;
    c.iterations = T;
    RunOptions o;
    o.trace_stride = T;
    return run(p, c, o).trace.back();
  };
  const TraceRecord a = eps_at(200), b = eps_at(2000);
  EXPECT_LE(std::max({b.feasibility, b.dual_residual, b.subgrad_dist_sq}),
            std::max({a.feasibility, a.dual_residual, a.subgrad_dist_sq}));
}
