#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace ncadmm;
using ncadmm::testing::rel_err;
using ncadmm::testing::sigmoid_problem;

namespace {

ConstraintSystem scalar_system() { return build_overlap_a(1, 1); }

Matrix random_matrix(Index r, Index c, CounterRng& rng) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST(YUpdate, ZeroRegularizerIsShiftedConstraint) {
  auto p = sigmoid_problem(build_overlap_a(3, 2), 4, 0.0, 1);
  CounterRng rng(2, 0);
  const Vector x = normal_vector(rng, 3), lam = normal_vector(rng, 6);
  const double rho = 2.5;
  EXPECT_LT(rel_err(y_update(p, x, lam, rho), p.constraints.a().apply(x) - lam / rho), 1e-15);
}

TEST(YUpdate, ScalarSoftThreshold) {
  auto p = sigmoid_problem(scalar_system(), 2, 1.0, 3);
  Vector x(1);
  x << 2.0;
  EXPECT_DOUBLE_EQ(y_update(p, x, Vector::Zero(1), 1.0)[0], 1.0);
}

TEST(YUpdate, MinimizesAugmentedLagrangianOverY) {
  auto p = sigmoid_problem(build_overlap_a(4, 2), 5, 0.3, 4);
  CounterRng rng(5, 0);
  for (int k = 0; k < 5; ++k) {
    const Vector x = normal_vector(rng, 4), lam = normal_vector(rng, 8);
    const double rho = 0.5 + rng.uniform();
    const Vector y = y_update(p, x, lam, rho);
    const double best = p.augmented_lagrangian(x, y, lam, rho);
    for (int c = 0; c < 1000; ++c) {
      const Vector cand = y + 0.2 * normal_vector(rng, 8);
      ASSERT_LE(best, p.augmented_lagrangian(x, cand, lam, rho) + 1e-12);
    }
  }
}

TEST(YUpdate, NonIdentityBIsUnsupported) {
  ConstraintSystem cs(LinearMap(Matrix(Matrix::Identity(2, 2))), LinearMap(Matrix(Matrix::Identity(2, 2))),
                      Vector::Zero(2));
  auto p = sigmoid_problem(cs, 3, 0.1, 6);
  EXPECT_THROW(y_update(p, Vector::Zero(2), Vector::Zero(2), 1.0), UnsupportedError);
}

TEST(XUpdate, ZeroDirectionLeavesXUnchanged) {
  const ConstraintSystem cs = build_overlap_a(3, 2);
  CounterRng rng(7, 0);
  const Vector x = normal_vector(rng, 3);
  const Vector y = cs.a().apply(x);
  EXPECT_EQ(x_update_uzawa(cs, x, y, Vector::Zero(6), Vector::Zero(3), 1.0, 1.0, 3.0), x);
}

TEST(XUpdate, ScalarExample) {
  const ConstraintSystem cs = scalar_system();
  Vector x(1), y(1), g(1);
  x << 1.0;
  y << 0.0;
  g << 0.5;
  const Vector out = x_update_uzawa(cs, x, y, Vector::Zero(1), g, 1.0, 1.0, 2.0);
  EXPECT_DOUBLE_EQ(out[0], 0.25);
  // Surrogate ĝ(x − x_t) + ½(H/η)(x − x_t)² + ½ρ(x − y)² with H = 1 on a fine grid.
  double best = 0.0, best_val = std::numeric_limits<double>::infinity();
  for (int k = -200000; k <= 200000; ++k) {
    const double z = k * 1e-5;
    const double v = 0.5 * (z - 1.0) + 0.5 * (z - 1.0) * (z - 1.0) + 0.5 * z * z;
    if (v < best_val) best_val = v, best = z;
  }
  EXPECT_NEAR(out[0], best, 1e-5);
}

TEST(XUpdate, EqualsDenseSurrogateMinimizer) {
  CounterRng rng(8, 0);
  for (int k = 0; k < 100; ++k) {
    const Index d = 1 + static_cast<Index>(rng.below(5));
    const Index q = d + static_cast<Index>(rng.below(3));
    const Matrix a = random_matrix(q, d, rng);
    const Matrix b = random_matrix(q, q, rng);
    const Vector c = normal_vector(rng, q);
    const ConstraintSystem cs(LinearMap(a), LinearMap(b), c);
    const Vector x = normal_vector(rng, d), y = normal_vector(rng, q), lam = normal_vector(rng, q);
    const Vector g = normal_vector(rng, d);
    const double eta = 0.1 + rng.uniform(), rho = 0.1 + 2.0 * rng.uniform();
    const double r = minimal_r(eta, rho, cs) + rng.uniform();
    const Matrix ata = a.transpose() * a;
    const Matrix h = r * Matrix::Identity(d, d) - rho * eta * ata;
    const Matrix lhs = h / eta + rho * ata;
    const Vector rhs = h * x / eta - g - rho * a.transpose() * (b * y - c - lam / rho);
    const Vector expect = lhs.ldlt().solve(rhs);
    EXPECT_LT(rel_err(x_update_uzawa(cs, x, y, lam, g, eta, rho, r), expect), 1e-8) << "instance " << k;
  }
}

TEST(LambdaUpdate, FeasibleIterateKeepsLambda) {
  const ConstraintSystem cs = build_overlap_a(2, 2);
  CounterRng rng(9, 0);
  const Vector x = normal_vector(rng, 2), lam = normal_vector(rng, 4);
  EXPECT_EQ(lambda_update(cs, x, cs.a().apply(x), lam, 3.0), lam);
}

TEST(LambdaUpdate, DirectFormula) {
  const ConstraintSystem cs = build_overlap_a(2, 1);
  Vector x(2), y(2), lam(2);
  x << 1.0, -1.0;
  y << 0.0, 0.0;
  lam << 0.5, 0.5;
  Vector expect(2);
  expect << -0.5, 1.5;
  EXPECT_EQ(lambda_update(cs, x, y, lam, 1.0), expect);
}

TEST(LambdaUpdate, DualIdentityOnRandomSteps) {
  CounterRng rng(10, 0);
  for (int k = 0; k < 50; ++k) {
    const Index d = 2 + static_cast<Index>(rng.below(4));
    const Matrix a = random_matrix(d + 2, d, rng);
    const ConstraintSystem cs = ConstraintSystem::with_negative_identity(LinearMap(a));
    const Vector x = normal_vector(rng, d), y = normal_vector(rng, d + 2), lam = normal_vector(rng, d + 2);
    const Vector g = normal_vector(rng, d);
    const double eta = 0.5 + rng.uniform(), rho = 0.5 + rng.uniform(), r = minimal_r(eta, rho, cs);
    const Vector xn = x_update_uzawa(cs, x, y, lam, g, eta, rho, r);
    const Vector ln = lambda_update(cs, xn, y, lam, rho);
    const Matrix h = r * Matrix::Identity(d, d) - rho * eta * a.transpose() * a;
    const Vector resid = a.transpose() * ln - g + h * (x - xn) / eta;
    EXPECT_LE(resid.norm(), 1e-8 * (1.0 + g.norm()));
  }
}

TEST(StocGradient, FullBatchIsFullGradient) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 6, 0.1, 11);
  const Vector x = Vector::LinSpaced(3, -1.0, 1.0);
  EXPECT_EQ(stoc_gradient(p, x, iota_indices(6)), p.loss.full_gradient(x));
}

TEST(StocGradient, UnbiasedAndVarianceBounded) {
  auto p = sigmoid_problem(build_overlap_a(4, 1), 3, 0.1, 12);
  CounterRng rng(13, 0);
  const Vector x = normal_vector(rng, 4);
  const Vector full = p.loss.full_gradient(x);
  Vector mean = Vector::Zero(4);
  double var = 0.0, sigma2 = 0.0;
  for (Index i = 0; i < 3; ++i) {
    const Index b[] = {i};
    const Vector g = stoc_gradient(p, x, b);
    mean += g / 3.0;
    var += (g - full).squaredNorm() / 3.0;
    sigma2 = std::max(sigma2, (g - full).squaredNorm());
  }
  EXPECT_LE((mean - full).norm(), 1e-12 * std::max(1.0, full.norm()));
  EXPECT_LE(var, sigma2);
}

TEST(StocGradient, EmptyBatchIsConfigError) {
  auto p = sigmoid_problem(build_overlap_a(2, 1), 3, 0.1, 14);
  EXPECT_THROW(stoc_gradient(p, Vector::Zero(2), std::span<const Index>{}), ConfigError);
}

TEST(SvrgGradient, AtSnapshotEqualsSnapshotGradient) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 5, 0.1, 15);
  SolverState s;
  CounterRng rng(16, 0);
  s.snapshot = normal_vector(rng, 3);
  s.snapshot_grad = p.loss.full_gradient(s.snapshot);
  const std::vector<Index> batch{1, 4, 4};
  EXPECT_LT(rel_err(svrg_gradient(p, s, s.snapshot, batch), s.snapshot_grad), 1e-15);
}

TEST(SvrgGradient, FullBatchIsFullGradient) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 5, 0.1, 17);
  SolverState s;
  CounterRng rng(18, 0);
  s.snapshot = normal_vector(rng, 3);
  s.snapshot_grad = p.loss.full_gradient(s.snapshot);
  const Vector x = normal_vector(rng, 3);
  EXPECT_EQ(svrg_gradient(p, s, x, iota_indices(5)), p.loss.full_gradient(x));
}

TEST(SvrgGradient, UnbiasedAndWithinVarianceBound) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 4, 0.1, 19);
  const double L = estimate_lipschitz(p);
  SolverState s;
  CounterRng rng(20, 0);
  s.snapshot = normal_vector(rng, 3);
  s.snapshot_grad = p.loss.full_gradient(s.snapshot);
  const Vector x = normal_vector(rng, 3);
  const Vector full = p.loss.full_gradient(x);
  Vector mean = Vector::Zero(3);
  double second = 0.0;
  for (Index i = 0; i < 4; ++i) {
    const Index b[] = {i};
    const Vector g = svrg_gradient(p, s, x, b);
    mean += g / 4.0;
    second += (g - full).squaredNorm() / 4.0;
  }
  EXPECT_LE((mean - full).norm(), 1e-12 * std::max(1.0, full.norm()));
  EXPECT_LE(second, L * L * (x - s.snapshot).squaredNorm());
}

TEST(SvrgGradient, MissingSnapshotIsInternalError) {
  auto p = sigmoid_problem(build_overlap_a(2, 1), 3, 0.1, 21);
  SolverState s;
  const std::vector<Index> batch{0};
  EXPECT_THROW(svrg_gradient(p, s, Vector::Zero(2), batch), InternalError);
}

TEST(SagaGradient, TableAtCurrentPointGivesFullGradient) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 6, 0.1, 22);
  CounterRng rng(23, 0);
  const Vector x = normal_vector(rng, 3);
  SolverState s;
  saga_init(p, s, x, false);
  const std::vector<Index> batch{0, 2, 2, 5};
  EXPECT_EQ(saga_gradient(p, s, x, batch), p.loss.full_gradient(x));
}

TEST(SagaGradient, UnbiasedOverSingleIndexBatches) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 3, 0.1, 24);
  CounterRng rng(25, 0);
  SolverState s;
  saga_init(p, s, normal_vector(rng, 3), true);
  // Move two of the stored points so the table is not uniform.
  for (Index i : {Index{0}, Index{2}}) {
    const Vector z = normal_vector(rng, 3);
    const Index b[] = {i};
    saga_table_update(p, s, z, b, true);
  }
  const Vector x = normal_vector(rng, 3);
  const Vector full = p.loss.full_gradient(x);
  Vector mean = Vector::Zero(3);
  for (Index i = 0; i < 3; ++i) {
    const Index b[] = {i};
    mean += saga_gradient(p, s, x, b) / 3.0;
  }
  EXPECT_LE((mean - full).norm(), 1e-12 * std::max(1.0, full.norm()));
}

TEST(SagaGradient, RunningMeanStaysConsistent) {
  auto p = sigmoid_problem(build_overlap_a(4, 1), 7, 0.1, 26);
  CounterRng rng(27, 0);
  SolverState s;
  saga_init(p, s, normal_vector(rng, 4), true);
  CounterRng brng(28, 0);
  std::vector<Index> batch;
  for (int k = 0; k < 500; ++k) {
    draw_batch(brng, 7, 3, batch);
    saga_gradient_and_update(p, s, s.points.row(0).transpose(), normal_vector(rng, 4), batch);
  }
  const Vector mean = s.grad_table.colwise().mean().transpose();
  EXPECT_LE((mean - s.psi).norm(), 1e-10 * std::max(1.0, mean.norm()));
  for (Index i = 0; i < 7; ++i) {
    const Vector z = s.points.row(i).transpose();
    EXPECT_LT(rel_err(s.grad_table.row(i).transpose(), p.loss.component_gradient(i, z)), 1e-15);
  }
}

TEST(SagaGradient, DuplicateIndicesWriteOnce) {
  auto p = sigmoid_problem(build_overlap_a(2, 1), 4, 0.1, 29);
  SolverState s, t;
  CounterRng rng(30, 0);
  const Vector x0 = normal_vector(rng, 2), x1 = normal_vector(rng, 2);
  saga_init(p, s, x0, false);
  saga_init(p, t, x0, false);
  const std::vector<Index> dup{1, 1, 3}, uniq{1, 3};
  saga_table_update(p, s, x1, dup, true);
  saga_table_update(p, t, x1, uniq, true);
  EXPECT_EQ(s.grad_table, t.grad_table);
  EXPECT_EQ(s.psi, t.psi);
}

namespace {

SolverConfig config(Variant v, std::int64_t T, std::uint64_t seed = 1) {
  SolverConfig c;
  c.variant = v;
  c.eta = 0.5;
  c.rho = 2.0;
  c.batch_size = 3;
  c.epoch_length = 4;
  c.iterations = T;
  c.seed = seed;
  return c;
}

constexpr Variant kAllVariants[] = {Variant::kDete, Variant::kStoc, Variant::kSvrg, Variant::kSaga};

}  // namespace

TEST(Run, ZeroIterationsReturnsInitialState) {
  auto p = sigmoid_problem(build_overlap_a(3, 2), 10, 0.1, 31);
  const RunResult r = run(p, config(Variant::kStoc, 0));
  EXPECT_TRUE(r.trace.empty());
  EXPECT_EQ(r.final_state.t, 0);
  EXPECT_EQ(r.final_state.lambda, Vector::Zero(6));
  CounterRng init = make_rng(1, Stream::kInit);
  EXPECT_EQ(r.final_state.x, normal_vector(init, 3));
  EXPECT_EQ(r.output_index, 0);
}

TEST(Run, DeterministicConvexSmokeReachesFeasibility) {
  // Zero features make f constant, so the problem is min ν‖Ax‖₁ with minimizer x = 0.
  ConstraintSystem cs = build_overlap_a(2, 2);
  SigmoidLoss<> loss(RowMatrix::Zero(4, 2), ncadmm::testing::random_signs(4, 32));
  auto p = make_problem(std::move(loss), BlockSeparableRegularizer::l1(4, 0.1), std::move(cs));
  SolverConfig c = config(Variant::kDete, 500);
  c.eta = 1.0;
  c.rho = 1.0;
  RunOptions o;
  o.trace_stride = 500;
  const RunResult r = run(p, c, o);
  EXPECT_LE(r.trace.back().feasibility, 1e-8);
  EXPECT_LE(r.final_state.x.norm(), 1e-4);
}

TEST(Run, SameSeedGivesIdenticalTraces) {
  auto p = sigmoid_problem(build_overlap_a(3, 2), 12, 0.05, 33);
  for (Variant v : kAllVariants) {
    RunOptions o;
    o.trace_stride = 5;
    RunResult a = run(p, config(v, 60, 9), o);
    RunResult b = run(p, config(v, 60, 9), o);
    ASSERT_EQ(a.trace.size(), b.trace.size());
    for (std::size_t k = 0; k < a.trace.size(); ++k) {
      EXPECT_EQ(a.trace[k].objective, b.trace[k].objective);
      EXPECT_EQ(a.trace[k].feasibility, b.trace[k].feasibility);
      EXPECT_EQ(a.trace[k].dual_residual, b.trace[k].dual_residual);
      EXPECT_EQ(a.trace[k].ifo, b.trace[k].ifo);
    }
    EXPECT_EQ(a.final_state.x, b.final_state.x);
    EXPECT_EQ(a.output_x, b.output_x);
  }
}

TEST(Run, DualIdentityEveryIterationAllVariants) {
  auto p = ncadmm::testing::graph_guided_problem(60, 10, 34);
  for (Variant v : kAllVariants) {
    SolverConfig c = config(v, 200);
    c.rho = 5.0;
    const Matrix a = p.constraints.a().dense();
    const double r = c.resolved_r(p.constraints);
    const Matrix h = r * Matrix::Identity(10, 10) - c.rho * c.eta * a.transpose() * a;
    double worst = 0.0;
    RunOptions o;
    o.trace_stride = 200;
    o.on_step = [&](const StepView& s) {
      const Vector resid = a.transpose() * s.lambda - s.g_hat + h * (s.x_prev - s.x) / c.eta;
      worst = std::max(worst, resid.norm() / (1.0 + s.g_hat.norm()));
    };
    run(p, c, o);
    EXPECT_LE(worst, 1e-6) << to_string(v);
  }
}

TEST(Run, FullBatchVariantsMatchDeterministicBitwise) {
  auto p = sigmoid_problem(build_overlap_a(4, 2), 9, 0.05, 35);
  SolverConfig base = config(Variant::kDete, 40);
  base.batch_size = 9;
  RunOptions o;
  o.trace_stride = 1;
  const RunResult dete = run(p, base, o);
  for (Variant v : {Variant::kStoc, Variant::kSvrg, Variant::kSaga}) {
    SolverConfig c = base;
    c.variant = v;
    const RunResult r = run(p, c, o);
    ASSERT_EQ(r.trace.size(), dete.trace.size());
    for (std::size_t k = 0; k < r.trace.size(); ++k) EXPECT_EQ(r.trace[k].objective, dete.trace[k].objective);
    EXPECT_EQ(r.final_state.x, dete.final_state.x);
    EXPECT_EQ(r.final_state.y, dete.final_state.y);
    EXPECT_EQ(r.final_state.lambda, dete.final_state.lambda);
  }
}

TEST(Run, IfoAccounting) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 10, 0.05, 36);
  const std::int64_t T = 10;
  EXPECT_EQ(run(p, config(Variant::kDete, T)).ifo, T * 10);
  EXPECT_EQ(run(p, config(Variant::kStoc, T)).ifo, T * 3);
  // Epoch starts at t = 0, 4, 8.
  EXPECT_EQ(run(p, config(Variant::kSvrg, T)).ifo, T * 3 + 3 * 10);
  // The initial table costs n.
  EXPECT_EQ(run(p, config(Variant::kSaga, T)).ifo, 10 + T * 3);
  const RunResult r = run(p, config(Variant::kStoc, T));
  for (std::size_t k = 1; k < r.trace.size(); ++k) EXPECT_GE(r.trace[k].ifo, r.trace[k - 1].ifo);
}

TEST(Run, InvariantChecksPassOnHealthyRuns) {
  auto p = sigmoid_problem(build_overlap_a(3, 2), 8, 0.05, 37);
  for (Variant v : {Variant::kSvrg, Variant::kSaga}) {
    SolverConfig c = config(v, 50);
    c.check_invariants = true;
    EXPECT_NO_THROW(run(p, c));
  }
}

TEST(Run, OutputIterateIsDrawnFromTheRun) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 8, 0.05, 38);
  RunOptions o;
  o.trace_stride = 1;
  o.keep_iterates = true;
  const RunResult r = run(p, config(Variant::kStoc, 30), o);
  ASSERT_GE(r.output_index, 1);
  ASSERT_LE(r.output_index, 30);
  EXPECT_EQ(r.output_x, r.iterates[static_cast<std::size_t>(r.output_index)].x);
  EXPECT_EQ(r.output_lambda, r.iterates[static_cast<std::size_t>(r.output_index)].lambda);
}

TEST(Run, DivergenceReportsIteration) {
  auto p = sigmoid_problem(build_overlap_a(2, 1), 4, 0.05, 39);
  RunOptions o;
  o.x0 = Vector::Constant(2, 1e13);
  try {
    run(p, config(Variant::kDete, 5), o);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.iteration(), 1);
  }
  o.x0 = Vector::Constant(2, std::numeric_limits<double>::quiet_NaN());
  EXPECT_THROW(run(p, config(Variant::kStoc, 5), o), DivergenceError);
}

TEST(Run, InvalidConfigsRejected) {
  auto p = sigmoid_problem(build_overlap_a(2, 1), 4, 0.05, 40);
  SolverConfig c = config(Variant::kStoc, 5);
  c.r = 1.0;  // below ηρ‖AᵀA‖ + 1 = 2
  EXPECT_THROW(run(p, c), ConfigError);
  c = config(Variant::kStoc, 5);
  c.batch_size = 5;
  EXPECT_THROW(run(p, c), ConfigError);
  c.batch_size = 0;
  EXPECT_THROW(run(p, c), ConfigError);
  c = config(Variant::kSvrg, 5);
  c.epoch_length = 0;
  EXPECT_THROW(run(p, c), ConfigError);
  c = config(Variant::kDete, 5);
  c.eta = 0.0;
  EXPECT_THROW(run(p, c), ConfigError);
  c = config(Variant::kDete, 5);
  c.rho = -1.0;
  EXPECT_THROW(run(p, c), ConfigError);
}

TEST(Run, TimeBudgetStopsEarly) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 8, 0.05, 41);
  RunOptions o;
  o.time_budget = 0.0;
  const RunResult r = run(p, config(Variant::kStoc, 1000000), o);
  EXPECT_TRUE(r.stopped_by_budget);
  EXPECT_LT(r.final_state.t, 1000000);
}

TEST(Run, TraceStrideAndCallback) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 8, 0.05, 42);
  RunOptions o;
  o.trace_stride = 7;
  std::vector<std::int64_t> seen;
  o.on_record = [&](const TraceRecord& rec) { seen.push_back(rec.t); };
  const RunResult r = run(p, config(Variant::kStoc, 20), o);
  const std::vector<std::int64_t> expect{0, 7, 14, 20};
  EXPECT_EQ(seen, expect);
  ASSERT_EQ(r.trace.size(), 4u);
  EXPECT_EQ(r.step_sq.size(), 20u);
}

TEST(Run, CompositeObjectiveOnlyForNegativeIdentity) {
  auto p = sigmoid_problem(build_overlap_a(3, 1), 8, 0.05, 43);
  RunOptions o;
  o.trace_stride = 5;
  const RunResult r = run(p, config(Variant::kDete, 5), o);
  const Vector& x = r.final_state.x;
  EXPECT_NEAR(r.trace.back().objective_composite, p.composite_objective(x), 1e-14);
}
