#pragma once

#include "constraints.hpp"
#include "losses.hpp"

namespace ncadmm {

/// min (1/n) Σ f_i(x) + g(y)  s.t.  Ax + By = c.
template <class Loss>
struct CompositeProblem {
  Loss loss;
  BlockSeparableRegularizer regularizer;
  ConstraintSystem constraints;

  CompositeProblem(Loss l, BlockSeparableRegularizer g, ConstraintSystem cs)
      : loss(std::move(l)), regularizer(std::move(g)), constraints(std::move(cs)) {
    if (loss.dim() != constraints.d()) throw InputError("loss dimension does not match A's column count");
    if (regularizer.dim() != constraints.p()) throw InputError("regularizer dimension does not match B's column count");
  }

  Index n() const { return loss.n(); }
  Index d() const { return constraints.d(); }
  Index p() const { return constraints.p(); }
  Index q() const { return constraints.q(); }

  /// f(x) + g(y)
  double objective(const Vector& x, const Vector& y) const { return loss.full_value(x) + regularizer.value(y); }

  /// f(x) + g(Ax); only meaningful when B = −I and c = 0.
  double composite_objective(const Vector& x) const {
    return loss.full_value(x) + regularizer.value(constraints.a().apply(x));
  }

  /// L_ρ(x, y, λ) = f(x) + g(y) − ⟨λ, Ax + By − c⟩ + (ρ/2)‖Ax + By − c‖².
  double augmented_lagrangian(const Vector& x, const Vector& y, const Vector& lambda, double rho) const {
    const Vector r = constraints.residual(x, y);
    return objective(x, y) - lambda.dot(r) + 0.5 * rho * r.squaredNorm();
  }
};

template <class Loss>
CompositeProblem<Loss> make_problem(Loss loss, BlockSeparableRegularizer g, ConstraintSystem cs) {
  return CompositeProblem<Loss>(std::move(loss), std::move(g), std::move(cs));
}

}  // namespace ncadmm
