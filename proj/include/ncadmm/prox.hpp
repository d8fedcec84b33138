#pragma once

#include <Eigen/SVD>

#include "core.hpp"

namespace ncadmm {

/// Soft thresholding: argmin_y t‖y‖₁ + ½‖y − v‖².
inline Vector prox_l1(const Vector& v, double t) {
  if (!(t >= 0.0)) throw InputError("prox_l1: threshold must be nonnegative");
  Vector out(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    const double a = std::abs(v[i]) - t;
    out[i] = a > 0.0 ? std::copysign(a, v[i]) : 0.0;
  }
  return out;
}

/// Singular value soft thresholding: argmin_Y t‖Y‖* + ½‖Y − V‖²_F.
inline Matrix prox_nuclear(const Matrix& v, double t) {
  if (!(t >= 0.0)) throw InputError("prox_nuclear: threshold must be nonnegative");
  if (v.size() == 0) return v;
  if (!v.allFinite()) throw NumericalError("prox_nuclear: non-finite input");
  Eigen::JacobiSVD<Matrix> svd(v, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw NumericalError("prox_nuclear: SVD failed");
  const Vector shrunk = (svd.singularValues().array() - t).max(0.0).matrix();
  return svd.matrixU() * shrunk.asDiagonal() * svd.matrixV().transpose();
}

inline double nuclear_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return Eigen::JacobiSVD<Matrix>(m).singularValues().sum();
}

}  // namespace ncadmm
