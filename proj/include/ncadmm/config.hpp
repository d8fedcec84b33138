#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "constraints.hpp"

namespace ncadmm {

enum class Variant { kDete, kStoc, kSvrg, kSaga };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::kDete: return "DETE";
    case Variant::kStoc: return "STOC";
    case Variant::kSvrg: return "SVRG";
    case Variant::kSaga: return "SAGA";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "DETE" || s == "dete") return Variant::kDete;
  if (s == "STOC" || s == "stoc") return Variant::kStoc;
  if (s == "SVRG" || s == "svrg") return Variant::kSvrg;
  if (s == "SAGA" || s == "saga") return Variant::kSaga;
  throw ConfigError("unknown variant '" + std::string(s) + "'");
}

/// Smallest admissible Uzawa scalar, ηρ‖AᵀA‖ + 1, which makes H = rI − ρηAᵀA ⪰ I.
inline double minimal_r(double eta, double rho, const ConstraintSystem& cs) { return eta * rho * cs.norm_ata() + 1.0; }

struct SolverConfig {
  Variant variant = Variant::kStoc;
  double eta = 1.0;
  double rho = 1.0;
  double r = 0.0;  // 0 selects minimal_r()
  Index batch_size = 1;  // M
  Index epoch_length = 1;  // m, SVRG only
  std::int64_t iterations = 0;  // T, effective iterations
  std::uint64_t seed = 0;
  bool store_saga_points = false;
  /// Recompute ψ / the SVRG snapshot gradient from scratch every step and throw on drift.
  bool check_invariants = false;

  double resolved_r(const ConstraintSystem& cs) const { return r > 0.0 ? r : minimal_r(eta, rho, cs); }
};

/// Throws ConfigError when `cfg` cannot be run on a problem with `n` samples and constraints `cs`.
inline void validate(const SolverConfig& cfg, Index n, const ConstraintSystem& cs) {
  if (!(cfg.eta > 0.0)) throw ConfigError("eta must be positive");
  if (!(cfg.rho > 0.0)) throw ConfigError("rho must be positive");
  if (cfg.iterations < 0) throw ConfigError("iterations must be nonnegative");
  const double r = cfg.resolved_r(cs);
  const double r_min = minimal_r(cfg.eta, cfg.rho, cs);
  if (!(r >= r_min * (1.0 - 1e-12)))
    throw ConfigError("r = " + std::to_string(r) + " is below eta*rho*||A^T A|| + 1 = " + std::to_string(r_min));
  if (cfg.variant != Variant::kDete && (cfg.batch_size < 1 || cfg.batch_size > n))
    throw ConfigError("mini-batch size must satisfy 1 <= M <= n");
  if (cfg.variant == Variant::kSvrg && cfg.epoch_length < 1) throw ConfigError("SVRG needs epoch length m >= 1");
}

}  // namespace ncadmm
