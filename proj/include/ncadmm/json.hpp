#pragma once

// JSON mappings for configs, certificates and reports (nlohmann::json).

#include <json.hpp>

#include "data.hpp"
#include "solver.hpp"

namespace ncadmm {

using nlohmann::json;

namespace detail {

// JSON has no NaN/Inf: NaN is written as null, ±Inf as the strings "inf" / "-inf".
inline json num(double v) {
  if (std::isnan(v)) return json(nullptr);
  if (std::isinf(v)) return json(v > 0 ? "inf" : "-inf");
  return json(v);
}
inline double num(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw InputError("bad number '" + s + "'");
  }
  return j.get<double>();
}

}  // namespace detail

inline void to_json(json& j, const Variant& v) { j = to_string(v); }
inline void from_json(const json& j, Variant& v) { v = parse_variant(j.get<std::string>()); }

inline void to_json(json& j, const SolverConfig& c) {
  j = json{{"variant", c.variant}, {"eta", c.eta},          {"rho", c.rho},
           {"r", c.r},             {"M", c.batch_size},     {"m", c.epoch_length},
           {"T", c.iterations},    {"seed", c.seed},        {"store_saga_points", c.store_saga_points}};
}
inline void from_json(const json& j, SolverConfig& c) {
  c = SolverConfig{};
  c.variant = j.at("variant").get<Variant>();
  c.eta = j.value("eta", c.eta);
  c.rho = j.value("rho", c.rho);
  c.r = j.value("r", c.r);
  c.batch_size = j.value("M", c.batch_size);
  c.epoch_length = j.value("m", c.epoch_length);
  c.iterations = j.value("T", c.iterations);
  c.seed = j.value("seed", c.seed);
  c.store_saga_points = j.value("store_saga_points", c.store_saga_points);
}

inline void to_json(json& j, const TheoryConstants& k) {
  j = json{{"L", detail::num(k.L)},
           {"L_tilde", detail::num(k.L_tilde)},
           {"phi_min_A", detail::num(k.phi_min_a)},
           {"norm_AtA", detail::num(k.norm_ata)},
           {"eta", detail::num(k.eta)},
           {"rho", detail::num(k.rho)},
           {"r", detail::num(k.r)},
           {"phi_max_H", detail::num(k.phi_max_h)},
           {"phi_min_H", detail::num(k.phi_min_h)},
           {"zeta", detail::num(k.zeta)},
           {"zeta1", detail::num(k.zeta1)},
           {"phi_H", detail::num(k.phi_h)}};
}
inline void from_json(const json& j, TheoryConstants& k) {
  k.L = detail::num(j.at("L"));
  k.L_tilde = detail::num(j.at("L_tilde"));
  k.phi_min_a = detail::num(j.at("phi_min_A"));
  k.norm_ata = detail::num(j.at("norm_AtA"));
  k.eta = detail::num(j.at("eta"));
  k.rho = detail::num(j.at("rho"));
  k.r = detail::num(j.at("r"));
  k.phi_max_h = detail::num(j.at("phi_max_H"));
  k.phi_min_h = detail::num(j.at("phi_min_H"));
  k.zeta = detail::num(j.at("zeta"));
  k.zeta1 = detail::num(j.at("zeta1"));
  k.phi_h = detail::num(j.at("phi_H"));
}

namespace detail {

inline json num_array(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}
inline std::vector<double> num_array(const json& a) {
  std::vector<double> v;
  for (const auto& x : a) v.push_back(num(x));
  return v;
}

}  // namespace detail

inline void to_json(json& j, const Certificate& c) {
  j = json{{"schema", "ncadmm.certificate/v1"},
           {"variant", c.variant},
           {"accepted", c.accepted},
           {"reason", c.reason},
           {"eta", detail::num(c.eta)},
           {"rho", detail::num(c.rho)},
           {"r", detail::num(c.r)},
           {"beta", detail::num(c.beta)},
           {"M", c.batch_size},
           {"m", c.epoch_length},
           {"n", c.n},
           {"T", c.iterations},
           {"constants", c.constants},
           {"shift", detail::num(c.shift)},
           {"rho_star", detail::num(c.rho_star)},
           {"rho_0", detail::num(c.rho_0)},
           {"delta", detail::num(c.delta)},
           {"varphi", detail::num(c.varphi)},
           {"interval_case", c.interval_case},
           {"eta_lower", detail::num(c.eta_lower)},
           {"eta_upper", detail::num(c.eta_upper)},
           {"in_interval", c.in_interval},
           {"gamma", detail::num(c.gamma)},
           {"schedule", detail::num_array(c.schedule)},
           {"schedule_hat", detail::num(c.schedule_hat)},
           {"Gamma", detail::num_array(c.gamma_t)},
           {"min_Gamma", detail::num(c.min_gamma)}};
}

/// Throws json exceptions on a missing field or a wrong schema tag.
inline void from_json(const json& j, Certificate& c) {
  if (j.at("schema").get<std::string>() != "ncadmm.certificate/v1") throw InputError("unknown certificate schema");
  c.variant = j.at("variant").get<Variant>();
  c.accepted = j.at("accepted").get<bool>();
  c.reason = j.at("reason").get<std::string>();
  c.eta = detail::num(j.at("eta"));
  c.rho = detail::num(j.at("rho"));
  c.r = detail::num(j.at("r"));
  c.beta = detail::num(j.at("beta"));
  c.batch_size = j.at("M").get<Index>();
  c.epoch_length = j.at("m").get<Index>();
  c.n = j.at("n").get<Index>();
  c.iterations = j.at("T").get<std::int64_t>();
  c.constants = j.at("constants").get<TheoryConstants>();
  c.shift = detail::num(j.at("shift"));
  c.rho_star = detail::num(j.at("rho_star"));
  c.rho_0 = detail::num(j.at("rho_0"));
  c.delta = detail::num(j.at("delta"));
  c.varphi = detail::num(j.at("varphi"));
  c.interval_case = j.at("interval_case").get<int>();
  c.eta_lower = detail::num(j.at("eta_lower"));
  c.eta_upper = detail::num(j.at("eta_upper"));
  c.in_interval = j.at("in_interval").get<bool>();
  c.gamma = detail::num(j.at("gamma"));
  c.schedule = detail::num_array(j.at("schedule"));
  c.schedule_hat = detail::num(j.at("schedule_hat"));
  c.gamma_t = detail::num_array(j.at("Gamma"));
  c.min_gamma = detail::num(j.at("min_Gamma"));
}

inline void to_json(json& j, const StationarityReport& s) {
  j = json{{"feasibility_sq", detail::num(s.feasibility_sq)},
           {"dual_sq", detail::num(s.dual_sq)},
           {"subgrad_dist_sq", detail::num(s.subgrad_dist_sq)},
           {"epsilon", detail::num(s.epsilon)}};
}

inline void to_json(json& j, const DatasetMeta& m) {
  j = json{{"name", m.name}, {"source", m.source}, {"n", m.n}, {"d", m.d}, {"classes", m.classes}, {"seed", m.seed}};
}

}  // namespace ncadmm
