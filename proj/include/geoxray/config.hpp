// JSON declarations of metrics, tensor fields and option overrides.
#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "geoxray/boundary_distance.hpp"
#include "geoxray/geometry.hpp"
#include "geoxray/tencalc.hpp"
#include "geoxray/tensor.hpp"
#include "geoxray/xray.hpp"

namespace geoxray {

using Json = nlohmann::json;

/// obj[key] if present, else `fallback`; type mismatches are reported with the key name.
template <class T>
T get_or(const Json& obj, const std::string& key, const T& fallback) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ParameterError("config key '" + key + "': " + e.what());
  }
}

inline Vec2 parse_vec2(const Json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2) throw ParameterError(what + ": expected [x0, x1]");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline Bump parse_bump(const Json& j, const ChartDomain& dom) {
  Bump b;
  b.periodic_second = dom.is_annulus();
  b.center = parse_vec2(j.value("center", Json::array({0.0, 0.0})), "bump center");
  b.radius = get_or(j, "radius", b.radius);
  b.amplitude = get_or(j, "amplitude", b.amplitude);
  if (!(b.radius > 0.0)) throw ParameterError("bump radius must be positive");
  return b;
}

/// "neck" or {"preset": ..., "r_min", "r_max", "radius", "bumps": [{center, radius, amplitude}]}.
/// Bumps are conformal: g -> (1 + sum_k b_k) g.
inline MetricField parse_metric(const Json& j) {
  if (j.is_string()) return metric_preset(j.get<std::string>());
  if (!j.is_object()) throw ParameterError("metric: expected a preset name or an object");
  const std::string preset = get_or<std::string>(j, "preset", "neck");
  MetricField g;
  if (preset == "neck")
    g = neck_metric(get_or(j, "r_min", -1.0), get_or(j, "r_max", 1.0));
  else if (preset == "flat_cylinder")
    g = flat_cylinder_metric(get_or(j, "r_min", -1.0), get_or(j, "r_max", 1.0));
  else if (preset == "euclid_disk")
    g = euclid_disk_metric(get_or(j, "radius", 1.0));
  else
    throw ParameterError("unknown metric preset '" + preset + "'");
  if (j.contains("bumps") && !j["bumps"].empty()) {
    SymTensorField factor = zero_field(0);
    for (const Json& b : j["bumps"]) factor = linear_combination(1.0, factor, 1.0, bump_function(parse_bump(b, g.domain)));
    MetricField out{g.domain, linear_combination(1.0, g.tensor, 1.0, multiply(factor, g.tensor)), std::nullopt,
                    preset + "+bumps"};
    for (const Vec2& x : sampling_points(out.domain, GridSpec{32, 64}))
      if (!is_positive_definite(to_mat(out.tensor.value(x))))
        throw DegenerateMetricError("metric bumps break positivity at " + format_point(x));
    return out;
  }
  return g;
}

/// {"center", "radius", "amplitude", "tensor_type"} with tensor_type one of
/// conformal (bump * g), dr2, mixed, dphi2, one_form (bump * (alpha dr + beta dphi)),
/// potential (D of that one-form), metric (g itself), zero.
inline SymTensorField parse_field(const Json& j, const MetricField& g) {
  const std::string type = get_or<std::string>(j, "tensor_type", "conformal");
  if (type == "metric") return g.tensor;
  if (type == "zero") return zero_field(2);
  const Bump b = parse_bump(j, g.domain);
  if (type == "conformal") return multiply(bump_function(b), g.tensor);
  if (type == "dr2") return multiply(bump_function(b), constant_field(2, basis_components(BasisTensor::dr2)));
  if (type == "mixed") return multiply(bump_function(b), constant_field(2, basis_components(BasisTensor::mixed)));
  if (type == "dphi2") return multiply(bump_function(b), constant_field(2, basis_components(BasisTensor::dphi2)));
  const double alpha = get_or(j, "alpha", 1.0), beta = get_or(j, "beta", 0.5);
  if (type == "one_form") return bump_one_form(b, alpha, beta);
  if (type == "potential") return sym_derivative(bump_one_form(b, alpha, beta), g);
  throw ParameterError("unknown tensor_type '" + type + "'");
}

inline XrayOptions parse_xray_options(const Json& j, XrayOptions o = {}) {
  o.step = get_or(j, "step", o.step);
  o.horizon = get_or(j, "horizon", o.horizon);
  return o;
}

inline ShootingOptions parse_shooting_options(const Json& j, ShootingOptions o = {}) {
  o.shoot_tol = get_or(j, "shoot_tol", o.shoot_tol);
  o.n_scan = get_or(j, "n_scan", o.n_scan);
  o.step = get_or(j, "step", o.step);
  o.horizon = get_or(j, "horizon", o.horizon);
  o.max_iter = get_or(j, "max_iter", o.max_iter);
  return o;
}

inline VectorField parse_vector_field(const Json& j, const ChartDomain& dom) {
  const Bump b = parse_bump(j, dom);
  return bump_vector_field(b, get_or(j, "a", 1.0), get_or(j, "c", -0.8));
}

}  // namespace geoxray
