// Geodesic X-ray transform on functions and symmetric tensors, its adjoint via
// backward footpoints, fiber averaging, the normal operator and the integral
// identity checks (Santalo, adjointness, extension comparison, L^p ratios).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "geoxray/flow.hpp"
#include "geoxray/geometry.hpp"
#include "geoxray/parallel.hpp"
#include "geoxray/tensor.hpp"

namespace geoxray {

/// Function on SM, F(x, v).
using SMFunction = std::function<double(const Vec2& x, const Vec2& v)>;

// ---------------------------------------------------------------------------
// boundary fan

struct FanNode {
  int component = 0;
  int i = 0;             // boundary parameter index
  int k = 0;             // angle index
  double param = 0.0;    // boundary angle parameter in [0, 2pi)
  double s = 0.0;        // arclength along the component
  double theta = 0.0;    // angle from the inward normal, positive towards the tangent
  PhasePoint z;
  double weight = 0.0;   // cos(theta) dtheta ds
};

struct BoundaryFan {
  int n_s = 0;
  int n_theta = 0;
  int components = 0;
  std::vector<FanNode> nodes;  // index (component * n_s + i) * n_theta + k
  std::vector<std::vector<double>> thetas;  // angle nodes per component, increasing

  std::size_t index(int comp, int i, int k) const {
    return (static_cast<std::size_t>(comp) * n_s + i) * n_theta + k;
  }
  double total_weight() const {
    double s = 0.0;
    for (const auto& n : nodes) s += n.weight;
    return s;
  }
};

/// Product fan: midpoint rule in the boundary parameter times a per-component angle rule on (-pi/2, pi/2),
/// with weights of |<v, nu>| dtheta ds.
inline BoundaryFan boundary_fan(const MetricField& g, int n_s, const std::vector<QuadratureRule>& theta_rules) {
  if (n_s < 1) throw ParameterError("boundary_fan: need positive node counts");
  require_strictly_convex(g);
  BoundaryFan fan;
  fan.n_s = n_s;
  fan.components = g.domain.boundary_components();
  if (static_cast<int>(theta_rules.size()) != fan.components)
    throw ParameterError("boundary_fan: need one angle rule per boundary component");
  fan.n_theta = static_cast<int>(theta_rules.front().size());
  for (const auto& r : theta_rules)
    if (static_cast<int>(r.size()) != fan.n_theta || r.size() == 0)
      throw ParameterError("boundary_fan: angle rules must be non-empty and of equal size");
  const double dp = kTwoPi / n_s;
  fan.nodes.reserve(static_cast<std::size_t>(fan.components) * n_s * fan.n_theta);
  for (int c = 0; c < fan.components; ++c) {
    const QuadratureRule& tr = theta_rules[c];
    fan.thetas.push_back(tr.nodes);
    double arclen = 0.0;
    for (int i = 0; i < n_s; ++i) {
      const double param = (i + 0.5) * dp;
      const BoundaryFrame bf = boundary_frame(g, c, param);
      const double ds = bf.speed * dp;
      for (int k = 0; k < fan.n_theta; ++k) {
        FanNode nd;
        nd.component = c;
        nd.i = i;
        nd.k = k;
        nd.param = param;
        nd.s = arclen + 0.5 * ds;
        nd.theta = tr.nodes[k];
        nd.z = {bf.point, boundary_direction(bf, nd.theta)};
        nd.weight = std::cos(nd.theta) * tr.weights[k] * ds;
        fan.nodes.push_back(nd);
      }
      arclen += ds;
    }
  }
  return fan;
}

/// Midpoint product fan on the inward boundary.
inline BoundaryFan boundary_fan(const MetricField& g, int n_s, int n_theta) {
  if (n_s < 1 || n_theta < 1) throw ParameterError("boundary_fan: need positive node counts");
  return boundary_fan(g, n_s,
                      std::vector<QuadratureRule>(g.domain.boundary_components(), midpoint(n_theta, -0.5 * kPi, 0.5 * kPi)));
}

/// Angles of the rays from each boundary component that are asymptotic to the neck of a revolution metric
/// (f(r_b) sin(theta) = min f); empty when there is no interior neck.
inline std::vector<std::vector<double>> trapped_angles(const MetricField& g) {
  std::vector<std::vector<double>> out(g.domain.boundary_components());
  if (!g.revolution || !g.domain.is_annulus()) return out;
  const auto [r_star, f_min] = revolution_minimum(g);
  if (!(r_star > g.domain.r_min && r_star < g.domain.r_max)) return out;
  for (int c = 0; c < g.domain.boundary_components(); ++c) {
    const double rb = c == 0 ? g.domain.r_min : g.domain.r_max;
    const double s = f_min / g.revolution->eval(rb)[0];
    if (s < 1.0) out[c] = {-std::asin(s), std::asin(s)};
  }
  return out;
}

/// Fan graded towards the trapped angles (uniform where there are none).
inline BoundaryFan graded_boundary_fan(const MetricField& g, int n_s, int n_theta, double power = 3.0) {
  std::vector<QuadratureRule> rules;
  for (const auto& centers : trapped_angles(g))
    rules.push_back(graded_midpoint(n_theta, -0.5 * kPi, 0.5 * kPi, centers, power));
  return boundary_fan(g, n_s, rules);
}

// ---------------------------------------------------------------------------
// boundary functions

enum NodeFlag : std::uint8_t { node_ok = 0, node_horizon = 1, node_tangency = 2 };

struct BoundaryFunction {
  std::vector<double> values;
  std::vector<std::uint8_t> flags;

  std::size_t flagged() const {
    std::size_t n = 0;
    for (auto f : flags) n += f != node_ok;
    return n;
  }
};

/// L^p norm with fan weights, flagged nodes excluded. p = infinity gives the max.
inline double lp_norm(const BoundaryFunction& u, const BoundaryFan& fan, double p) {
  if (std::isinf(p)) {
    double m = 0.0;
    for (std::size_t j = 0; j < u.values.size(); ++j)
      if (u.flags[j] == node_ok) m = std::max(m, std::abs(u.values[j]));
    return m;
  }
  double s = 0.0;
  for (std::size_t j = 0; j < u.values.size(); ++j)
    if (u.flags[j] == node_ok) s += fan.nodes[j].weight * std::pow(std::abs(u.values[j]), p);
  return std::pow(s, 1.0 / p);
}

/// <u, w>_{dmu_nu} over unflagged nodes of both.
inline double boundary_inner(const BoundaryFunction& u, const BoundaryFunction& w, const BoundaryFan& fan) {
  double s = 0.0;
  for (std::size_t j = 0; j < u.values.size(); ++j)
    if (u.flags[j] == node_ok && w.flags[j] == node_ok) s += fan.nodes[j].weight * u.values[j] * w.values[j];
  return s;
}

/// Samples a function of (component, boundary parameter, theta) on the fan.
template <class Fn>
BoundaryFunction sample_on_fan(const BoundaryFan& fan, const Fn& fn) {
  BoundaryFunction u;
  u.values.resize(fan.nodes.size());
  u.flags.assign(fan.nodes.size(), node_ok);
  for (std::size_t j = 0; j < fan.nodes.size(); ++j)
    u.values[j] = fn(fan.nodes[j].component, fan.nodes[j].param, fan.nodes[j].theta);
  return u;
}

// ---------------------------------------------------------------------------
// pi_m^* and its adjoint

/// (x, v) -> f(x)(v, ..., v).
inline SMFunction pullback_pi_m(const SymTensorField& f) {
  return [f](const Vec2& x, const Vec2& v) { return contract_with_velocity(f.value(x), f.rank(), v); };
}

/// Unit vectors of S_x M at equally spaced angles in a g-orthonormal frame.
inline std::vector<Vec2> fiber_nodes(const Mat2& gm, int n) {
  const Vec2 e1{1.0 / std::sqrt(gm[0][0]), 0.0};
  Vec2 e2{-gm[0][1] / gm[0][0], 1.0};
  e2 = (1.0 / std::sqrt(form(gm, e2, e2))) * e2;
  std::vector<Vec2> out(n);
  for (int j = 0; j < n; ++j) {
    const double th = kTwoPi * j / n;
    out[j] = std::cos(th) * e1 + std::sin(th) * e2;
  }
  return out;
}

struct FiberRule {
  std::vector<Vec2> directions;
  std::vector<double> weights;  // sum to 2 pi
};

/// Unit directions at x and dtheta weights. With grading > 0 on a revolution metric the circle is split at
/// the directions asymptotic to the neck (f(r) sin(theta) = +-min f) and nodes are graded towards them.
inline FiberRule fiber_rule(const MetricField& g, const Vec2& x, const Mat2& gm, int n, double grading = 0.0) {
  FiberRule out;
  std::vector<double> centers;
  if (grading > 0.0 && g.revolution && g.domain.is_annulus()) {
    const auto [r_star, f_min] = revolution_minimum(g);
    const double s = std::min(1.0, f_min / g.revolution->eval(x[0])[0]);
    if (r_star > g.domain.r_min && r_star < g.domain.r_max) {
      const double a = std::asin(s);
      centers = {a, kPi - a, kPi + a, kTwoPi - a};
    }
  }
  if (centers.empty()) {
    out.directions = fiber_nodes(gm, n);
    out.weights.assign(n, kTwoPi / n);
    return out;
  }
  const Vec2 e1{1.0 / std::sqrt(gm[0][0]), 0.0};
  Vec2 e2{-gm[0][1] / gm[0][0], 1.0};
  e2 = (1.0 / std::sqrt(form(gm, e2, e2))) * e2;
  const QuadratureRule q = graded_midpoint(n, 0.0, kTwoPi, centers, grading);
  for (std::size_t k = 0; k < q.nodes.size(); ++k) {
    out.directions.push_back(std::cos(q.nodes[k]) * e1 + std::sin(q.nodes[k]) * e2);
    out.weights.push_back(q.weights[k]);
  }
  return out;
}

/// Components of int_{S_x} F(x, v) v_{i1} ... v_{im} dtheta with indices lowered by g.
inline Components fiber_average_at(const SMFunction& F, const MetricField& g, int rank, const Vec2& x, int n_fiber) {
  const Mat2 gm = to_mat(g.tensor.value(x));
  const int nc = component_count(rank);
  Components out{};
  const double w = kTwoPi / n_fiber;
  for (const Vec2& v : fiber_nodes(gm, n_fiber)) {
    const double val = F(x, v);
    if (val == 0.0 || std::isnan(val)) continue;
    const Vec2 low = matvec(gm, v);
    for (int c = 0; c < nc; ++c) {
      double p = val * w;
      for (int s = 0; s < rank; ++s) p *= low[index_bit(c, rank, s)];
      out[c] += p;
    }
  }
  return out;
}

/// pi_{m*} F as a rank-m field (derivatives, when requested, by finite differences).
inline SymTensorField fiber_average_pi_m_star(const SMFunction& F, const MetricField& g, int rank, int n_fiber = 64) {
  return SymTensorField(
      rank, [F, g, rank, n_fiber](const Vec2& x, int, TensorJet& out) { out.value = fiber_average_at(F, g, rank, x, n_fiber); },
      0);
}

// ---------------------------------------------------------------------------
// forward transform

struct XrayOptions {
  double step = 1e-3;
  double horizon = 50.0;
};

/// Integrals of several functions along the forward ray from z (composite trapezoid on the RK4 samples).
/// Returns the flag for the ray; exit_time receives the escape time (or the horizon).
inline std::uint8_t integrate_along_ray(const MetricField& g, const PhasePoint& z, const std::vector<SMFunction>& Fs,
                                        const XrayOptions& opt, std::vector<double>& out, double* exit_time = nullptr) {
  const std::size_t nf = Fs.size();
  out.assign(nf, 0.0);
  std::vector<double> prev(nf, 0.0);
  double tprev = 0.0;
  bool first = true;
  FlowOptions fo;
  fo.step = opt.step;
  try {
    const FlowExit ex = flow_visit(g, z, opt.horizon, fo, [&](double t, const FlowState& s) {
      for (std::size_t j = 0; j < nf; ++j) {
        const double val = Fs[j](s.x, s.v);
        if (!first) out[j] += 0.5 * (t - tprev) * (val + prev[j]);
        prev[j] = val;
      }
      first = false;
      tprev = t;
      return true;
    });
    if (exit_time) *exit_time = std::abs(ex.time);
    return ex.kind == ExitKind::boundary ? node_ok : node_horizon;
  } catch (const TangencyError&) {
    return node_tangency;
  }
}

/// I F at every fan node, for several integrands sharing the ray traces.
inline std::vector<BoundaryFunction> xray_transform(const std::vector<SMFunction>& Fs, const BoundaryFan& fan,
                                                    const MetricField& g, const XrayOptions& opt = {}) {
  std::vector<BoundaryFunction> res(Fs.size());
  for (auto& r : res) {
    r.values.assign(fan.nodes.size(), 0.0);
    r.flags.assign(fan.nodes.size(), node_ok);
  }
  parallel_for(fan.nodes.size(), [&](std::size_t j) {
    std::vector<double> vals;
    const std::uint8_t flag = integrate_along_ray(g, fan.nodes[j].z, Fs, opt, vals);
    for (std::size_t m = 0; m < Fs.size(); ++m) {
      res[m].values[j] = flag == node_tangency ? 0.0 : vals[m];
      res[m].flags[j] = flag;
    }
  });
  return res;
}

inline BoundaryFunction xray_transform(const SMFunction& F, const BoundaryFan& fan, const MetricField& g,
                                       const XrayOptions& opt = {}) {
  return xray_transform(std::vector<SMFunction>{F}, fan, g, opt)[0];
}

/// I_m f = I(pi_m^* f).
inline BoundaryFunction xray_transform(const SymTensorField& f, const BoundaryFan& fan, const MetricField& g,
                                       const XrayOptions& opt = {}) {
  return xray_transform(pullback_pi_m(f), fan, g, opt);
}

/// Forward escape times at the fan nodes (I_2 g).
inline BoundaryFunction escape_times(const BoundaryFan& fan, const MetricField& g, const XrayOptions& opt = {}) {
  BoundaryFunction u;
  u.values.assign(fan.nodes.size(), 0.0);
  u.flags.assign(fan.nodes.size(), node_ok);
  parallel_for(fan.nodes.size(), [&](std::size_t j) {
    std::vector<double> vals;
    double t = 0.0;
    u.flags[j] = integrate_along_ray(g, fan.nodes[j].z, {}, opt, vals, &t);
    u.values[j] = t;
  });
  return u;
}

// ---------------------------------------------------------------------------
// adjoint

/// Point of dM_- SM reached by the backward flow from (x, v): component, boundary parameter, angle.
struct Footpoint {
  bool found = false;
  int component = -1;
  double param = 0.0;
  double theta = 0.0;
};

inline Footpoint backward_footpoint(const MetricField& g, const PhasePoint& z, const XrayOptions& opt = {}) {
  Footpoint fp;
  FlowOptions fo;
  fo.step = opt.step;
  FlowExit ex;
  try {
    ex = flow_visit(g, z, -opt.horizon, fo, [](double, const FlowState&) { return true; });
  } catch (const TangencyError&) {
    return fp;
  }
  if (ex.kind != ExitKind::boundary) return fp;
  fp.found = true;
  fp.component = ex.component;
  fp.param = boundary_parameter(g.domain, ex.state.x);
  const BoundaryFrame bf = boundary_frame(g, fp.component, fp.param);
  const Mat2 gm = to_mat(g.tensor.value(ex.state.x));
  fp.theta = std::atan2(form(gm, ex.state.v, bf.tangent), form(gm, ex.state.v, bf.inward_normal));
  return fp;
}

/// Bilinear interpolation of u on the fan (periodic in the boundary parameter, clamped in theta).
/// NaN if a contributing node is flagged.
inline double interpolate_on_fan(const BoundaryFunction& u, const BoundaryFan& fan, int comp, double param,
                                 double theta) {
  const double dp = kTwoPi / fan.n_s;
  const double xs = wrap_positive(param) / dp - 0.5;
  int i0 = static_cast<int>(std::floor(xs));
  const double a = xs - i0;
  const int i1 = ((i0 + 1) % fan.n_s + fan.n_s) % fan.n_s;
  i0 = (i0 % fan.n_s + fan.n_s) % fan.n_s;
  // constant beyond the outermost angle nodes
  const std::vector<double>& th = fan.thetas[comp];
  const int hi = static_cast<int>(std::upper_bound(th.begin(), th.end(), theta) - th.begin());
  const int k0 = std::clamp(hi - 1, 0, fan.n_theta - 1);
  const int k1 = std::clamp(hi, 0, fan.n_theta - 1);
  const double b = k0 == k1 ? 0.0 : (theta - th[k0]) / (th[k1] - th[k0]);
  double acc = 0.0;
  const int is[2] = {i0, i1};
  const int ks[2] = {k0, k1};
  const double wi[2] = {1.0 - a, a};
  const double wk[2] = {1.0 - b, b};
  for (int p = 0; p < 2; ++p)
    for (int q = 0; q < 2; ++q) {
      const double w = wi[p] * wk[q];
      if (w == 0.0) continue;
      const std::size_t j = fan.index(comp, is[p], ks[q]);
      if (u.flags[j] != node_ok) return std::numeric_limits<double>::quiet_NaN();
      acc += w * u.values[j];
    }
  return acc;
}

/// I^* u as a function on SM: u at the backward footpoint. NaN on backward-trapped points.
inline SMFunction xray_adjoint(const BoundaryFunction& u, const BoundaryFan& fan, const MetricField& g,
                               const XrayOptions& opt = {}) {
  return [u, fan, g, opt](const Vec2& x, const Vec2& v) {
    const Footpoint fp = backward_footpoint(g, {x, v}, opt);
    if (!fp.found) return std::numeric_limits<double>::quiet_NaN();
    return interpolate_on_fan(u, fan, fp.component, fp.param, fp.theta);
  };
}

/// I_m^* u = pi_{m*} I^* u.
inline SymTensorField xray_adjoint_tensor(const BoundaryFunction& u, const BoundaryFan& fan, const MetricField& g,
                                          int rank, int n_fiber = 64, const XrayOptions& opt = {}) {
  return fiber_average_pi_m_star(xray_adjoint(u, fan, g, opt), g, rank, n_fiber);
}

// ---------------------------------------------------------------------------
// integrals over SM

struct SMGridSpec {
  GridSpec base{32, 64};
  int n_fiber = 64;
  double fiber_grading = 0.0;  // see fiber_rule
};

/// Integral of F over SM with dmu = dvol x dtheta; NaN samples are skipped and counted.
inline double integrate_over_SM(const SMFunction& F, const MetricField& g, const SMGridSpec& spec,
                                std::size_t* skipped = nullptr) {
  const VolumeGrid vg = volume_grid(g, spec.base);
  std::vector<double> part(vg.points.size(), 0.0);
  std::vector<std::size_t> miss(vg.points.size(), 0);
  parallel_for(vg.points.size(), [&](std::size_t i) {
    const Mat2 gm = to_mat(g.tensor.value(vg.points[i]));
    const FiberRule fr = fiber_rule(g, vg.points[i], gm, spec.n_fiber, spec.fiber_grading);
    double s = 0.0;
    for (std::size_t k = 0; k < fr.directions.size(); ++k) {
      const double val = F(vg.points[i], fr.directions[k]);
      if (std::isnan(val))
        ++miss[i];
      else
        s += val * fr.weights[k];
    }
    part[i] = s * vg.weights[i];
  });
  double total = 0.0;
  std::size_t m = 0;
  for (std::size_t i = 0; i < part.size(); ++i) {
    total += part[i];
    m += miss[i];
  }
  if (skipped) *skipped = m;
  return total;
}

inline double lp_norm_SM(const SMFunction& F, const MetricField& g, double p, const SMGridSpec& spec) {
  return std::pow(integrate_over_SM([&](const Vec2& x, const Vec2& v) { return std::pow(std::abs(F(x, v)), p); }, g, spec),
                  1.0 / p);
}

// ---------------------------------------------------------------------------
// normal operator

/// Pi_2 f = I_2^* I_2 f on the volume grid.
struct GridTensor {
  int rank = 2;
  std::vector<Vec2> points;
  std::vector<double> weights;  // dvol_g
  std::vector<Components> values;
};

inline GridTensor normal_operator(const SymTensorField& f, const MetricField& g, const BoundaryFan& fan,
                                  const GridSpec& grid = {16, 32}, int n_fiber = 32, const XrayOptions& opt = {}) {
  const BoundaryFunction u = xray_transform(f, fan, g, opt);
  const VolumeGrid vg = volume_grid(g, grid);
  GridTensor out;
  out.rank = f.rank();
  out.points = vg.points;
  out.weights = vg.weights;
  out.values.resize(vg.points.size());
  const SMFunction adj = xray_adjoint(u, fan, g, opt);
  parallel_for(vg.points.size(), [&](std::size_t i) {
    out.values[i] = fiber_average_at(adj, g, f.rank(), vg.points[i], n_fiber);
  });
  return out;
}

/// <A, h>_{L^2} for a grid tensor against a field, with the grid's volume weights.
inline double grid_inner(const GridTensor& a, const SymTensorField& h, const MetricField& g) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    const Mat2 gi = inverse(to_mat(g.tensor.value(a.points[i])));
    s += a.weights[i] * pointwise_inner(a.values[i], h.value(a.points[i]), a.rank, gi);
  }
  return s;
}

// ---------------------------------------------------------------------------
// integral identities

struct IdentityReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double rel_error = 0.0;
  std::size_t flagged = 0;
};

inline double relative_gap(double a, double b) {
  const double den = std::max(std::abs(a), std::abs(b));
  return den > 0.0 ? std::abs(a - b) / den : 0.0;
}

/// int_SM F dmu against int_{dM_- SM} I F dmu_nu.
inline std::vector<IdentityReport> santalo_check(const std::vector<SMFunction>& Fs, const MetricField& g,
                                                 const BoundaryFan& fan, const SMGridSpec& sm,
                                                 const XrayOptions& opt = {}) {
  const std::vector<BoundaryFunction> I = xray_transform(Fs, fan, g, opt);
  std::vector<IdentityReport> out;
  for (std::size_t m = 0; m < Fs.size(); ++m) {
    IdentityReport r;
    r.lhs = integrate_over_SM(Fs[m], g, sm);
    for (std::size_t j = 0; j < fan.nodes.size(); ++j)
      if (I[m].flags[j] == node_ok) r.rhs += fan.nodes[j].weight * I[m].values[j];
    r.flagged = I[m].flagged();
    r.rel_error = relative_gap(r.lhs, r.rhs);
    out.push_back(r);
  }
  return out;
}

/// <I F, u>_{dmu_nu} against <F, I^* u>_{dmu}.
inline IdentityReport adjointness_check(const BoundaryFunction& IF, const SMFunction& F, const BoundaryFunction& u,
                                        const MetricField& g, const BoundaryFan& fan, const SMGridSpec& sm,
                                        const XrayOptions& opt = {}) {
  IdentityReport r;
  r.lhs = boundary_inner(IF, u, fan);
  const SMFunction adj = xray_adjoint(u, fan, g, opt);
  std::size_t skipped = 0;
  r.rhs = integrate_over_SM(
      [&](const Vec2& x, const Vec2& v) {
        const double fv = F(x, v);
        if (fv == 0.0) return 0.0;
        return fv * adj(x, v);
      },
      g, sm, &skipped);
  r.flagged = IF.flagged() + skipped;
  r.rel_error = relative_gap(r.lhs, r.rhs);
  return r;
}

/// f extended by zero outside the original chart.
inline SymTensorField extend_by_zero(const SymTensorField& f, const ChartDomain& dom) {
  return SymTensorField(
      f.rank(),
      [f, dom](const Vec2& x, int ord, TensorJet& out) {
        if (dom.boundary_function(x) < 0.0) return;
        f.evaluate(x, out, ord);
      },
      f.provided_order(), f.fd_step());
}

struct ExtensionCompareReport {
  double norm_M = 0.0;
  double norm_Me = 0.0;
  double C = 0.0;  // norm_Me / norm_M
  double L = 0.0;
  std::size_t flagged = 0;
};

/// ||I^e_2(E_0 f)||_{L^p(dM_e)} / ||I_2 f||_{L^p(dM)} on fans of the given size.
inline ExtensionCompareReport extension_compare(const SymTensorField& f, const MetricField& g, double delta, double p,
                                                int n_s, int n_theta, const XrayOptions& opt = {},
                                                int segment_rays = 2000) {
  ExtensionCompareReport rep;
  const Extension ext = extend_manifold(g, delta, segment_rays, opt.step);
  rep.L = ext.L;
  const BoundaryFan fan = boundary_fan(g, n_s, n_theta);
  const BoundaryFan fan_e = boundary_fan(ext.metric, n_s, n_theta);
  const BoundaryFunction u = xray_transform(f, fan, g, opt);
  const BoundaryFunction ue = xray_transform(extend_by_zero(f, g.domain), fan_e, ext.metric, opt);
  rep.norm_M = lp_norm(u, fan, p);
  rep.norm_Me = lp_norm(ue, fan_e, p);
  rep.C = rep.norm_Me / rep.norm_M;
  rep.flagged = u.flagged() + ue.flagged();
  return rep;
}

struct LpRatioReport {
  std::vector<double> ratios;  // ||I F||_q / ||F||_p per family member
  double max_ratio = 0.0;
  std::size_t flagged = 0;
};

inline LpRatioReport lp_norms_check(const std::vector<SMFunction>& family, const MetricField& g, const BoundaryFan& fan,
                                    double p, double q, const SMGridSpec& sm, const XrayOptions& opt = {}) {
  LpRatioReport rep;
  const std::vector<BoundaryFunction> I = xray_transform(family, fan, g, opt);
  for (std::size_t m = 0; m < family.size(); ++m) {
    const double num = lp_norm(I[m], fan, q);
    const double den = lp_norm_SM(family[m], g, p, sm);
    rep.ratios.push_back(num / den);
    rep.max_ratio = std::max(rep.max_ratio, num / den);
    rep.flagged += I[m].flagged();
  }
  return rep;
}

}  // namespace geoxray
