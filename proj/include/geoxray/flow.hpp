// Geodesic flow on the unit tangent bundle: RK4 ray tracing with boundary exit
// detection, escape times, the Clairaut oracle for surfaces of revolution,
// Jacobi fields, Floquet exponents of closed orbits and the extension M_e.
//
// On the annulus the angle coordinate is never wrapped during integration, so
// traces live on the universal cover and the winding can be read off directly.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "geoxray/core.hpp"
#include "geoxray/geometry.hpp"
#include "geoxray/parallel.hpp"
#include "geoxray/quadrature.hpp"

namespace geoxray {

class NotStrictlyConvexError : public Error {
 public:
  using Error::Error;
};

struct PhasePoint {
  Vec2 x{};
  Vec2 v{};
};

inline double speed(const MetricField& g, const Vec2& x, const Vec2& v) {
  return std::sqrt(form(to_mat(g.tensor.value(x)), v, v));
}

/// Rescales v to unit g-length.
inline PhasePoint normalized(const MetricField& g, const PhasePoint& z) {
  const double s = speed(g, z.x, z.v);
  if (!(s > 0.0)) throw ParameterError("zero tangent vector");
  return {z.x, (1.0 / s) * z.v};
}

/// Unit vector at x making angle theta with the first g-orthonormal direction
/// (Gram-Schmidt on the coordinate frame, starting from d/dx0).
inline PhasePoint phase_point_from_angle(const MetricField& g, const Vec2& x, double theta) {
  const Mat2 gm = to_mat(g.tensor.value(x));
  const Vec2 e1{1.0 / std::sqrt(gm[0][0]), 0.0};
  Vec2 e2{-form(gm, Vec2{0.0, 1.0}, e1) * e1[0], 1.0};
  e2 = (1.0 / std::sqrt(form(gm, e2, e2))) * e2;
  return {x, std::cos(theta) * e1 + std::sin(theta) * e2};
}

/// g(v, d/dphi) on the annulus (conserved for revolution metrics); angular momentum x v_y - y v_x on the disk.
inline double clairaut_constant(const MetricField& g, const Vec2& x, const Vec2& v) {
  if (!g.domain.is_annulus()) return x[0] * v[1] - x[1] * v[0];
  if (g.revolution) {
    const double f = g.revolution->eval(x[0])[0];
    return f * f * v[1];
  }
  const Mat2 gm = to_mat(g.tensor.value(x));
  return gm[1][0] * v[0] + gm[1][1] * v[1];
}

// ---------------------------------------------------------------------------
// integrator

enum class ExitKind { boundary, horizon, stopped };

struct FlowOptions {
  double step = 1e-3;
  double horizon = 50.0;
  double tangency_tol = 1e-8;
  double exit_tol = 1e-14;  // bisection stops when the time bracket is below this
  bool jacobi = false;       // integrate J'' + K J = 0 for the two fundamental solutions
  /// Replaces the chart's boundary function: the flow stops where region(x) turns negative.
  /// No tangency checks are made against a custom region.
  std::function<double(const Vec2&)> region;
};

/// x, v and (optionally) two Jacobi solutions (J1, J1', J2, J2').
struct FlowState {
  Vec2 x{};
  Vec2 v{};
  std::array<double, 4> jac{1.0, 0.0, 0.0, 1.0};
};

struct FlowExit {
  ExitKind kind = ExitKind::horizon;
  double time = 0.0;
  FlowState state;
  int component = -1;
  std::size_t steps = 0;
};

namespace detail {

struct Deriv {
  Vec2 dx{};
  Vec2 dv{};
  std::array<double, 4> djac{};
};

inline Deriv geodesic_rhs(const MetricField& g, const FlowState& s, bool jacobi) {
  Deriv d;
  d.dx = s.v;
  const Christoffel G = christoffel_symbols(g, s.x);
  for (int k = 0; k < 2; ++k) d.dv[k] = -form(G[k], s.v, s.v);
  if (jacobi) {
    const double K = gaussian_curvature(g, s.x);
    d.djac = {s.jac[1], -K * s.jac[0], s.jac[3], -K * s.jac[2]};
  }
  return d;
}

inline FlowState advance(const FlowState& s, const Deriv& d, double h, bool jacobi) {
  FlowState o = s;
  for (int i = 0; i < 2; ++i) {
    o.x[i] += h * d.dx[i];
    o.v[i] += h * d.dv[i];
  }
  if (jacobi)
    for (int i = 0; i < 4; ++i) o.jac[i] += h * d.djac[i];
  return o;
}

inline FlowState rk4_step(const MetricField& g, const FlowState& s, double h, bool jacobi) {
  const Deriv k1 = geodesic_rhs(g, s, jacobi);
  const Deriv k2 = geodesic_rhs(g, advance(s, k1, 0.5 * h, jacobi), jacobi);
  const Deriv k3 = geodesic_rhs(g, advance(s, k2, 0.5 * h, jacobi), jacobi);
  const Deriv k4 = geodesic_rhs(g, advance(s, k3, h, jacobi), jacobi);
  FlowState o = s;
  for (int i = 0; i < 2; ++i) {
    o.x[i] += h / 6.0 * (k1.dx[i] + 2 * k2.dx[i] + 2 * k3.dx[i] + k4.dx[i]);
    o.v[i] += h / 6.0 * (k1.dv[i] + 2 * k2.dv[i] + 2 * k3.dv[i] + k4.dv[i]);
  }
  if (jacobi)
    for (int i = 0; i < 4; ++i) o.jac[i] += h / 6.0 * (k1.djac[i] + 2 * k2.djac[i] + 2 * k3.djac[i] + k4.djac[i]);
  return o;
}

inline void renormalize(const MetricField& g, FlowState& s) {
  const double sp = speed(g, s.x, s.v);
  s.v = (1.0 / sp) * s.v;
}

}  // namespace detail

/// Integrates the geodesic flow from z for time T (negative T flows backwards).
/// visit(t, state) is called at t = 0, after every step and at the exit point;
/// returning false stops the flow. Throws TangencyError on (near) glancing boundary contact.
template <class Visitor>
FlowExit flow_visit(const MetricField& g, const PhasePoint& z, double T, const FlowOptions& opt, Visitor&& visit) {
  if (!(opt.step > 0.0)) throw ParameterError("flow: step must be positive");
  const double dir = T < 0.0 ? -1.0 : 1.0;
  const double span = std::abs(T);
  const auto& dom = g.domain;
  const bool custom = static_cast<bool>(opt.region);
  auto region = [&](const Vec2& x) { return custom ? opt.region(x) : dom.boundary_function(x); };

  FlowState s;
  s.x = z.x;
  s.v = z.v;
  FlowExit ex;

  if (!custom && std::abs(dom.boundary_function(s.x)) < 1e-11) {
    const int comp = dom.nearest_component(s.x);
    const double vn = dir * normal_component(g, s.x, s.v, comp);
    if (std::abs(vn) < opt.tangency_tol)
      throw TangencyError("ray starts tangent to the boundary at " + format_point(s.x));
    if (vn < 0.0) {
      ex.kind = ExitKind::boundary;
      ex.state = s;
      ex.component = comp;
      visit(0.0, s);
      return ex;
    }
  }
  if (!visit(0.0, s)) {
    ex.kind = ExitKind::stopped;
    ex.state = s;
    return ex;
  }

  double t = 0.0;
  const double h = opt.step;
  while (t < span) {
    const double hs = std::min(h, span - t);
    FlowState next = detail::rk4_step(g, s, dir * hs, opt.jacobi);
    ++ex.steps;
    if (region(next.x) < 0.0) {
      double lo = 0.0, hi = hs;
      FlowState at_lo = s, at_hi = next;
      for (int it = 0; it < 200 && hi - lo > opt.exit_tol; ++it) {
        const double mid = 0.5 * (lo + hi);
        FlowState m = detail::rk4_step(g, s, dir * mid, opt.jacobi);
        if (region(m.x) < 0.0) {
          hi = mid;
          at_hi = m;
        } else {
          lo = mid;
          at_lo = m;
        }
      }
      const bool take_lo = std::abs(region(at_lo.x)) <= std::abs(region(at_hi.x));
      FlowState fin = take_lo ? at_lo : at_hi;
      detail::renormalize(g, fin);
      ex.kind = ExitKind::boundary;
      ex.time = dir * (t + (take_lo ? lo : hi));
      ex.state = fin;
      if (!custom) {
        ex.component = dom.nearest_component(fin.x);
        const double vn = normal_component(g, fin.x, fin.v, ex.component);
        if (std::abs(vn) < opt.tangency_tol)
          throw TangencyError("ray leaves tangentially at " + format_point(fin.x));
      }
      visit(ex.time, fin);
      return ex;
    }
    detail::renormalize(g, next);
    s = next;
    t += hs;
    if (!visit(dir * t, s)) {
      ex.kind = ExitKind::stopped;
      ex.time = dir * t;
      ex.state = s;
      return ex;
    }
  }
  ex.kind = ExitKind::horizon;
  ex.time = dir * t;
  ex.state = s;
  return ex;
}

template <class Visitor>
FlowExit flow_visit(const MetricField& g, const PhasePoint& z, const FlowOptions& opt, Visitor&& visit) {
  return flow_visit(g, z, opt.horizon, opt, std::forward<Visitor>(visit));
}

struct RayTrace {
  std::vector<double> t;
  std::vector<PhasePoint> z;
  std::vector<double> speed_error;  // |v|_g - 1 before renormalization of the following step
  std::vector<double> clairaut;
  std::vector<std::array<double, 4>> jacobi;  // filled when FlowOptions::jacobi is set
  FlowExit exit;

  bool exited() const { return exit.kind == ExitKind::boundary; }
};

/// Geodesic flow for time T from z, recording every sample.
inline RayTrace geodesic_flow(const MetricField& g, const PhasePoint& z, double T, const FlowOptions& opt = {}) {
  RayTrace tr;
  tr.exit = flow_visit(g, z, T, opt, [&](double t, const FlowState& s) {
    tr.t.push_back(t);
    tr.z.push_back({s.x, s.v});
    tr.speed_error.push_back(speed(g, s.x, s.v) - 1.0);
    tr.clairaut.push_back(clairaut_constant(g, s.x, s.v));
    if (opt.jacobi) tr.jacobi.push_back(s.jac);
    return true;
  });
  return tr;
}

// ---------------------------------------------------------------------------
// escape times

struct EscapeResult {
  bool trapped = false;  // horizon reached
  double time = 0.0;     // |exit time| when not trapped, horizon otherwise
  PhasePoint exit{};
  int component = -1;
};

/// Forward (sign > 0) or backward (sign < 0) exit time; trapped when the horizon is reached.
inline EscapeResult escape_time(const MetricField& g, const PhasePoint& z, int sign, double horizon = 50.0,
                                double step = 1e-3) {
  FlowOptions opt;
  opt.step = step;
  opt.horizon = horizon;
  const FlowExit ex = flow_visit(g, z, sign < 0 ? -horizon : horizon, opt, [](double, const FlowState&) { return true; });
  EscapeResult r;
  r.trapped = ex.kind != ExitKind::boundary;
  r.time = std::abs(ex.time);
  r.exit = {ex.state.x, ex.state.v};
  r.component = ex.component;
  return r;
}

// ---------------------------------------------------------------------------
// adaptive Gauss-Legendre (used by the Clairaut oracle)

/// Globally adaptive 16-point Gauss-Legendre: splits the panel with the largest
/// error estimate until the summed estimate is below tol (or the panel budget is spent).
template <class Fn>
double adaptive_integrate(const Fn& fn, double a, double b, double tol, int max_panels = 4000) {
  static const QuadratureRule q = gauss_legendre(16);
  auto panel = [&](double lo, double hi) {
    const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += q.weights[i] * fn(mid + half * q.nodes[i]);
    return s * half;
  };
  struct Panel {
    double lo, hi, left, right, err;
  };
  auto make = [&](double lo, double hi, double whole) {
    const double m = 0.5 * (lo + hi);
    const double l = panel(lo, m), r = panel(m, hi);
    return Panel{lo, hi, l, r, std::abs(l + r - whole)};
  };
  std::vector<Panel> panels{make(a, b, panel(a, b))};
  for (;;) {
    double total = 0.0, err = 0.0;
    std::size_t worst = 0;
    for (std::size_t i = 0; i < panels.size(); ++i) {
      total += panels[i].left + panels[i].right;
      err += panels[i].err;
      if (panels[i].err > panels[worst].err) worst = i;
    }
    if (err <= std::max(tol, 1e-15 * std::abs(total)) || static_cast<int>(panels.size()) >= max_panels) return total;
    const Panel p = panels[worst];
    const double m = 0.5 * (p.lo + p.hi);
    panels[worst] = make(p.lo, m, p.left);
    panels.push_back(make(m, p.hi, p.right));
  }
}

// ---------------------------------------------------------------------------
// Clairaut oracle

enum class ClairautClass { crosses, returns, trapped };

inline const char* to_string(ClairautClass c) {
  switch (c) {
    case ClairautClass::crosses: return "crosses";
    case ClairautClass::returns: return "returns";
    case ClairautClass::trapped: return "trapped";
  }
  return "?";
}

struct ClairautResult {
  double c = 0.0;
  double f_min = 0.0;
  double r_neck = 0.0;
  ClairautClass kind = ClairautClass::crosses;
  double length = INFINITY;   // forward escape length
  double dphi = 0.0;          // forward phi displacement to the exit
  std::optional<double> turning_point;
  int exit_component = -1;
};

/// Location and value of min f over the annulus (golden section after a coarse scan).
inline std::pair<double, double> revolution_minimum(const MetricField& g) {
  const auto& prof = *g.revolution;
  const double a = g.domain.r_min, b = g.domain.r_max;
  const int n = 400;
  int best = 0;
  double fbest = INFINITY;
  for (int i = 0; i <= n; ++i) {
    const double f = prof.eval(a + (b - a) * i / n)[0];
    if (f < fbest) {
      fbest = f;
      best = i;
    }
  }
  double lo = a + (b - a) * std::max(0, best - 1) / n, hi = a + (b - a) * std::min(n, best + 1) / n;
  // Bisection on f' when it changes sign in the bracket, else the minimum sits on the boundary.
  if (prof.eval(lo)[1] < 0.0 && prof.eval(hi)[1] > 0.0) {
    for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
      const double m = 0.5 * (lo + hi);
      if (m == lo || m == hi) break;
      if (prof.eval(m)[1] < 0.0)
        lo = m;
      else
        hi = m;
    }
    const double r = std::abs(prof.eval(lo)[1]) <= std::abs(prof.eval(hi)[1]) ? lo : hi;
    return {r, prof.eval(r)[0]};
  }
  const double r = a + (b - a) * best / n;
  return {r, fbest};
}

/// Length and phi displacement of a monotone-in-r arc from r0 to r1 with Clairaut constant c.
inline std::pair<double, double> clairaut_arc(const RevolutionProfile& prof, double c, double r0, double r1,
                                              double tol = 1e-14) {
  if (r0 == r1) return {0.0, 0.0};
  const double sgn = r1 > r0 ? 1.0 : -1.0;
  auto dl = [&](double r) {
    const double f = prof.eval(r)[0];
    return 1.0 / std::sqrt(std::max(1e-300, 1.0 - c * c / (f * f)));
  };
  auto dp = [&](double r) {
    const double f = prof.eval(r)[0];
    return c / (f * f) / std::sqrt(std::max(1e-300, 1.0 - c * c / (f * f)));
  };
  const double lo = std::min(r0, r1), hi = std::max(r0, r1);
  (void)sgn;
  return {adaptive_integrate(dl, lo, hi, tol), adaptive_integrate(dp, lo, hi, tol)};
}

/// Arc from the turning point r* to r1, via r = r* + side u^2. The constant is taken
/// as f(r*) and f(r) - f(r*) is formed as s * mean(f') so nothing cancels near r*.
inline std::pair<double, double> clairaut_arc_from_turning(const RevolutionProfile& prof, double rstar, double r1,
                                                           double tol = 1e-14) {
  static const QuadratureRule mean = gauss_legendre(8, 0.0, 1.0);
  const double side = r1 > rstar ? 1.0 : -1.0;
  const double umax = std::sqrt(std::abs(r1 - rstar));
  const double c = prof.eval(rstar)[0];
  // Returns (1 - c^2/f^2) / u^2 and f at r* + side u^2.
  auto reduced = [&](double u) {
    const double s = side * u * u;
    double fp = 0.0;
    for (std::size_t i = 0; i < mean.size(); ++i) fp += mean.weights[i] * prof.eval(rstar + mean.nodes[i] * s)[1];
    const double f = prof.eval(rstar + s)[0];
    return std::pair<double, double>{side * fp * (f + c) / (f * f), f};
  };
  auto q = [&](double u) { return 2.0 / std::sqrt(reduced(u).first); };
  auto qp = [&](double u) {
    const auto [den, f] = reduced(u);
    return 2.0 * c / (f * f) / std::sqrt(den);
  };
  return {adaptive_integrate(q, 0.0, umax, tol), adaptive_integrate(qp, 0.0, umax, tol)};
}

/// Root of f(r) = level on [a, b] (f monotone there).
inline double revolution_level(const RevolutionProfile& prof, double level, double a, double b) {
  double fa = prof.eval(a)[0] - level;
  for (int it = 0; it < 200 && std::abs(b - a) > 1e-16; ++it) {
    const double m = 0.5 * (a + b);
    const double fm = prof.eval(m)[0] - level;
    if ((fm < 0.0) == (fa < 0.0)) {
      a = m;
      fa = fm;
    } else {
      b = m;
    }
  }
  return 0.5 * (a + b);
}

/// Exact classification of the forward ray from z on a revolution metric.
inline ClairautResult clairaut_oracle(const MetricField& g, const PhasePoint& z, double trap_tol = 1e-12) {
  if (!g.revolution || !g.domain.is_annulus()) throw UnsupportedError("clairaut_oracle: metric has no revolution tag");
  const auto& prof = *g.revolution;
  ClairautResult res;
  const double f0 = prof.eval(z.x[0])[0];
  res.c = f0 * f0 * z.v[1];
  const auto [rn, fmin] = revolution_minimum(g);
  res.r_neck = rn;
  res.f_min = fmin;
  const double ac = std::abs(res.c);
  const double rmin = g.domain.r_min, rmax = g.domain.r_max;
  const double vr = z.v[0];
  const double phisgn = res.c >= 0.0 ? 1.0 : -1.0;
  if (std::abs(ac - fmin) <= trap_tol * fmin) {
    res.kind = ClairautClass::trapped;
    return res;
  }
  if (ac < fmin) {
    res.kind = ClairautClass::crosses;
    const double target = vr > 0.0 ? rmax : rmin;
    res.exit_component = vr > 0.0 ? 1 : 0;
    const auto [len, dphi] = clairaut_arc(prof, ac, z.x[0], target);
    res.length = len;
    res.dphi = phisgn * dphi;
    return res;
  }
  res.kind = ClairautClass::returns;
  const bool upper = z.x[0] > rn;
  const double rstar = upper ? revolution_level(prof, ac, rn, rmax) : revolution_level(prof, ac, rmin, rn);
  res.turning_point = rstar;
  const double rb = upper ? rmax : rmin;
  res.exit_component = upper ? 1 : 0;
  const bool toward_neck = upper ? vr < 0.0 : vr > 0.0;
  if (toward_neck || vr == 0.0) {
    const auto a1 = clairaut_arc_from_turning(prof, rstar, z.x[0]);
    const auto a2 = clairaut_arc_from_turning(prof, rstar, rb);
    res.length = a1.first + a2.first;
    res.dphi = phisgn * (a1.second + a2.second);
  } else {
    const auto [len, dphi] = clairaut_arc(prof, ac, z.x[0], rb);
    res.length = len;
    res.dphi = phisgn * dphi;
  }
  return res;
}

// ---------------------------------------------------------------------------
// boundary convexity

struct ConvexityReport {
  std::vector<double> min_kg;  // per boundary component
  std::vector<double> max_kg;
  bool strictly_convex = false;
};

/// Geodesic curvature of the boundary circles with respect to the inward normal.
inline ConvexityReport boundary_convexity(const MetricField& g, int samples = 64) {
  ConvexityReport rep;
  const auto& dom = g.domain;
  for (int comp = 0; comp < dom.boundary_components(); ++comp) {
    double lo = INFINITY, hi = -INFINITY;
    for (int i = 0; i < samples; ++i) {
      const double a = kTwoPi * (i + 0.5) / samples;
      const BoundaryFrame bf = boundary_frame(g, comp, a);
      Vec2 cd, cdd;
      if (dom.is_annulus()) {
        cd = {0.0, 1.0};
        cdd = {0.0, 0.0};
      } else {
        cd = {-dom.radius * std::sin(a), dom.radius * std::cos(a)};
        cdd = {-dom.radius * std::cos(a), -dom.radius * std::sin(a)};
      }
      const Christoffel G = christoffel_symbols(g, bf.point);
      Vec2 acc{cdd[0] + form(G[0], cd, cd), cdd[1] + form(G[1], cd, cd)};
      const Mat2 gm = to_mat(g.tensor.value(bf.point));
      const double kg = form(gm, acc, bf.inward_normal) / (bf.speed * bf.speed);
      lo = std::min(lo, kg);
      hi = std::max(hi, kg);
    }
    rep.min_kg.push_back(lo);
    rep.max_kg.push_back(hi);
  }
  rep.strictly_convex = *std::min_element(rep.min_kg.begin(), rep.min_kg.end()) > 0.0;
  return rep;
}

inline void require_strictly_convex(const MetricField& g) {
  const ConvexityReport rep = boundary_convexity(g);
  if (!rep.strictly_convex)
    throw NotStrictlyConvexError("boundary of '" + g.name + "' is not strictly convex (min k_g = " +
                                 std::to_string(*std::min_element(rep.min_kg.begin(), rep.min_kg.end())) + ")");
}

// ---------------------------------------------------------------------------
// Jacobi fields, Floquet exponents, conjugate points

/// Fundamental Jacobi solutions along the ray: (J1, J1', J2, J2') with J1(0) = 1, J1'(0) = 0, J2(0) = 0, J2'(0) = 1.
inline RayTrace linearized_flow(const MetricField& g, const PhasePoint& z, double T, FlowOptions opt = {}) {
  opt.jacobi = true;
  return geodesic_flow(g, z, T, opt);
}

struct ClosedOrbit {
  PhasePoint z;
  double period = 0.0;
};

/// The neck geodesic r = r_neck of a revolution metric.
inline ClosedOrbit neck_orbit(const MetricField& g) {
  if (!g.revolution) throw UnsupportedError("neck_orbit: metric has no revolution tag");
  const auto [rn, fmin] = revolution_minimum(g);
  return {{{rn, 0.0}, {0.0, 1.0 / fmin}}, kTwoPi * fmin};
}

struct HyperbolicityReport {
  std::string orbit_id;
  double period = 0.0;
  double return_error = 0.0;
  std::array<double, 2> multipliers{};  // real parts (eigenvalues of the monodromy)
  std::array<double, 2> exponents{};    // log|multiplier|, per period
  double lyapunov_rate = 0.0;           // largest exponent / period
  double expansion_C = 0.0;             // sup_t |Phi(t)| e^{-nu t}
  double nu = 0.0;
  bool complex_pair = false;
  bool conjugate_points = false;
};

inline HyperbolicityReport floquet(const MetricField& g, const ClosedOrbit& orb, double step = 1e-3,
                                   std::string id = "closed") {
  FlowOptions opt;
  opt.step = step;
  opt.jacobi = true;
  const RayTrace tr = geodesic_flow(g, orb.z, orb.period, opt);
  if (tr.exited()) throw ParameterError("floquet: orbit leaves M");
  const PhasePoint& e = tr.z.back();
  Vec2 dx = e.x - orb.z.x;
  if (g.domain.is_annulus()) dx[1] = wrap_angle(dx[1]);
  const Vec2 dv = e.v - orb.z.v;
  const double err = std::max({std::abs(dx[0]), std::abs(dx[1]), std::abs(dv[0]), std::abs(dv[1])});
  if (err > 1e-8) throw ParameterError("floquet: orbit is not closed (return error " + std::to_string(err) + ")");
  HyperbolicityReport rep;
  rep.orbit_id = std::move(id);
  rep.period = orb.period;
  rep.return_error = err;
  const auto& j = tr.jacobi.back();
  const double a = j[0], b = j[2], c = j[1], d = j[3];
  const double tr_m = a + d, det_m = a * d - b * c;
  const double disc = tr_m * tr_m - 4.0 * det_m;
  if (disc >= 0.0) {
    const double s = std::sqrt(disc);
    rep.multipliers = {0.5 * (tr_m + s), 0.5 * (tr_m - s)};
    rep.exponents = {std::log(std::abs(rep.multipliers[0])), std::log(std::abs(rep.multipliers[1]))};
    if (rep.exponents[0] < rep.exponents[1]) {
      std::swap(rep.exponents[0], rep.exponents[1]);
      std::swap(rep.multipliers[0], rep.multipliers[1]);
    }
  } else {
    rep.complex_pair = true;
    rep.multipliers = {0.5 * tr_m, 0.5 * tr_m};
    rep.exponents = {0.5 * std::log(det_m), 0.5 * std::log(det_m)};
  }
  rep.lyapunov_rate = rep.exponents[0] / orb.period;
  rep.nu = rep.lyapunov_rate;
  for (std::size_t i = 0; i < tr.t.size(); ++i) {
    const auto& q = tr.jacobi[i];
    const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]) / std::sqrt(2.0);
    rep.expansion_C = std::max(rep.expansion_C, n * std::exp(-rep.nu * tr.t[i]));
  }
  for (std::size_t i = 1; i < tr.jacobi.size(); ++i)
    if (tr.jacobi[i][2] <= 0.0) rep.conjugate_points = true;
  return rep;
}

struct ConjugateReport {
  bool conjugate = false;
  double first_time = 0.0;
  double final_J = 0.0;
  double length = 0.0;
};

/// Flags a zero of the Jacobi field with J(0) = 0, J'(0) = 1 along the ray (up to exit or |T|).
inline ConjugateReport conjugate_check(const MetricField& g, const PhasePoint& z, double T, double step = 1e-3) {
  FlowOptions opt;
  opt.step = step;
  opt.jacobi = true;
  ConjugateReport rep;
  const FlowExit ex = flow_visit(g, z, T, opt, [&](double t, const FlowState& s) {
    if (t != 0.0 && s.jac[2] * (T < 0 ? -1.0 : 1.0) <= 0.0 && !rep.conjugate) {
      rep.conjugate = true;
      rep.first_time = t;
    }
    rep.final_J = s.jac[2];
    return true;
  });
  rep.length = std::abs(ex.time);
  return rep;
}

/// Finite-time Lyapunov estimate log(|Phi(T)|) / T from the Jacobi fundamental matrix.
inline double lyapunov_estimate(const MetricField& g, const PhasePoint& z, double T, double step = 1e-3) {
  const RayTrace tr = linearized_flow(g, z, T, [&] {
    FlowOptions o;
    o.step = step;
    return o;
  }());
  const auto& q = tr.jacobi.back();
  const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]) / std::sqrt(2.0);
  const double t = std::abs(tr.t.back());
  return t > 0.0 ? std::log(n) / t : 0.0;
}

// ---------------------------------------------------------------------------
// extension M_e

struct Extension {
  MetricField metric;  // same formula on the enlarged chart
  double L = 0.0;      // longest sampled segment in SM_e minus SM interior
  std::size_t samples = 0;
  std::size_t horizon_hits = 0;
};

/// Enlarges the chart by delta and estimates the segment bound L from `rays` sampled
/// segments (half entering from dM_e, half leaving dM outwards).
inline Extension extend_manifold(const MetricField& g, double delta, int rays = 10000, double step = 1e-3,
                                 double horizon = 50.0) {
  if (!(delta > 0.0)) throw ParameterError("extend_manifold: delta must be positive");
  const ChartDomain& dom = g.domain;
  ChartDomain ed = dom.is_annulus() ? ChartDomain::annulus(dom.r_min - delta, dom.r_max + delta)
                                    : ChartDomain::disk(dom.radius + delta);
  Extension ext;
  ext.metric = with_domain(g, ed);
  ext.metric.name = g.name + "_e";
  require_strictly_convex(ext.metric);

  const int half = rays / 2;
  const int comps = ed.boundary_components();
  const int per_comp = std::max(1, half / comps);
  const int n_theta = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(per_comp))));
  const int n_phi = std::max(1, per_comp / n_theta);

  struct Job {
    int comp;
    double angle, theta;
    bool outer;  // starts on dM_e (inward), else on dM (outward)
  };
  std::vector<Job> jobs;
  for (int outer = 1; outer >= 0; --outer)
    for (int c = 0; c < comps; ++c)
      for (int i = 0; i < n_phi; ++i)
        for (int k = 0; k < n_theta; ++k)
          jobs.push_back({c, kTwoPi * (i + 0.5) / n_phi, -0.5 * kPi + kPi * (k + 0.5) / n_theta, outer == 1});

  std::vector<double> len(jobs.size(), 0.0);
  std::vector<char> hit(jobs.size(), 0);
  parallel_for(jobs.size(), [&](std::size_t j) {
    const Job& jb = jobs[j];
    FlowOptions opt;
    opt.step = step;
    // Inside the shell M_e minus M interior: rho_e >= 0 and rho_M <= 0.
    opt.region = [&](const Vec2& x) { return std::min(ed.boundary_function(x), -dom.boundary_function(x)); };
    PhasePoint z;
    if (jb.outer) {
      const BoundaryFrame bf = boundary_frame(ext.metric, jb.comp, jb.angle);
      z = {bf.point, boundary_direction(bf, jb.theta)};
    } else {
      const BoundaryFrame bf = boundary_frame(g, jb.comp, jb.angle);
      z = {bf.point, -1.0 * boundary_direction(bf, -jb.theta)};
    }
    const FlowExit ex = flow_visit(ext.metric, z, horizon, opt, [](double, const FlowState&) { return true; });
    len[j] = std::abs(ex.time);
    hit[j] = ex.kind != ExitKind::boundary;
  });
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    ext.L = std::max(ext.L, len[j]);
    ext.horizon_hits += hit[j];
  }
  ext.samples = jobs.size();
  return ext;
}

}  // namespace geoxray
