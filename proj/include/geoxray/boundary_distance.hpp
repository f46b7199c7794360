// Marked boundary distance by shooting in a fixed homotopy class, the energy
// curve E(tau) = d_{g + tau f}^2, gauge pullbacks by flows of interior vector
// fields, and the solenoidal gauge normalization.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "geoxray/flow.hpp"
#include "geoxray/geometry.hpp"
#include "geoxray/parallel.hpp"
#include "geoxray/tencalc.hpp"
#include "geoxray/xray.hpp"

namespace geoxray {

class NoSolutionInClass : public Error {
 public:
  using Error::Error;
};

class AmbiguousBracketError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// shooting

struct BoundaryPoint {
  int component = 0;
  double param = 0.0;  // boundary angle
};

struct ShootingOptions {
  double shoot_tol = 1e-8;  // endpoint error in chart units
  int n_scan = 128;
  double step = 1e-3;
  double horizon = 50.0;
  int max_iter = 200;
};

struct GeodesicConnection {
  BoundaryPoint from;
  BoundaryPoint to;
  int winding = 0;        // requested class
  int measured_winding = 0;
  double psi = 0.0;       // initial angle from the inward normal
  double length = 0.0;
  double dphi = 0.0;      // unwrapped angular displacement
  double endpoint_error = 0.0;
  int iterations = 0;
  int brackets = 0;
  PhasePoint start;
};

struct ShotSample {
  double psi = 0.0;
  bool valid = false;
  int component = -1;
  double displacement = 0.0;  // annulus: unwrapped dphi; disk: exit angle - start angle in (0, 2pi)
  double length = 0.0;
};

inline PhasePoint boundary_phase_point(const MetricField& g, const BoundaryPoint& b, double psi) {
  const BoundaryFrame bf = boundary_frame(g, b.component, b.param);
  return {bf.point, boundary_direction(bf, psi)};
}

inline ShotSample shoot(const MetricField& g, const BoundaryPoint& from, double psi, const ShootingOptions& opt) {
  ShotSample s;
  s.psi = psi;
  const PhasePoint z = boundary_phase_point(g, from, psi);
  FlowOptions fo;
  fo.step = opt.step;
  FlowExit ex;
  try {
    ex = flow_visit(g, z, opt.horizon, fo, [](double, const FlowState&) { return true; });
  } catch (const TangencyError&) {
    return s;
  }
  if (ex.kind != ExitKind::boundary) return s;
  s.valid = true;
  s.component = ex.component;
  s.length = ex.time;
  if (g.domain.is_annulus()) {
    s.displacement = ex.state.x[1] - z.x[1];
  } else {
    const double a0 = std::atan2(z.x[1], z.x[0]), a1 = std::atan2(ex.state.x[1], ex.state.x[0]);
    s.displacement = wrap_positive(a1 - a0);
  }
  return s;
}

/// Initial angles for the class scan: uniform midpoints plus points approaching glancing incidence.
inline std::vector<double> scan_angles(int n_scan) {
  std::vector<double> psi;
  for (int m = 7; m >= 2; --m) psi.push_back(-0.5 * kPi + std::pow(10.0, -m));
  for (int j = 0; j < n_scan; ++j) psi.push_back(-0.5 * kPi + (j + 0.5) * kPi / n_scan);
  for (int m = 2; m <= 7; ++m) psi.push_back(0.5 * kPi - std::pow(10.0, -m));
  return psi;
}

namespace detail {

inline bool same_branch(const ShotSample& a, const ShotSample& b) {
  return a.valid == b.valid && a.component == b.component;
}

}  // namespace detail

/// Scan of initial angles. Where neighbouring samples change branch (trapped directions), the transition is
/// located by bisection and samples accumulating at it on both sides are added, since the displacement diverges
/// there.
inline std::vector<ShotSample> shooting_scan(const MetricField& g, const BoundaryPoint& from, const ShootingOptions& opt) {
  const std::vector<double> psi = scan_angles(opt.n_scan);
  std::vector<ShotSample> out(psi.size());
  parallel_for(psi.size(), [&](std::size_t j) { out[j] = shoot(g, from, psi[j], opt); });
  std::vector<std::pair<double, double>> transitions;
  for (std::size_t j = 0; j + 1 < out.size(); ++j)
    if (!detail::same_branch(out[j], out[j + 1])) transitions.emplace_back(out[j].psi, out[j + 1].psi);
  if (transitions.empty()) return out;
  std::vector<double> extra;
  for (auto [lo, hi] : transitions) {
    const ShotSample s_lo = shoot(g, from, lo, opt);
    while (hi - lo > 1e-13) {
      const double mid = 0.5 * (lo + hi);
      if (detail::same_branch(shoot(g, from, mid, opt), s_lo))
        lo = mid;
      else
        hi = mid;
    }
    for (int m = 2; m <= 12; ++m)
      for (double c : {1.0, 3.0}) {
        const double d = c * std::pow(10.0, -m);
        if (lo - d > out.front().psi) extra.push_back(lo - d);
        if (hi + d < out.back().psi) extra.push_back(hi + d);
      }
  }
  std::vector<ShotSample> more(extra.size());
  parallel_for(extra.size(), [&](std::size_t j) { more[j] = shoot(g, from, extra[j], opt); });
  out.insert(out.end(), more.begin(), more.end());
  std::sort(out.begin(), out.end(), [](const ShotSample& a, const ShotSample& b) { return a.psi < b.psi; });
  return out;
}

namespace detail {

struct ShootTarget {
  int component = 0;
  double displacement = 0.0;
  double scale = 1.0;  // chart units per unit of displacement
};

inline ShootTarget shoot_target(const MetricField& g, const BoundaryPoint& from, const BoundaryPoint& to, int k) {
  ShootTarget t;
  t.component = to.component;
  if (g.domain.is_annulus()) {
    t.displacement = wrap_angle(to.param - from.param) + kTwoPi * k;
  } else {
    if (k != 0) throw NoSolutionInClass("disk: only the trivial class exists (k = " + std::to_string(k) + ")");
    t.displacement = wrap_positive(to.param - from.param);
    t.scale = g.domain.radius;
    if (t.displacement == 0.0) throw NoSolutionInClass("disk: endpoints coincide");
  }
  return t;
}

inline double residual(const ShotSample& s, const ShootTarget& t) { return s.displacement - t.displacement; }

inline bool usable(const ShotSample& s, const ShootTarget& t) { return s.valid && s.component == t.component; }

// Illinois-modified regula falsi on a sign-changing bracket.
inline GeodesicConnection refine(const MetricField& g, const BoundaryPoint& from, const ShootTarget& t, ShotSample a,
                                 ShotSample b, const ShootingOptions& opt) {
  double fa = residual(a, t), fb = residual(b, t);
  int side = 0;
  GeodesicConnection c;
  ShotSample best = std::abs(fa) < std::abs(fb) ? a : b;
  for (int it = 1; it <= opt.max_iter; ++it) {
    c.iterations = it;
    if (std::abs(residual(best, t)) * t.scale <= opt.shoot_tol) break;
    double psi = (a.psi * fb - b.psi * fa) / (fb - fa);
    if (!(psi > std::min(a.psi, b.psi) && psi < std::max(a.psi, b.psi))) psi = 0.5 * (a.psi + b.psi);
    ShotSample m = shoot(g, from, psi, opt);
    if (!usable(m, t)) {
      // a trapped or off-class sample inside the bracket: fall back to bisection
      m = shoot(g, from, 0.5 * (a.psi + b.psi), opt);
      if (!usable(m, t)) throw ConvergenceError("shooting: bracket contains rays outside the class");
    }
    const double fm = residual(m, t);
    if (std::abs(fm) < std::abs(residual(best, t))) best = m;
    if ((fm < 0.0) == (fa < 0.0)) {
      a = m;
      fa = fm;
      if (side == -1) fb *= 0.5;
      side = -1;
    } else {
      b = m;
      fb = fm;
      if (side == 1) fa *= 0.5;
      side = 1;
    }
    if (std::abs(b.psi - a.psi) < 1e-16) break;
  }
  const double err = std::abs(residual(best, t)) * t.scale;
  if (err > opt.shoot_tol)
    throw ConvergenceError("shooting: endpoint error " + std::to_string(err) + " above tolerance after " +
                           std::to_string(c.iterations) + " iterations");
  c.psi = best.psi;
  c.length = best.length;
  c.dphi = best.displacement;
  c.endpoint_error = err;
  c.start = boundary_phase_point(g, from, best.psi);
  return c;
}

inline void finish(GeodesicConnection& c, const MetricField& g, const BoundaryPoint& from, const BoundaryPoint& to,
                   int k) {
  c.from = from;
  c.to = to;
  c.winding = k;
  c.measured_winding = g.domain.is_annulus() ? static_cast<int>(std::lround(c.dphi / kTwoPi)) : 0;
}

}  // namespace detail

/// Length of the unique geodesic from `from` to `to` in winding class k.
inline GeodesicConnection marked_distance(const MetricField& g, const BoundaryPoint& from, const BoundaryPoint& to,
                                          int k, const ShootingOptions& opt = {}) {
  const detail::ShootTarget t = detail::shoot_target(g, from, to, k);
  const std::vector<ShotSample> scan = shooting_scan(g, from, opt);
  std::vector<std::size_t> brackets;
  for (std::size_t j = 0; j + 1 < scan.size(); ++j) {
    if (!detail::usable(scan[j], t) || !detail::usable(scan[j + 1], t)) continue;
    const double a = detail::residual(scan[j], t), b = detail::residual(scan[j + 1], t);
    if (a == 0.0 || (a < 0.0) != (b < 0.0)) brackets.push_back(j);
  }
  if (brackets.empty())
    throw NoSolutionInClass("no boundary-to-boundary geodesic in class " + std::to_string(k) + " from " +
                            format_point({static_cast<double>(from.component), from.param}) + " to " +
                            format_point({static_cast<double>(to.component), to.param}));
  if (brackets.size() > 1) {
    std::string list;
    for (std::size_t j : brackets)
      list += " [" + std::to_string(scan[j].psi) + ", " + std::to_string(scan[j + 1].psi) + "]";
    throw AmbiguousBracketError("several shooting brackets in class " + std::to_string(k) + ":" + list);
  }
  GeodesicConnection c = detail::refine(g, from, t, scan[brackets[0]], scan[brackets[0] + 1], opt);
  c.brackets = 1;
  detail::finish(c, g, from, to, k);
  return c;
}

/// Warm-started shooting: expands a bracket around psi_guess instead of scanning all angles.
inline GeodesicConnection marked_distance_near(const MetricField& g, const BoundaryPoint& from,
                                               const BoundaryPoint& to, int k, double psi_guess,
                                               const ShootingOptions& opt = {}, double initial_width = 1e-6) {
  const detail::ShootTarget t = detail::shoot_target(g, from, to, k);
  const double lim = 0.5 * kPi - 1e-9;
  for (double w = initial_width; w < kPi; w *= 4.0) {
    const ShotSample a = shoot(g, from, std::max(-lim, psi_guess - w), opt);
    const ShotSample b = shoot(g, from, std::min(lim, psi_guess + w), opt);
    if (!detail::usable(a, t) || !detail::usable(b, t)) continue;
    if ((detail::residual(a, t) < 0.0) != (detail::residual(b, t) < 0.0)) {
      GeodesicConnection c = detail::refine(g, from, t, a, b, opt);
      c.brackets = 1;
      detail::finish(c, g, from, to, k);
      return c;
    }
  }
  return marked_distance(g, from, to, k, opt);
}

// ---------------------------------------------------------------------------
// energy curve

/// g + tau f for any tau with g + tau f positive definite on the sampling grid.
inline MetricField perturbed_metric(const MetricField& g, const SymTensorField& f, double tau) {
  if (tau == 0.0) return g;
  if (tau >= 0.0 && tau <= 1.0) return interpolate_metric(g, f, tau);
  MetricField out{g.domain, linear_combination(1.0, g.tensor, tau, f), std::nullopt, g.name + "+tau*f"};
  for (const Vec2& x : sampling_points(g.domain, GridSpec{32, 64}))
    if (!is_positive_definite(to_mat(out.tensor.value(x))))
      throw DegenerateMetricError("g + tau f not positive definite at " + format_point(x) +
                                  " (tau = " + std::to_string(tau) + ")");
  return out;
}

struct EnergyOptions {
  std::vector<double> taus = {0.0, 0.25, 0.5, 0.75, 1.0};
  double dtau = 1e-3;
  ShootingOptions shoot = [] {
    ShootingOptions o;
    o.shoot_tol = 1e-12;
    return o;
  }();
};

struct EnergyCurve {
  GeodesicConnection base;
  std::vector<double> tau;
  std::vector<double> E;
  std::vector<double> second_differences;  // at interior tau nodes (uniform grids)
  double max_second_difference = 0.0;
  bool concave = true;
  double dE0 = 0.0;           // Richardson-extrapolated centred difference at tau = 0
  double ray_integral = 0.0;  // int_0^1 f(c'(s), c'(s)) ds along the tau = 0 geodesic on [0, 1]
};

/// E(tau) = energy of the [0,1]-parameterized g_tau geodesic from `from` to `to` in class k, i.e. its length squared.
inline EnergyCurve energy_curve(const MetricField& g, const SymTensorField& f, const BoundaryPoint& from,
                                const BoundaryPoint& to, int k, const EnergyOptions& opt = {}) {
  EnergyCurve ec;
  ec.base = marked_distance(g, from, to, k, opt.shoot);
  auto energy_at = [&](double tau, double psi_guess, double* psi_out) {
    try {
      const MetricField gt = perturbed_metric(g, f, tau);
      const GeodesicConnection c = marked_distance_near(gt, from, to, k, psi_guess, opt.shoot);
      if (psi_out) *psi_out = c.psi;
      return c.length * c.length;
    } catch (const NoSolutionInClass& e) {
      throw NoSolutionInClass("class " + std::to_string(k) + " disappears at tau = " + std::to_string(tau) + ": " +
                              e.what());
    }
  };
  double psi = ec.base.psi;
  for (double tau : opt.taus) {
    ec.tau.push_back(tau);
    ec.E.push_back(tau == 0.0 ? ec.base.length * ec.base.length : energy_at(tau, psi, &psi));
  }
  for (std::size_t i = 1; i + 1 < ec.E.size(); ++i) {
    const double d = ec.E[i + 1] - 2.0 * ec.E[i] + ec.E[i - 1];
    ec.second_differences.push_back(d);
    ec.max_second_difference = std::max(ec.max_second_difference, d);
  }
  if (ec.second_differences.empty()) ec.max_second_difference = 0.0;
  ec.concave = ec.max_second_difference <= 1e-6;
  const double h = opt.dtau, p0 = ec.base.psi;
  const double D1 = (energy_at(h, p0, nullptr) - energy_at(-h, p0, nullptr)) / (2.0 * h);
  const double D2 = (energy_at(0.5 * h, p0, nullptr) - energy_at(-0.5 * h, p0, nullptr)) / h;
  ec.dE0 = (4.0 * D2 - D1) / 3.0;
  std::vector<double> vals;
  XrayOptions xo;
  xo.step = opt.shoot.step;
  integrate_along_ray(g, ec.base.start, {pullback_pi_m(f)}, xo, vals);
  ec.ray_integral = ec.base.length * vals[0];
  return ec;
}

// ---------------------------------------------------------------------------
// vector fields and their flows

/// Contravariant vector field with its Jacobian jac[i][j] = d_j V^i (and optionally the Hessian).
struct VectorField {
  std::function<void(const Vec2& x, Vec2& value, Mat2& jac)> eval;
  std::string name = "V";
};

/// b(x) (a d_0 + c d_1) for a bump b.
inline VectorField bump_vector_field(const Bump& bump, double a, double c) {
  VectorField V;
  V.name = "bump";
  V.eval = [bump, a, c](const Vec2& x, Vec2& v, Mat2& J) {
    const ScalarJet s = bump.jet(x);
    v = {a * s.value, c * s.value};
    J = {{{a * s.grad[0], a * s.grad[1]}, {c * s.grad[0], c * s.grad[1]}}};
  };
  return V;
}

inline VectorField scaled_field(double eps, const VectorField& V) {
  VectorField out;
  out.name = V.name;
  out.eval = [eps, V](const Vec2& x, Vec2& v, Mat2& J) {
    V.eval(x, v, J);
    v = eps * v;
    J = eps * J;
  };
  return out;
}

/// Time-t map of a vector field by `steps` RK4 steps, with its exact Jacobian (RK4 on the variational system).
struct FieldFlow {
  VectorField V;
  double t = 1.0;
  int steps = 16;

  void apply(const Vec2& x, Vec2& y, Mat2& J) const {
    y = x;
    J = {{{1.0, 0.0}, {0.0, 1.0}}};
    const double h = t / steps;
    for (int s = 0; s < steps; ++s) {
      Vec2 v1, v2, v3, v4;
      Mat2 A1, A2, A3, A4;
      V.eval(y, v1, A1);
      // outside the support every stage sees V = 0, dV = 0: the map is the identity
      if (s == 0 && v1 == Vec2{} && A1 == Mat2{}) return;
      const Mat2 K1 = matmul(A1, J);
      V.eval(y + 0.5 * h * v1, v2, A2);
      const Mat2 K2 = matmul(A2, J + 0.5 * h * K1);
      V.eval(y + 0.5 * h * v2, v3, A3);
      const Mat2 K3 = matmul(A3, J + 0.5 * h * K2);
      V.eval(y + h * v3, v4, A4);
      const Mat2 K4 = matmul(A4, J + h * K3);
      y = y + (h / 6.0) * (v1 + 2.0 * v2 + 2.0 * v3 + v4);
      J = J + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4);
    }
  }
};

/// (Phi^* g_base) with Phi = chain.back() o ... o chain.front().
inline MetricField chain_pullback(const MetricField& base, std::vector<FieldFlow> chain, const std::string& name) {
  const auto maps = std::make_shared<const std::vector<FieldFlow>>(std::move(chain));
  const MetricField b = base;
  SymTensorField t(
      2,
      [maps, b](const Vec2& x, int, TensorJet& out) {
        Vec2 y = x;
        Mat2 J{{{1.0, 0.0}, {0.0, 1.0}}};
        for (const FieldFlow& m : *maps) {
          Vec2 y2;
          Mat2 Jm;
          m.apply(y, y2, Jm);
          y = y2;
          J = matmul(Jm, J);
        }
        // the maps fix a neighbourhood of the boundary, so points just outside (bisection probes) stay put
        if (b.domain.boundary_function(y) < -1e-9 && b.domain.boundary_function(x) >= -1e-9)
          throw DomainError("gauge flow leaves the chart at " + format_point(y));
        const Mat2 gy = to_mat(b.tensor.value(y));
        Mat2 pulled{};
        for (int a = 0; a < 2; ++a)
          for (int c = 0; c < 2; ++c) {
            double s = 0.0;
            for (int i = 0; i < 2; ++i)
              for (int j = 0; j < 2; ++j) s += J[i][a] * gy[i][j] * J[j][c];
            pulled[a][c] = s;
          }
        out.value = to_components(pulled);
      },
      0);
  return {base.domain, t, std::nullopt, name};
}

/// (phi_{V,t})^* g for V vanishing near the boundary.
inline MetricField gauge_pull(const VectorField& V, double t, const MetricField& g, int steps = 16) {
  for (int c = 0; c < g.domain.boundary_components(); ++c)
    for (int j = 0; j < 64; ++j) {
      const Vec2 x = boundary_frame(g, c, kTwoPi * j / 64).point;
      Vec2 v;
      Mat2 J;
      V.eval(x, v, J);
      if (std::abs(v[0]) + std::abs(v[1]) > 0.0)
        throw ParameterError("gauge_pull: vector field does not vanish on the boundary at " + format_point(x));
    }
  return chain_pullback(g, {FieldFlow{V, t, steps}}, g.name + "_pulled");
}

// ---------------------------------------------------------------------------
// solenoidal gauge normalization

namespace detail {

/// y -> second derivatives of the cubic spline through y (natural or periodic), as a dense operator.
inline Eigen::MatrixXd spline_operator(int n, double h, bool periodic) {
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(n, n), R = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    if (!periodic && (i == 0 || i == n - 1)) {
      T(i, i) = 1.0;
      continue;
    }
    const int im = (i - 1 + n) % n, ip = (i + 1) % n;
    T(i, im) += 1.0;
    T(i, i) += 4.0;
    T(i, ip) += 1.0;
    R(i, im) += 6.0 / (h * h);
    R(i, i) -= 12.0 / (h * h);
    R(i, ip) += 6.0 / (h * h);
  }
  return T.partialPivLu().solve(R);
}

// value and derivative of the cubic spline on cell i at local coordinate t in [0, 1]
inline void spline_eval(double yi, double yj, double Mi, double Mj, double h, double t, double& v, double& d) {
  const double u = 1.0 - t;
  v = u * yi + t * yj + h * h / 6.0 * ((u * u * u - u) * Mi + (t * t * t - t) * Mj);
  d = (yj - yi) / h + h / 6.0 * (-(3.0 * u * u - 1.0) * Mi + (3.0 * t * t - 1.0) * Mj);
}

}  // namespace detail

/// Tensor-product C^2 cubic spline of nodal data on a TensorGrid (natural in r, periodic in phi).
class GridSpline {
 public:
  GridSpline(const TensorGrid& G, const std::vector<double>& values)
      : n_r_(G.n_r), n_phi_(G.n_phi), r0_(G.r.front()), dr_(G.dr), dphi_(G.dphi) {
    const Eigen::MatrixXd Kr = detail::spline_operator(n_r_, dr_, false);
    const Eigen::MatrixXd Kp = detail::spline_operator(n_phi_, dphi_, true);
    Eigen::MatrixXd Y(n_r_, n_phi_);
    for (int i = 0; i < n_r_; ++i)
      for (int j = 0; j < n_phi_; ++j) Y(i, j) = values[i * n_phi_ + j];
    y_ = Y;
    ypp_ = Y * Kp.transpose();  // d^2/dphi^2
    yrr_ = Kr * Y;
    yrrpp_ = Kr * ypp_;
  }

  /// Value and gradient at x = (r, phi).
  void eval(const Vec2& x, double& v, Vec2& grad) const {
    const double sp = wrap_positive(x[1]) / dphi_;
    const int j = std::min(static_cast<int>(sp), n_phi_ - 1);
    const double tp = sp - j;
    const int j1 = (j + 1) % n_phi_;
    const double sr = std::clamp((x[0] - r0_) / dr_, 0.0, static_cast<double>(n_r_ - 1));
    const int i = std::min(static_cast<int>(sr), n_r_ - 2);
    const double tr = sr - i;
    // phi-interpolated value and phi-derivative on rows i, i+1, for the data and its r-second derivative
    double u[2], du[2], m[2], dm[2];
    for (int a = 0; a < 2; ++a) {
      detail::spline_eval(y_(i + a, j), y_(i + a, j1), ypp_(i + a, j), ypp_(i + a, j1), dphi_, tp, u[a], du[a]);
      detail::spline_eval(yrr_(i + a, j), yrr_(i + a, j1), yrrpp_(i + a, j), yrrpp_(i + a, j1), dphi_, tp, m[a],
                          dm[a]);
    }
    double dv_dr, dv_dphi, unused;
    detail::spline_eval(u[0], u[1], m[0], m[1], dr_, tr, v, dv_dr);
    detail::spline_eval(du[0], du[1], dm[0], dm[1], dr_, tr, dv_dphi, unused);
    grad = {dv_dr, dv_dphi};
  }

 private:
  int n_r_, n_phi_;
  double r0_, dr_, dphi_;
  Eigen::MatrixXd y_, ypp_, yrr_, yrrpp_;
};

/// W = -(w/2) p^sharp (raised with g) from a grid one-form p, as a vector field.
inline VectorField half_dual_field(const TensorGrid& G, const GridOneForm& p, const MetricField& g,
                                   double w = 1.0) {
  // (1,4,1)/6 prefilter in each direction: the cubic spline derivative at the nodes then equals the centred
  // difference used by D_h (the symbols otherwise differ by up to a factor 3 at the grid scale)
  auto filtered = [&](int comp) {
    std::vector<double> y(G.nodes(), 0.0), t(G.nodes(), 0.0);
    for (int i = 1; i + 1 < G.n_r; ++i)
      for (int j = 0; j < G.n_phi; ++j)
        t[G.node(i, j)] =
            (p[2 * G.node(i - 1, j) + comp] + 4.0 * p[2 * G.node(i, j) + comp] + p[2 * G.node(i + 1, j) + comp]) / 6.0;
    for (int i = 1; i + 1 < G.n_r; ++i)
      for (int j = 0; j < G.n_phi; ++j)
        y[G.node(i, j)] = (t[G.node(i, (j + G.n_phi - 1) % G.n_phi)] + 4.0 * t[G.node(i, j)] +
                           t[G.node(i, (j + 1) % G.n_phi)]) /
                          6.0;
    return y;
  };
  std::vector<double> pr = filtered(0), pp = filtered(1);
  const auto sr = std::make_shared<const GridSpline>(G, std::move(pr));
  const auto sp = std::make_shared<const GridSpline>(G, std::move(pp));
  VectorField W;
  W.name = "gauge";
  const double k = -0.5 * w;
  W.eval = [sr, sp, g, k](const Vec2& x, Vec2& v, Mat2& J) {
    double a, b;
    Vec2 ga, gb;
    sr->eval(x, a, ga);
    sp->eval(x, b, gb);
    const MetricJet mj = metric_jet_unchecked(g, x, 1);
    const Mat2 gi = inverse(mj.g);
    const Vec2 q{a, b};
    v = k * matvec(gi, q);
    for (int c = 0; c < 2; ++c) {
      const Mat2 dgi = -1.0 * matmul(matmul(gi, mj.dg[c]), gi);
      const Vec2 dq{c == 0 ? ga[0] : ga[1], c == 0 ? gb[0] : gb[1]};
      const Vec2 col = k * (matvec(dgi, q) + matvec(gi, dq));
      J[0][c] = col[0];
      J[1][c] = col[1];
    }
  };
  return W;
}

struct GaugeNormalizeOptions {
  int n_r = 32;
  int n_phi = 64;
  double gauge_tol = 1e-6;   // ||D_h^*(g'' - g)||_{M1} relative to ||D_h^*(g' - g)||_{M1}
  double relaxation = 1.5;   // W = -(relaxation / 2) p^sharp
  double cg_tol = 1e-10;
  int max_iter = 40;
  int flow_steps = 8;
};

struct GaugeNormalizeReport {
  MetricField metric;
  int iterations = 0;
  bool converged = false;
  std::vector<double> residuals;  // before each iteration, then final
  std::vector<double> ratios;     // residual contraction per iteration
};

/// Picard iteration g_{k+1} = (phi_{W_k})^* g_k with W_k = -(w/2) (Delta^{-1} D^*(g_k - g))^sharp.
inline GaugeNormalizeReport solenoidal_gauge_normalize(const MetricField& g, const MetricField& g_prime,
                                                       const GaugeNormalizeOptions& opt = {}) {
  const TensorGrid G = make_tensor_grid(g, opt.n_r, opt.n_phi);
  const GridTwoTensor gs = sample_two_tensor(G, g.tensor);
  DecomposeOptions dopt;
  dopt.cg_tol = opt.cg_tol;
  GaugeNormalizeReport rep;
  std::vector<FieldFlow> chain;
  MetricField current = g_prime;
  auto difference = [&](const MetricField& m) {
    GridTwoTensor d = sample_two_tensor(G, m.tensor);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= gs[i];
    return d;
  };
  auto history = [&] {
    std::string hist;
    for (double r : rep.residuals) hist += " " + std::to_string(r);
    return hist;
  };
  GridTwoTensor diff = difference(current);
  double res = norm_M1(G, apply_Dstar(G, diff));
  const double target = opt.gauge_tol * res;
  rep.residuals.push_back(res);
  while (res > target) {
    if (rep.iterations >= opt.max_iter)
      throw ConvergenceError("gauge normalization did not converge; residual history:" + history());
    const SolenoidalDecomposition dec = solenoidal_decompose_grid(G, diff, dopt);
    chain.insert(chain.begin(), FieldFlow{half_dual_field(G, dec.p, g, opt.relaxation), 1.0, opt.flow_steps});
    current = chain_pullback(g_prime, chain, g_prime.name + "_normalized");
    diff = difference(current);
    const double next = norm_M1(G, apply_Dstar(G, diff));
    rep.ratios.push_back(next / res);
    res = next;
    rep.residuals.push_back(res);
    ++rep.iterations;
    if (rep.ratios.back() >= 1.0 && rep.iterations > 2)
      throw ConvergenceError("gauge normalization diverges; residual history:" + history());
  }
  rep.converged = true;
  rep.metric = current;
  return rep;
}

}  // namespace geoxray
