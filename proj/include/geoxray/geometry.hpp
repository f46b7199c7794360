// Charts, metrics, Christoffel symbols, curvature and integration over M.
//
// Two charts are supported. The annulus uses (r, phi) with phi 2pi-periodic;
// the disk uses Cartesian (x, y) restricted to x^2 + y^2 <= R^2.
#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "geoxray/core.hpp"
#include "geoxray/quadrature.hpp"
#include "geoxray/tensor.hpp"

namespace geoxray {

enum class ChartKind { annulus, disk };

struct ChartDomain {
  ChartKind kind = ChartKind::annulus;
  double r_min = -1.0;
  double r_max = 1.0;
  double radius = 1.0;

  static ChartDomain annulus(double lo, double hi) {
    if (!(lo < hi)) throw ParameterError("annulus: need r_min < r_max");
    return {ChartKind::annulus, lo, hi, 0.0};
  }
  static ChartDomain disk(double r) {
    if (!(r > 0.0)) throw ParameterError("disk: radius must be positive");
    return {ChartKind::disk, 0.0, 0.0, r};
  }

  bool is_annulus() const { return kind == ChartKind::annulus; }
  int boundary_components() const { return is_annulus() ? 2 : 1; }

  /// Signed distance-like boundary defining function: positive inside.
  double boundary_function(const Vec2& x) const {
    if (is_annulus()) return std::min(x[0] - r_min, r_max - x[0]);
    return radius - std::hypot(x[0], x[1]);
  }

  bool contains(const Vec2& x, double slack = 1e-9) const { return boundary_function(x) >= -slack; }

  void require(const Vec2& x, double slack = 1e-9) const {
    if (!contains(x, slack)) throw DomainError("point " + format_point(x) + " outside chart");
  }

  /// Boundary component whose defining function is smallest at x (0 = inner / disk, 1 = outer).
  int nearest_component(const Vec2& x) const {
    if (!is_annulus()) return 0;
    return (x[0] - r_min) <= (r_max - x[0]) ? 0 : 1;
  }
};

/// Profile f with g = dr^2 + f(r)^2 dphi^2. Returns (f, f', f'').
struct RevolutionProfile {
  std::string name;
  std::function<std::array<double, 3>(double)> eval;
};

struct MetricField {
  ChartDomain domain;
  SymTensorField tensor;  // rank 2
  std::optional<RevolutionProfile> revolution;
  std::string name;
};

struct MetricJet {
  Mat2 g{};
  std::array<Mat2, 2> dg{};                  // dg[a] = d_a g
  std::array<std::array<Mat2, 2>, 2> d2g{};  // d2g[a][b]
};

inline Mat2 to_mat(const Components& c) { return {{{c[0], c[1]}, {c[2], c[3]}}}; }
inline Components to_components(const Mat2& m) { return {m[0][0], m[0][1], m[1][0], m[1][1], 0, 0, 0, 0}; }

// ---------------------------------------------------------------------------
// construction

inline SymTensorField revolution_tensor(const RevolutionProfile& prof) {
  return SymTensorField(
      2,
      [prof](const Vec2& x, int ord, TensorJet& out) {
        const auto [f, fp, fpp] = prof.eval(x[0]);
        out.value[0] = 1.0;
        out.value[3] = f * f;
        if (ord >= 1) out.grad[0][3] = 2.0 * f * fp;
        if (ord >= 2) out.hess[0][0][3] = 2.0 * (fp * fp + f * fpp);
      },
      2);
}

inline MetricField revolution_metric(const RevolutionProfile& prof, double r_min, double r_max, std::string name) {
  return {ChartDomain::annulus(r_min, r_max), revolution_tensor(prof), prof, std::move(name)};
}

inline RevolutionProfile cosh_profile() {
  return {"cosh", [](double r) { return std::array<double, 3>{std::cosh(r), std::sinh(r), std::cosh(r)}; }};
}

inline RevolutionProfile constant_profile() {
  return {"one", [](double) { return std::array<double, 3>{1.0, 0.0, 0.0}; }};
}

/// dr^2 + cosh^2(r) dphi^2 on r in [r_min, r_max]; the equator r = 0 is the trapped orbit.
inline MetricField neck_metric(double r_min = -1.0, double r_max = 1.0) {
  return revolution_metric(cosh_profile(), r_min, r_max, "neck");
}

inline MetricField flat_cylinder_metric(double r_min = -1.0, double r_max = 1.0) {
  return revolution_metric(constant_profile(), r_min, r_max, "flat_cylinder");
}

inline MetricField euclid_disk_metric(double radius = 1.0) {
  Components id{};
  id[0] = id[3] = 1.0;
  return {ChartDomain::disk(radius), constant_field(2, id), std::nullopt, "euclid_disk"};
}

inline MetricField metric_preset(const std::string& name) {
  if (name == "neck") return neck_metric();
  if (name == "flat_cylinder") return flat_cylinder_metric();
  if (name == "euclid_disk") return euclid_disk_metric();
  throw ParameterError("unknown metric preset '" + name + "'");
}

/// Same metric formula on a different chart domain (revolution tag kept).
inline MetricField with_domain(const MetricField& g, const ChartDomain& dom) {
  MetricField out = g;
  out.domain = dom;
  return out;
}

// ---------------------------------------------------------------------------
// jets, Christoffel symbols, curvature

/// Jet without the domain check (used by integrators that may probe just past the boundary).
inline MetricJet metric_jet_unchecked(const MetricField& g, const Vec2& x, int order = 2) {
  MetricJet j;
  TensorJet t;
  g.tensor.evaluate(x, t, order);
  j.g = to_mat(t.value);
  if (order >= 1)
    for (int a = 0; a < 2; ++a) j.dg[a] = to_mat(t.grad[a]);
  if (order >= 2)
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) j.d2g[a][b] = to_mat(t.hess[a][b]);
  return j;
}

/// g_ij, d g_ij and d^2 g_ij at x. Derivatives are analytic when the field
/// provides them, otherwise 4th-order centred differences with the field's step.
inline MetricJet metric_jet(const MetricField& g, const Vec2& x, int order = 2) {
  g.domain.require(x);
  return metric_jet_unchecked(g, x, order);
}

/// Gamma[k][i][j] = Gamma^k_ij.
using Christoffel = std::array<Mat2, 2>;

inline Christoffel christoffel_from_jet(const MetricJet& j) {
  const Mat2 gi = inverse(j.g);
  Christoffel gam{};
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 2; ++i)
      for (int jj = 0; jj < 2; ++jj) {
        double s = 0.0;
        for (int l = 0; l < 2; ++l) s += gi[k][l] * (j.dg[i][jj][l] + j.dg[jj][i][l] - j.dg[l][i][jj]);
        gam[k][i][jj] = 0.5 * s;
      }
  return gam;
}

/// Christoffel symbols only (first derivatives of g). Revolution metrics use the profile directly.
inline Christoffel christoffel_symbols(const MetricField& g, const Vec2& x) {
  if (g.revolution) {
    const auto [f, fp, fpp] = g.revolution->eval(x[0]);
    Christoffel gam{};
    gam[0][1][1] = -f * fp;
    gam[1][0][1] = gam[1][1][0] = fp / f;
    return gam;
  }
  const MetricJet j = metric_jet_unchecked(g, x, 1);
  if (!is_positive_definite(j.g)) throw DegenerateMetricError("metric not positive definite at " + format_point(x));
  return christoffel_from_jet(j);
}

/// Gaussian curvature only.
inline double gaussian_curvature(const MetricField& g, const Vec2& x);

struct ChristoffelCurvature {
  Christoffel gamma{};
  double K = 0.0;
};

inline ChristoffelCurvature christoffel_curvature_from_jet(const MetricJet& j) {
  ChristoffelCurvature out;
  if (!is_positive_definite(j.g)) throw DegenerateMetricError("metric not positive definite");
  const Mat2 gi = inverse(j.g);
  out.gamma = christoffel_from_jet(j);
  // d_a Gamma^k_ij
  std::array<Christoffel, 2> dgam{};
  for (int a = 0; a < 2; ++a) {
    const Mat2 dgi = -1.0 * matmul(matmul(gi, j.dg[a]), gi);
    for (int k = 0; k < 2; ++k)
      for (int i = 0; i < 2; ++i)
        for (int jj = 0; jj < 2; ++jj) {
          double s = 0.0;
          for (int l = 0; l < 2; ++l) {
            const double lower = j.dg[i][jj][l] + j.dg[jj][i][l] - j.dg[l][i][jj];
            const double dlower = j.d2g[a][i][jj][l] + j.d2g[a][jj][i][l] - j.d2g[a][l][i][jj];
            s += dgi[k][l] * lower + gi[k][l] * dlower;
          }
          dgam[a][k][i][jj] = 0.5 * s;
        }
  }
  // R^l_212 = d_1 Gamma^l_22 - d_2 Gamma^l_21 + Gamma^l_1m Gamma^m_22 - Gamma^l_2m Gamma^m_21
  const auto& G = out.gamma;
  double r1212 = 0.0;
  for (int l = 0; l < 2; ++l) {
    double rl = dgam[0][l][1][1] - dgam[1][l][1][0];
    for (int m = 0; m < 2; ++m) rl += G[l][0][m] * G[m][1][1] - G[l][1][m] * G[m][1][0];
    r1212 += j.g[0][l] * rl;
  }
  out.K = r1212 / det(j.g);
  return out;
}

/// Gamma^k_ij via the Koszul formula and the Gaussian curvature K at x.
inline ChristoffelCurvature christoffel_curvature(const MetricField& g, const Vec2& x) {
  g.domain.require(x);
  if (g.revolution) {
    const auto [f, fp, fpp] = g.revolution->eval(x[0]);
    if (!(f > 0.0)) throw DegenerateMetricError("revolution profile vanishes at " + format_point(x));
    ChristoffelCurvature out;
    out.gamma = christoffel_symbols(g, x);
    out.K = -fpp / f;
    return out;
  }
  const MetricJet j = metric_jet(g, x, 2);
  if (!is_positive_definite(j.g)) throw DegenerateMetricError("metric not positive definite at " + format_point(x));
  return christoffel_curvature_from_jet(j);
}

inline double gaussian_curvature(const MetricField& g, const Vec2& x) {
  if (g.revolution) {
    const auto [f, fp, fpp] = g.revolution->eval(x[0]);
    return -fpp / f;
  }
  return christoffel_curvature_from_jet(metric_jet_unchecked(g, x, 2)).K;
}

// ---------------------------------------------------------------------------
// integration over M

struct GridSpec {
  int n_r = 64;     // Gauss-Legendre nodes in r (or in the radial variable on the disk)
  int n_phi = 128;  // trapezoid nodes in the periodic angle
};

/// Quadrature points of M with weights carrying dvol_g.
struct VolumeGrid {
  std::vector<Vec2> points;
  std::vector<double> weights;      // includes sqrt(det g)
  std::vector<double> coord_weights;  // chart measure only
};

inline VolumeGrid volume_grid(const MetricField& g, const GridSpec& spec = {}) {
  VolumeGrid vg;
  const QuadratureRule qphi = periodic_trapezoid(spec.n_phi);
  const auto& dom = g.domain;
  const QuadratureRule qr =
      dom.is_annulus() ? gauss_legendre(spec.n_r, dom.r_min, dom.r_max) : gauss_legendre(spec.n_r, 0.0, dom.radius);
  vg.points.reserve(qr.size() * qphi.size());
  for (std::size_t i = 0; i < qr.size(); ++i)
    for (std::size_t k = 0; k < qphi.size(); ++k) {
      Vec2 x;
      double w = qr.weights[i] * qphi.weights[k];
      if (dom.is_annulus()) {
        x = {qr.nodes[i], qphi.nodes[k]};
      } else {
        x = {qr.nodes[i] * std::cos(qphi.nodes[k]), qr.nodes[i] * std::sin(qphi.nodes[k])};
        w *= qr.nodes[i];
      }
      const Mat2 gm = to_mat(g.tensor.value(x));
      if (!is_positive_definite(gm))
        throw DegenerateMetricError("metric not positive definite at " + format_point(x));
      vg.points.push_back(x);
      vg.coord_weights.push_back(w);
      vg.weights.push_back(w * std::sqrt(det(gm)));
    }
  return vg;
}

/// Integral of h over M with respect to dvol_g.
template <class H>
double integrate_over_M(const H& h, const MetricField& g, const GridSpec& spec = {}) {
  const VolumeGrid vg = volume_grid(g, spec);
  double sum = 0.0;
  for (std::size_t i = 0; i < vg.points.size(); ++i) sum += vg.weights[i] * h(vg.points[i]);
  return sum;
}

inline double volume(const MetricField& g, const GridSpec& spec = {}) {
  return integrate_over_M([](const Vec2&) { return 1.0; }, g, spec);
}

// ---------------------------------------------------------------------------
// pointwise tensor algebra

/// <f, h>_g with every index raised by g^{-1}.
inline double pointwise_inner(const Components& f, const Components& h, int rank, const Mat2& ginv) {
  const int n = component_count(rank);
  double sum = 0.0;
  for (int c = 0; c < n; ++c) {
    if (f[c] == 0.0) continue;
    for (int d = 0; d < n; ++d) {
      double w = f[c] * h[d];
      for (int s = 0; s < rank; ++s) w *= ginv[index_bit(c, rank, s)][index_bit(d, rank, s)];
      sum += w;
    }
  }
  return sum;
}

struct InnerProductResult {
  std::function<double(const Vec2&)> pointwise;
  double integral = 0.0;
};

inline InnerProductResult tensor_inner_product(const SymTensorField& f, const SymTensorField& h, const MetricField& g,
                                               const GridSpec& spec = {}) {
  if (f.rank() != h.rank()) throw ParameterError("tensor_inner_product: rank mismatch");
  InnerProductResult out;
  out.pointwise = [f, h, g](const Vec2& x) {
    return pointwise_inner(f.value(x), h.value(x), f.rank(), inverse(to_mat(g.tensor.value(x))));
  };
  out.integral = integrate_over_M(out.pointwise, g, spec);
  return out;
}

/// Sampling grid used for SPD checks: the volume grid nodes plus the boundary circles.
inline std::vector<Vec2> sampling_points(const ChartDomain& dom, const GridSpec& spec = {}) {
  std::vector<Vec2> pts;
  const QuadratureRule qphi = periodic_trapezoid(spec.n_phi);
  if (dom.is_annulus()) {
    const QuadratureRule qr = gauss_legendre(spec.n_r, dom.r_min, dom.r_max);
    for (double r : qr.nodes)
      for (double p : qphi.nodes) pts.push_back({r, p});
    for (double p : qphi.nodes) {
      pts.push_back({dom.r_min, p});
      pts.push_back({dom.r_max, p});
    }
  } else {
    const QuadratureRule qr = gauss_legendre(spec.n_r, 0.0, dom.radius);
    for (double r : qr.nodes)
      for (double p : qphi.nodes) pts.push_back({r * std::cos(p), r * std::sin(p)});
    for (double p : qphi.nodes) pts.push_back({dom.radius * std::cos(p), dom.radius * std::sin(p)});
  }
  return pts;
}

/// g_tau = g + tau f, positive definiteness verified on the sampling grid.
inline MetricField interpolate_metric(const MetricField& g, const SymTensorField& f, double tau,
                                      const GridSpec& spec = {}) {
  if (f.rank() != 2) throw ParameterError("interpolate_metric: perturbation must be rank 2");
  if (tau < 0.0 || tau > 1.0) throw ParameterError("interpolate_metric: tau must lie in [0, 1]");
  if (tau == 0.0) return g;
  MetricField out{g.domain, linear_combination(1.0, g.tensor, tau, f), std::nullopt, g.name + "+tau*f"};
  for (const Vec2& x : sampling_points(g.domain, spec)) {
    const Mat2 m = to_mat(out.tensor.value(x));
    if (!is_positive_definite(m))
      throw DegenerateMetricError("g + tau f not positive definite at " + format_point(x) +
                                  " (tau = " + std::to_string(tau) + ")");
  }
  return out;
}

/// sqrt(det g_tau) - sqrt(det g) (1 + tau/2 <g,f> - tau^2/4 |f|^2 - C eps tau^3 |f|^2) at x.
inline double det_expansion_residual(const MetricField& g, const SymTensorField& f, double tau, double eps, double C,
                                     const Vec2& x) {
  const Mat2 gm = to_mat(g.tensor.value(x));
  const Components fc = f.value(x);
  const Mat2 fm = to_mat(fc);
  const Mat2 gi = inverse(gm);
  const double trf = pointwise_inner(to_components(gm), fc, 2, gi);
  const double f2 = pointwise_inner(fc, fc, 2, gi);
  const double lhs = std::sqrt(std::max(0.0, det(gm + tau * fm)));
  const double rhs = std::sqrt(det(gm)) * (1.0 + 0.5 * tau * trf - 0.25 * tau * tau * f2 - C * eps * tau * tau * tau * f2);
  return lhs - rhs;
}

struct DetExpansionFit {
  double min_C = 0.0;        // smallest C >= 0 making every sampled residual nonnegative
  double min_residual = 0.0;  // minimum residual at the requested C
  double sup_norm = 0.0;      // max |f|_g over the grid
};

/// Scans a uniform n x n grid of the chart for every tau in `taus`.
inline DetExpansionFit fit_det_expansion(const MetricField& g, const SymTensorField& f, const std::vector<double>& taus,
                                         double eps, double C, int n = 64) {
  DetExpansionFit fit;
  fit.min_residual = INFINITY;
  std::vector<Vec2> pts;
  const auto& dom = g.domain;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      if (dom.is_annulus()) {
        pts.push_back({dom.r_min + (dom.r_max - dom.r_min) * i / (n - 1.0), kTwoPi * k / n});
      } else {
        const double rho = dom.radius * i / (n - 1.0);
        pts.push_back({rho * std::cos(kTwoPi * k / n), rho * std::sin(kTwoPi * k / n)});
      }
    }
  for (const Vec2& x : pts) {
    const Mat2 gm = to_mat(g.tensor.value(x));
    const Components fc = f.value(x);
    const Mat2 gi = inverse(gm);
    const double f2 = pointwise_inner(fc, fc, 2, gi);
    fit.sup_norm = std::max(fit.sup_norm, std::sqrt(f2));
    for (double tau : taus) {
      const double res0 = det_expansion_residual(g, f, tau, eps, 0.0, x);
      fit.min_residual = std::min(fit.min_residual, det_expansion_residual(g, f, tau, eps, C, x));
      const double denom = std::sqrt(det(gm)) * eps * tau * tau * tau * f2;
      if (denom > 0.0 && res0 < 0.0) fit.min_C = std::max(fit.min_C, -res0 / denom);
    }
  }
  if (fit.sup_norm >= eps) throw ParameterError("fit_det_expansion: sup |f|_g must be below eps");
  return fit;
}

// ---------------------------------------------------------------------------
// boundary geometry

/// Boundary point at parameter `angle` of component `comp`, with the g-unit inward
/// normal, the g-unit positively oriented tangent and the speed |c'(angle)|_g.
struct BoundaryFrame {
  Vec2 point{};
  Vec2 inward_normal{};
  Vec2 tangent{};
  double speed = 0.0;
};

inline BoundaryFrame boundary_frame(const MetricField& g, int comp, double angle) {
  BoundaryFrame bf;
  const auto& dom = g.domain;
  Vec2 dpos;    // d point / d angle
  Vec2 dfun;    // differential of the inward-increasing defining function
  if (dom.is_annulus()) {
    bf.point = {comp == 0 ? dom.r_min : dom.r_max, angle};
    dpos = {0.0, 1.0};
    dfun = {comp == 0 ? 1.0 : -1.0, 0.0};
  } else {
    const double c = std::cos(angle), s = std::sin(angle);
    bf.point = {dom.radius * c, dom.radius * s};
    dpos = {-dom.radius * s, dom.radius * c};
    dfun = {-c, -s};
  }
  const Mat2 gm = to_mat(g.tensor.value(bf.point));
  const Mat2 gi = inverse(gm);
  const Vec2 grad = matvec(gi, dfun);
  const double gn = std::sqrt(form(gm, grad, grad));
  bf.inward_normal = (1.0 / gn) * grad;
  bf.speed = std::sqrt(form(gm, dpos, dpos));
  bf.tangent = (1.0 / bf.speed) * dpos;
  return bf;
}

/// Unit vector at angle theta from the inward normal towards the tangent.
inline Vec2 boundary_direction(const BoundaryFrame& bf, double theta) {
  return std::cos(theta) * bf.inward_normal + std::sin(theta) * bf.tangent;
}

/// Boundary parameter (angle) of a point on the boundary.
inline double boundary_parameter(const ChartDomain& dom, const Vec2& x) {
  return dom.is_annulus() ? wrap_positive(x[1]) : wrap_positive(std::atan2(x[1], x[0]));
}

/// g-inner product <v, nu_in> at a boundary point of component comp.
inline double normal_component(const MetricField& g, const Vec2& x, const Vec2& v, int comp) {
  const auto& dom = g.domain;
  Vec2 dfun;
  if (dom.is_annulus()) {
    dfun = {comp == 0 ? 1.0 : -1.0, 0.0};
  } else {
    const double rho = std::hypot(x[0], x[1]);
    dfun = {-x[0] / rho, -x[1] / rho};
  }
  const Mat2 gi = inverse(to_mat(g.tensor.value(x)));
  const double gn = std::sqrt(form(gi, dfun, dfun));
  return (dfun[0] * v[0] + dfun[1] * v[1]) / gn;
}

}  // namespace geoxray
