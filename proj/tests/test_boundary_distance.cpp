#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>

#include "geoxray/boundary_distance.hpp"

using namespace geoxray;

namespace {

// Neck oracle: angular displacement and length of the Clairaut geodesic with constant c between the
// boundary circles r = -1, 1 (crossing) or from r = 1 back to r = 1 (returning), by substitutions
// that make the integrands smooth.
double crossing_dphi(double c) {
  const double a = std::sqrt(1.0 - c * c), s = std::sinh(1.0);
  const double u1 = std::asinh(s / a);
  auto f = [&](double u) { return c / (1.0 + a * a * std::sinh(u) * std::sinh(u)); };
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -u1, u1, 15, 1e-14);
}

double crossing_length(double c) {
  const double k = std::sqrt(1.0 - c * c), s = std::sinh(1.0);
  return 2.0 * std::asinh(s / k);
}

double returning_dphi(double c) {
  const double b = std::sqrt(c * c - 1.0), s = std::sinh(1.0);
  const double u1 = std::acosh(s / b);
  auto f = [&](double u) { return c / (1.0 + b * b * std::cosh(u) * std::cosh(u)); };
  return 2.0 * boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, u1, 15, 1e-14);
}

double returning_length(double c) { return 2.0 * std::acosh(std::sinh(1.0) / std::sqrt(c * c - 1.0)); }

// Solves phi(c) = target for monotone phi on [lo, hi] by bisection.
template <class F>
double solve_monotone(F phi, double target, double lo, double hi) {
  const bool increasing = phi(hi) > phi(lo);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if ((phi(mid) < target) == increasing)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

double oracle_same_boundary(double target) {
  const double ch = std::cosh(1.0);
  if (target > 0) return returning_length(solve_monotone(returning_dphi, target, 1.0 + 1e-15, ch - 1e-15));
  return returning_length(solve_monotone(returning_dphi, target, -ch + 1e-15, -1.0 - 1e-15));
}

double oracle_crossing(double target) {
  return crossing_length(solve_monotone(crossing_dphi, target, -1.0 + 1e-15, 1.0 - 1e-15));
}

MetricField bumped_neck() {
  const MetricField g = neck_metric();
  Bump b{{0.2, 1.0}, 0.5, 0.1};
  return {g.domain, linear_combination(1.0, g.tensor, 1.0, multiply(bump_function(b), g.tensor)), std::nullopt,
          "bumped"};
}

VectorField test_field(double eps) {
  return scaled_field(eps, bump_vector_field(Bump{{0.1, 2.0}, 0.6, 1.0}, 1.0, -0.8));
}

}  // namespace

TEST(Oracle, ReturningDisplacementMatchesFlow) {
  // the oracle itself against a direct flow at a known Clairaut constant
  const MetricField g = neck_metric();
  const double c = 1.2;
  const double ch = std::cosh(1.0);
  const PhasePoint z{{1.0, 0.0}, {-std::sqrt(1.0 - c * c / (ch * ch)), c / (ch * ch)}};
  FlowExit ex = flow_visit(g, z, 50.0, FlowOptions{}, [](double, const FlowState&) { return true; });
  EXPECT_NEAR(ex.state.x[1], returning_dphi(c), 1e-9);
  EXPECT_NEAR(ex.time, returning_length(c), 1e-9);
}

TEST(MarkedDistance, FlatDiskChords) {
  const MetricField g = euclid_disk_metric();
  for (const auto& [a, b] : {std::pair{0.3, 2.0}, {0.0, kPi}, {5.0, 1.0}, {1.0, 1.05}, {2.0, 2.0 + 2 * kPi - 0.02}}) {
    const GeodesicConnection c = marked_distance(g, {0, a}, {0, b}, 0);
    EXPECT_NEAR(c.length, 2.0 * std::abs(std::sin(0.5 * (b - a))), 1e-8) << a << " -> " << b;
    EXPECT_EQ(c.brackets, 1);
    EXPECT_LE(c.endpoint_error, 1e-8);
  }
}

TEST(MarkedDistance, DiskHasOnlyTrivialClass) {
  EXPECT_THROW(marked_distance(euclid_disk_metric(), {0, 0.0}, {0, 1.0}, 1), NoSolutionInClass);
}

TEST(MarkedDistance, NeckSameBoundaryMatchesClairaut) {
  const MetricField g = neck_metric();
  const double s0 = 0.4, s1 = 1.9;
  for (int k : {0, 1, -1, 2}) {
    const GeodesicConnection c = marked_distance(g, {1, s0}, {1, s1}, k);
    const double target = wrap_angle(s1 - s0) + kTwoPi * k;
    EXPECT_NEAR(c.dphi, target, 1e-8);
    EXPECT_NEAR(c.length, oracle_same_boundary(target), 1e-5) << "k = " << k;
    EXPECT_EQ(c.measured_winding, k);
    EXPECT_EQ(c.brackets, 1);
  }
}

TEST(MarkedDistance, NeckCrossingMatchesClairaut) {
  const MetricField g = neck_metric();
  for (int k : {0, 1, -2}) {
    const GeodesicConnection c = marked_distance(g, {0, 5.0}, {1, 0.5}, k);
    const double target = wrap_angle(0.5 - 5.0) + kTwoPi * k;
    EXPECT_NEAR(c.length, oracle_crossing(target), 1e-5) << "k = " << k;
    EXPECT_EQ(c.brackets, 1);
  }
}

TEST(MarkedDistance, SymmetricUnderReversal) {
  const MetricField g = bumped_neck();
  for (int k : {0, 1}) {
    const GeodesicConnection a = marked_distance(g, {0, 0.3}, {0, 2.2}, k);
    const GeodesicConnection b = marked_distance(g, {0, 2.2}, {0, 0.3}, -k);
    EXPECT_NEAR(a.length, b.length, 2e-8);
    const GeodesicConnection c = marked_distance(g, {0, 0.3}, {1, 2.2}, k);
    const GeodesicConnection d = marked_distance(g, {1, 2.2}, {0, 0.3}, -k);
    EXPECT_NEAR(c.length, d.length, 2e-8);
  }
}

TEST(MarkedDistance, ReverseShotRecoversInitialAngle) {
  const MetricField g = bumped_neck();
  const GeodesicConnection a = marked_distance(g, {0, 0.3}, {1, 2.2}, 1);
  const GeodesicConnection b = marked_distance(g, {1, 2.2}, {0, 0.3}, -1);
  // arrival direction of the reversed geodesic, reversed again, is the original start direction
  FlowExit ex = flow_visit(g, b.start, 50.0, FlowOptions{}, [](double, const FlowState&) { return true; });
  const BoundaryFrame bf = boundary_frame(g, 0, 0.3);
  const Mat2 gm = to_mat(g.tensor.value(bf.point));
  const Vec2 back = -1.0 * ex.state.v;
  EXPECT_NEAR(std::atan2(form(gm, back, bf.tangent), form(gm, back, bf.inward_normal)), a.psi, 1e-6);
}

TEST(MarkedDistance, DisplacementMonotoneOnBranches) {
  const MetricField g = neck_metric();
  ShootingOptions opt;
  opt.n_scan = 200;
  const auto scan = shooting_scan(g, {0, 1.0}, opt);
  int checked = 0;
  for (std::size_t j = 0; j + 1 < scan.size(); ++j) {
    if (!scan[j].valid || !scan[j + 1].valid || scan[j].component != scan[j + 1].component) continue;
    const double d = scan[j + 1].displacement - scan[j].displacement;
    // crossing rays (exit at r = 1) turn further with psi, returning rays less
    if (scan[j].component == 1)
      EXPECT_GT(d, 0.0) << "psi " << scan[j].psi;
    else
      EXPECT_LT(d, 0.0) << "psi " << scan[j].psi;
    ++checked;
  }
  EXPECT_GT(checked, 150);
}

TEST(Energy, DerivativeMatchesRayIntegral) {
  const MetricField g = neck_metric();
  const SymTensorField f =
      multiply(bump_function(Bump{{0.3, 1.2}, 0.6, 0.5}), constant_field(2, basis_components(BasisTensor::dr2)));
  EnergyOptions opt;
  const EnergyCurve e = energy_curve(g, f, {0, 0.2}, {1, 1.5}, 0, opt);
  ASSERT_GT(std::abs(e.ray_integral), 1e-3);
  EXPECT_NEAR(e.dE0, e.ray_integral, 1e-4 * std::abs(e.ray_integral));
  EXPECT_LE(e.max_second_difference, 1e-6);
  EXPECT_TRUE(e.concave);
  EXPECT_NEAR(e.E[0], e.base.length * e.base.length, 1e-14);
}

TEST(Energy, PotentialPerturbationIsStationary) {
  const MetricField g = neck_metric();
  const SymTensorField Dp = sym_derivative(bump_one_form(Bump{{0.0, 1.0}, 0.7, 1.0}, 0.3, 0.4), g);
  EnergyOptions opt;
  opt.taus = {0.0};
  const EnergyCurve e = energy_curve(g, Dp, {0, 0.2}, {1, 1.5}, 0, opt);
  EXPECT_LT(std::abs(e.dE0), 1e-6);
  EXPECT_LT(std::abs(e.ray_integral), 1e-6);
}

TEST(Gauge, ZeroFieldReturnsMetric) {
  const MetricField g = bumped_neck();
  const MetricField h = gauge_pull(scaled_field(0.0, test_field(1.0)), 1.0, g);
  for (const Vec2 x : {Vec2{0.1, 2.0}, Vec2{-0.7, 0.3}})
    for (int c = 0; c < 4; ++c) EXPECT_EQ(h.tensor.value(x)[c], g.tensor.value(x)[c]);
}

TEST(Gauge, RejectsFieldsNotVanishingOnBoundary) {
  VectorField V;
  V.eval = [](const Vec2&, Vec2& v, Mat2& J) {
    v = {0.0, 1.0};
    J = {};
  };
  EXPECT_THROW(gauge_pull(V, 1.0, neck_metric()), ParameterError);
}

TEST(Gauge, PreservesVolume) {
  const MetricField g = neck_metric();
  const MetricField h = gauge_pull(test_field(0.3), 1.0, g);
  EXPECT_NEAR(volume(h, {256, 512}), volume(g, {256, 512}), 1e-6);
  EXPECT_GT(std::abs(h.tensor.value({0.1, 2.0})[0] - 1.0), 1e-2);
}

TEST(Gauge, PreservesMarkedDistances) {
  const MetricField g = neck_metric();
  const MetricField h = gauge_pull(test_field(0.3), 1.0, g);
  for (const auto& [from, to, k] : {std::tuple{BoundaryPoint{0, 1.0}, BoundaryPoint{1, 2.5}, 0},
                                    std::tuple{BoundaryPoint{0, 1.5}, BoundaryPoint{0, 3.0}, 0}}) {
    const GeodesicConnection a = marked_distance(g, from, to, k);
    const GeodesicConnection b = marked_distance_near(h, from, to, k, a.psi);
    EXPECT_NEAR(a.length, b.length, 1e-7);
    EXPECT_NEAR(a.psi, b.psi, 1e-6);
  }
}

TEST(GaugeNormalize, IdentityNeedsNoIterations) {
  const MetricField g = neck_metric();
  const GaugeNormalizeReport rep = solenoidal_gauge_normalize(g, g);
  EXPECT_EQ(rep.iterations, 0);
  EXPECT_TRUE(rep.converged);
  EXPECT_EQ(rep.residuals.front(), 0.0);
}

TEST(GaugeNormalize, ContractsForSmallGauges) {
  const MetricField g = neck_metric();
  GaugeNormalizeOptions opt;
  opt.n_r = 24;
  opt.n_phi = 48;
  for (double eps : {1e-3, 1e-2}) {
    const MetricField gp = gauge_pull(test_field(eps), 1.0, g);
    const GaugeNormalizeReport rep = solenoidal_gauge_normalize(g, gp, opt);
    EXPECT_TRUE(rep.converged);
    EXPECT_LE(rep.residuals.back(), opt.gauge_tol * rep.residuals.front());
    ASSERT_FALSE(rep.ratios.empty());
    for (double r : rep.ratios) EXPECT_LT(r, 1.0) << "eps " << eps;
  }
}

TEST(GaugeNormalize, KeepsMarkedDistances) {
  const MetricField g = neck_metric();
  GaugeNormalizeOptions opt;
  opt.n_r = 24;
  opt.n_phi = 48;
  opt.gauge_tol = 1e-3;
  opt.flow_steps = 4;
  const MetricField gp = gauge_pull(test_field(1e-2), 1.0, g);
  const GaugeNormalizeReport rep = solenoidal_gauge_normalize(g, gp, opt);
  const BoundaryPoint from{0, 1.0}, to{1, 2.5};
  ShootingOptions so;
  so.step = 2e-3;
  const GeodesicConnection a = marked_distance(gp, from, to, 0, so);
  const GeodesicConnection b = marked_distance_near(rep.metric, from, to, 0, a.psi, so);
  EXPECT_NEAR(a.length, b.length, 1e-7);
}

TEST(GridSpline, ReproducesSmoothData) {
  const MetricField g = neck_metric();
  const TensorGrid G = make_tensor_grid(g, 40, 80);
  auto fn = [](const Vec2& x) { return std::sin(x[1]) * (1.0 - x[0] * x[0]) + 0.3 * std::cos(2.0 * x[1]) * x[0]; };
  std::vector<double> y(G.nodes());
  for (int i = 0; i < G.n_r; ++i)
    for (int j = 0; j < G.n_phi; ++j) y[G.node(i, j)] = fn(G.point(i, j));
  const GridSpline S(G, y);
  for (const Vec2 x : {Vec2{0.13, 0.7}, Vec2{-0.81, 4.4}, Vec2{0.5, 6.2}}) {
    double v;
    Vec2 grad;
    S.eval(x, v, grad);
    EXPECT_NEAR(v, fn(x), 1e-4);
    const double h = 1e-6;
    double vp, vm;
    Vec2 unused;
    for (int c = 0; c < 2; ++c) {
      Vec2 xp = x, xm = x;
      xp[c] += h;
      xm[c] -= h;
      S.eval(xp, vp, unused);
      S.eval(xm, vm, unused);
      EXPECT_NEAR(grad[c], (vp - vm) / (2.0 * h), 1e-6);
    }
  }
}
