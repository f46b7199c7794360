#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "geoxray/tencalc.hpp"
#include "geoxray/xray.hpp"

using namespace geoxray;

namespace {

double bump1(double u) { return std::abs(u) < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - u * u)) : 0.0; }

// Reflection-even band |r| in (0.3, 0.9), away from the neck circle.
double band(double r) { return bump1((std::abs(r) - 0.6) / 0.3); }

MetricField bumped_neck() {
  const MetricField g = neck_metric();
  Bump b{{0.2, 1.0}, 0.5, 0.1};
  return {g.domain, linear_combination(1.0, g.tensor, 1.0, multiply(bump_function(b), g.tensor)), std::nullopt,
          "bumped"};
}

XrayOptions coarse() {
  XrayOptions o;
  o.step = 5e-3;
  return o;
}

SymTensorField generic_two_tensor() {
  return SymTensorField(
      2,
      [](const Vec2& x, int, TensorJet& out) {
        const double r = x[0], a = x[1];
        out.value[0] = 1.0 + 0.3 * r * std::cos(a);
        out.value[1] = out.value[2] = 0.2 * std::sin(2 * a) * (1 - r * r) + 0.1 * r;
        out.value[3] = std::cosh(r) * (0.5 + 0.2 * std::sin(a + r));
      },
      0);
}

}  // namespace

TEST(Fan, MassIsTwiceBoundaryLength) {
  const BoundaryFan fan = boundary_fan(neck_metric(), 256, 128);
  const double expected = 8.0 * kPi * std::cosh(1.0);
  EXPECT_NEAR(fan.total_weight(), expected, 1e-4 * expected);
  EXPECT_EQ(fan.nodes.size(), 2u * 256 * 128);
}

TEST(Fan, NodesPointInward) {
  const MetricField g = bumped_neck();
  const BoundaryFan fan = boundary_fan(g, 16, 8);
  for (const auto& n : fan.nodes) {
    EXPECT_GT(normal_component(g, n.z.x, n.z.v, n.component), 0.0);
    EXPECT_NEAR(speed(g, n.z.x, n.z.v), 1.0, 1e-13);
    EXPECT_GT(n.weight, 0.0);
  }
  // glancing directions carry the smallest weights
  EXPECT_LT(fan.nodes[fan.index(0, 3, 0)].weight, fan.nodes[fan.index(0, 3, 4)].weight);
}

TEST(Fan, RejectsConcaveBoundary) {
  // [0.2, 1] on the neck: the inner circle r = 0.2 is concave as seen from M.
  const MetricField g = with_domain(neck_metric(), ChartDomain::annulus(0.2, 1.0));
  EXPECT_THROW(boundary_fan(g, 8, 4), NotStrictlyConvexError);
}

TEST(Pullback, MetricIsOneOnSM) {
  const MetricField g = bumped_neck();
  const SMFunction F = pullback_pi_m(g.tensor);
  for (const auto& z : random_phase_points(g, 50, 4)) EXPECT_NEAR(F(z.x, z.v), 1.0, 1e-14);
}

TEST(Pullback, OneFormsAreOdd) {
  const SMFunction F = pullback_pi_m(bump_one_form(Bump{{0.1, 1.0}, 0.8, 1.0}, 0.7, -0.2));
  const Vec2 x{0.2, 1.1}, v{0.3, 0.5};
  EXPECT_DOUBLE_EQ(F(x, -1.0 * v), -F(x, v));
  const SMFunction s = pullback_pi_m(bump_function(Bump{{0.1, 1.0}, 0.8, 1.0}));
  EXPECT_DOUBLE_EQ(s(x, v), s(x, -1.0 * v));
}

TEST(FiberAverage, Moments) {
  const MetricField g = bumped_neck();
  const Vec2 x{0.25, 1.2};
  const Mat2 gm = to_mat(g.tensor.value(x));
  const SMFunction one = [](const Vec2&, const Vec2&) { return 1.0; };
  EXPECT_NEAR(fiber_average_at(one, g, 0, x, 16)[0], kTwoPi, 1e-13);
  const Components c2 = fiber_average_at(one, g, 2, x, 16);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) EXPECT_NEAR(c2[2 * a + b], kPi * gm[a][b], 1e-12);
  // quartic moments
  const SymTensorField f = generic_two_tensor();
  const Components fv = f.value(x);
  const Components c4 = fiber_average_at(pullback_pi_m(f), g, 2, x, 16);
  const double tr = trace_g(fv, inverse(gm));
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      EXPECT_NEAR(c4[2 * a + b], 0.25 * kPi * (2 * fv[2 * a + b] + tr * gm[a][b]), 1e-12);
}

TEST(Transform, MetricGivesExitTime) {
  const MetricField g = neck_metric();
  const BoundaryFan fan = boundary_fan(g, 8, 16);
  const BoundaryFunction I = xray_transform(g.tensor, fan, g);
  const BoundaryFunction T = escape_times(fan, g);
  for (std::size_t j = 0; j < fan.nodes.size(); ++j) {
    ASSERT_EQ(I.flags[j], node_ok);
    EXPECT_NEAR(I.values[j], T.values[j], 1e-10);
    const ClairautResult o = clairaut_oracle(g, fan.nodes[j].z);
    EXPECT_NEAR(I.values[j], o.length, 1e-9) << j;
  }
}

TEST(Transform, KillsPotentials) {
  const MetricField g = bumped_neck();
  const BoundaryFan fan = boundary_fan(g, 32, 16);
  const SymTensorField p = bump_one_form(Bump{{0.1, 2.0}, 0.7, 1.0}, 1.0, -0.6);
  const SymTensorField Dp = sym_derivative(p, g);
  const BoundaryFunction I = xray_transform(Dp, fan, g);
  const BoundaryFunction ref = xray_transform(generic_two_tensor(), fan, g);
  EXPECT_LT(lp_norm(I, fan, INFINITY), 1e-6);
  EXPECT_GT(lp_norm(ref, fan, INFINITY), 0.1);
}

TEST(Transform, SelfConvergence) {
  const MetricField g = neck_metric();
  const BoundaryFan fan = boundary_fan(g, 12, 12);
  const SMFunction F = [](const Vec2& x, const Vec2& v) {
    return bump1(std::hypot(x[0] - 0.1, wrap_angle(x[1] - 1.0)) / 0.7) * (1.0 + 0.5 * v[0]);
  };
  XrayOptions fine;
  fine.step = 1e-4;
  const BoundaryFunction a = xray_transform(F, fan, g);
  const BoundaryFunction b = xray_transform(F, fan, g, fine);
  for (std::size_t j = 0; j < fan.nodes.size(); ++j) EXPECT_NEAR(a.values[j], b.values[j], 1e-6);
}

TEST(Transform, Linear) {
  const MetricField g = neck_metric();
  const BoundaryFan fan = boundary_fan(g, 8, 8);
  const SMFunction F = [](const Vec2& x, const Vec2&) { return band(x[0]); };
  const SMFunction G = [](const Vec2& x, const Vec2& v) { return x[0] * v[1]; };
  const SMFunction H = [&](const Vec2& x, const Vec2& v) { return 2.0 * F(x, v) - 3.0 * G(x, v); };
  const auto I = xray_transform({F, G, H}, fan, g);
  for (std::size_t j = 0; j < fan.nodes.size(); ++j)
    EXPECT_NEAR(I[2].values[j], 2.0 * I[0].values[j] - 3.0 * I[1].values[j], 1e-12);
}

TEST(Transform, TrappedNodeIsFlagged) {
  // the horizon flag is set for a ray that cannot escape within the horizon
  const MetricField g = neck_metric();
  XrayOptions opt;
  opt.horizon = 0.5;
  const BoundaryFan fan = boundary_fan(g, 4, 4);
  const BoundaryFunction I = xray_transform(g.tensor, fan, g, opt);
  EXPECT_GT(I.flagged(), 0u);
  EXPECT_LT(lp_norm(I, fan, 1.0), lp_norm(xray_transform(g.tensor, fan, g), fan, 1.0));
}

TEST(Adjoint, ConstantIsPreserved) {
  const MetricField g = neck_metric();
  const BoundaryFan fan = boundary_fan(g, 16, 8);
  const BoundaryFunction one = sample_on_fan(fan, [](int, double, double) { return 1.0; });
  const SMFunction adj = xray_adjoint(one, fan, g, coarse());
  for (const auto& z : random_phase_points(g, 40, 8)) EXPECT_NEAR(adj(z.x, z.v), 1.0, 1e-14);
}

TEST(Adjoint, FootpointRecoversFanNode) {
  const MetricField g = bumped_neck();
  const BoundaryFan fan = boundary_fan(g, 8, 8);
  for (std::size_t j = 0; j < fan.nodes.size(); j += 7) {
    const auto& n = fan.nodes[j];
    FlowOptions fo;
    PhasePoint inside;
    flow_visit(g, n.z, 0.05, fo, [&](double, const FlowState& s) {
      inside = {s.x, s.v};
      return true;
    });
    const Footpoint fp = backward_footpoint(g, inside);
    ASSERT_TRUE(fp.found);
    EXPECT_EQ(fp.component, n.component);
    EXPECT_NEAR(wrap_angle(fp.param - n.param), 0.0, 1e-9);
    EXPECT_NEAR(fp.theta, n.theta, 1e-9);
  }
}

TEST(Adjoint, InvariantAlongOrbits) {
  const MetricField g = neck_metric();
  const BoundaryFan fan = boundary_fan(g, 32, 16);
  const BoundaryFunction u =
      sample_on_fan(fan, [](int c, double s, double th) { return 1.0 + 0.3 * c + std::cos(s) * std::sin(th); });
  const SMFunction adj = xray_adjoint(u, fan, g);
  for (const auto& z : random_phase_points(g, 20, 9)) {
    const double a = adj(z.x, z.v);
    PhasePoint later = z;
    FlowOptions fo;
    flow_visit(g, z, 0.1, fo, [&](double, const FlowState& s) {
      later = {s.x, s.v};
      return true;
    });
    if (!g.domain.contains(later.x)) continue;
    EXPECT_NEAR(adj(later.x, later.v), a, 1e-9);
  }
}

TEST(Adjoint, PairingIdentity) {
  // phi-independent pair, so a coarse boundary parameter grid suffices
  const MetricField g = neck_metric();
  const BoundaryFan fan = boundary_fan(g, 16, 128);
  const SMFunction F = [](const Vec2& x, const Vec2& v) { return band(x[0]) * (1.0 + 0.4 * v[0] * v[0]); };
  const BoundaryFunction u =
      sample_on_fan(fan, [](int c, double, double th) { return 1.0 + 0.5 * c + 0.3 * std::cos(th); });
  const BoundaryFunction IF = xray_transform(F, fan, g, coarse());
  const IdentityReport r = adjointness_check(IF, F, u, g, fan, SMGridSpec{{96, 4}, 96}, coarse());
  EXPECT_LT(r.rel_error, 1e-3) << r.lhs << " vs " << r.rhs;
}

TEST(Santalo, BandFunctions) {
  const MetricField g = neck_metric();
  const BoundaryFan fan = boundary_fan(g, 32, 64);
  const std::vector<SMFunction> Fs = {
      [](const Vec2& x, const Vec2&) { return band(x[0]); },
      [](const Vec2& x, const Vec2& v) { return band(x[0]) * v[0] * v[0]; },
  };
  for (const IdentityReport& r : santalo_check(Fs, g, fan, SMGridSpec{{128, 8}, 64}, coarse())) {
    EXPECT_LT(r.rel_error, 1e-3) << r.lhs << " vs " << r.rhs;
    EXPECT_EQ(r.flagged, 0u);
  }
}

TEST(NormalOperator, SymmetricAndPositive) {
  const MetricField g = neck_metric();
  const BoundaryFan fan = boundary_fan(g, 8, 128);
  const GridSpec grid{48, 4};
  const SymTensorField band_fn(0, [](const Vec2& x, int, TensorJet& out) { out.value[0] = band(x[0]); }, 0);
  const SymTensorField wide_fn(0, [](const Vec2& x, int, TensorJet& out) { out.value[0] = bump1(x[0] / 0.8); }, 0);
  const SymTensorField f = multiply(band_fn, g.tensor);
  const SymTensorField h = multiply(wide_fn, constant_field(2, basis_components(BasisTensor::dr2)));
  const GridTensor Pf = normal_operator(f, g, fan, grid, 64, coarse());
  const GridTensor Ph = normal_operator(h, g, fan, grid, 64, coarse());
  const double a = grid_inner(Pf, h, g), b = grid_inner(Ph, f, g);
  EXPECT_LT(relative_gap(a, b), 1e-2) << a << " vs " << b;
  EXPECT_GT(grid_inner(Pf, f, g), 0.0);
  // <Pi f, f> against ||I_2 f||^2
  const BoundaryFunction If = xray_transform(f, fan, g, coarse());
  EXPECT_LT(relative_gap(grid_inner(Pf, f, g), boundary_inner(If, If, fan)), 1e-2);
}

TEST(NormalOperator, VanishesOnPotentials) {
  const MetricField g = neck_metric();
  const BoundaryFan fan = boundary_fan(g, 32, 16);
  const SymTensorField Dp = sym_derivative(bump_one_form(Bump{{0.0, 2.0}, 0.7, 1.0}, 0.5, 1.0), g);
  const GridTensor P = normal_operator(Dp, g, fan, {8, 12}, 16);
  double m = 0.0;
  for (const auto& c : P.values)
    for (double v : c) m = std::max(m, std::abs(v));
  EXPECT_LT(m, 1e-6);
}

TEST(Extension, ConstantNearOne) {
  const MetricField g = neck_metric();
  const SymTensorField band_fn(0, [](const Vec2& x, int, TensorJet& out) { out.value[0] = band(x[0]); }, 0);
  const SymTensorField f = multiply(band_fn, g.tensor);
  const ExtensionCompareReport a = extension_compare(f, g, 0.2, 1.0, 8, 64, coarse(), 400);
  const ExtensionCompareReport b = extension_compare(f, g, 0.2, 1.0, 8, 128, coarse(), 400);
  EXPECT_NEAR(a.C, 1.0, 0.02);
  EXPECT_NEAR(b.C, 1.0, 0.02);
  EXPECT_NEAR(b.C / a.C, 1.0, 0.2);
  EXPECT_GT(a.L, 0.0);
  EXPECT_EQ(a.flagged + b.flagged, 0u);
}

TEST(LpNorms, RatiosFinite) {
  const MetricField g = neck_metric();
  const BoundaryFan fan = boundary_fan(g, 32, 16);
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> ur(-0.6, 0.6), ua(0.0, kTwoPi);
  std::vector<SMFunction> family;
  for (int k = 0; k < 4; ++k) {
    const Vec2 c{ur(rng), ua(rng)};
    family.push_back([c](const Vec2& x, const Vec2&) { return bump1(std::hypot(x[0] - c[0], wrap_angle(x[1] - c[1])) / 0.4); });
  }
  // concentrated on the neck, where rays linger
  family.push_back([](const Vec2& x, const Vec2&) { return bump1(x[0] / 0.1); });
  const LpRatioReport rep = lp_norms_check(family, g, fan, 4.0, 2.0, SMGridSpec{{24, 32}, 16}, coarse());
  ASSERT_EQ(rep.ratios.size(), family.size());
  for (double r : rep.ratios) {
    EXPECT_TRUE(std::isfinite(r));
    EXPECT_GT(r, 0.0);
  }
}

TEST(GradedMidpoint, SplitsAtCentersAndSumsToLength) {
  const double c1 = 0.3, c2 = 0.71;
  const QuadratureRule q = graded_midpoint(60, 0.0, 1.0, {c2, c1}, 3.0);
  ASSERT_EQ(q.size(), 60u);
  double sum = 0.0, step = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (k > 0) {
      EXPECT_GT(q.nodes[k], q.nodes[k - 1]);
    }
    EXPECT_GT(q.nodes[k], 0.0);
    EXPECT_LT(q.nodes[k], 1.0);
    sum += q.weights[k];
    step += q.weights[k] * (q.nodes[k] < c1 ? 1.0 : 0.0);
  }
  EXPECT_NEAR(sum, 1.0, 1e-14);
  EXPECT_NEAR(step, c1, 1e-14);  // jumps at a center are integrated exactly
  // second order on smooth data, convergent on a log singularity at a center
  const auto errors = [&](int n) {
    const QuadratureRule r = graded_midpoint(n, 0.0, 1.0, {c1, c2}, 3.0);
    double smooth = 0.0, sing = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) {
      smooth += r.weights[k] * std::cos(3.0 * r.nodes[k]);
      sing += r.weights[k] * std::log(std::abs(r.nodes[k] - c2));
    }
    const double exact_log = c2 * std::log(c2) + (1 - c2) * std::log(1 - c2) - 1.0;
    return std::pair{std::abs(smooth - std::sin(3.0) / 3.0), std::abs(sing - exact_log)};
  };
  const auto [s1, l1] = errors(100);
  const auto [s2, l2] = errors(200);
  EXPECT_LT(s2, 0.3 * s1);
  EXPECT_LT(l2, 0.6 * l1);
  EXPECT_LT(l2, 2e-3);
  EXPECT_THROW(graded_midpoint(3, 0.0, 1.0, {c1, c2}), ParameterError);
}

TEST(Fan, TrappedAnglesOnNeck) {
  const auto ta = trapped_angles(neck_metric());
  ASSERT_EQ(ta.size(), 2u);
  const double expected = std::asin(1.0 / std::cosh(1.0));
  for (const auto& c : ta) {
    ASSERT_EQ(c.size(), 2u);
    EXPECT_NEAR(c[0], -expected, 1e-10);
    EXPECT_NEAR(c[1], expected, 1e-10);
  }
  for (const auto& c : trapped_angles(flat_cylinder_metric())) EXPECT_TRUE(c.empty());
}

TEST(Fan, GradedFanMassAndInterpolation) {
  const MetricField g = neck_metric();
  const BoundaryFan fan = graded_boundary_fan(g, 64, 96);
  const double expected = 8.0 * kPi * std::cosh(1.0);
  EXPECT_NEAR(fan.total_weight(), expected, 1e-3 * expected);
  EXPECT_NEAR(graded_boundary_fan(g, 64, 384).total_weight(), expected, 1e-4 * expected);
  // nodes crowd the trapped angle
  const double ts = std::asin(1.0 / std::cosh(1.0));
  double nearest = 1.0;
  for (double t : fan.thetas[1]) nearest = std::min(nearest, std::abs(t - ts));
  EXPECT_LT(nearest, 1e-3);
  // bilinear interpolation reproduces data linear in theta between the outermost nodes
  const BoundaryFunction u = sample_on_fan(fan, [](int c, double, double th) { return 1.0 + c + 0.7 * th; });
  for (double th : {-1.2, -ts, 0.01, ts + 1e-5, 1.3})
    for (int c : {0, 1}) EXPECT_NEAR(interpolate_on_fan(u, fan, c, 2.0, th), 1.0 + c + 0.7 * th, 1e-12) << th;
}

TEST(FiberRule, GradedOnNeckUniformElsewhere) {
  const MetricField g = neck_metric();
  const Vec2 x{0.4, 1.0};
  const Mat2 gm = to_mat(g.tensor.value(x));
  const FiberRule graded = fiber_rule(g, x, gm, 128, 3.0), plain = fiber_rule(g, x, gm, 64);
  double sg = 0.0, sp = 0.0, cos2 = 0.0;
  for (std::size_t k = 0; k < graded.weights.size(); ++k) {
    sg += graded.weights[k];
    EXPECT_NEAR(form(gm, graded.directions[k], graded.directions[k]), 1.0, 1e-13);
    const double vr = graded.directions[k][0];
    cos2 += graded.weights[k] * vr * vr;
  }
  for (double w : plain.weights) sp += w;
  EXPECT_NEAR(sg, kTwoPi, 1e-13);
  EXPECT_NEAR(sp, kTwoPi, 1e-13);
  EXPECT_NEAR(cos2, kPi, 2e-3);
  // directions asymptotic to the neck: Clairaut constant cosh(r) v_phi cosh(r) = 1
  double best = 1.0;
  for (const Vec2& v : graded.directions) best = std::min(best, std::abs(std::abs(gm[1][1] * v[1]) - 1.0));
  EXPECT_LT(best, 1e-3);
}
