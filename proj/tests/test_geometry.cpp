#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "geoxray/geometry.hpp"

using namespace geoxray;

namespace {

// Neck metric without its revolution tag, so every query goes through the generic Koszul path.
MetricField untagged_neck() {
  MetricField g = neck_metric();
  g.revolution.reset();
  return g;
}

MetricField bumped_neck() {
  const MetricField g = neck_metric();
  Bump b{{0.2, 1.0}, 0.5, 0.1};
  MetricField out{g.domain, linear_combination(1.0, g.tensor, 1.0, multiply(bump_function(b), g.tensor)),
                  std::nullopt, "bumped"};
  return out;
}

}  // namespace

TEST(MetricJet, NeckComponents) {
  const MetricField g = neck_metric();
  const MetricJet j = metric_jet(g, {0.4, 2.0});
  EXPECT_DOUBLE_EQ(j.g[0][0], 1.0);
  EXPECT_DOUBLE_EQ(j.g[0][1], 0.0);
  EXPECT_NEAR(j.g[1][1], std::cosh(0.4) * std::cosh(0.4), 1e-15);
}

TEST(MetricJet, DerivativeMatchesFiniteDifference) {
  const MetricField g = neck_metric();
  const double r = 0.37, h = 1e-3;
  auto gpp = [](double s) { return std::cosh(s) * std::cosh(s); };
  const double fd = (-gpp(r + 2 * h) + 8 * gpp(r + h) - 8 * gpp(r - h) + gpp(r - 2 * h)) / (12 * h);
  const MetricJet j = metric_jet(g, {r, 0.3});
  EXPECT_NEAR(j.dg[0][1][1], fd, 1e-8);
  EXPECT_NEAR(j.dg[0][1][1], 2 * std::cosh(r) * std::sinh(r), 1e-14);
}

TEST(MetricJet, FallbackDifferencesAreFourthOrder) {
  // Provided order 0: gradient and Hessian come from the library stencils.
  SymTensorField t(
      2,
      [](const Vec2& x, int, TensorJet& out) {
        out.value[0] = 1.0;
        out.value[3] = std::cosh(x[0]) * std::cosh(x[0]) * (1.0 + 0.1 * std::sin(x[1]));
      },
      0);
  MetricField g{ChartDomain::annulus(-1, 1), t, std::nullopt, "fd"};
  const Vec2 x{0.3, 0.8};
  const MetricJet j = metric_jet(g, x);
  const double c = std::cosh(x[0]), s = std::sinh(x[0]);
  const double w = 1.0 + 0.1 * std::sin(x[1]);
  EXPECT_NEAR(j.dg[0][1][1], 2 * c * s * w, 1e-9);
  EXPECT_NEAR(j.dg[1][1][1], c * c * 0.1 * std::cos(x[1]), 1e-9);
  EXPECT_NEAR(j.d2g[0][0][1][1], 2 * (s * s + c * c) * w, 1e-6);
  EXPECT_NEAR(j.d2g[0][1][1][1], 2 * c * s * 0.1 * std::cos(x[1]), 1e-6);
  EXPECT_NEAR(j.d2g[1][1][1][1], -c * c * 0.1 * std::sin(x[1]), 1e-6);
}

TEST(MetricJet, OutsideChartThrows) {
  EXPECT_THROW(metric_jet(neck_metric(), {1.5, 0.0}), DomainError);
  EXPECT_THROW(metric_jet(euclid_disk_metric(), {0.9, 0.9}), DomainError);
}

TEST(MetricJet, FlatHasZeroDerivatives) {
  const MetricJet j = metric_jet(euclid_disk_metric(), {0.1, -0.2});
  for (int a = 0; a < 2; ++a)
    for (int i = 0; i < 2; ++i)
      for (int k = 0; k < 2; ++k) EXPECT_EQ(j.dg[a][i][k], 0.0);
}

TEST(Christoffel, NeckKoszulMatchesFormula) {
  const MetricField g = untagged_neck();
  for (double r : {-0.8, -0.1, 0.0, 0.55}) {
    const ChristoffelCurvature cc = christoffel_curvature(g, {r, 1.3});
    EXPECT_NEAR(cc.gamma[0][1][1], -std::cosh(r) * std::sinh(r), 1e-12);
    EXPECT_NEAR(cc.gamma[1][0][1], std::tanh(r), 1e-12);
    EXPECT_NEAR(cc.gamma[1][1][0], std::tanh(r), 1e-12);
    EXPECT_NEAR(cc.gamma[0][0][0], 0.0, 1e-14);
    EXPECT_NEAR(cc.K, -1.0, 1e-10);
  }
}

TEST(Christoffel, RevolutionFastPathAgrees) {
  const MetricField tagged = neck_metric();
  const MetricField plain = untagged_neck();
  const ChristoffelCurvature a = christoffel_curvature(tagged, {0.3, 0.0});
  const ChristoffelCurvature b = christoffel_curvature(plain, {0.3, 0.0});
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) EXPECT_NEAR(a.gamma[k][i][j], b.gamma[k][i][j], 1e-13);
  EXPECT_NEAR(a.K, b.K, 1e-10);
}

TEST(Christoffel, FlatCurvatureVanishes) {
  EXPECT_NEAR(christoffel_curvature(euclid_disk_metric(), {0.2, 0.3}).K, 0.0, 1e-15);
  EXPECT_NEAR(christoffel_curvature(flat_cylinder_metric(), {0.2, 0.3}).K, 0.0, 1e-15);
}

TEST(Christoffel, MetricIsParallel) {
  // nabla_k g_ij = d_k g_ij - Gamma^l_ki g_lj - Gamma^l_kj g_il
  const MetricField g = bumped_neck();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ur(-0.95, 0.95), up(0.0, kTwoPi);
  for (int n = 0; n < 50; ++n) {
    const Vec2 x{ur(rng), up(rng)};
    const MetricJet j = metric_jet(g, x);
    const Christoffel G = christoffel_curvature(g, x).gamma;
    for (int k = 0; k < 2; ++k)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          double v = j.dg[k][a][b];
          for (int l = 0; l < 2; ++l) v -= G[l][k][a] * j.g[l][b] + G[l][k][b] * j.g[a][l];
          EXPECT_NEAR(v, 0.0, 1e-8);
        }
  }
}

TEST(Christoffel, DegenerateMetricThrows) {
  MetricField g{ChartDomain::annulus(-1, 1), constant_field(2, {1, 0, 0, -1, 0, 0, 0, 0}), std::nullopt, "bad"};
  EXPECT_THROW(christoffel_curvature(g, {0.0, 0.0}), DegenerateMetricError);
}

TEST(Integrate, NeckArea) {
  const double area = volume(neck_metric());
  EXPECT_NEAR(area / (4 * kPi * std::sinh(1.0)) - 1.0, 0.0, 1e-6);
}

TEST(Integrate, DiskArea) { EXPECT_NEAR(volume(euclid_disk_metric()), kPi, 1e-12); }

TEST(Integrate, ZeroIntegrand) {
  EXPECT_EQ(integrate_over_M([](const Vec2&) { return 0.0; }, neck_metric()), 0.0);
}

TEST(Integrate, TrigonometricExactness) {
  // Trapezoid with 128 nodes integrates cos(k phi) exactly for |k| < 128.
  const MetricField g = flat_cylinder_metric();
  for (int k : {1, 5, 40, 127}) {
    const double v = integrate_over_M([k](const Vec2& x) { return std::cos(k * x[1]) * (1 + x[0] * x[0]); }, g);
    EXPECT_NEAR(v, 0.0, 1e-12) << k;
  }
  const double c2 = integrate_over_M([](const Vec2& x) { return std::pow(std::cos(3 * x[1]), 2); }, g);
  EXPECT_NEAR(c2, 2 * kPi, 1e-12);
}

TEST(Integrate, DegenerateSampleThrows) {
  MetricField g{ChartDomain::annulus(-1, 1), constant_field(2, {0, 0, 0, 1, 0, 0, 0, 0}), std::nullopt, "bad"};
  EXPECT_THROW(volume(g), DegenerateMetricError);
}

TEST(InnerProduct, MetricNormIsDimension) {
  const MetricField g = bumped_neck();
  const auto ip = tensor_inner_product(g.tensor, g.tensor, g);
  for (double r : {-0.9, 0.0, 0.4}) EXPECT_NEAR(ip.pointwise({r, 1.0}), 2.0, 1e-13);
}

TEST(InnerProduct, ScaledMetric) {
  const MetricField g = neck_metric();
  const double c = 0.7;
  const auto ip = tensor_inner_product(g.tensor, scaled(c, g.tensor), g);
  EXPECT_NEAR(ip.integral, 2 * c * volume(g), 1e-10);
}

TEST(InnerProduct, RankMismatchThrows) {
  const MetricField g = neck_metric();
  EXPECT_THROW(tensor_inner_product(g.tensor, zero_field(1), g), ParameterError);
}

TEST(InnerProduct, SymmetricBilinearPositive) {
  const MetricField g = bumped_neck();
  const SymTensorField f = multiply(bump_function({{0.1, 0.5}, 0.6, 1.0}), constant_field(2, basis_components(BasisTensor::mixed)));
  const SymTensorField h = multiply(bump_function({{-0.2, 0.9}, 0.5, 1.0}), constant_field(2, basis_components(BasisTensor::dr2)));
  const double fh = tensor_inner_product(f, h, g).integral;
  const double hf = tensor_inner_product(h, f, g).integral;
  EXPECT_NEAR(fh, hf, 1e-14 * std::abs(fh) + 1e-16);
  const double f2h = tensor_inner_product(linear_combination(2.0, f, 3.0, g.tensor), h, g).integral;
  EXPECT_NEAR(f2h, 2 * fh + 3 * tensor_inner_product(g.tensor, h, g).integral, 1e-12);
  EXPECT_GT(tensor_inner_product(f, f, g).integral, 0.0);
  EXPECT_EQ(tensor_inner_product(zero_field(2), zero_field(2), g).integral, 0.0);
}

TEST(InnerProduct, FiberConstantIsOneOverPi) {
  // <g, f>_{L2(M)} = (1/pi) <pi_2^* g, pi_2^* f>_{L2(SM)}, SM integral done by an independent product rule.
  const MetricField g = bumped_neck();
  const SymTensorField f = linear_combination(
      1.0, multiply(bump_function({{0.1, 2.0}, 0.7, 0.3}), constant_field(2, basis_components(BasisTensor::mixed))), 0.2,
      g.tensor);
  const double lhs = tensor_inner_product(g.tensor, f, g).integral;
  const int nr = 48, np = 96, nt = 16;
  double sm = 0.0;
  for (int i = 0; i < nr; ++i) {
    const double r = -1.0 + 2.0 * (i + 0.5) / nr;  // midpoint in r
    for (int k = 0; k < np; ++k) {
      const Vec2 x{r, kTwoPi * k / np};
      const Mat2 gm = to_mat(g.tensor.value(x));
      const Mat2 fm = to_mat(f.value(x));
      const Vec2 e1{1.0 / std::sqrt(gm[0][0]), 0.0};
      Vec2 e2{-gm[0][1] / gm[0][0], 1.0};
      e2 = (1.0 / std::sqrt(form(gm, e2, e2))) * e2;
      double fib = 0.0;
      for (int t = 0; t < nt; ++t) {
        const double th = kTwoPi * t / nt;
        const Vec2 v = std::cos(th) * e1 + std::sin(th) * e2;
        fib += form(fm, v, v) * kTwoPi / nt;
      }
      sm += fib * std::sqrt(det(gm)) * (2.0 / nr) * (kTwoPi / np);
    }
  }
  EXPECT_NEAR(lhs, sm / kPi, 2e-3 * std::abs(lhs));
}

TEST(Interpolate, EndpointsAndFailure) {
  const MetricField g = neck_metric();
  const MetricField g0 = interpolate_metric(g, scaled(0.3, g.tensor), 0.0);
  EXPECT_TRUE(g0.revolution.has_value());
  const MetricField gp = bumped_neck();
  const MetricField g1 = interpolate_metric(g, linear_combination(1.0, gp.tensor, -1.0, g.tensor), 1.0);
  for (double r : {-0.5, 0.2}) {
    const auto a = g1.tensor.value({r, 1.1});
    const auto b = gp.tensor.value({r, 1.1});
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(a[c], b[c], 1e-15);
  }
  EXPECT_THROW(interpolate_metric(g, scaled(-2.0, g.tensor), 1.0), DegenerateMetricError);
  EXPECT_THROW(interpolate_metric(g, g.tensor, 1.5), ParameterError);
}

TEST(DetExpansion, TrivialCases) {
  const MetricField g = neck_metric();
  const SymTensorField f = multiply(bump_function({{0.0, 1.0}, 0.5, 0.01}), g.tensor);
  EXPECT_NEAR(det_expansion_residual(g, zero_field(2), 0.7, 0.1, 1.0, {0.1, 1.0}), 0.0, 1e-15);
  EXPECT_NEAR(det_expansion_residual(g, f, 0.0, 0.1, 1.0, {0.1, 1.0}), 0.0, 1e-15);
}

TEST(DetExpansion, ConformalBumpNonnegative) {
  const MetricField g = neck_metric();
  const SymTensorField f = multiply(bump_function({{0.0, 1.0}, 0.5, 0.01}), g.tensor);
  const DetExpansionFit fit = fit_det_expansion(g, f, {0.5, 1.0}, 0.05, 1.0, 64);
  EXPECT_GE(fit.min_residual, 0.0);
  EXPECT_EQ(fit.min_C, 0.0);
}

TEST(DetExpansion, TracelessPerturbationNeedsCubicTerm) {
  // f = a (dr dphi + dphi dr): det(g + tau f) = det g - tau^2 a^2 exactly, so the bound needs C > 0 only if
  // the quadratic term undershoots; the fitted constant makes every residual nonnegative.
  const MetricField g = neck_metric();
  const SymTensorField f = multiply(bump_function({{0.0, 1.0}, 0.6, 0.02}), constant_field(2, basis_components(BasisTensor::mixed)));
  const DetExpansionFit fit = fit_det_expansion(g, f, {0.25, 0.5, 1.0}, 0.05, 0.0, 48);
  const DetExpansionFit refit = fit_det_expansion(g, f, {0.25, 0.5, 1.0}, 0.05, fit.min_C + 1e-9, 48);
  EXPECT_GE(refit.min_residual, -1e-15);
}
