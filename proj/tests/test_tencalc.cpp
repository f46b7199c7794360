#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "geoxray/tencalc.hpp"

using namespace geoxray;

namespace {

MetricField bumped_neck() {
  const MetricField g = neck_metric();
  Bump b{{0.2, 1.0}, 0.5, 0.1};
  return {g.domain, linear_combination(1.0, g.tensor, 1.0, multiply(bump_function(b), g.tensor)), std::nullopt,
          "bumped"};
}

// p = r^2 sin(phi) dr + e^r cos(phi) dphi, with exact first derivatives.
SymTensorField analytic_one_form() {
  return SymTensorField(
      1,
      [](const Vec2& x, int ord, TensorJet& out) {
        const double r = x[0], s = std::sin(x[1]), c = std::cos(x[1]), e = std::exp(r);
        out.value[0] = r * r * s;
        out.value[1] = e * c;
        if (ord >= 1) {
          out.grad[0][0] = 2 * r * s;
          out.grad[0][1] = e * c;
          out.grad[1][0] = r * r * c;
          out.grad[1][1] = -e * s;
        }
      },
      1);
}

// Smooth 2-tensor not vanishing at the boundary.
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

Components neck_sym_derivative_oracle(const SymTensorField& p, const Vec2& x) {
  // Explicit neck Christoffel symbols and centred differences of the components.
  const double h = 1e-5, r = x[0];
  Components d[2];
  for (int a = 0; a < 2; ++a) {
    Vec2 xp = x, xm = x;
    xp[a] += h;
    xm[a] -= h;
    const Components vp = p.value(xp), vm = p.value(xm);
    for (int c = 0; c < 2; ++c) d[a][c] = (vp[c] - vm[c]) / (2 * h);
  }
  const Components v = p.value(x);
  const double grr_phiphi = -std::cosh(r) * std::sinh(r), gphi_rphi = std::tanh(r);
  // nabla_a p_b
  const double n_rr = d[0][0];
  const double n_rphi = d[0][1] - gphi_rphi * v[1];
  const double n_phir = d[1][0] - gphi_rphi * v[1];
  const double n_phiphi = d[1][1] - grr_phiphi * v[0];
  Components out{};
  out[0] = n_rr;
  out[1] = out[2] = 0.5 * (n_rphi + n_phir);
  out[3] = n_phiphi;
  return out;
}

double grid_max(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

TEST(SymDerivative, ScalarGivesDifferential) {
  const MetricField g = neck_metric();
  const SymTensorField h = bump_function(Bump{{0.1, 2.0}, 0.6, 1.5});
  const Vec2 x{0.3, 2.2};
  const Components d = sym_derivative_at(h, g, x);
  const ScalarJet j = Bump{{0.1, 2.0}, 0.6, 1.5}.jet(x);
  EXPECT_NEAR(d[0], j.grad[0], 1e-13);
  EXPECT_NEAR(d[1], j.grad[1], 1e-13);
}

TEST(SymDerivative, FlatLinearOneForm) {
  const MetricField g = euclid_disk_metric();
  SymTensorField p(
      1,
      [](const Vec2& x, int ord, TensorJet& out) {
        out.value[0] = 3 * x[1];
        out.value[1] = x[0] - 2 * x[1];
        if (ord >= 1) {
          out.grad[0][0] = 0.0;
          out.grad[1][0] = 3.0;
          out.grad[0][1] = 1.0;
          out.grad[1][1] = -2.0;
        }
      },
      1);
  const Components d = sym_derivative_at(p, g, {0.2, -0.4});
  EXPECT_NEAR(d[0], 0.0, 1e-15);
  EXPECT_NEAR(d[1], 2.0, 1e-15);
  EXPECT_NEAR(d[2], 2.0, 1e-15);
  EXPECT_NEAR(d[3], -2.0, 1e-15);
}

TEST(SymDerivative, NeckMatchesFiniteDifferenceOracle) {
  const MetricField g = neck_metric();
  const SymTensorField p = analytic_one_form();
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> ur(-0.95, 0.95), ua(0.0, kTwoPi);
  for (int k = 0; k < 20; ++k) {
    const Vec2 x{ur(rng), ua(rng)};
    const Components d = sym_derivative_at(p, g, x);
    const Components o = neck_sym_derivative_oracle(p, x);
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(d[c], o[c], 1e-6) << format_point(x) << " component " << c;
  }
}

TEST(SymDerivative, ResultIsSymmetric) {
  const MetricField g = bumped_neck();
  const SymTensorField p = generic_two_tensor();
  const Components d = sym_derivative_at(p, g, {0.1, 0.7});
  // rank 3: every permutation of (0,0,1) and (0,1,1) agrees.
  EXPECT_DOUBLE_EQ(d[1], d[2]);
  EXPECT_DOUBLE_EQ(d[1], d[4]);
  EXPECT_DOUBLE_EQ(d[3], d[5]);
  EXPECT_DOUBLE_EQ(d[3], d[6]);
}

TEST(SymDerivative, MetricIsParallel) {
  const MetricField g = bumped_neck();
  for (const Vec2 x : {Vec2{0.1, 0.9}, Vec2{-0.4, 1.3}, Vec2{0.7, 4.0}}) {
    const Components d = sym_derivative_at(g.tensor, g, x);
    for (int c = 0; c < 8; ++c) EXPECT_NEAR(d[c], 0.0, 1e-12);
  }
}

TEST(Divergence, RankZeroRejected) {
  EXPECT_THROW(divergence(bump_function(Bump{}), neck_metric()), ParameterError);
}

TEST(Divergence, MetricIsSolenoidal) {
  for (const MetricField& g : {neck_metric(), bumped_neck()}) {
    const auto pts = random_phase_points(g, 200, 11);
    EXPECT_LT(sol_metric_check(g, pts), 1e-8) << g.name;
  }
}

TEST(Divergence, AdjointToSymDerivative) {
  const MetricField g = bumped_neck();
  const GridSpec spec{320, 640};
  // one-forms vanishing near the boundary against arbitrary 2-tensors
  const SymTensorField p = bump_one_form(Bump{{0.1, 2.5}, 0.7, 1.0}, 0.6, -1.1);
  const SymTensorField f = generic_two_tensor();
  const double lhs = tensor_inner_product(sym_derivative(p, g), f, g, spec).integral;
  const double rhs = tensor_inner_product(p, divergence(f, g), g, spec).integral;
  EXPECT_NEAR(lhs, rhs, 1e-5 * std::abs(lhs));
  // functions against one-forms
  const SymTensorField h = bump_function(Bump{{-0.2, 4.0}, 0.6, 2.0});
  const SymTensorField q = analytic_one_form();
  const double l2 = tensor_inner_product(sym_derivative(h, g), q, g, spec).integral;
  const double r2 = tensor_inner_product(h, divergence(q, g), g, spec).integral;
  EXPECT_NEAR(l2, r2, 1e-5 * std::abs(l2));
}

TEST(Divergence, LaplacianIsNonNegative) {
  const MetricField g = neck_metric();
  const GridSpec spec{320, 640};
  const SymTensorField p = bump_one_form(Bump{{0.0, 1.0}, 0.8, 1.0}, 1.0, 0.5);
  const SymTensorField Dp = sym_derivative(p, g);
  const double lhs = tensor_inner_product(divergence(Dp, g), p, g, spec).integral;
  const double rhs = tensor_inner_product(Dp, Dp, g, spec).integral;
  EXPECT_GT(rhs, 0.0);
  EXPECT_NEAR(lhs, rhs, 1e-5 * rhs);
}

TEST(Identity, XpiDOnNeck) {
  const MetricField g = neck_metric();
  const auto pts = random_phase_points(g, 100, 5);
  const SymTensorField fields[] = {bump_function(Bump{{0.1, 1.0}, 0.8, 1.0}), analytic_one_form(),
                                   generic_two_tensor()};
  for (const auto& p : fields) {
    const IdentityResidual res = xpid_check(p, g, pts);
    EXPECT_EQ(res.samples, 100u);
    EXPECT_LT(res.max_rel, 1e-5) << "rank " << p.rank();
  }
}

TEST(Identity, XpiDOnBumpedNeck) {
  const MetricField g = bumped_neck();
  const auto pts = random_phase_points(g, 100, 6);
  EXPECT_LT(xpid_check(analytic_one_form(), g, pts).max_rel, 1e-5);
}

// ---------------------------------------------------------------------------
// discrete operators

TEST(Grid, DiscreteTransposeIsExact) {
  const MetricField g = bumped_neck();
  const TensorGrid G = make_tensor_grid(g, 9, 12);
  std::mt19937 rng(2);
  std::normal_distribution<double> n01;
  GridOneForm p(2 * G.nodes(), 0.0);
  for (int i = 1; i < G.n_r - 1; ++i)
    for (int j = 0; j < G.n_phi; ++j)
      for (int c = 0; c < 2; ++c) p[2 * G.node(i, j) + c] = n01(rng);
  GridTwoTensor f(3 * G.nodes());
  for (double& v : f) v = n01(rng);
  const double lhs = inner_M2(G, apply_D(G, p), f);
  const GridOneForm q = apply_DT(G, apply_M2(G, f));
  double rhs = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) rhs += p[i] * q[i];
  EXPECT_NEAR(lhs, rhs, 1e-12 * std::abs(lhs));
}

TEST(Grid, MetricIsDiscretelySolenoidal) {
  for (const MetricField& g : {neck_metric(), bumped_neck()}) {
    const TensorGrid G = make_tensor_grid(g, 16, 32);
    const GridTwoTensor gs = sample_two_tensor(G, g.tensor);
    const GridOneForm d = apply_Dstar(G, gs);
    EXPECT_LT(grid_max(d), 1e-10) << g.name;
  }
}

TEST(Grid, ConsistentWithContinuumDerivative) {
  const MetricField g = bumped_neck();
  const SymTensorField p(
      1,
      [](const Vec2& x, int, TensorJet& out) {
        const double w = 1.0 - x[0] * x[0];
        out.value[0] = w * std::sin(x[1]);
        out.value[1] = w * x[0] * std::cos(2 * x[1]);
      },
      0);
  const SymTensorField Dp = sym_derivative(p, g);
  double err[2];
  int k = 0;
  for (int n : {24, 48}) {
    const TensorGrid G = make_tensor_grid(g, n + 1, 2 * n);
    const GridTwoTensor d = apply_D(G, sample_one_form(G, p));
    const GridTwoTensor e = sample_two_tensor(G, Dp);
    double m = 0.0;
    for (int i = 1; i < G.n_r - 1; ++i)
      for (int j = 0; j < G.n_phi; ++j)
        for (int c = 0; c < 3; ++c) m = std::max(m, std::abs(d[3 * G.node(i, j) + c] - e[3 * G.node(i, j) + c]));
    err[k++] = m;
  }
  EXPECT_LT(err[1], 0.01);
  EXPECT_GT(err[0] / err[1], 3.0);
}

TEST(Grid, LaplacianIsSymmetricPositiveDefinite) {
  for (const MetricField& g : {neck_metric(), bumped_neck()}) {
    const TensorGrid G = make_tensor_grid(g, 7, 8);
    std::vector<std::size_t> dofs;
    for (int i = 1; i < G.n_r - 1; ++i)
      for (int j = 0; j < G.n_phi; ++j)
        for (int c = 0; c < 2; ++c) dofs.push_back(2 * G.node(i, j) + c);
    const int n = static_cast<int>(dofs.size());
    Eigen::MatrixXd A(n, n);
    for (int col = 0; col < n; ++col) {
      GridOneForm e(2 * G.nodes(), 0.0);
      e[dofs[col]] = 1.0;
      const GridOneForm Ae = apply_A(G, e);
      for (int row = 0; row < n; ++row) A(row, col) = Ae[dofs[row]];
    }
    EXPECT_LT((A - A.transpose()).cwiseAbs().maxCoeff(), 1e-12 * A.cwiseAbs().maxCoeff()) << g.name;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (A + A.transpose()));
    EXPECT_GT(es.eigenvalues()(0), 1e-8 * es.eigenvalues()(n - 1)) << g.name;
  }
}

TEST(Decompose, ExactPotential) {
  const MetricField g = bumped_neck();
  const TensorGrid G = make_tensor_grid(g, 32, 64);
  const GridOneForm p0 = sample_one_form(G, bump_one_form(Bump{{0.1, 2.0}, 0.8, 1.0}, 1.0, -0.5));
  const GridTwoTensor f = apply_D(G, p0);
  const SolenoidalDecomposition dec = solenoidal_decompose_grid(G, f);
  EXPECT_LE(dec.norm_fs, 10 * 1e-8 * dec.norm_f);
  EXPECT_LE(dec.dstar_residual, 10 * 1e-8);
  GridOneForm diff(p0.size());
  for (std::size_t i = 0; i < p0.size(); ++i) diff[i] = dec.p[i] - p0[i];
  EXPECT_LE(norm_M2(G, apply_D(G, diff)), 10 * 1e-8 * dec.norm_f);
  EXPECT_EQ(dec.boundary_max_p, 0.0);
}

TEST(Decompose, MultipleOfMetricIsSolenoidal) {
  const MetricField g = neck_metric();
  const SolenoidalDecomposition dec = solenoidal_decompose(scaled(2.5, g.tensor), g, 32, 64);
  EXPECT_LE(dec.norm_p, 10 * 1e-8);
  EXPECT_NEAR(dec.norm_fs, dec.norm_f, 1e-10 * dec.norm_f);
  EXPECT_EQ(dec.iterations, 0);
}

TEST(Decompose, GenericInputResidualsAndProjection) {
  const MetricField g = bumped_neck();
  const TensorGrid G = make_tensor_grid(g, 32, 64);
  const GridTwoTensor f = sample_two_tensor(G, generic_two_tensor());
  const SolenoidalDecomposition dec = solenoidal_decompose_grid(G, f);
  EXPECT_LE(dec.dstar_residual, 10 * 1e-8);
  EXPECT_LE(dec.reassembly_residual, 1e-8);
  EXPECT_GT(dec.iterations, 0);
  // orthogonality of the two parts
  const double ip = inner_M2(G, dec.fs, apply_D(G, dec.p));
  EXPECT_LE(std::abs(ip), 10 * 1e-8 * dec.norm_f * dec.norm_f);
  // idempotence
  const SolenoidalDecomposition again = solenoidal_decompose_grid(G, dec.fs);
  EXPECT_LE(again.norm_p, 10 * 1e-8 * std::max(1.0, dec.norm_f));
}

TEST(Decompose, JacobiPreconditionerAgrees) {
  const MetricField g = bumped_neck();
  const TensorGrid G = make_tensor_grid(g, 16, 30);
  const GridTwoTensor f = sample_two_tensor(G, generic_two_tensor());
  DecomposeOptions opt;
  opt.jacobi_precond = true;
  const SolenoidalDecomposition a = solenoidal_decompose_grid(G, f);
  const SolenoidalDecomposition b = solenoidal_decompose_grid(G, f, opt);
  GridTwoTensor d(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) d[i] = a.fs[i] - b.fs[i];
  EXPECT_LE(norm_M2(G, d), 1e-6 * a.norm_f);
}

TEST(Decompose, NonConvergenceReportsHistory) {
  const MetricField g = bumped_neck();
  const TensorGrid G = make_tensor_grid(g, 16, 32);
  DecomposeOptions opt;
  opt.max_iter = 3;
  try {
    solenoidal_decompose_grid(G, sample_two_tensor(G, generic_two_tensor()), opt);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("residual history"), std::string::npos);
  }
}
