// Symmetric tensor calculus: D = sigma nabla, D^* = -tr_12 nabla, trace, the
// algebraic identity checks, and the finite-difference solenoidal decomposition
// f = f^s + D p with p = 0 on the boundary.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "geoxray/cg.hpp"
#include "geoxray/flow.hpp"
#include "geoxray/geometry.hpp"
#include "geoxray/parallel.hpp"
#include "geoxray/tensor.hpp"

namespace geoxray {

// ---------------------------------------------------------------------------
// pointwise operators

namespace detail {

/// Component index of the rank-n multi-index given as bits.
inline int pack(const std::array<int, kMaxRank + 1>& idx, int n) {
  int c = 0;
  for (int s = 0; s < n; ++s) c = (c << 1) | idx[s];
  return c;
}

inline std::array<int, kMaxRank + 1> unpack(int c, int n) {
  std::array<int, kMaxRank + 1> idx{};
  for (int s = 0; s < n; ++s) idx[s] = index_bit(c, n, s);
  return idx;
}

/// Full symmetrization of a rank-n component array.
inline Components symmetrize(const Components& a, int n) {
  Components out{};
  std::array<int, kMaxRank + 1> perm{};
  std::iota(perm.begin(), perm.begin() + n, 0);
  int count = 0;
  do {
    ++count;
    for (int c = 0; c < component_count(n); ++c) {
      const auto idx = unpack(c, n);
      std::array<int, kMaxRank + 1> q{};
      for (int s = 0; s < n; ++s) q[s] = idx[perm[s]];
      out[c] += a[pack(q, n)];
    }
  } while (std::next_permutation(perm.begin(), perm.begin() + n));
  for (int c = 0; c < component_count(n); ++c) out[c] /= count;
  return out;
}

/// nabla p as a rank-(m+1) array with the derivative index first.
inline Components covariant_derivative(const TensorJet& p, int m, const Christoffel& G) {
  Components out{};
  const int n = m + 1;
  for (int c = 0; c < component_count(n); ++c) {
    const auto idx = unpack(c, n);
    const int k = idx[0];
    const int tail = c & (component_count(m) - 1);
    double v = p.grad[k][tail];
    for (int s = 0; s < m; ++s) {
      auto j = unpack(tail, m);
      const int is = j[s];
      for (int l = 0; l < 2; ++l) {
        j[s] = l;
        v -= G[l][k][is] * p.value[pack(j, m)];
      }
    }
    out[c] = v;
  }
  return out;
}

}  // namespace detail

/// (D p)(x) for a rank-m field at a point; m <= 2.
inline Components sym_derivative_at(const SymTensorField& p, const MetricField& g, const Vec2& x) {
  const int m = p.rank();
  if (m > kMaxRank - 1) throw ParameterError("sym_derivative: rank must be at most 2");
  TensorJet j;
  p.evaluate(x, j, 1);
  const Christoffel G = christoffel_symbols(g, x);
  return detail::symmetrize(detail::covariant_derivative(j, m, G), m + 1);
}

/// D p = sigma(nabla p) as a rank-(m+1) field.
inline SymTensorField sym_derivative(const SymTensorField& p, const MetricField& g) {
  return SymTensorField(
      p.rank() + 1, [p, g](const Vec2& x, int, TensorJet& out) { out.value = sym_derivative_at(p, g, x); }, 0,
      p.fd_step());
}

/// (D^* f)(x) = -g^{ab} nabla_a f_{b ...}.
inline Components divergence_at(const SymTensorField& f, const MetricField& g, const Vec2& x) {
  const int m = f.rank();
  if (m < 1) throw ParameterError("divergence: rank must be at least 1");
  TensorJet j;
  f.evaluate(x, j, 1);
  const Christoffel G = christoffel_symbols(g, x);
  const Mat2 gi = inverse(to_mat(g.tensor.value(x)));
  const Components nab = detail::covariant_derivative(j, m, G);  // rank m+1: (a, b, I)
  Components out{};
  const int tail_count = component_count(m - 1);
  for (int t = 0; t < tail_count; ++t) {
    double v = 0.0;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) v += gi[a][b] * nab[(((a << 1) | b) << (m - 1)) | t];
    out[t] = -v;
  }
  return out;
}

inline SymTensorField divergence(const SymTensorField& f, const MetricField& g) {
  if (f.rank() < 1) throw ParameterError("divergence: rank must be at least 1");
  return SymTensorField(
      f.rank() - 1, [f, g](const Vec2& x, int, TensorJet& out) { out.value = divergence_at(f, g, x); }, 0,
      f.fd_step());
}

/// tr_g f = g^{ab} f_ab for rank 2.
inline double trace_g(const Components& f, const Mat2& gi) {
  return gi[0][0] * f[0] + gi[0][1] * f[1] + gi[1][0] * f[2] + gi[1][1] * f[3];
}

// ---------------------------------------------------------------------------
// algebraic identity checks

struct IdentityResidual {
  double max_abs = 0.0;
  double max_rel = 0.0;
  std::size_t samples = 0;
};

/// Random unit phase points in the interior (margin keeps the FD stencil inside M).
inline std::vector<PhasePoint> random_phase_points(const MetricField& g, int count, std::uint64_t seed,
                                                   double margin = 0.05) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<PhasePoint> out;
  const auto& dom = g.domain;
  while (static_cast<int>(out.size()) < count) {
    Vec2 x;
    if (dom.is_annulus()) {
      x = {dom.r_min + margin + (dom.r_max - dom.r_min - 2 * margin) * u01(rng), kTwoPi * u01(rng)};
    } else {
      const double rho = (dom.radius - margin) * std::sqrt(u01(rng));
      const double a = kTwoPi * u01(rng);
      x = {rho * std::cos(a), rho * std::sin(a)};
    }
    out.push_back(phase_point_from_angle(g, x, kTwoPi * u01(rng)));
  }
  return out;
}

/// X pi_m^* p = pi_{m+1}^* D p: centred difference of pi_m^* p along the flow against pi_{m+1}^*(D p).
/// Relative residuals use max(|rhs|, 1e-2 * max_samples |rhs|) as denominator.
inline IdentityResidual xpid_check(const SymTensorField& p, const MetricField& g, const std::vector<PhasePoint>& pts,
                                   double fd_step = 1e-4) {
  IdentityResidual res;
  std::vector<double> lhs(pts.size()), rhs(pts.size());
  FlowOptions fo;
  fo.step = fd_step;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    FlowState fw, bw;
    flow_visit(g, pts[i], fd_step, fo, [&](double, const FlowState& s) {
      fw = s;
      return true;
    });
    flow_visit(g, pts[i], -fd_step, fo, [&](double, const FlowState& s) {
      bw = s;
      return true;
    });
    const double a = contract_with_velocity(p.value(fw.x), p.rank(), fw.v);
    const double b = contract_with_velocity(p.value(bw.x), p.rank(), bw.v);
    lhs[i] = (a - b) / (2.0 * fd_step);
    rhs[i] = contract_with_velocity(sym_derivative_at(p, g, pts[i].x), p.rank() + 1, pts[i].v);
  }
  double scale = 0.0;
  for (double r : rhs) scale = std::max(scale, std::abs(r));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d = std::abs(lhs[i] - rhs[i]);
    res.max_abs = std::max(res.max_abs, d);
    res.max_rel = std::max(res.max_rel, d / std::max(std::abs(rhs[i]), 1e-2 * scale));
  }
  res.samples = pts.size();
  return res;
}

/// max |D^* g| over the given points.
inline double sol_metric_check(const MetricField& g, const std::vector<PhasePoint>& pts) {
  double m = 0.0;
  for (const auto& z : pts) {
    const Components d = divergence_at(g.tensor, g, z.x);
    m = std::max({m, std::abs(d[0]), std::abs(d[1])});
  }
  return m;
}

// ---------------------------------------------------------------------------
// finite-difference grid on the annulus

/// Nodes r_i = r_min + i dr (i = 0..n_r-1, boundaries included) times phi_j = j dphi (periodic).
/// One-form unknowns live on interior rows only; 2-tensors on every node as (rr, rphi, phiphi).
struct TensorGrid {
  int n_r = 0;
  int n_phi = 0;
  double dr = 0.0;
  double dphi = 0.0;
  std::vector<double> r;
  std::vector<double> phi;
  std::vector<Mat2> g;
  std::vector<Mat2> ginv;
  std::vector<double> sqrtg;
  std::vector<double> w;          // trapezoid weight in r times dphi
  std::vector<Christoffel> gamma;  // modified Christoffel symbols used by D_h

  std::size_t nodes() const { return static_cast<std::size_t>(n_r) * n_phi; }
  std::size_t node(int i, int j) const { return static_cast<std::size_t>(i) * n_phi + ((j % n_phi) + n_phi) % n_phi; }
  std::size_t unknowns() const { return 2 * static_cast<std::size_t>(n_r - 2) * n_phi; }
  Vec2 point(int i, int j) const { return {r[i], phi[j]}; }
};

using GridOneForm = std::vector<double>;  // 2 per node: (p_r, p_phi)
using GridTwoTensor = std::vector<double>;  // 3 per node: (f_rr, f_rphi, f_phiphi)

namespace detail {

// Discrete partial derivatives of a nodal scalar q: one-sided at r-boundaries, centred elsewhere.
inline double d_r(const TensorGrid& G, const double* q, int stride, int off, int i, int j) {
  auto at = [&](int ii) { return q[G.node(ii, j) * stride + off]; };
  if (i == 0) return (at(1) - at(0)) / G.dr;
  if (i == G.n_r - 1) return (at(i) - at(i - 1)) / G.dr;
  return (at(i + 1) - at(i - 1)) / (2.0 * G.dr);
}

inline double d_phi(const TensorGrid& G, const double* q, int stride, int off, int i, int j) {
  return (q[G.node(i, j + 1) * stride + off] - q[G.node(i, j - 1) * stride + off]) / (2.0 * G.dphi);
}

// Scatter the transpose of d_r / d_phi: adds c * d(.)/d q at node (i, j) into out.
inline void d_r_transpose(const TensorGrid& G, double c, double* out, int stride, int off, int i, int j) {
  auto add = [&](int ii, double v) { out[G.node(ii, j) * stride + off] += v; };
  if (i == 0) {
    add(1, c / G.dr);
    add(0, -c / G.dr);
  } else if (i == G.n_r - 1) {
    add(i, c / G.dr);
    add(i - 1, -c / G.dr);
  } else {
    add(i + 1, c / (2.0 * G.dr));
    add(i - 1, -c / (2.0 * G.dr));
  }
}

inline void d_phi_transpose(const TensorGrid& G, double c, double* out, int stride, int off, int i, int j) {
  out[G.node(i, j + 1) * stride + off] += c / (2.0 * G.dphi);
  out[G.node(i, j - 1) * stride + off] -= c / (2.0 * G.dphi);
}

}  // namespace detail

/// Builds the grid and the modified Christoffel symbols Gamma~^l_ab = Gamma^l_ab + g_ab c^l / 2, with c^l
/// chosen at interior nodes so that the discrete adjoint of D_h annihilates g exactly.
inline TensorGrid make_tensor_grid(const MetricField& g, int n_r, int n_phi) {
  if (!g.domain.is_annulus()) throw UnsupportedError("tensor grid: annulus charts only");
  if (n_r < 4 || n_phi < 4) throw ParameterError("tensor grid: need at least 4 x 4 nodes");
  TensorGrid G;
  G.n_r = n_r;
  G.n_phi = n_phi;
  G.dr = (g.domain.r_max - g.domain.r_min) / (n_r - 1);
  G.dphi = kTwoPi / n_phi;
  for (int i = 0; i < n_r; ++i) G.r.push_back(g.domain.r_min + i * G.dr);
  for (int j = 0; j < n_phi; ++j) G.phi.push_back(j * G.dphi);
  const std::size_t N = G.nodes();
  G.g.resize(N);
  G.ginv.resize(N);
  G.sqrtg.resize(N);
  G.w.resize(N);
  G.gamma.resize(N);
  for (int i = 0; i < n_r; ++i)
    for (int j = 0; j < n_phi; ++j) {
      const std::size_t n = G.node(i, j);
      const Vec2 x = G.point(i, j);
      G.g[n] = to_mat(g.tensor.value(x));
      if (!is_positive_definite(G.g[n])) throw DegenerateMetricError("metric not positive definite at " + format_point(x));
      G.ginv[n] = inverse(G.g[n]);
      G.sqrtg[n] = std::sqrt(det(G.g[n]));
      G.w[n] = ((i == 0 || i == n_r - 1) ? 0.5 : 1.0) * G.dr * G.dphi;
      G.gamma[n] = christoffel_symbols(g, x);
    }
  // s_l(n) = d/dp_l(n) of sum_m w sqrt(g) g^{ab} (delta_a p_b)(m)
  std::vector<double> s(2 * N, 0.0);
  for (int i = 0; i < n_r; ++i)
    for (int j = 0; j < n_phi; ++j) {
      const std::size_t m = G.node(i, j);
      const double W = G.w[m] * G.sqrtg[m];
      for (int b = 0; b < 2; ++b) {
        detail::d_r_transpose(G, W * G.ginv[m][0][b], s.data(), 2, b, i, j);
        detail::d_phi_transpose(G, W * G.ginv[m][1][b], s.data(), 2, b, i, j);
      }
    }
  for (int i = 1; i < n_r - 1; ++i)
    for (int j = 0; j < n_phi; ++j) {
      const std::size_t n = G.node(i, j);
      const Mat2& gi = G.ginv[n];
      for (int l = 0; l < 2; ++l) {
        const double trace_gamma = gi[0][0] * G.gamma[n][l][0][0] + 2 * gi[0][1] * G.gamma[n][l][0][1] +
                                   gi[1][1] * G.gamma[n][l][1][1];
        const double c = s[2 * n + l] / (G.w[n] * G.sqrtg[n]) - trace_gamma;
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) G.gamma[n][l][a][b] += 0.5 * G.g[n][a][b] * c;
      }
    }
  return G;
}

/// Samples a rank-2 field on every node.
inline GridTwoTensor sample_two_tensor(const TensorGrid& G, const SymTensorField& f) {
  GridTwoTensor out(3 * G.nodes());
  for (int i = 0; i < G.n_r; ++i)
    for (int j = 0; j < G.n_phi; ++j) {
      const std::size_t n = G.node(i, j);
      const Components c = f.value(G.point(i, j));
      out[3 * n] = c[0];
      out[3 * n + 1] = 0.5 * (c[1] + c[2]);
      out[3 * n + 2] = c[3];
    }
  return out;
}

/// Samples a one-form on every node, zeroing the boundary rows.
inline GridOneForm sample_one_form(const TensorGrid& G, const SymTensorField& p) {
  GridOneForm out(2 * G.nodes(), 0.0);
  for (int i = 1; i < G.n_r - 1; ++i)
    for (int j = 0; j < G.n_phi; ++j) {
      const std::size_t n = G.node(i, j);
      const Components c = p.value(G.point(i, j));
      out[2 * n] = c[0];
      out[2 * n + 1] = c[1];
    }
  return out;
}

/// D_h p on every node.
inline GridTwoTensor apply_D(const TensorGrid& G, const GridOneForm& p) {
  GridTwoTensor f(3 * G.nodes(), 0.0);
  const double* q = p.data();
  parallel_for(G.n_r, [&](std::size_t row) {
    const int i = static_cast<int>(row);
    for (int j = 0; j < G.n_phi; ++j) {
      const std::size_t n = G.node(i, j);
      const Christoffel& Gm = G.gamma[n];
      const double pr = q[2 * n], pp = q[2 * n + 1];
      const double drr = detail::d_r(G, q, 2, 0, i, j);
      const double drp = detail::d_r(G, q, 2, 1, i, j);
      const double dpr = detail::d_phi(G, q, 2, 0, i, j);
      const double dpp = detail::d_phi(G, q, 2, 1, i, j);
      f[3 * n] = drr - Gm[0][0][0] * pr - Gm[1][0][0] * pp;
      f[3 * n + 1] = 0.5 * (drp + dpr) - Gm[0][0][1] * pr - Gm[1][0][1] * pp;
      f[3 * n + 2] = dpp - Gm[0][1][1] * pr - Gm[1][1][1] * pp;
    }
  });
  return f;
}

/// Covector M2 f: F^{ab} = w sqrt(g) g^{ac} g^{bd} f_cd, stored as (F^rr, 2 F^rphi, F^phiphi) so that
/// <D p, f>_{M2} = sum_n F . (D p) componentwise.
inline GridTwoTensor apply_M2(const TensorGrid& G, const GridTwoTensor& f) {
  GridTwoTensor out(f.size());
  parallel_for(G.nodes(), [&](std::size_t n) {
    const Mat2& gi = G.ginv[n];
    const Mat2 fm{{{f[3 * n], f[3 * n + 1]}, {f[3 * n + 1], f[3 * n + 2]}}};
    const Mat2 F = matmul(matmul(gi, fm), gi);
    const double W = G.w[n] * G.sqrtg[n];
    out[3 * n] = W * F[0][0];
    out[3 * n + 1] = 2.0 * W * F[0][1];
    out[3 * n + 2] = W * F[1][1];
  });
  return out;
}

/// D_h^T applied to a covector in the layout of apply_M2; boundary rows of the result are zeroed.
inline GridOneForm apply_DT(const TensorGrid& G, const GridTwoTensor& F) {
  GridOneForm out(2 * G.nodes(), 0.0);
  double* o = out.data();
  for (int i = 0; i < G.n_r; ++i)
    for (int j = 0; j < G.n_phi; ++j) {
      const std::size_t n = G.node(i, j);
      const Christoffel& Gm = G.gamma[n];
      const double Frr = F[3 * n], Frp = F[3 * n + 1], Fpp = F[3 * n + 2];
      detail::d_r_transpose(G, Frr, o, 2, 0, i, j);
      detail::d_r_transpose(G, 0.5 * Frp, o, 2, 1, i, j);
      detail::d_phi_transpose(G, 0.5 * Frp, o, 2, 0, i, j);
      detail::d_phi_transpose(G, Fpp, o, 2, 1, i, j);
      o[2 * n] -= Frr * Gm[0][0][0] + Frp * Gm[0][0][1] + Fpp * Gm[0][1][1];
      o[2 * n + 1] -= Frr * Gm[1][0][0] + Frp * Gm[1][0][1] + Fpp * Gm[1][1][1];
    }
  for (int j = 0; j < G.n_phi; ++j) {
    for (int c = 0; c < 2; ++c) {
      out[2 * G.node(0, j) + c] = 0.0;
      out[2 * G.node(G.n_r - 1, j) + c] = 0.0;
    }
  }
  return out;
}

/// M1^{-1} applied to a covector on interior nodes: (w sqrt(g) g^{-1})^{-1}.
inline GridOneForm apply_M1_inverse(const TensorGrid& G, const GridOneForm& q) {
  GridOneForm out(q.size(), 0.0);
  for (int i = 1; i < G.n_r - 1; ++i)
    for (int j = 0; j < G.n_phi; ++j) {
      const std::size_t n = G.node(i, j);
      const double W = G.w[n] * G.sqrtg[n];
      const Vec2 v = matvec(G.g[n], Vec2{q[2 * n], q[2 * n + 1]});
      out[2 * n] = v[0] / W;
      out[2 * n + 1] = v[1] / W;
    }
  return out;
}

inline double norm_M2(const TensorGrid& G, const GridTwoTensor& f) {
  const GridTwoTensor F = apply_M2(G, f);
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) s += F[i] * f[i];
  return std::sqrt(std::max(0.0, s));
}

inline double norm_M1(const TensorGrid& G, const GridOneForm& p) {
  double s = 0.0;
  for (int i = 1; i < G.n_r - 1; ++i)
    for (int j = 0; j < G.n_phi; ++j) {
      const std::size_t n = G.node(i, j);
      s += G.w[n] * G.sqrtg[n] * form(G.ginv[n], Vec2{p[2 * n], p[2 * n + 1]}, Vec2{p[2 * n], p[2 * n + 1]});
    }
  return std::sqrt(s);
}

inline double inner_M2(const TensorGrid& G, const GridTwoTensor& a, const GridTwoTensor& b) {
  const GridTwoTensor F = apply_M2(G, a);
  double s = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) s += F[i] * b[i];
  return s;
}

/// D_h^* f = M1^{-1} D_h^T M2 f.
inline GridOneForm apply_Dstar(const TensorGrid& G, const GridTwoTensor& f) {
  return apply_M1_inverse(G, apply_DT(G, apply_M2(G, f)));
}

/// A = D_h^T M2 D_h (= M1 Delta_h), acting on full-grid one-forms with zero boundary rows.
inline GridOneForm apply_A(const TensorGrid& G, const GridOneForm& p) { return apply_DT(G, apply_M2(G, apply_D(G, p))); }

struct DecomposeOptions {
  double cg_tol = 1e-8;
  int max_iter = 10000;
  bool jacobi_precond = false;
};

struct SolenoidalDecomposition {
  TensorGrid grid;
  GridTwoTensor f;
  GridTwoTensor fs;
  GridOneForm p;
  double dstar_residual = 0.0;      // ||D_h^* f^s||_{M1} / ||f||_{M2}
  double reassembly_residual = 0.0;  // max |f - f^s - D_h p| / max |f|
  double boundary_max_p = 0.0;
  double norm_f = 0.0;
  double norm_fs = 0.0;
  double norm_p = 0.0;  // ||p||_{M1}
  int iterations = 0;
  std::vector<double> history;
};

/// Diagonal of A for the optional Jacobi preconditioner (assembled column by column on a few probes).
inline GridOneForm diagonal_A(const TensorGrid& G) {
  GridOneForm d(2 * G.nodes(), 0.0);
  // Probing with stride 5 in r and 5 in phi keeps stencil footprints disjoint.
  for (int si = 0; si < 5; ++si)
    for (int sj = 0; sj < 5; ++sj)
      for (int c = 0; c < 2; ++c) {
        GridOneForm e(2 * G.nodes(), 0.0);
        for (int i = 1 + si; i < G.n_r - 1; i += 5)
          for (int j = sj; j < G.n_phi; j += 5) e[2 * G.node(i, j) + c] = 1.0;
        if (G.n_phi % 5 != 0) {
          // Fall back to exact columns when the periodic direction breaks the probing pattern.
          for (int i = 1 + si; i < G.n_r - 1; i += 5)
            for (int j = sj; j < G.n_phi; j += 5) {
              GridOneForm u(2 * G.nodes(), 0.0);
              u[2 * G.node(i, j) + c] = 1.0;
              d[2 * G.node(i, j) + c] = apply_A(G, u)[2 * G.node(i, j) + c];
            }
          continue;
        }
        const GridOneForm Ae = apply_A(G, e);
        for (int i = 1 + si; i < G.n_r - 1; i += 5)
          for (int j = sj; j < G.n_phi; j += 5) d[2 * G.node(i, j) + c] = Ae[2 * G.node(i, j) + c];
      }
  return d;
}

/// Grid-level decomposition of sampled data f = f^s + D_h p.
inline SolenoidalDecomposition solenoidal_decompose_grid(const TensorGrid& G, const GridTwoTensor& f,
                                                         const DecomposeOptions& opt = {}) {
  SolenoidalDecomposition dec;
  dec.grid = G;
  dec.f = f;
  dec.norm_f = norm_M2(G, f);
  const GridOneForm b = apply_DT(G, apply_M2(G, f));
  auto measure = [&](const Vector& r) {
    const GridOneForm z = apply_M1_inverse(G, r);
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += r[i] * z[i];
    return std::sqrt(std::max(0.0, s));
  };
  std::function<void(const Vector&, Vector&)> pre;
  GridOneForm diag;
  if (opt.jacobi_precond) {
    diag = diagonal_A(G);
    pre = [&](const Vector& in, Vector& out) {
      out.assign(in.size(), 0.0);
      for (std::size_t i = 0; i < in.size(); ++i)
        if (diag[i] > 0.0) out[i] = in[i] / diag[i];
    };
  }
  CGOptions co;
  co.tol = opt.cg_tol;
  co.max_iter = opt.max_iter;
  const CGResult cg = conjugate_gradient([&](const Vector& x, Vector& y) { y = apply_A(G, x); }, b, pre, measure,
                                         opt.cg_tol * dec.norm_f, co);
  dec.p = cg.x;
  dec.iterations = cg.iterations;
  dec.history = cg.history;
  const GridTwoTensor Dp = apply_D(G, dec.p);
  dec.fs.resize(f.size());
  double fmax = 0.0, rmax = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    dec.fs[i] = f[i] - Dp[i];
    fmax = std::max(fmax, std::abs(f[i]));
  }
  for (std::size_t i = 0; i < f.size(); ++i) rmax = std::max(rmax, std::abs(f[i] - dec.fs[i] - Dp[i]));
  dec.reassembly_residual = fmax > 0.0 ? rmax / fmax : 0.0;
  dec.dstar_residual = dec.norm_f > 0.0 ? measure(apply_DT(G, apply_M2(G, dec.fs))) / dec.norm_f : 0.0;
  for (int j = 0; j < G.n_phi; ++j)
    for (int c = 0; c < 2; ++c)
      dec.boundary_max_p = std::max({dec.boundary_max_p, std::abs(dec.p[2 * G.node(0, j) + c]),
                                     std::abs(dec.p[2 * G.node(G.n_r - 1, j) + c])});
  dec.norm_fs = norm_M2(G, dec.fs);
  dec.norm_p = norm_M1(G, dec.p);
  return dec;
}

/// Solves Delta_h p = D_h^* f with p = 0 on dM and returns f^s = f - D_h p on the (n_r x n_phi) grid.
inline SolenoidalDecomposition solenoidal_decompose(const SymTensorField& f, const MetricField& g, int n_r = 32,
                                                    int n_phi = 64, const DecomposeOptions& opt = {}) {
  if (f.rank() != 2) throw ParameterError("solenoidal_decompose: rank-2 input required");
  const TensorGrid G = make_tensor_grid(g, n_r, n_phi);
  return solenoidal_decompose_grid(G, sample_two_tensor(G, f), opt);
}

}  // namespace geoxray
