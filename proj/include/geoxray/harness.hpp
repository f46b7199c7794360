// Exponent audit, discrete s-injectivity probe, experiment drivers and report emission.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "geoxray/boundary_distance.hpp"
#include "geoxray/config.hpp"
#include "geoxray/flow.hpp"
#include "geoxray/geometry.hpp"
#include "geoxray/parallel.hpp"
#include "geoxray/quadrature.hpp"
#include "geoxray/tencalc.hpp"
#include "geoxray/xray.hpp"

namespace geoxray {

// ---------------------------------------------------------------------------
// exponent audit

struct ExponentAudit {
  int n = 2;
  int N = 0;
  double q = 0.0, p = 0.0, delta = 0.0;
  double s = 0.0;      // Sobolev exponent n (1/q - 1/2)
  double gamma = 0.0;  // N / (s + 1/2 + N)
  double theta = 0.0;  // interpolation exponent
  double product = 0.0;
  bool verdict = false;
};

inline int exponent_N(int n) { return (n + 1) / 2 + 1; }

inline ExponentAudit exponent_audit(int n, double q, double p, double delta) {
  if (n < 2) throw ParameterError("exponent_audit: n must be >= 2 (got " + std::to_string(n) + ")");
  if (!(q > 1.0 && q < 2.0)) throw ParameterError("exponent_audit: q must lie in (1, 2) (got " + std::to_string(q) + ")");
  if (!(p > 1.0)) throw ParameterError("exponent_audit: p must exceed 1 (got " + std::to_string(p) + ")");
  if (!(delta >= 0.0)) throw ParameterError("exponent_audit: delta must be >= 0");
  ExponentAudit a;
  a.n = n;
  a.N = exponent_N(n);
  a.q = q;
  a.p = p;
  a.delta = delta;
  a.s = n * (1.0 / q - 0.5);
  a.gamma = a.N / (a.s + 0.5 + a.N);
  // 1/(q + delta) = theta + (1 - theta)/p
  a.theta = (1.0 / (q + delta) - 1.0 / p) / (1.0 - 1.0 / p);
  if (!(a.theta > 0.0 && a.theta <= 1.0))
    throw ParameterError("exponent_audit: theta = " + std::to_string(a.theta) + " outside (0, 1]; need q + delta < p");
  a.product = 2.0 * a.gamma * a.theta;
  a.verdict = a.product > 1.0;
  return a;
}

/// q -> 1, p -> infinity, delta -> 0 limit 2N / (n/2 + 1/2 + N), as the exact fraction 4N / (n + 1 + 2N).
struct ExponentLimit {
  int n = 2;
  int N = 0;
  long numerator = 0;
  long denominator = 1;
  double value = 0.0;
  bool verdict = false;
};

inline ExponentLimit exponent_limit(int n) {
  if (n < 2) throw ParameterError("exponent_limit: n must be >= 2");
  ExponentLimit l;
  l.n = n;
  l.N = exponent_N(n);
  long a = 4L * l.N, b = n + 1L + 2L * l.N;
  const long d = std::gcd(a, b);
  l.numerator = a / d;
  l.denominator = b / d;
  l.value = static_cast<double>(l.numerator) / l.denominator;
  l.verdict = l.numerator > l.denominator;
  return l;
}

/// First admissible (q, p, delta) on a scan towards the limit, if any.
inline std::optional<ExponentAudit> find_admissible_exponents(int n) {
  for (double dq : {0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 1e-3, 1e-4})
    for (double p : {10.0, 100.0, 1e3, 1e4, 1e6})
      for (double delta : {1e-2, 1e-3, 1e-4, 0.0}) {
        const ExponentAudit a = exponent_audit(n, 1.0 + dq, p, delta);
        if (a.verdict) return a;
      }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// discrete s-injectivity probe

struct ProbeOptions {
  int n_r = 16;       // radial Legendre modes
  int n_phi = 32;     // Fourier modes
  int fan_s = 0;      // 0: 3 n_phi / 2 (ignored on the rotation-averaged path)
  int fan_theta = 0;  // 0: 4 max(n_r, n_phi)
  double grading = 3.0;  // angle nodes graded towards trapped angles by this power (1: uniform)
  XrayOptions xray = [] {
    XrayOptions o;
    o.step = 2.5e-3;
    return o;
  }();
  int extra_r = 8;    // additional radial modes for the one-form (potential) space
  int extra_phi = 2;  // additional Fourier modes for the one-form space
  double rank_tol = 1e-8;  // solenoidal directions: eigenvalues of the projected Gram matrix above rank_tol * max
  bool use_symmetry = true;  // surfaces of revolution: average exactly over the boundary parameter
  int block = 256;           // rays per assembly block
};

struct ProbeResult {
  int n_r = 0, n_phi = 0;
  bool symmetric = false;          // rotation-averaged assembly was used
  std::size_t dim_tensor = 0;
  std::size_t dim_potential = 0;   // tensor directions whose solenoidal part falls below the rank tolerance
  std::size_t dim_solenoidal = 0;
  std::size_t rays = 0, flagged = 0;
  double sigma_min = 0.0;            // solenoidal subspace
  double sigma_max = 0.0;            // solenoidal subspace
  double sigma_median = 0.0;         // solenoidal subspace
  double potential_sigma_max = 0.0;  // potential subspace
  double separation = 0.0;           // sigma_min / potential_sigma_max
  std::vector<double> spectrum;      // solenoidal singular values, ascending
  std::vector<double> weakest_mode;  // tensor-basis coefficients of the sigma_min direction, index (c, k, j)
};

namespace detail {

// Values and r-derivatives of the weighted radial basis w(t)^e P_k(t), t affine in r.
struct RadialBasis {
  double r0 = -1.0, r1 = 1.0;
  int K = 0;
  int e = 2;
  void eval(double r, double* val, double* der) const {
    const double dt = 2.0 / (r1 - r0);
    const double t = std::clamp((2.0 * r - r0 - r1) / (r1 - r0), -1.0, 1.0);
    const double w = 1.0 - t * t;
    double we1 = 1.0;  // w^(e-1)
    for (int i = 1; i < e; ++i) we1 *= w;
    const double we = e > 0 ? we1 * w : 1.0, dwe = e > 0 ? -2.0 * t * e * we1 : 0.0;
    double pm = 0.0, p = 1.0, dpm = 0.0, dp = 0.0;
    for (int k = 0; k < K; ++k) {
      val[k] = we * p;
      der[k] = (dwe * p + we * dp) * dt;
      const double pn = ((2.0 * k + 1.0) * t * p - k * pm) / (k + 1.0);
      const double dpn = dpm + (2.0 * k + 1.0) * p;
      pm = p;
      p = pn;
      dpm = dp;
      dp = dpn;
    }
  }
};

// Fourier index j: 0 -> 1, odd j -> cos(m phi), even j -> sin(m phi), m = (j + 1) / 2.
inline int fourier_frequency(int j) { return (j + 1) / 2; }

// Selected Fourier functions and their derivatives at phi (angle-addition recurrence).
inline void fourier_basis(const std::vector<int>& idx, double phi, double* val, double* der) {
  const int top = idx.empty() ? 0 : *std::max_element(idx.begin(), idx.end());
  const int mmax = fourier_frequency(top);
  const double c1 = std::cos(phi), s1 = std::sin(phi);
  thread_local std::vector<double> cs, sn;
  cs.resize(mmax + 1);
  sn.resize(mmax + 1);
  cs[0] = 1.0;
  sn[0] = 0.0;
  for (int m = 1; m <= mmax; ++m) {
    cs[m] = cs[m - 1] * c1 - sn[m - 1] * s1;
    sn[m] = sn[m - 1] * c1 + cs[m - 1] * s1;
  }
  for (std::size_t q = 0; q < idx.size(); ++q) {
    const int j = idx[q], m = fourier_frequency(j);
    if (j == 0) {
      val[q] = 1.0;
      der[q] = 0.0;
    } else if (j % 2 == 1) {
      val[q] = cs[m];
      der[q] = -m * sn[m];
    } else {
      val[q] = sn[m];
      der[q] = m * cs[m];
    }
  }
}

inline std::vector<int> index_range(int n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Tensor basis (c, k, j) -> w^2 P_k T_jv[j] E_c with E = dr^2, dr.dphi + dphi.dr, dphi^2;
// one-form basis (c, k, j) -> w^3 P_k T_jq[j] dx^c.
struct ProbeBasis {
  RadialBasis rt, rq;
  int K = 0, KQ = 0;
  std::vector<int> jv, jq;
  int L() const { return static_cast<int>(jv.size()); }
  int LQ() const { return static_cast<int>(jq.size()); }
  std::size_t nV() const { return 3u * K * jv.size(); }
  std::size_t nQ() const { return 2u * KQ * jq.size(); }
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// I_2 of every tensor basis element and of D of every one-form basis element along one ray,
// as sums over the trapezoid samples written as small products (samples x modes).
inline bool probe_ray(const MetricField& g, const ProbeBasis& B, const PhasePoint& z, const XrayOptions& opt,
                      double* rowV, double* rowQ) {
  struct Sample {
    double t;
    Vec2 x, v;
  };
  std::vector<Sample> samples;
  FlowOptions fo;
  fo.step = opt.step;
  FlowExit ex;
  try {
    ex = flow_visit(g, z, opt.horizon, fo, [&](double t, const FlowState& s) {
      samples.push_back({t, s.x, s.v});
      return true;
    });
  } catch (const TangencyError&) {
    return false;
  }
  if (ex.kind != ExitKind::boundary) return false;
  const Eigen::Index S = static_cast<Eigen::Index>(samples.size());
  const int L = B.L(), LQ = B.LQ();
  RowMatrix Rt(S, B.K), dRt(S, B.K), Rq(S, B.KQ), dRq(S, B.KQ), T(S, L), dT(S, L), TQ(S, LQ), dTQ(S, LQ);
  Eigen::MatrixXd wV(S, 3), wQ(S, 6);  // per-sample weights of the products below
  for (Eigen::Index i = 0; i < S; ++i) {
    const double t0 = samples[i > 0 ? i - 1 : i].t, t1 = samples[i + 1 < S ? i + 1 : i].t;
    const double wt = 0.5 * (t1 - t0);
    const Vec2& x = samples[i].x;
    const Vec2& v = samples[i].v;
    B.rt.eval(x[0], Rt.row(i).data(), dRt.row(i).data());
    B.rq.eval(x[0], Rq.row(i).data(), dRq.row(i).data());
    fourier_basis(B.jv, x[1], T.row(i).data(), dT.row(i).data());
    fourier_basis(B.jq, x[1], TQ.row(i).data(), dTQ.row(i).data());
    wV(i, 0) = wt * v[0] * v[0];
    wV(i, 1) = wt * 2.0 * v[0] * v[1];
    wV(i, 2) = wt * v[1] * v[1];
    const auto G = christoffel_symbols(g, x);
    for (int cc = 0; cc < 2; ++cc) {
      double gvv = 0.0;
      for (int p = 0; p < 2; ++p)
        for (int q = 0; q < 2; ++q) gvv += G[cc][p][q] * v[p] * v[q];
      // (Dq)(v, v) = v^c (v . grad chi) - chi Gamma^c(v, v)
      wQ(i, 3 * cc) = wt * v[cc] * v[0];
      wQ(i, 3 * cc + 1) = wt * v[cc] * v[1];
      wQ(i, 3 * cc + 2) = -wt * gvv;
    }
  }
  const Eigen::Index KL = static_cast<Eigen::Index>(B.K) * L, KLQ = static_cast<Eigen::Index>(B.KQ) * LQ;
  for (int cc = 0; cc < 3; ++cc) {
    Eigen::Map<RowMatrix> out(rowV + cc * KL, B.K, L);
    out.noalias() = Rt.transpose() * (wV.col(cc).asDiagonal() * T);
  }
  for (int cc = 0; cc < 2; ++cc) {
    Eigen::Map<RowMatrix> out(rowQ + cc * KLQ, B.KQ, LQ);
    out.noalias() = dRq.transpose() * (wQ.col(3 * cc).asDiagonal() * TQ);
    const RowMatrix mix = wQ.col(3 * cc + 1).asDiagonal() * dTQ + wQ.col(3 * cc + 2).asDiagonal() * TQ;
    out.noalias() += Rq.transpose() * mix;
  }
  return true;
}

// L^2(g) Gram factors: rows of Phi such that <f_i, f_j> = (Phi^T Phi)_ij, accumulated by node blocks.
inline void probe_grams(const MetricField& g, const ProbeBasis& B, int nq_r, int nq_phi, Eigen::MatrixXd& M,
                        Eigen::MatrixXd& C, Eigen::MatrixXd& Gq) {
  const std::size_t nV = B.nV(), nQ = B.nQ();
  const int L = B.L(), LQ = B.LQ();
  const std::size_t KL = static_cast<std::size_t>(B.K) * L, KLQ = static_cast<std::size_t>(B.KQ) * LQ;
  M.setZero(nV, nV);
  C.setZero(nV, nQ);
  Gq.setZero(nQ, nQ);
  const QuadratureRule gl = gauss_legendre(nq_r, g.domain.r_min, g.domain.r_max);
  const int rows_per_node = 3;
  const int block_nodes = 128;
  const std::size_t n_nodes = static_cast<std::size_t>(nq_r) * nq_phi;
  for (std::size_t n0 = 0; n0 < n_nodes; n0 += block_nodes) {
    const std::size_t nb = std::min<std::size_t>(block_nodes, n_nodes - n0);
    Eigen::MatrixXd PV = Eigen::MatrixXd::Zero(rows_per_node * nb, nV), PQ = Eigen::MatrixXd::Zero(rows_per_node * nb, nQ);
    parallel_for(nb, [&](std::size_t b) {
      const std::size_t node = n0 + b;
      const int i = static_cast<int>(node / nq_phi), j = static_cast<int>(node % nq_phi);
      const Vec2 x{gl.nodes[i], kTwoPi * j / nq_phi};
      const double wq = gl.weights[i] * kTwoPi / nq_phi;
      const Mat2 gm = to_mat(g.tensor.value(x));
      const Mat2 gi = inverse(gm);
      const double sq = std::sqrt(det(gm));
      // <f, h> = g^ac g^bd f_ab h_cd on coefficient vectors (f_rr, f_rphi, f_phiphi)
      const int idx[3][2] = {{0, 0}, {0, 1}, {1, 1}};
      Eigen::Matrix3d Hs;
      for (int p = 0; p < 3; ++p)
        for (int q = 0; q < 3; ++q) {
          double s = 0.0;
          for (int u1 = 0; u1 < (p == 1 ? 2 : 1); ++u1)
            for (int u2 = 0; u2 < (q == 1 ? 2 : 1); ++u2) {
              const int a = idx[p][u1], bb = idx[p][1 - u1], c = idx[q][u2], d = idx[q][1 - u2];
              s += gi[a][c] * gi[bb][d];
            }
          Hs(p, q) = s * wq * sq;
        }
      const Eigen::LLT<Eigen::Matrix3d> llt(Hs);
      const Eigen::Matrix3d U = llt.matrixU();
      std::vector<double> Rt(B.K), dRt(B.K), Rq(B.KQ), dRq(B.KQ), T(L), dT(L), TQ(LQ), dTQ(LQ);
      B.rt.eval(x[0], Rt.data(), dRt.data());
      B.rq.eval(x[0], Rq.data(), dRq.data());
      fourier_basis(B.jv, x[1], T.data(), dT.data());
      fourier_basis(B.jq, x[1], TQ.data(), dTQ.data());
      const auto Gm = christoffel_symbols(g, x);
      // tensor basis: coefficient vector e_c scaled by Rt_k T_j, mapped by U
      for (int c = 0; c < 3; ++c)
        for (int k = 0; k < B.K; ++k)
          for (int jj = 0; jj < L; ++jj) {
            const double val = Rt[k] * T[jj];
            for (int row = 0; row < 3; ++row)
              PV(rows_per_node * b + row, c * KL + k * L + jj) = U(row, c) * val;
          }
      // D of the one-form chi dx^c: (Dq)_ab = 1/2 (d_a chi delta_bc + d_b chi delta_ac) - chi Gamma^c_ab
      for (int c = 0; c < 2; ++c)
        for (int k = 0; k < B.KQ; ++k)
          for (int jj = 0; jj < LQ; ++jj) {
            const double chi = Rq[k] * TQ[jj];
            const Vec2 dchi{dRq[k] * TQ[jj], Rq[k] * dTQ[jj]};
            double comp[3];
            for (int p = 0; p < 3; ++p) {
              const int a = idx[p][0], bb = idx[p][1];
              comp[p] = 0.5 * (dchi[a] * (bb == c) + dchi[bb] * (a == c)) - chi * Gm[c][a][bb];
            }
            for (int row = 0; row < 3; ++row) {
              double s = 0.0;
              for (int p = 0; p < 3; ++p) s += U(row, p) * comp[p];
              PQ(rows_per_node * b + row, c * KLQ + k * LQ + jj) = s;
            }
          }
    });
    M.noalias() += PV.transpose() * PV;
    C.noalias() += PV.transpose() * PQ;
    Gq.noalias() += PQ.transpose() * PQ;
  }
}

// One decoupled piece of the discrete problem: Gram matrices, normal matrices and the
// global tensor-basis index of each local tensor column.
struct ProbeBlock {
  Eigen::MatrixXd M, C, Gq, NV, NQ;
  std::vector<std::size_t> columns;
};

inline void solve_probe_blocks(const std::vector<ProbeBlock>& blocks, double rank_tol, std::size_t n_tensor,
                               ProbeResult& res) {
  struct Factored {
    Eigen::MatrixXd Lq;
    Eigen::VectorXd evals;
    Eigen::MatrixXd evecs;
  };
  std::vector<Factored> fac(blocks.size());
  double smax = 0.0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const ProbeBlock& P = blocks[b];
    const Eigen::LLT<Eigen::MatrixXd> llt(P.Gq);
    if (P.Gq.size() > 0 && llt.info() != Eigen::Success)
      throw ParameterError("sinjectivity_probe: potential basis Gram matrix not positive definite");
    fac[b].Lq = P.Gq.size() > 0 ? Eigen::MatrixXd(llt.matrixL()) : Eigen::MatrixXd();
    if (P.M.size() == 0) continue;
    // Gram matrix of the solenoidal parts f - P_{D Q} f: S = M - C Gq^{-1} C^T
    Eigen::MatrixXd S = P.M;
    if (P.Gq.size() > 0) {
      const Eigen::MatrixXd W = fac[b].Lq.triangularView<Eigen::Lower>().solve(P.C.transpose());
      S -= W.transpose() * W;
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ss(0.5 * (S + S.transpose()));
    fac[b].evals = ss.eigenvalues();
    fac[b].evecs = ss.eigenvectors();
    smax = std::max(smax, fac[b].evals.maxCoeff());
  }
  double best = INFINITY;
  res.weakest_mode.assign(n_tensor, 0.0);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const ProbeBlock& P = blocks[b];
    if (P.NQ.size() > 0) {
      // potential subspace, whitened by its own Gram matrix
      const auto Lq = fac[b].Lq.triangularView<Eigen::Lower>();
      const Eigen::MatrixXd Y = Lq.solve(Lq.solve(P.NQ).transpose());
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eq(0.5 * (Y + Y.transpose()), Eigen::EigenvaluesOnly);
      res.potential_sigma_max = std::max(res.potential_sigma_max, std::sqrt(std::max(0.0, eq.eigenvalues().maxCoeff())));
    }
    if (P.M.size() == 0) continue;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < fac[b].evals.size(); ++i)
      if (fac[b].evals(i) > rank_tol * smax) keep.push_back(i);
    res.dim_solenoidal += keep.size();
    if (keep.empty()) continue;
    Eigen::MatrixXd X(P.M.rows(), keep.size());
    for (std::size_t c = 0; c < keep.size(); ++c)
      X.col(c) = fac[b].evecs.col(keep[c]) / std::sqrt(fac[b].evals(keep[c]));
    const Eigen::MatrixXd H = X.transpose() * P.NV * X;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (H + H.transpose()));
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
      res.spectrum.push_back(std::sqrt(std::max(0.0, es.eigenvalues()(i))));
    if (es.eigenvalues()(0) < best) {
      best = es.eigenvalues()(0);
      const Eigen::VectorXd w0 = X * es.eigenvectors().col(0);
      std::fill(res.weakest_mode.begin(), res.weakest_mode.end(), 0.0);
      for (Eigen::Index i = 0; i < w0.size(); ++i) res.weakest_mode[P.columns[i]] = w0(i);
    }
  }
  if (res.spectrum.empty()) throw ParameterError("sinjectivity_probe: rank-deficient solenoidal basis (empty)");
  std::sort(res.spectrum.begin(), res.spectrum.end());
  res.dim_potential = n_tensor - res.dim_solenoidal;
  res.sigma_min = res.spectrum.front();
  res.sigma_max = res.spectrum.back();
  res.sigma_median = res.spectrum[res.spectrum.size() / 2];
  res.separation = res.potential_sigma_max > 0.0 ? res.sigma_min / res.potential_sigma_max : INFINITY;
}

// Fan rows (scaled by sqrt of the fan weight) for every node, in blocks; failed rays give zero rows.
inline void probe_rows(const MetricField& g, const ProbeBasis& B, const BoundaryFan& fan, const ProbeOptions& opt,
                       const std::function<void(const RowMatrix&, const RowMatrix&)>& sink, ProbeResult& res) {
  for (std::size_t j0 = 0; j0 < fan.nodes.size(); j0 += opt.block) {
    const std::size_t nb = std::min<std::size_t>(opt.block, fan.nodes.size() - j0);
    RowMatrix RV = RowMatrix::Zero(nb, B.nV()), RQ = RowMatrix::Zero(nb, B.nQ());
    std::vector<char> ok(nb, 0);
    parallel_for(nb, [&](std::size_t b) {
      const FanNode& n = fan.nodes[j0 + b];
      ok[b] = probe_ray(g, B, n.z, opt.xray, RV.row(b).data(), RQ.row(b).data());
      if (ok[b]) {
        const double s = std::sqrt(n.weight);
        RV.row(b) *= s;
        RQ.row(b) *= s;
      } else {
        RV.row(b).setZero();
        RQ.row(b).setZero();
      }
    });
    for (char o : ok) res.flagged += !o;
    sink(RV, RQ);
  }
  res.rays += fan.nodes.size();
}

inline std::vector<QuadratureRule> probe_angle_rules(const MetricField& g, int n_theta, double grading) {
  std::vector<QuadratureRule> rules;
  for (const auto& centers : trapped_angles(g))
    rules.push_back(graded_midpoint(n_theta, -0.5 * kPi, 0.5 * kPi, centers, grading));
  return rules;
}

// Normal matrix of one frequency block from the rows of a single boundary point: the average over
// rotations of (A cos - B sin, B cos + A sin) is [[P, Q], [-Q, P]] with P = (A'A + B'B)/2, Q = (A'B - B'A)/2.
inline Eigen::MatrixXd rotation_average(const RowMatrix& R, int comps, int K, int stride_L, int m,
                                        const std::vector<int>& local) {
  const int n = comps * K;
  Eigen::MatrixXd A(R.rows(), n), Bm(R.rows(), n);
  for (int c = 0; c < comps; ++c)
    for (int k = 0; k < K; ++k) {
      const int base = (c * K + k) * stride_L;
      A.col(c * K + k) = R.col(base + (m == 0 ? 0 : 2 * m - 1));
      Bm.col(c * K + k) = m == 0 ? Eigen::VectorXd::Zero(R.rows()) : Eigen::VectorXd(R.col(base + 2 * m));
    }
  const Eigen::MatrixXd P = m == 0 ? Eigen::MatrixXd(A.transpose() * A)
                                   : Eigen::MatrixXd(0.5 * (A.transpose() * A + Bm.transpose() * Bm));
  const Eigen::MatrixXd Q = 0.5 * (A.transpose() * Bm - Bm.transpose() * A);
  const int Lm = static_cast<int>(local.size());
  Eigen::MatrixXd N(n * Lm, n * Lm);
  for (int a = 0; a < n; ++a)
    for (int p = 0; p < Lm; ++p)
      for (int b = 0; b < n; ++b)
        for (int q = 0; q < Lm; ++q) {
          const bool cp = local[p] % 2 == 1 || local[p] == 0, cq = local[q] % 2 == 1 || local[q] == 0;
          double v;
          if (cp == cq)
            v = P(a, b);
          else
            v = cp ? Q(a, b) : -Q(a, b);
          // local column layout (c, k, j) = a * Lm + j
          N(a * Lm + p, b * Lm + q) = v;
        }
  return N;
}

}  // namespace detail

/// Smallest singular value of f -> I_2 f (fan-weighted) on a Galerkin space of weakly solenoidal tensors,
/// and the largest on the potential subspace.
inline ProbeResult sinjectivity_probe(const MetricField& g, const ProbeOptions& opt = {}) {
  if (!g.domain.is_annulus()) throw ParameterError("sinjectivity_probe: annulus charts only");
  if (opt.n_r < 2 || opt.n_phi < 3) throw ParameterError("sinjectivity_probe: need n_r >= 2 and n_phi >= 3");
  detail::ProbeBasis B;
  B.K = opt.n_r;
  B.rt = {g.domain.r_min, g.domain.r_max, B.K, 2};
  B.KQ = opt.n_r + opt.extra_r;
  B.rq = {g.domain.r_min, g.domain.r_max, B.KQ, 3};
  const int L = opt.n_phi, LQ = opt.n_phi + opt.extra_phi;
  B.jv = detail::index_range(L);
  B.jq = detail::index_range(LQ);
  const int nq_r = B.KQ + 24, nq_phi = 2 * LQ + 8;
  const int n_theta = opt.fan_theta > 0 ? opt.fan_theta : 4 * std::max(opt.n_r, opt.n_phi);
  const std::vector<QuadratureRule> rules = detail::probe_angle_rules(g, n_theta, opt.grading);
  ProbeResult res;
  res.n_r = opt.n_r;
  res.n_phi = opt.n_phi;
  res.dim_tensor = B.nV();
  std::vector<detail::ProbeBlock> blocks;

  if (g.revolution && opt.use_symmetry) {
    // rows from one boundary point per component, with complete cos/sin pairs
    res.symmetric = true;
    const int mV = detail::fourier_frequency(L - 1), mQ = detail::fourier_frequency(LQ - 1);
    detail::ProbeBasis Bf = B;
    Bf.jv = detail::index_range(2 * mV + 1);
    Bf.jq = detail::index_range(2 * mQ + 1);
    const BoundaryFan fan = boundary_fan(g, 1, rules);
    detail::RowMatrix RV(0, Bf.nV()), RQ(0, Bf.nQ());
    detail::probe_rows(
        g, Bf, fan, opt,
        [&](const detail::RowMatrix& a, const detail::RowMatrix& b) {
          RV.conservativeResize(RV.rows() + a.rows(), Eigen::NoChange);
          RV.bottomRows(a.rows()) = a;
          RQ.conservativeResize(RQ.rows() + b.rows(), Eigen::NoChange);
          RQ.bottomRows(b.rows()) = b;
        },
        res);
    for (int m = 0; m <= mQ; ++m) {
      detail::ProbeBasis Bm = B;
      Bm.jv.clear();
      Bm.jq.clear();
      for (int j = 0; j < L; ++j)
        if (detail::fourier_frequency(j) == m) Bm.jv.push_back(j);
      for (int j = 0; j < LQ; ++j)
        if (detail::fourier_frequency(j) == m) Bm.jq.push_back(j);
      detail::ProbeBlock P;
      detail::probe_grams(g, Bm, nq_r, nq_phi, P.M, P.C, P.Gq);
      if (!Bm.jv.empty()) P.NV = detail::rotation_average(RV, 3, B.K, Bf.L(), m, Bm.jv);
      P.NQ = detail::rotation_average(RQ, 2, B.KQ, Bf.LQ(), m, Bm.jq);
      for (int c = 0; c < 3 && !Bm.jv.empty(); ++c)
        for (int k = 0; k < B.K; ++k)
          for (int j : Bm.jv) P.columns.push_back((static_cast<std::size_t>(c) * B.K + k) * L + j);
      blocks.push_back(std::move(P));
    }
  } else {
    const BoundaryFan fan = boundary_fan(g, opt.fan_s > 0 ? opt.fan_s : 3 * opt.n_phi / 2, rules);
    detail::ProbeBlock P;
    detail::probe_grams(g, B, nq_r, nq_phi, P.M, P.C, P.Gq);
    P.NV = Eigen::MatrixXd::Zero(B.nV(), B.nV());
    P.NQ = Eigen::MatrixXd::Zero(B.nQ(), B.nQ());
    detail::probe_rows(
        g, B, fan, opt,
        [&](const detail::RowMatrix& a, const detail::RowMatrix& b) {
          P.NV.noalias() += a.transpose() * a;
          P.NQ.noalias() += b.transpose() * b;
        },
        res);
    P.columns.resize(B.nV());
    std::iota(P.columns.begin(), P.columns.end(), std::size_t{0});
    blocks.push_back(std::move(P));
  }
  detail::solve_probe_blocks(blocks, opt.rank_tol, B.nV(), res);
  return res;
}

// ---------------------------------------------------------------------------
// reports

struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  std::string relation;  // "<=" or ">="
  bool passed = false;
};

inline CheckResult check_le(std::string name, double value, double threshold) {
  return {std::move(name), value, threshold, "<=", value <= threshold};
}

inline CheckResult check_ge(std::string name, double value, double threshold) {
  return {std::move(name), value, threshold, ">=", value >= threshold};
}

struct ExperimentReport {
  std::string id;
  std::string digest;  // FNV-1a of the effective configuration
  std::string metric;
  Json settings;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::vector<CheckResult> checks;
  Json summary = Json::object();

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
  }
};

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

inline Json to_json(const ExperimentReport& r) {
  Json j;
  j["id"] = r.id;
  j["digest"] = r.digest;
  j["metric"] = r.metric;
  j["settings"] = r.settings;
  j["columns"] = r.columns;
  j["rows"] = r.rows;
  Json checks = Json::array();
  for (const CheckResult& c : r.checks)
    checks.push_back({{"name", c.name}, {"value", c.value}, {"threshold", c.threshold}, {"relation", c.relation},
                      {"passed", c.passed}});
  j["checks"] = checks;
  j["summary"] = r.summary;
  j["passed"] = r.passed();
  return j;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string to_csv(const ExperimentReport& r) {
  std::ostringstream os;
  for (std::size_t c = 0; c < r.columns.size(); ++c) os << (c ? "," : "") << r.columns[c];
  os << '\n';
  for (const auto& row : r.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << format_double(row[c]);
    os << '\n';
  }
  return os.str();
}

/// Log-log line plot of column `y` against column `x`.
inline std::string sweep_svg(const ExperimentReport& r, std::size_t x, std::size_t y) {
  const double W = 480, H = 360, m = 50;
  std::vector<std::pair<double, double>> pts;
  for (const auto& row : r.rows)
    if (row[x] > 0.0 && row[y] > 0.0) pts.emplace_back(std::log10(row[x]), std::log10(row[y]));
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (pts.size() >= 2) {
    double x0 = pts[0].first, x1 = x0, y0 = pts[0].second, y1 = y0;
    for (auto [a, b] : pts) {
      x0 = std::min(x0, a);
      x1 = std::max(x1, a);
      y0 = std::min(y0, b);
      y1 = std::max(y1, b);
    }
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    auto X = [&](double a) { return m + (W - 2 * m) * (a - x0) / (x1 - x0); };
    auto Y = [&](double b) { return H - m - (H - 2 * m) * (b - y0) / (y1 - y0); };
    os << "<polyline fill=\"none\" stroke=\"black\" points=\"";
    for (auto [a, b] : pts) os << X(a) << ',' << Y(b) << ' ';
    os << "\"/>\n";
    for (auto [a, b] : pts) os << "<circle cx=\"" << X(a) << "\" cy=\"" << Y(b) << "\" r=\"3\"/>\n";
    os << "<text x=\"" << m << "\" y=\"" << H - 10 << "\" font-size=\"12\">log10 " << r.columns[x] << " ["
       << x0 << ", " << x1 << "]</text>\n";
    os << "<text x=\"10\" y=\"20\" font-size=\"12\">log10 " << r.columns[y] << " [" << y0 << ", " << y1
       << "]</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// <dir>/<id>.json and <id>.csv (plus <id>.svg for sweeps).
inline void write_report(const ExperimentReport& r, const std::string& dir) {
  const std::string base = dir.empty() ? r.id : dir + "/" + r.id;
  auto write = [](const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write " + path);
    f << text;
  };
  write(base + ".json", to_json(r).dump(2) + "\n");
  write(base + ".csv", to_csv(r));
  if (r.id == "quadratic_sweep" && r.columns.size() >= 2) write(base + ".svg", sweep_svg(r, 0, 1));
}

// ---------------------------------------------------------------------------
// gauge families

/// Preset generator: interior bump with both r- and phi-components.
inline Json default_gauge_config() {
  return {{"center", {0.1, 2.0}}, {"radius", 0.6}, {"amplitude", 1.0}, {"a", 1.0}, {"c", -0.8}};
}

/// seed 0 gives the preset; other seeds draw the bump centre, radius and direction.
inline Json gauge_config(const MetricField& g, std::uint64_t seed) {
  if (seed == 0) return default_gauge_config();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double radius = 0.4 + 0.2 * u01(rng);
  Vec2 c;
  if (g.domain.is_annulus()) {
    const double lo = g.domain.r_min + radius + 0.1, hi = g.domain.r_max - radius - 0.1;
    if (!(hi > lo)) throw ParameterError("gauge_config: annulus too thin for the gauge bump");
    c = {lo + (hi - lo) * u01(rng), kTwoPi * u01(rng)};
  } else {
    const double rho = std::max(0.0, g.domain.radius - radius - 0.1) * std::sqrt(u01(rng)), a = kTwoPi * u01(rng);
    c = {rho * std::cos(a), rho * std::sin(a)};
  }
  const double beta = kTwoPi * u01(rng);
  return {{"center", {c[0], c[1]}}, {"radius", radius}, {"amplitude", 1.0}, {"a", std::cos(beta)}, {"c", std::sin(beta)}};
}

struct SweepRow {
  double eps = 0.0;
  double l1 = 0.0;       // ||I_2 f_eps||_{L^1(dmu_nu)}
  double l2sq = 0.0;     // ||f_eps||^2_{L^2}
  double min_value = 0.0;  // min over unflagged fan nodes of I_2 f_eps
  std::size_t flagged = 0;
};

/// f_eps = phi_eps^* g - g for the time-one flow of eps V, transformed along the rays of g.
inline std::vector<SweepRow> gauge_sweep(const MetricField& g, const VectorField& V, const std::vector<double>& eps,
                                         const BoundaryFan& fan, const XrayOptions& xo, int gauge_steps,
                                         const GridSpec& l2_grid) {
  std::vector<SweepRow> rows;
  for (double e : eps) {
    const MetricField gp = gauge_pull(scaled_field(e, V), 1.0, g, gauge_steps);
    const SymTensorField f = linear_combination(1.0, gp.tensor, -1.0, g.tensor);
    const BoundaryFunction u = xray_transform(f, fan, g, xo);
    SweepRow row;
    row.eps = e;
    row.l1 = lp_norm(u, fan, 1.0);
    row.l2sq = tensor_inner_product(f, f, g, l2_grid).integral;
    row.min_value = INFINITY;
    for (std::size_t j = 0; j < u.values.size(); ++j)
      if (u.flags[j] == node_ok) row.min_value = std::min(row.min_value, u.values[j]);
    row.flagged = u.flagged();
    rows.push_back(row);
  }
  return rows;
}

/// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = std::log(x[i]), b = std::log(y[i]);
    sx += a;
    sy += b;
    sxx += a * a;
    sxy += a * b;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// ---------------------------------------------------------------------------
// batched pairing identity

struct PairingGrid {
  Eigen::MatrixXd lhs;  // <I F_i, u_j>_{dmu_nu}
  Eigen::MatrixXd rhs;  // <F_i, I^* u_j>_{dmu}
  std::size_t flagged = 0;
  std::size_t skipped = 0;  // SM samples without a backward footpoint
};

/// All pairings of several integrands and boundary functions; one backward trace per SM sample.
inline PairingGrid pairing_grid(const std::vector<SMFunction>& Fs, const std::vector<BoundaryFunction>& us,
                                const MetricField& g, const BoundaryFan& fan, const SMGridSpec& sm,
                                const XrayOptions& xo) {
  const std::size_t nF = Fs.size(), nU = us.size();
  PairingGrid pg;
  pg.lhs.resize(nF, nU);
  pg.rhs.setZero(nF, nU);
  const std::vector<BoundaryFunction> IF = xray_transform(Fs, fan, g, xo);
  for (std::size_t i = 0; i < nF; ++i) {
    pg.flagged += IF[i].flagged();
    for (std::size_t j = 0; j < nU; ++j) pg.lhs(i, j) = boundary_inner(IF[i], us[j], fan);
  }
  const VolumeGrid vg = volume_grid(g, sm.base);
  std::vector<Eigen::MatrixXd> part(vg.points.size());
  std::vector<std::size_t> miss(vg.points.size(), 0);
  parallel_for(vg.points.size(), [&](std::size_t p) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(nF, nU);
    const Vec2& x = vg.points[p];
    const Mat2 gm = to_mat(g.tensor.value(x));
    std::vector<double> fv(nF), uv(nU);
    const FiberRule fr = fiber_rule(g, x, gm, sm.n_fiber, sm.fiber_grading);
    for (std::size_t k = 0; k < fr.directions.size(); ++k) {
      const Vec2& v = fr.directions[k];
      bool any = false;
      for (std::size_t i = 0; i < nF; ++i) any |= (fv[i] = Fs[i](x, v)) != 0.0;
      if (!any) continue;
      const Footpoint fp = backward_footpoint(g, {x, v}, xo);
      if (!fp.found) {
        ++miss[p];
        continue;
      }
      for (std::size_t j = 0; j < nU; ++j) uv[j] = interpolate_on_fan(us[j], fan, fp.component, fp.param, fp.theta);
      for (std::size_t i = 0; i < nF; ++i)
        for (std::size_t j = 0; j < nU; ++j)
          if (!std::isnan(uv[j])) acc(i, j) += fr.weights[k] * fv[i] * uv[j];
    }
    part[p] = acc * vg.weights[p];
  });
  for (std::size_t p = 0; p < part.size(); ++p) {
    pg.rhs += part[p];
    pg.skipped += miss[p];
  }
  return pg;
}

// ---------------------------------------------------------------------------
// experiment drivers

namespace detail {

inline double bump1(double u) { return std::abs(u) < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - u * u)) : 0.0; }

/// Reflection-even band |r| in (0.3, 0.9), away from the neck circle.
inline double band(double r) { return bump1((std::abs(r) - 0.6) / 0.3); }

inline std::pair<int, int> pair_from(const Json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2) throw ParameterError(what + ": expected a pair of integers");
  return {j[0].get<int>(), j[1].get<int>()};
}

inline BoundaryFan make_fan(const MetricField& g, const Json& j, double grading = 0.0) {
  const auto [s, t] = pair_from(j, "fan");
  return grading > 0.0 ? graded_boundary_fan(g, s, t, grading) : boundary_fan(g, s, t);
}

inline GridSpec grid_from(const Json& j, const std::string& what) {
  const auto [a, b] = pair_from(j, what);
  return {a, b};
}

inline SMGridSpec sm_grid_from(const Json& cfg) {
  return {grid_from(cfg.at("sm_grid"), "sm_grid"), cfg.at("n_fiber").get<int>(), cfg.at("fiber_grading").get<double>()};
}

inline SymTensorField generic_two_tensor() {
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

/// max over the sampling points of the largest component and first derivative of f.
inline double c1_norm(const SymTensorField& f, const ChartDomain& dom, const GridSpec& grid) {
  double m = 0.0;
  const int n = f.components();
  for (const Vec2& x : sampling_points(dom, grid)) {
    TensorJet j;
    f.evaluate(x, j, 1);
    double v = 0.0, d = 0.0;
    for (int c = 0; c < n; ++c) {
      v = std::max(v, std::abs(j.value[c]));
      d = std::max({d, std::abs(j.grad[0][c]), std::abs(j.grad[1][c])});
    }
    m = std::max(m, v + d);
  }
  return m;
}

/// Composite Gauss-Legendre integral of f(x'(t), x'(t)) along the chord from a to b, unit speed.
inline double chord_integral(const SymTensorField& f, const Vec2& a, const Vec2& b, int panels = 32) {
  const double L = std::hypot(b[0] - a[0], b[1] - a[1]);
  const Vec2 v{(b[0] - a[0]) / L, (b[1] - a[1]) / L};
  const QuadratureRule q = composite_gauss_legendre(panels, 8, 0.0, L);
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i)
    s += q.weights[i] * contract_with_velocity(f.value(a + q.nodes[i] * v), 2, v);
  return s;
}

inline Json sweep_defaults() {
  return {{"metric", "neck"},
          {"eps", {1e-3, 3e-3, 1e-2, 3e-2, 1e-1}},
          {"gauge", default_gauge_config()},
          {"seed", 0},
          {"gauge_steps", 16},
          {"fan", {32, 32}},
          {"compare_fan", {64, 64}},
          {"fan_grading", 0.0},
          {"step", 5e-3},
          {"horizon", 50.0},
          {"l2_grid", {32, 64}},
          {"slope_target", 2.0},
          {"slope_tol", 0.1},
          {"positivity_abs", 1e-6},
          {"positivity_cubic", 10.0},
          {"c_stability", 0.5}};
}

inline Json experiment_defaults(const std::string& id) {
  if (id == "quadratic_sweep" || id == "positivity") return sweep_defaults();
  if (id == "taylor_remainder")
    return {{"metric", "euclid_disk"},
            {"field", {{"center", {0.2, -0.1}}, {"radius", 0.5}, {"amplitude", 0.01}, {"tensor_type", "conformal"}}},
            {"pairs", 50},
            {"seed", 1},
            {"min_separation", 0.2},
            {"shooting", {{"shoot_tol", 1e-12}, {"step", 1e-3}, {"n_scan", 64}}},
            {"c1_grid", {48, 96}},
            {"constant_bound", 10.0}};
  if (id == "santalo")
    return {{"metric", "neck"}, {"fan", {256, 128}}, {"sm_grid", {128, 16}}, {"n_fiber", 64},
            {"fan_grading", 0.0}, {"fiber_grading", 0.0},
            {"step", 5e-3},     {"horizon", 50.0},   {"rel_tol", 1e-3}};
  if (id == "adjointness")
    return {{"metric", "neck"}, {"fan", {16, 128}}, {"sm_grid", {96, 4}}, {"n_fiber", 96},
            {"fan_grading", 3.0}, {"fiber_grading", 0.0}, {"step", 5e-3},     {"horizon", 50.0},  {"rel_tol", 1e-3}};
  if (id == "extension_compare")
    return {{"metric", "neck"},
            {"field", {{"center", {0.5, 1.0}}, {"radius", 0.4}, {"amplitude", 1.0}, {"tensor_type", "conformal"}}},
            {"delta", 0.2},
            {"p", 1.0},
            {"fans", {{32, 64}, {32, 128}}},
            {"segment_rays", 400},
            {"step", 5e-3},
            {"horizon", 50.0},
            {"c_tol", 0.02},
            {"stability", 0.2}};
  if (id == "lp_norms")
    return {{"metric", "neck"}, {"fan", {32, 16}}, {"p", 4.0}, {"q", 2.0}, {"sm_grid", {24, 32}}, {"n_fiber", 16},
            {"fan_grading", 0.0}, {"fiber_grading", 0.0},
            {"count", 4},       {"seed", 17},      {"step", 5e-3}, {"horizon", 50.0}};
  if (id == "det_expansion")
    return {{"metric", "neck"},
            {"field", {{"center", {0.0, 1.0}}, {"radius", 0.6}, {"amplitude", 0.02}, {"tensor_type", "mixed"}}},
            {"taus", {0.25, 0.5, 1.0}},
            {"eps", 0.05},
            {"C", 1.0},
            {"grid", 64}};
  if (id == "decomposition_suite")
    return {{"metric", {{"preset", "neck"}, {"bumps", {{{"center", {0.2, 1.0}}, {"radius", 0.5}, {"amplitude", 0.1}}}}}},
            {"grid", {32, 64}},
            {"cg_tol", 1e-8},
            {"factor", 10.0},
            {"potential", {{"center", {0.1, 2.0}}, {"radius", 0.8}, {"amplitude", 1.0}, {"alpha", 1.0}, {"beta", -0.5}}}};
  throw ParameterError("unknown experiment '" + id + "'");
}

inline ExperimentReport start_report(const std::string& id, const Json& config, const Json& defaults) {
  Json eff = defaults;
  for (auto it = config.begin(); it != config.end(); ++it)
    if (it.key() != "experiment") eff[it.key()] = it.value();
  for (auto it = eff.begin(); it != eff.end(); ++it)
    if (!defaults.contains(it.key())) throw ParameterError(id + ": unknown config key '" + it.key() + "'");
  ExperimentReport r;
  r.id = id;
  r.settings = eff;
  r.digest = fnv1a_hex(id + "\n" + eff.dump());
  r.metric = eff.contains("metric") ? (eff["metric"].is_string() ? eff["metric"].get<std::string>() : eff["metric"].dump())
                                    : std::string();
  return r;
}

inline XrayOptions xray_from(const Json& cfg) { return parse_xray_options(cfg); }

inline ExperimentReport run_sweep(const std::string& id, const Json& config) {
  ExperimentReport r = start_report(id, config, sweep_defaults());
  const Json& s = r.settings;
  const MetricField g = parse_metric(s["metric"]);
  const std::uint64_t seed = s["seed"].get<std::uint64_t>();
  const Json gauge = seed == 0 ? s["gauge"] : gauge_config(g, seed);
  r.summary["gauge"] = gauge;
  const VectorField V = parse_vector_field(gauge, g.domain);
  const std::vector<double> eps = s["eps"].get<std::vector<double>>();
  if (eps.size() < 2) throw ParameterError(id + ": need at least two eps values");
  const XrayOptions xo = xray_from(s);
  const GridSpec l2 = grid_from(s["l2_grid"], "l2_grid");
  const int steps = s["gauge_steps"].get<int>();
  const auto rows = gauge_sweep(g, V, eps, make_fan(g, s["fan"], s["fan_grading"].get<double>()), xo, steps, l2);
  r.columns = {"eps", "l1_I2f", "l2sq_f", "ratio", "min_I2f", "positivity_floor", "flagged"};
  std::vector<double> x, y;
  double C = 0.0, worst = INFINITY;
  for (const SweepRow& row : rows) {
    const double floor = -(s["positivity_abs"].get<double>() + s["positivity_cubic"].get<double>() * std::pow(row.eps, 3));
    r.rows.push_back({row.eps, row.l1, row.l2sq, row.l1 / row.l2sq, row.min_value, floor, double(row.flagged)});
    x.push_back(row.eps);
    y.push_back(row.l1);
    C = std::max(C, row.l1 / row.l2sq);
    worst = std::min(worst, row.min_value - floor);
  }
  const double slope = loglog_slope(x, y);
  r.summary["slope"] = slope;
  r.summary["C"] = C;
  if (id == "quadratic_sweep")
    r.checks.push_back(check_le("slope_deviation", std::abs(slope - s["slope_target"].get<double>()),
                                s["slope_tol"].get<double>()));
  r.checks.push_back(check_ge("positivity_margin", worst, 0.0));
  if (id == "quadratic_sweep" && !s["compare_fan"].is_null()) {
    const auto rows2 = gauge_sweep(g, V, eps, make_fan(g, s["compare_fan"], s["fan_grading"].get<double>()), xo, steps, l2);
    double C2 = 0.0;
    for (const SweepRow& row : rows2) C2 = std::max(C2, row.l1 / row.l2sq);
    r.summary["C_compare"] = C2;
    r.checks.push_back(check_le("C_stability", std::abs(C2 / C - 1.0), s["c_stability"].get<double>()));
  }
  return r;
}

inline ExperimentReport run_taylor_remainder(const Json& config) {
  ExperimentReport r = start_report("taylor_remainder", config, experiment_defaults("taylor_remainder"));
  const Json& s = r.settings;
  const MetricField g = parse_metric(s["metric"]);
  if (g.domain.is_annulus() || g.name != "euclid_disk")
    throw UnsupportedError("taylor_remainder: the simple reference case is the Euclidean disk");
  const SymTensorField f = parse_field(s["field"], g);
  const MetricField gp = perturbed_metric(g, f, 1.0);
  const ShootingOptions so = parse_shooting_options(s["shooting"]);
  const double c1 = c1_norm(f, g.domain, grid_from(s["c1_grid"], "c1_grid"));
  const int n = s["pairs"].get<int>();
  std::mt19937_64 rng(s["seed"].get<std::uint64_t>());
  std::uniform_real_distribution<double> ua(0.0, kTwoPi);
  std::vector<std::pair<double, double>> pairs;
  while (static_cast<int>(pairs.size()) < n) {
    const double a = ua(rng), b = ua(rng);
    if (2.0 * g.domain.radius * std::abs(std::sin(0.5 * (a - b))) >= s["min_separation"].get<double>())
      pairs.emplace_back(a, b);
  }
  r.columns = {"from", "to", "chord", "distance", "half_I2f", "remainder", "ratio"};
  r.rows.resize(n);
  parallel_for(n, [&](std::size_t i) {
    const auto [a, b] = pairs[i];
    const Vec2 x = boundary_frame(g, 0, a).point, y = boundary_frame(g, 0, b).point;
    const double chord = std::hypot(y[0] - x[0], y[1] - x[1]);
    const GeodesicConnection c = marked_distance(gp, {0, a}, {0, b}, 0, so);
    const double half = 0.5 * chord_integral(f, x, y);
    const double R = c.length - chord - half;
    r.rows[i] = {a, b, chord, c.length, half, R, std::abs(R) / (c1 * c1 * chord)};
  });
  double worst = 0.0;
  for (const auto& row : r.rows) worst = std::max(worst, row[6]);
  r.summary["c1_norm"] = c1;
  r.summary["constant"] = worst;
  r.checks.push_back(check_le("remainder_constant", worst, s["constant_bound"].get<double>()));
  return r;
}

inline std::vector<SMFunction> santalo_functions() {
  return {
      [](const Vec2& x, const Vec2&) { return band(x[0]); },
      [](const Vec2& x, const Vec2& v) { return band(x[0]) * v[0] * v[0]; },
      [](const Vec2& x, const Vec2& v) { return band(x[0]) * (1.0 + 0.5 * std::cos(x[1])) * (1.0 + 0.3 * v[1]); },
  };
}

inline ExperimentReport run_santalo(const Json& config) {
  ExperimentReport r = start_report("santalo", config, experiment_defaults("santalo"));
  const Json& s = r.settings;
  const MetricField g = parse_metric(s["metric"]);
  const auto reps = santalo_check(santalo_functions(), g, make_fan(g, s["fan"], s["fan_grading"].get<double>()), sm_grid_from(s), xray_from(s));
  r.columns = {"function", "sm_integral", "fan_integral", "rel_error", "flagged"};
  double worst = 0.0;
  for (std::size_t m = 0; m < reps.size(); ++m) {
    r.rows.push_back({double(m), reps[m].lhs, reps[m].rhs, reps[m].rel_error, double(reps[m].flagged)});
    worst = std::max(worst, reps[m].rel_error);
  }
  r.checks.push_back(check_le("max_rel_error", worst, s["rel_tol"].get<double>()));
  return r;
}

/// Five phi-independent integrands and five boundary functions of (component, theta).
inline std::vector<SMFunction> pairing_functions() {
  return {
      [](const Vec2& x, const Vec2&) { return band(x[0]); },
      [](const Vec2& x, const Vec2& v) { return band(x[0]) * (1.0 + 0.4 * v[0] * v[0]); },
      [](const Vec2& x, const Vec2& v) { return band(x[0]) * (1.0 + 0.3 * v[1]); },
      [](const Vec2& x, const Vec2& v) { return bump1((x[0] - 0.5) / 0.35) * (1.0 + 0.5 * v[0]); },
      [](const Vec2& x, const Vec2& v) { return bump1((x[0] + 0.45) / 0.4) * (2.0 + v[0] * v[1]); },
  };
}

inline std::vector<BoundaryFunction> pairing_boundary_functions(const BoundaryFan& fan) {
  using Fn = double (*)(int, double, double);
  const Fn fns[5] = {
      [](int, double, double) { return 1.0; },
      [](int c, double, double th) { return 1.0 + 0.5 * c + 0.3 * std::cos(th); },
      [](int, double, double th) { return 2.0 + std::sin(th); },
      [](int c, double, double th) { return 1.0 + 0.5 * std::cos(2.0 * th) + 0.2 * c; },
      [](int c, double, double th) { return std::exp(0.3 * std::sin(th)) * (1.0 + 0.2 * c); },
  };
  std::vector<BoundaryFunction> us;
  for (Fn fn : fns) us.push_back(sample_on_fan(fan, fn));
  return us;
}

inline ExperimentReport run_adjointness(const Json& config) {
  ExperimentReport r = start_report("adjointness", config, experiment_defaults("adjointness"));
  const Json& s = r.settings;
  const MetricField g = parse_metric(s["metric"]);
  const BoundaryFan fan = make_fan(g, s["fan"], s["fan_grading"].get<double>());
  const PairingGrid pg = pairing_grid(pairing_functions(), pairing_boundary_functions(fan), g, fan, sm_grid_from(s),
                                      xray_from(s));
  r.columns = {"F", "u", "boundary_pairing", "sm_pairing", "rel_error"};
  double worst = 0.0;
  for (int i = 0; i < pg.lhs.rows(); ++i)
    for (int j = 0; j < pg.lhs.cols(); ++j) {
      const double e = relative_gap(pg.lhs(i, j), pg.rhs(i, j));
      r.rows.push_back({double(i), double(j), pg.lhs(i, j), pg.rhs(i, j), e});
      worst = std::max(worst, e);
    }
  r.summary["flagged"] = pg.flagged;
  r.summary["skipped"] = pg.skipped;
  r.checks.push_back(check_le("max_rel_error", worst, s["rel_tol"].get<double>()));
  return r;
}

inline ExperimentReport run_extension_compare(const Json& config) {
  ExperimentReport r = start_report("extension_compare", config, experiment_defaults("extension_compare"));
  const Json& s = r.settings;
  const MetricField g = parse_metric(s["metric"]);
  const SymTensorField f = parse_field(s["field"], g);
  const XrayOptions xo = xray_from(s);
  r.columns = {"n_s", "n_theta", "norm_M", "norm_Me", "C", "L", "flagged"};
  std::vector<double> Cs;
  for (const Json& fj : s["fans"]) {
    const auto [ns, nt] = pair_from(fj, "fans");
    const ExtensionCompareReport e =
        extension_compare(f, g, s["delta"].get<double>(), s["p"].get<double>(), ns, nt, xo, s["segment_rays"].get<int>());
    r.rows.push_back({double(ns), double(nt), e.norm_M, e.norm_Me, e.C, e.L, double(e.flagged)});
    Cs.push_back(e.C);
  }
  double dev = 0.0, spread = 0.0;
  for (double C : Cs) {
    dev = std::max(dev, std::abs(C - 1.0));
    spread = std::max(spread, std::abs(C / Cs.front() - 1.0));
  }
  r.checks.push_back(check_le("C_deviation_from_one", dev, s["c_tol"].get<double>()));
  r.checks.push_back(check_le("C_stability", spread, s["stability"].get<double>()));
  return r;
}

inline ExperimentReport run_lp_norms(const Json& config) {
  ExperimentReport r = start_report("lp_norms", config, experiment_defaults("lp_norms"));
  const Json& s = r.settings;
  const MetricField g = parse_metric(s["metric"]);
  if (!g.domain.is_annulus()) throw UnsupportedError("lp_norms: annulus charts only");
  std::mt19937_64 rng(s["seed"].get<std::uint64_t>());
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double lo = g.domain.r_min + 0.4, hi = g.domain.r_max - 0.4;
  std::vector<SMFunction> family;
  for (int k = 0; k < s["count"].get<int>(); ++k) {
    const Vec2 c{lo + (hi - lo) * u01(rng), kTwoPi * u01(rng)};
    family.push_back(
        [c](const Vec2& x, const Vec2&) { return bump1(std::hypot(x[0] - c[0], wrap_angle(x[1] - c[1])) / 0.4); });
  }
  // concentrated on the neck circle, where rays linger
  const auto [r_star, f_min] = revolution_minimum(g);
  (void)f_min;
  family.push_back([r_star](const Vec2& x, const Vec2&) { return bump1((x[0] - r_star) / 0.1); });
  const LpRatioReport rep = lp_norms_check(family, g, make_fan(g, s["fan"], s["fan_grading"].get<double>()), s["p"].get<double>(),
                                           s["q"].get<double>(), sm_grid_from(s), xray_from(s));
  r.columns = {"member", "ratio"};
  bool finite = true;
  for (std::size_t m = 0; m < rep.ratios.size(); ++m) {
    r.rows.push_back({double(m), rep.ratios[m]});
    finite &= std::isfinite(rep.ratios[m]) && rep.ratios[m] > 0.0;
  }
  r.summary["max_ratio"] = rep.max_ratio;
  r.summary["flagged"] = rep.flagged;
  r.checks.push_back(check_ge("ratios_finite", finite ? 1.0 : 0.0, 1.0));
  return r;
}

inline ExperimentReport run_det_expansion(const Json& config) {
  ExperimentReport r = start_report("det_expansion", config, experiment_defaults("det_expansion"));
  const Json& s = r.settings;
  const MetricField g = parse_metric(s["metric"]);
  const SymTensorField f = parse_field(s["field"], g);
  const std::vector<double> taus = s["taus"].get<std::vector<double>>();
  const double eps = s["eps"].get<double>();
  const int n = s["grid"].get<int>();
  const DetExpansionFit fit = fit_det_expansion(g, f, taus, eps, 0.0, n);
  const double C = s["C"].get<double>();
  r.columns = {"tau", "min_residual_C0", "min_residual_C", "fitted_C"};
  double worst = INFINITY;
  for (double tau : taus) {
    const DetExpansionFit a = fit_det_expansion(g, f, {tau}, eps, 0.0, n);
    const DetExpansionFit b = fit_det_expansion(g, f, {tau}, eps, C, n);
    r.rows.push_back({tau, a.min_residual, b.min_residual, a.min_C});
    worst = std::min(worst, b.min_residual);
  }
  r.summary["fitted_C"] = fit.min_C;
  r.summary["sup_norm"] = fit.sup_norm;
  r.checks.push_back(check_ge("min_residual_at_C", worst, 0.0));
  return r;
}

inline ExperimentReport run_decomposition_suite(const Json& config) {
  ExperimentReport r = start_report("decomposition_suite", config, experiment_defaults("decomposition_suite"));
  const Json& s = r.settings;
  const MetricField g = parse_metric(s["metric"]);
  const auto [nr, nphi] = pair_from(s["grid"], "grid");
  DecomposeOptions opt;
  opt.cg_tol = s["cg_tol"].get<double>();
  const double tol = s["factor"].get<double>() * opt.cg_tol;
  const TensorGrid G = make_tensor_grid(g, nr, nphi);
  const Json& pj = s["potential"];
  const SymTensorField p0 = bump_one_form(parse_bump(pj, g.domain), get_or(pj, "alpha", 1.0), get_or(pj, "beta", -0.5));
  const GridTwoTensor inputs[3] = {apply_D(G, sample_one_form(G, p0)), sample_two_tensor(G, scaled(2.5, g.tensor)),
                                   sample_two_tensor(G, generic_two_tensor())};
  r.columns = {"input", "dstar_residual", "reassembly_residual", "iterations", "norm_f", "norm_fs", "norm_p",
               "idempotence"};
  for (int k = 0; k < 3; ++k) {
    const SolenoidalDecomposition d = solenoidal_decompose_grid(G, inputs[k], opt);
    const SolenoidalDecomposition again = solenoidal_decompose_grid(G, d.fs, opt);
    const double idem = again.norm_p / std::max(1.0, d.norm_f);
    r.rows.push_back({double(k), d.dstar_residual, d.reassembly_residual, double(d.iterations), d.norm_f, d.norm_fs,
                      d.norm_p, idem});
    const std::string tag = k == 0 ? "potential" : k == 1 ? "metric_multiple" : "generic";
    r.checks.push_back(check_le(tag + "_dstar", d.dstar_residual, tol));
    r.checks.push_back(check_le(tag + "_reassembly", d.reassembly_residual, tol));
    r.checks.push_back(check_le(tag + "_idempotence", idem, tol));
    if (k == 0) r.checks.push_back(check_le(tag + "_solenoidal_part", d.norm_fs / d.norm_f, tol));
    if (k == 1) r.checks.push_back(check_le(tag + "_potential_part", d.norm_p, tol));
  }
  return r;
}

}  // namespace detail

inline const std::vector<std::string>& experiment_ids() {
  static const std::vector<std::string> ids = {"quadratic_sweep", "positivity",     "taylor_remainder",
                                               "santalo",         "adjointness",    "extension_compare",
                                               "lp_norms",        "det_expansion",  "decomposition_suite"};
  return ids;
}

/// Effective configuration (defaults overlaid by `config`) for an experiment id.
inline Json experiment_config(const std::string& id, const Json& config = Json::object()) {
  return detail::start_report(id, config, detail::experiment_defaults(id)).settings;
}

/// {"experiment": id, ...overrides}.
inline ExperimentReport run_experiment(const Json& config) {
  if (!config.is_object() || !config.contains("experiment")) throw ParameterError("run_experiment: missing 'experiment'");
  const std::string id = config["experiment"].get<std::string>();
  if (id == "quadratic_sweep" || id == "positivity") return detail::run_sweep(id, config);
  if (id == "taylor_remainder") return detail::run_taylor_remainder(config);
  if (id == "santalo") return detail::run_santalo(config);
  if (id == "adjointness") return detail::run_adjointness(config);
  if (id == "extension_compare") return detail::run_extension_compare(config);
  if (id == "lp_norms") return detail::run_lp_norms(config);
  if (id == "det_expansion") return detail::run_det_expansion(config);
  if (id == "decomposition_suite") return detail::run_decomposition_suite(config);
  throw ParameterError("unknown experiment '" + id + "'");
}

// ---------------------------------------------------------------------------
// subcommands

namespace detail {

inline ProbeOptions probe_options_from(const Json& s, int n_r, int n_phi) {
  ProbeOptions o;
  o.n_r = n_r;
  o.n_phi = n_phi;
  o.fan_s = s["fan_s"].get<int>();
  o.fan_theta = s["fan_theta"].get<int>();
  o.grading = s["grading"].get<double>();
  o.xray = parse_xray_options(s, o.xray);
  o.extra_r = s["extra_r"].get<int>();
  o.extra_phi = s["extra_phi"].get<int>();
  o.rank_tol = s["rank_tol"].get<double>();
  return o;
}

inline BoundaryPoint boundary_point_from(const Json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2) throw ParameterError(what + ": expected [component, boundary angle]");
  return {j[0].get<int>(), j[1].get<double>()};
}

inline Json command_defaults(const std::string& name) {
  if (name == "probe")
    return {{"metric", "neck"}, {"grid", {16, 32}},  {"refine", {24, 48}}, {"fan_s", 0},          {"fan_theta", 0},
            {"grading", 3.0},   {"step", 2.5e-3},    {"horizon", 50.0},    {"extra_r", 8},        {"extra_phi", 2},
            {"rank_tol", 1e-8}, {"min_separation", 1e3}, {"max_refinement_ratio", 2.0}};
  if (name == "audit-exponents")
    return {{"n", 2}, {"q", 1.01}, {"p", 1e4}, {"delta", 1e-3}, {"limit", false}, {"n_max", 32}};
  if (name == "flow")
    return {{"metric", "neck"}, {"start", {-1.0, 0.0, 0.3}}, {"T", 5.0}, {"step", 1e-3}, {"horizon", 50.0},
            {"clairaut_tol", 1e-9}};
  if (name == "xray")
    return {{"metric", "neck"},
            {"field", {{"center", {0.3, 1.0}}, {"radius", 0.5}, {"amplitude", 1.0}, {"tensor_type", "conformal"}}},
            {"fan", {32, 32}},
            {"fan_grading", 0.0},
            {"step", 5e-3},
            {"horizon", 50.0}};
  if (name == "decompose")
    return {{"metric", "neck"},
            {"field", {{"center", {0.3, 1.0}}, {"radius", 0.5}, {"amplitude", 1.0}, {"tensor_type", "dr2"}}},
            {"grid", {32, 64}},
            {"cg_tol", 1e-8},
            {"max_iter", 10000},
            {"jacobi", false},
            {"factor", 10.0}};
  if (name == "distance")
    return {{"metric", "neck"}, {"from", {0, 0.0}}, {"to", {0, 1.0}}, {"winding", 0},
            {"shooting", {{"shoot_tol", 1e-10}}}};
  if (name == "energy")
    return {{"metric", "neck"},
            {"field", {{"center", {0.3, 0.5}}, {"radius", 0.5}, {"amplitude", 0.05}, {"tensor_type", "conformal"}}},
            {"from", {0, 0.0}},
            {"to", {0, 1.0}},
            {"winding", 0},
            {"taus", {0.0, 0.25, 0.5, 0.75, 1.0}},
            {"dtau", 1e-3},
            {"shooting", {{"shoot_tol", 1e-12}}},
            {"identity_tol", 1e-4},
            {"concavity_tol", 1e-6}};
  throw ParameterError("unknown command '" + name + "'");
}

inline void spectrum_rows(ExperimentReport& r, const ProbeResult& p, int level) {
  for (std::size_t i = 0; i < p.spectrum.size(); ++i) r.rows.push_back({double(level), double(i), p.spectrum[i]});
}

inline Json probe_summary(const ProbeResult& p) {
  return {{"n_r", p.n_r},
          {"n_phi", p.n_phi},
          {"dim_tensor", p.dim_tensor},
          {"dim_solenoidal", p.dim_solenoidal},
          {"dim_potential", p.dim_potential},
          {"rays", p.rays},
          {"flagged", p.flagged},
          {"sigma_min", p.sigma_min},
          {"sigma_median", p.sigma_median},
          {"sigma_max", p.sigma_max},
          {"potential_sigma_max", p.potential_sigma_max},
          {"separation", p.separation},
          {"stability_constant", 1.0 / p.sigma_min}};
}

inline ExperimentReport run_probe(const Json& config) {
  ExperimentReport r = start_report("probe", config, command_defaults("probe"));
  const Json& s = r.settings;
  const MetricField g = parse_metric(s["metric"]);
  const auto [nr, nphi] = pair_from(s["grid"], "grid");
  const ProbeResult p = sinjectivity_probe(g, probe_options_from(s, nr, nphi));
  r.columns = {"level", "index", "sigma"};
  spectrum_rows(r, p, 0);
  r.summary["coarse"] = probe_summary(p);
  r.checks.push_back(check_ge("separation", p.separation, s["min_separation"].get<double>()));
  if (!s["refine"].is_null()) {
    const auto [nr2, nphi2] = pair_from(s["refine"], "refine");
    const ProbeResult q = sinjectivity_probe(g, probe_options_from(s, nr2, nphi2));
    spectrum_rows(r, q, 1);
    r.summary["fine"] = probe_summary(q);
    const double ratio = std::max(p.sigma_min / q.sigma_min, q.sigma_min / p.sigma_min);
    r.summary["refinement_ratio"] = ratio;
    r.checks.push_back(check_le("refinement_ratio", ratio, s["max_refinement_ratio"].get<double>()));
  }
  return r;
}

inline ExperimentReport run_audit(const Json& config) {
  ExperimentReport r = start_report("audit-exponents", config, command_defaults("audit-exponents"));
  const Json& s = r.settings;
  if (s["limit"].get<bool>()) {
    r.columns = {"n", "N", "numerator", "denominator", "value", "verdict"};
    bool all = true;
    for (int n = 2; n <= s["n_max"].get<int>(); ++n) {
      const ExponentLimit l = exponent_limit(n);
      r.rows.push_back({double(n), double(l.N), double(l.numerator), double(l.denominator), l.value, double(l.verdict)});
      all &= l.verdict;
    }
    r.checks.push_back(check_ge("limit_verdicts", all ? 1.0 : 0.0, 1.0));
    return r;
  }
  const ExponentAudit a =
      exponent_audit(s["n"].get<int>(), s["q"].get<double>(), s["p"].get<double>(), s["delta"].get<double>());
  r.columns = {"n", "N", "q", "p", "delta", "s", "gamma", "theta", "product", "verdict"};
  r.rows.push_back({double(a.n), double(a.N), a.q, a.p, a.delta, a.s, a.gamma, a.theta, a.product, double(a.verdict)});
  r.checks.push_back(check_ge("two_gamma_theta", a.product, 1.0));
  r.checks.back().passed = a.verdict;
  return r;
}

inline ExperimentReport run_flow(const Json& config) {
  ExperimentReport r = start_report("flow", config, command_defaults("flow"));
  const Json& s = r.settings;
  const MetricField g = parse_metric(s["metric"]);
  const Json& st = s["start"];
  if (!st.is_array() || st.size() != 3) throw ParameterError("flow: start must be [x0, x1, theta]");
  const PhasePoint z = phase_point_from_angle(g, {st[0].get<double>(), st[1].get<double>()}, st[2].get<double>());
  FlowOptions fo;
  fo.step = s["step"].get<double>();
  fo.horizon = s["horizon"].get<double>();
  const RayTrace tr = geodesic_flow(g, z, s["T"].get<double>(), fo);
  r.columns = {"t", "x0", "x1", "v0", "v1", "c"};
  for (std::size_t i = 0; i < tr.t.size(); ++i)
    r.rows.push_back({tr.t[i], tr.z[i].x[0], tr.z[i].x[1], tr.z[i].v[0], tr.z[i].v[1], tr.clairaut[i]});
  r.summary["exit"] = tr.exit.kind == ExitKind::boundary ? "boundary" : tr.exit.kind == ExitKind::horizon ? "horizon" : "stopped";
  r.summary["exit_time"] = tr.exit.time;
  if (g.revolution && !tr.t.empty()) {
    double drift = 0.0;
    for (double c : tr.clairaut) drift = std::max(drift, std::abs(c - tr.clairaut.front()));
    const double per_time = drift / std::max(1.0, std::abs(tr.t.back()));
    r.checks.push_back(check_le("clairaut_drift_per_time", per_time, s["clairaut_tol"].get<double>()));
  }
  return r;
}

inline ExperimentReport run_xray(const Json& config) {
  ExperimentReport r = start_report("xray", config, command_defaults("xray"));
  const Json& s = r.settings;
  const MetricField g = parse_metric(s["metric"]);
  const SymTensorField f = parse_field(s["field"], g);
  const BoundaryFan fan = make_fan(g, s["fan"], s["fan_grading"].get<double>());
  const BoundaryFunction u = xray_transform(f, fan, g, xray_from(s));
  r.columns = {"component", "s", "theta", "value", "flagged"};
  for (std::size_t j = 0; j < fan.nodes.size(); ++j)
    r.rows.push_back({double(fan.nodes[j].component), fan.nodes[j].s, fan.nodes[j].theta, u.values[j], double(u.flags[j])});
  r.summary["flagged"] = u.flagged();
  r.summary["l1"] = lp_norm(u, fan, 1.0);
  r.summary["l2"] = lp_norm(u, fan, 2.0);
  return r;
}

inline ExperimentReport run_decompose(const Json& config) {
  ExperimentReport r = start_report("decompose", config, command_defaults("decompose"));
  const Json& s = r.settings;
  const MetricField g = parse_metric(s["metric"]);
  const SymTensorField f = parse_field(s["field"], g);
  const auto [nr, nphi] = pair_from(s["grid"], "grid");
  DecomposeOptions opt;
  opt.cg_tol = s["cg_tol"].get<double>();
  opt.max_iter = s["max_iter"].get<int>();
  opt.jacobi_precond = s["jacobi"].get<bool>();
  const SolenoidalDecomposition d = solenoidal_decompose(f, g, nr, nphi, opt);
  r.columns = {"r", "phi", "fs_rr", "fs_rphi", "fs_phiphi", "p_r", "p_phi"};
  for (int i = 0; i < d.grid.n_r; ++i)
    for (int j = 0; j < d.grid.n_phi; ++j) {
      const std::size_t n = d.grid.node(i, j);
      r.rows.push_back({d.grid.r[i], d.grid.phi[j], d.fs[3 * n], d.fs[3 * n + 1], d.fs[3 * n + 2], d.p[2 * n],
                        d.p[2 * n + 1]});
    }
  r.summary["iterations"] = d.iterations;
  r.summary["norm_f"] = d.norm_f;
  r.summary["norm_fs"] = d.norm_fs;
  r.summary["norm_p"] = d.norm_p;
  r.summary["cg_history"] = d.history;
  const double tol = s["factor"].get<double>() * opt.cg_tol;
  r.checks.push_back(check_le("dstar_residual", d.dstar_residual, tol));
  r.checks.push_back(check_le("reassembly_residual", d.reassembly_residual, tol));
  return r;
}

inline ExperimentReport run_distance(const Json& config) {
  ExperimentReport r = start_report("distance", config, command_defaults("distance"));
  const Json& s = r.settings;
  const MetricField g = parse_metric(s["metric"]);
  const ShootingOptions so = parse_shooting_options(s["shooting"]);
  const GeodesicConnection c = marked_distance(g, boundary_point_from(s["from"], "from"), boundary_point_from(s["to"], "to"),
                                               s["winding"].get<int>(), so);
  r.columns = {"winding", "psi", "length", "dphi", "endpoint_error", "brackets", "iterations"};
  r.rows.push_back({double(c.winding), c.psi, c.length, c.dphi, c.endpoint_error, double(c.brackets), double(c.iterations)});
  r.checks.push_back(check_le("endpoint_error", c.endpoint_error, so.shoot_tol));
  return r;
}

inline ExperimentReport run_energy(const Json& config) {
  ExperimentReport r = start_report("energy", config, command_defaults("energy"));
  const Json& s = r.settings;
  const MetricField g = parse_metric(s["metric"]);
  const SymTensorField f = parse_field(s["field"], g);
  EnergyOptions eo;
  eo.taus = s["taus"].get<std::vector<double>>();
  eo.dtau = s["dtau"].get<double>();
  eo.shoot = parse_shooting_options(s["shooting"], eo.shoot);
  const EnergyCurve ec = energy_curve(g, f, boundary_point_from(s["from"], "from"), boundary_point_from(s["to"], "to"),
                                      s["winding"].get<int>(), eo);
  r.columns = {"tau", "E", "dE", "d2E"};
  const std::size_t n = ec.tau.size();
  for (std::size_t i = 0; i < n; ++i) {
    double d1 = NAN, d2 = NAN;
    if (i > 0 && i + 1 < n) {
      const double h0 = ec.tau[i] - ec.tau[i - 1], h1 = ec.tau[i + 1] - ec.tau[i];
      d1 = (ec.E[i + 1] - ec.E[i - 1]) / (h0 + h1);
      d2 = 2.0 * (h0 * ec.E[i + 1] - (h0 + h1) * ec.E[i] + h1 * ec.E[i - 1]) / (h0 * h1 * (h0 + h1));
    }
    if (i == 0 && ec.tau[0] == 0.0) d1 = ec.dE0;
    r.rows.push_back({ec.tau[i], ec.E[i], d1, d2});
  }
  r.summary["dE0"] = ec.dE0;
  r.summary["ray_integral"] = ec.ray_integral;
  r.summary["max_second_difference"] = ec.max_second_difference;
  r.checks.push_back(check_le("energy_identity", relative_gap(ec.dE0, ec.ray_integral), s["identity_tol"].get<double>()));
  r.checks.push_back(check_le("concavity", ec.max_second_difference, s["concavity_tol"].get<double>()));
  return r;
}

}  // namespace detail

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"flow",   "xray",  "decompose", "distance",
                                                 "energy", "audit-exponents", "probe", "experiment"};
  return names;
}

/// Runs a CLI subcommand on its configuration; "experiment" forwards to run_experiment.
inline ExperimentReport run_command(const std::string& name, const Json& config) {
  if (name == "experiment") return run_experiment(config);
  if (name == "probe") return detail::run_probe(config);
  if (name == "audit-exponents") return detail::run_audit(config);
  if (name == "flow") return detail::run_flow(config);
  if (name == "xray") return detail::run_xray(config);
  if (name == "decompose") return detail::run_decompose(config);
  if (name == "distance") return detail::run_distance(config);
  if (name == "energy") return detail::run_energy(config);
  throw ParameterError("unknown command '" + name + "'");
}

}  // namespace geoxray
