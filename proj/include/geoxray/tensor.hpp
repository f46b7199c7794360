// Symmetric cotensor fields of rank 0..3 on a two-dimensional chart.
//
// Components are stored in full (2^m entries, index bits i_1..i_m with i_1 the
// most significant), so symmetry is a property of the evaluator rather than of
// the storage. Fields report how many derivative orders they provide
// analytically; missing orders are filled in by 4th-order centred differences.
#pragma once

#include <array>
#include <functional>
#include <memory>
#include <utility>

#include "geoxray/core.hpp"

namespace geoxray {

inline constexpr int kMaxRank = 3;
inline constexpr int kMaxComponents = 1 << kMaxRank;
inline constexpr double kDefaultFdStep = 1e-4;

inline constexpr int component_count(int rank) { return 1 << rank; }

/// Index of component i (0 or 1) in slot `slot` of a rank-m multi-index.
inline constexpr int index_bit(int component, int rank, int slot) {
  return (component >> (rank - 1 - slot)) & 1;
}

using Components = std::array<double, kMaxComponents>;

struct TensorJet {
  int rank = 0;
  Components value{};
  std::array<Components, 2> grad{};                  // grad[a][c] = d_a value[c]
  std::array<std::array<Components, 2>, 2> hess{};  // hess[a][b][c]
};

struct ScalarJet {
  double value = 0.0;
  Vec2 grad{};
  Mat2 hess{};
};

class SymTensorField {
 public:
  /// Fills out.value, plus out.grad when order >= 1 and out.hess when order >= 2.
  /// Never called with order above the declared provided order.
  using Evaluator = std::function<void(const Vec2& x, int order, TensorJet& out)>;

  SymTensorField() = default;
  SymTensorField(int rank, Evaluator eval, int provided_order, double fd_step = kDefaultFdStep)
      : rank_(rank),
        provided_(provided_order),
        fd_step_(fd_step),
        eval_(std::make_shared<const Evaluator>(std::move(eval))) {
    if (rank < 0 || rank > kMaxRank) throw ParameterError("SymTensorField: rank must be in [0, 3]");
  }

  int rank() const { return rank_; }
  int components() const { return component_count(rank_); }
  int provided_order() const { return provided_; }
  double fd_step() const { return fd_step_; }
  bool valid() const { return static_cast<bool>(eval_); }

  void evaluate(const Vec2& x, TensorJet& out, int order = 2) const {
    out.rank = rank_;
    const int direct = order < provided_ ? order : provided_;
    (*eval_)(x, direct, out);
    if (order >= 1 && provided_ < 1) fill_gradient_from_values(x, out);
    if (order >= 2 && provided_ < 2) {
      if (provided_ == 1)
        fill_hessian_from_gradients(x, out);
      else
        fill_hessian_from_values(x, out);
    }
  }

  TensorJet jet(const Vec2& x, int order = 2) const {
    TensorJet j;
    evaluate(x, j, order);
    return j;
  }

  Components value(const Vec2& x) const {
    TensorJet j;
    evaluate(x, j, 0);
    return j.value;
  }

 private:
  void raw(const Vec2& x, int order, TensorJet& out) const {
    out.rank = rank_;
    (*eval_)(x, order, out);
  }

  void fill_gradient_from_values(const Vec2& x, TensorJet& out) const {
    const int n = components();
    const double h = fd_step_;
    for (int a = 0; a < 2; ++a) {
      TensorJet p1, p2, m1, m2;
      Vec2 y = x;
      y[a] = x[a] + h;
      raw(y, 0, p1);
      y[a] = x[a] + 2 * h;
      raw(y, 0, p2);
      y[a] = x[a] - h;
      raw(y, 0, m1);
      y[a] = x[a] - 2 * h;
      raw(y, 0, m2);
      for (int c = 0; c < n; ++c)
        out.grad[a][c] = (-p2.value[c] + 8 * p1.value[c] - 8 * m1.value[c] + m2.value[c]) / (12 * h);
    }
  }

  void fill_hessian_from_gradients(const Vec2& x, TensorJet& out) const {
    const int n = components();
    const double h = fd_step_;
    for (int a = 0; a < 2; ++a) {
      TensorJet p1, p2, m1, m2;
      Vec2 y = x;
      y[a] = x[a] + h;
      raw(y, 1, p1);
      y[a] = x[a] + 2 * h;
      raw(y, 1, p2);
      y[a] = x[a] - h;
      raw(y, 1, m1);
      y[a] = x[a] - 2 * h;
      raw(y, 1, m2);
      for (int b = 0; b < 2; ++b)
        for (int c = 0; c < n; ++c)
          out.hess[a][b][c] =
              (-p2.grad[b][c] + 8 * p1.grad[b][c] - 8 * m1.grad[b][c] + m2.grad[b][c]) / (12 * h);
    }
    for (int c = 0; c < n; ++c) {
      const double sym = 0.5 * (out.hess[0][1][c] + out.hess[1][0][c]);
      out.hess[0][1][c] = out.hess[1][0][c] = sym;
    }
  }

  void fill_hessian_from_values(const Vec2& x, TensorJet& out) const {
    const int n = components();
    const double h = fd_step_;
    TensorJet centre;
    raw(x, 0, centre);
    for (int a = 0; a < 2; ++a) {
      TensorJet p1, p2, m1, m2;
      Vec2 y = x;
      y[a] = x[a] + h;
      raw(y, 0, p1);
      y[a] = x[a] + 2 * h;
      raw(y, 0, p2);
      y[a] = x[a] - h;
      raw(y, 0, m1);
      y[a] = x[a] - 2 * h;
      raw(y, 0, m2);
      for (int c = 0; c < n; ++c)
        out.hess[a][a][c] = (-p2.value[c] + 16 * p1.value[c] - 30 * centre.value[c] + 16 * m1.value[c] -
                             m2.value[c]) /
                            (12 * h * h);
    }
    static constexpr std::array<double, 4> offs{-2.0, -1.0, 1.0, 2.0};
    static constexpr std::array<double, 4> wts{1.0, -8.0, 8.0, -1.0};
    Components mixed{};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        TensorJet s;
        raw({x[0] + offs[i] * h, x[1] + offs[j] * h}, 0, s);
        for (int c = 0; c < n; ++c) mixed[c] += wts[i] * wts[j] * s.value[c];
      }
    for (int c = 0; c < n; ++c) out.hess[0][1][c] = out.hess[1][0][c] = mixed[c] / (144 * h * h);
  }

  int rank_ = 0;
  int provided_ = 0;
  double fd_step_ = kDefaultFdStep;
  std::shared_ptr<const Evaluator> eval_;
};

// ---------------------------------------------------------------------------
// arithmetic

/// a*F + b*G, provided order = min of the two.
inline SymTensorField linear_combination(double a, const SymTensorField& f, double b, const SymTensorField& h) {
  if (f.rank() != h.rank()) throw ParameterError("linear_combination: rank mismatch");
  const int order = std::min(f.provided_order(), h.provided_order());
  const int n = f.components();
  return SymTensorField(
      f.rank(),
      [f, h, a, b, n](const Vec2& x, int ord, TensorJet& out) {
        TensorJet jf, jh;
        f.evaluate(x, jf, ord);
        h.evaluate(x, jh, ord);
        for (int c = 0; c < n; ++c) out.value[c] = a * jf.value[c] + b * jh.value[c];
        if (ord >= 1)
          for (int d = 0; d < 2; ++d)
            for (int c = 0; c < n; ++c) out.grad[d][c] = a * jf.grad[d][c] + b * jh.grad[d][c];
        if (ord >= 2)
          for (int d = 0; d < 2; ++d)
            for (int e = 0; e < 2; ++e)
              for (int c = 0; c < n; ++c) out.hess[d][e][c] = a * jf.hess[d][e][c] + b * jh.hess[d][e][c];
      },
      order, f.fd_step());
}

inline SymTensorField scaled(double a, const SymTensorField& f) {
  const int n = f.components();
  return SymTensorField(
      f.rank(),
      [f, a, n](const Vec2& x, int ord, TensorJet& out) {
        f.evaluate(x, out, ord);
        for (int c = 0; c < n; ++c) out.value[c] *= a;
        if (ord >= 1)
          for (auto& g : out.grad)
            for (int c = 0; c < n; ++c) g[c] *= a;
        if (ord >= 2)
          for (auto& row : out.hess)
            for (auto& hh : row)
              for (int c = 0; c < n; ++c) hh[c] *= a;
      },
      f.provided_order(), f.fd_step());
}

inline SymTensorField zero_field(int rank) {
  return SymTensorField(rank, [](const Vec2&, int, TensorJet&) {}, 2);
}

/// Field with constant components.
inline SymTensorField constant_field(int rank, const Components& comps) {
  return SymTensorField(
      rank, [comps](const Vec2&, int, TensorJet& out) { out.value = comps; }, 2);
}

/// f(x)(v, ..., v).
inline double contract_with_velocity(const Components& comps, int rank, const Vec2& v) {
  if (rank == 0) return comps[0];
  double sum = 0.0;
  const int n = component_count(rank);
  for (int c = 0; c < n; ++c) {
    double prod = comps[c];
    for (int s = 0; s < rank; ++s) prod *= v[index_bit(c, rank, s)];
    sum += prod;
  }
  return sum;
}

// ---------------------------------------------------------------------------
// compactly supported bumps

/// A * exp(1 - 1/(1 - |x - c|^2 / R^2)) inside the disk of radius R, zero outside.
/// With `periodic_second` the second coordinate difference is wrapped into [-pi, pi).
struct Bump {
  Vec2 center{0.0, 0.0};
  double radius = 0.3;
  double amplitude = 1.0;
  bool periodic_second = true;

  Vec2 offset(const Vec2& x) const {
    Vec2 d{x[0] - center[0], x[1] - center[1]};
    if (periodic_second) d[1] = wrap_angle(d[1]);
    return d;
  }

  bool supports(const Vec2& x) const {
    const Vec2 d = offset(x);
    return d[0] * d[0] + d[1] * d[1] < radius * radius;
  }

  ScalarJet jet(const Vec2& x) const {
    ScalarJet j;
    const Vec2 d = offset(x);
    const double r2 = radius * radius;
    const double u = (d[0] * d[0] + d[1] * d[1]) / r2;
    if (u >= 1.0) return j;
    const double s = 1.0 / (1.0 - u);
    const double b = amplitude * std::exp(1.0 - s);
    const double bu = -b * s * s;
    const double buu = b * (s * s * s * s - 2.0 * s * s * s);
    const Vec2 du{2.0 * d[0] / r2, 2.0 * d[1] / r2};
    j.value = b;
    for (int a = 0; a < 2; ++a) {
      j.grad[a] = bu * du[a];
      for (int c = 0; c < 2; ++c) j.hess[a][c] = buu * du[a] * du[c] + (a == c ? bu * 2.0 / r2 : 0.0);
    }
    return j;
  }
};

/// Scalar (rank-0) field from a bump.
inline SymTensorField bump_function(const Bump& bump) {
  return SymTensorField(
      0,
      [bump](const Vec2& x, int ord, TensorJet& out) {
        const ScalarJet s = bump.jet(x);
        out.value[0] = s.value;
        if (ord >= 1)
          for (int a = 0; a < 2; ++a) out.grad[a][0] = s.grad[a];
        if (ord >= 2)
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) out.hess[a][b][0] = s.hess[a][b];
      },
      2);
}

/// Product of a scalar field and a tensor field.
inline SymTensorField multiply(const SymTensorField& scalar, const SymTensorField& f) {
  if (scalar.rank() != 0) throw ParameterError("multiply: first factor must be rank 0");
  const int n = f.components();
  const int order = std::min(scalar.provided_order(), f.provided_order());
  return SymTensorField(
      f.rank(),
      [scalar, f, n](const Vec2& x, int ord, TensorJet& out) {
        TensorJet s, t;
        scalar.evaluate(x, s, ord);
        f.evaluate(x, t, ord);
        for (int c = 0; c < n; ++c) out.value[c] = s.value[0] * t.value[c];
        if (ord >= 1)
          for (int a = 0; a < 2; ++a)
            for (int c = 0; c < n; ++c)
              out.grad[a][c] = s.grad[a][0] * t.value[c] + s.value[0] * t.grad[a][c];
        if (ord >= 2)
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
              for (int c = 0; c < n; ++c)
                out.hess[a][b][c] = s.hess[a][b][0] * t.value[c] + s.grad[a][0] * t.grad[b][c] +
                                    s.grad[b][0] * t.grad[a][c] + s.value[0] * t.hess[a][b][c];
      },
      order, f.fd_step());
}

/// Coordinate basis 2-tensors: dx0^2, dx0 dx1 + dx1 dx0, dx1^2.
enum class BasisTensor { dr2, mixed, dphi2 };

inline Components basis_components(BasisTensor b) {
  Components c{};
  switch (b) {
    case BasisTensor::dr2: c[0] = 1.0; break;
    case BasisTensor::mixed: c[1] = c[2] = 1.0; break;
    case BasisTensor::dphi2: c[3] = 1.0; break;
  }
  return c;
}

/// One-form b * (alpha dx0 + beta dx1).
inline SymTensorField bump_one_form(const Bump& bump, double alpha, double beta) {
  Components c{};
  c[0] = alpha;
  c[1] = beta;
  return multiply(bump_function(bump), constant_field(1, c));
}

}  // namespace geoxray
