// Matrix-free conjugate gradient on std::vector<double>.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "geoxray/core.hpp"

namespace geoxray {

using Vector = std::vector<double>;

inline double dot(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct CGOptions {
  double tol = 1e-8;
  int max_iter = 10000;
  bool throw_on_failure = true;
};

struct CGResult {
  Vector x;
  int iterations = 0;
  bool converged = false;
  std::vector<double> history;  // residual measure per iteration
};

/// Solves A x = b from x = 0. `precond` may be empty (identity). `measure(r)` is the
/// residual norm compared against `target`.
inline CGResult conjugate_gradient(const std::function<void(const Vector&, Vector&)>& apply, const Vector& b,
                                   const std::function<void(const Vector&, Vector&)>& precond,
                                   const std::function<double(const Vector&)>& measure, double target,
                                   const CGOptions& opt = {}) {
  const std::size_t n = b.size();
  CGResult res;
  res.x.assign(n, 0.0);
  Vector r = b, z(n), p(n), Ap(n);
  auto pre = [&](const Vector& in, Vector& out) {
    if (precond)
      precond(in, out);
    else
      out = in;
  };
  double m = measure(r);
  res.history.push_back(m);
  if (m <= target) {
    res.converged = true;
    return res;
  }
  pre(r, z);
  p = z;
  double rz = dot(r, z);
  for (int it = 1; it <= opt.max_iter; ++it) {
    apply(p, Ap);
    const double pAp = dot(p, Ap);
    if (!(pAp > 0.0)) break;
    const double alpha = rz / pAp;
    for (std::size_t i = 0; i < n; ++i) {
      res.x[i] += alpha * p[i];
      r[i] -= alpha * Ap[i];
    }
    res.iterations = it;
    m = measure(r);
    res.history.push_back(m);
    if (m <= target) {
      res.converged = true;
      return res;
    }
    pre(r, z);
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  if (opt.throw_on_failure) {
    std::string hist;
    const std::size_t step = std::max<std::size_t>(1, res.history.size() / 8);
    for (std::size_t i = 0; i < res.history.size(); i += step) hist += " " + std::to_string(res.history[i]);
    throw ConvergenceError("conjugate gradient did not converge in " + std::to_string(res.iterations) +
                           " iterations; residual history:" + hist);
  }
  return res;
}

}  // namespace geoxray
