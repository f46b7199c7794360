// One-dimensional quadrature rules.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "geoxray/core.hpp"

namespace geoxray {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t size() const { return nodes.size(); }
};

/// Gauss-Legendre rule with n nodes on [a, b] (Newton iteration on P_n).
inline QuadratureRule gauss_legendre(int n, double a = -1.0, double b = 1.0) {
  if (n < 1) throw ParameterError("gauss_legendre: need at least one node");
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (b + a);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      if (n == 1) {
        p1 = x;
        p0 = 1.0;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) {
        double q0 = 1.0, q1 = x;
        for (int k = 2; k <= n; ++k) {
          const double qk = ((2.0 * k - 1.0) * x * q1 - (k - 1.0) * q0) / k;
          q0 = q1;
          q1 = qk;
        }
        dp = (n == 1) ? 1.0 : n * (x * q1 - q0) / (x * x - 1.0);
        break;
      }
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = mid - half * x;
    rule.nodes[n - 1 - i] = mid + half * x;
    rule.weights[i] = half * w;
    rule.weights[n - 1 - i] = half * w;
  }
  return rule;
}

/// Periodic trapezoid rule on [0, period): nodes k*period/n.
inline QuadratureRule periodic_trapezoid(int n, double period = kTwoPi, double offset = 0.0) {
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.assign(n, period / n);
  for (int k = 0; k < n; ++k) rule.nodes[k] = offset + period * k / n;
  return rule;
}

/// Composite midpoint rule on [a, b].
inline QuadratureRule midpoint(int n, double a, double b) {
  QuadratureRule rule;
  rule.nodes.resize(n);
  const double h = (b - a) / n;
  rule.weights.assign(n, h);
  for (int k = 0; k < n; ++k) rule.nodes[k] = a + (k + 0.5) * h;
  return rule;
}

/// Midpoint rule on [a, b] graded towards the interior points `centers` by u -> u^power on each side.
/// Nodes are shared between panels in proportion to their lengths (at least 2 per panel).
inline QuadratureRule graded_midpoint(int n, double a, double b, std::vector<double> centers, double power = 3.0) {
  std::sort(centers.begin(), centers.end());
  std::vector<double> br{a};
  for (double c : centers)
    if (c > br.back() && c < b) br.push_back(c);
  br.push_back(b);
  const int panels = static_cast<int>(br.size()) - 1;
  if (n < 2 * panels) throw ParameterError("graded_midpoint: too few nodes for the panels");
  std::vector<int> count(panels);
  int used = 0;
  for (int p = 0; p < panels; ++p) {
    count[p] = std::max(2, static_cast<int>(std::lround(n * (br[p + 1] - br[p]) / (b - a))));
    used += count[p];
  }
  // hand the rounding surplus or deficit to the widest panel
  const int widest = static_cast<int>(std::max_element(count.begin(), count.end()) - count.begin());
  count[widest] += n - used;
  QuadratureRule rule;
  for (int p = 0; p < panels; ++p) {
    const double lo = br[p], hi = br[p + 1], len = hi - lo;
    const bool left = p > 0, right = p + 1 < panels;  // graded ends
    const auto G = [&](double u) {
      if (left && right) {
        const double A = std::pow(u, power), B = std::pow(1.0 - u, power);
        return A / (A + B);
      }
      if (left) return std::pow(u, power);
      if (right) return 1.0 - std::pow(1.0 - u, power);
      return u;
    };
    const int m = count[p];
    // node at the image of the cell midpoint, weight = image cell length
    for (int k = 0; k < m; ++k) {
      rule.nodes.push_back(lo + len * G((k + 0.5) / m));
      rule.weights.push_back(len * (G(double(k + 1) / m) - G(double(k) / m)));
    }
  }
  return rule;
}

/// Composite Gauss-Legendre with `panels` equal panels of `per_panel` nodes each.
inline QuadratureRule composite_gauss_legendre(int panels, int per_panel, double a, double b) {
  QuadratureRule rule;
  const double h = (b - a) / panels;
  for (int p = 0; p < panels; ++p) {
    const QuadratureRule q = gauss_legendre(per_panel, a + p * h, a + (p + 1) * h);
    rule.nodes.insert(rule.nodes.end(), q.nodes.begin(), q.nodes.end());
    rule.weights.insert(rule.weights.end(), q.weights.begin(), q.weights.end());
  }
  return rule;
}

}  // namespace geoxray
