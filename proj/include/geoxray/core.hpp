// Small fixed-size linear algebra and the error hierarchy shared by every module.
#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace geoxray {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

using Vec2 = std::array<double, 2>;
using Mat2 = std::array<std::array<double, 2>, 2>;

// ---------------------------------------------------------------------------
// errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Point outside the chart's coordinate range.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Metric failed positive-definiteness at a sampled point.
class DegenerateMetricError : public Error {
 public:
  using Error::Error;
};

/// Ray meets the boundary (almost) tangentially.
class TangencyError : public Error {
 public:
  using Error::Error;
};

/// Operation requires structure the input does not carry (e.g. revolution tag).
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Iterative method stopped before reaching its tolerance.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// 2x2 helpers

inline Vec2 operator+(const Vec2& a, const Vec2& b) { return {a[0] + b[0], a[1] + b[1]}; }
inline Vec2 operator-(const Vec2& a, const Vec2& b) { return {a[0] - b[0], a[1] - b[1]}; }
inline Vec2 operator*(double s, const Vec2& a) { return {s * a[0], s * a[1]}; }

inline Mat2 operator+(const Mat2& a, const Mat2& b) {
  return {{{a[0][0] + b[0][0], a[0][1] + b[0][1]}, {a[1][0] + b[1][0], a[1][1] + b[1][1]}}};
}
inline Mat2 operator*(double s, const Mat2& a) {
  return {{{s * a[0][0], s * a[0][1]}, {s * a[1][0], s * a[1][1]}}};
}

inline double det(const Mat2& m) { return m[0][0] * m[1][1] - m[0][1] * m[1][0]; }
inline double trace(const Mat2& m) { return m[0][0] + m[1][1]; }

inline Mat2 inverse(const Mat2& m) {
  const double d = det(m);
  return {{{m[1][1] / d, -m[0][1] / d}, {-m[1][0] / d, m[0][0] / d}}};
}

inline Mat2 matmul(const Mat2& a, const Mat2& b) {
  Mat2 c{};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
  return c;
}

inline Vec2 matvec(const Mat2& a, const Vec2& v) {
  return {a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]};
}

/// a(u, w) for a bilinear form a.
inline double form(const Mat2& a, const Vec2& u, const Vec2& w) {
  return u[0] * (a[0][0] * w[0] + a[0][1] * w[1]) + u[1] * (a[1][0] * w[0] + a[1][1] * w[1]);
}

inline bool is_positive_definite(const Mat2& m) { return m[0][0] > 0.0 && det(m) > 0.0; }

/// Reduce an angle into [-pi, pi).
inline double wrap_angle(double a) {
  double w = std::fmod(a + kPi, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  return w - kPi;
}

/// Reduce an angle into [0, 2pi).
inline double wrap_positive(double a) {
  double w = std::fmod(a, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  return w;
}

inline std::string format_point(const Vec2& x) {
  return "(" + std::to_string(x[0]) + ", " + std::to_string(x[1]) + ")";
}

}  // namespace geoxray
