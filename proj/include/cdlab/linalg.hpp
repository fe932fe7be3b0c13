#pragma once

#include <cmath>
#include <span>

namespace cdlab {

/// Point or vector in the plane.
struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  constexpr Vec2& operator-=(const Vec2& o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  constexpr Vec2& operator*=(double s) {
    x *= s;
    y *= s;
    return *this;
  }
  constexpr bool operator==(const Vec2&) const = default;
};

constexpr Vec2 operator+(Vec2 a, const Vec2& b) { return a += b; }
constexpr Vec2 operator-(Vec2 a, const Vec2& b) { return a -= b; }
constexpr Vec2 operator-(const Vec2& a) { return {-a.x, -a.y}; }
constexpr Vec2 operator*(double s, Vec2 a) { return a *= s; }
constexpr Vec2 operator*(Vec2 a, double s) { return a *= s; }

constexpr double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
constexpr double squared_norm(const Vec2& a) { return dot(a, a); }
inline double norm(const Vec2& a) { return std::sqrt(squared_norm(a)); }
inline bool is_finite(const Vec2& a) { return std::isfinite(a.x) && std::isfinite(a.y); }

/// Symmetric 2x2 matrix [[xx, xy], [xy, yy]].
struct Sym2 {
  double xx = 0.0;
  double xy = 0.0;
  double yy = 0.0;

  static constexpr Sym2 identity(double s = 1.0) { return {s, 0.0, s}; }

  constexpr double trace() const { return xx + yy; }
  constexpr double det() const { return xx * yy - xy * xy; }

  constexpr Vec2 operator*(const Vec2& v) const { return {xx * v.x + xy * v.y, xy * v.x + yy * v.y}; }

  constexpr Sym2& operator+=(const Sym2& o) {
    xx += o.xx;
    xy += o.xy;
    yy += o.yy;
    return *this;
  }
  constexpr Sym2& operator*=(double s) {
    xx *= s;
    xy *= s;
    yy *= s;
    return *this;
  }

  Sym2 inverse() const {
    const double d = det();
    return {yy / d, -xy / d, xx / d};
  }

  /// Eigenvalues in ascending order.
  void eigenvalues(double& lo, double& hi) const {
    const double mid = 0.5 * (xx + yy);
    const double rad = std::hypot(0.5 * (xx - yy), xy);
    lo = mid - rad;
    hi = mid + rad;
  }

  double min_eigenvalue() const {
    double lo = 0.0;
    double hi = 0.0;
    eigenvalues(lo, hi);
    return lo;
  }

  /// Lower Cholesky factor [[l11, 0], [l21, l22]] applied to v.
  Vec2 cholesky_apply(const Vec2& v) const {
    const double l11 = std::sqrt(xx);
    const double l21 = xy / l11;
    const double l22 = std::sqrt(yy - l21 * l21);
    return {l11 * v.x, l21 * v.x + l22 * v.y};
  }

  constexpr bool operator==(const Sym2&) const = default;
};

constexpr Sym2 operator+(Sym2 a, const Sym2& b) { return a += b; }
constexpr Sym2 operator*(double s, Sym2 a) { return a *= s; }

/// Trace of the product of two symmetric matrices.
constexpr double trace_product(const Sym2& a, const Sym2& b) {
  return a.xx * b.xx + 2.0 * a.xy * b.xy + a.yy * b.yy;
}

/// a * b * a for symmetric a, b (result is symmetric).
constexpr Sym2 sandwich(const Sym2& a, const Sym2& b) {
  const double m11 = a.xx * b.xx + a.xy * b.xy;
  const double m12 = a.xx * b.xy + a.xy * b.yy;
  const double m21 = a.xy * b.xx + a.yy * b.xy;
  const double m22 = a.xy * b.xy + a.yy * b.yy;
  return {m11 * a.xx + m12 * a.xy, m11 * a.xy + m12 * a.yy, m21 * a.xy + m22 * a.yy};
}

/// Sample mean, accumulated in index order.
inline Vec2 sample_mean(std::span<const Vec2> xs) {
  Vec2 m;
  for (const Vec2& x : xs) m += x;
  return xs.empty() ? m : (1.0 / double(xs.size())) * m;
}

/// Unbiased sample covariance about `mean`.
inline Sym2 sample_covariance(std::span<const Vec2> xs, const Vec2& mean) {
  Sym2 c{0.0, 0.0, 0.0};
  for (const Vec2& x : xs) {
    const Vec2 d = x - mean;
    c += Sym2{d.x * d.x, d.x * d.y, d.y * d.y};
  }
  return xs.size() < 2 ? c : (1.0 / double(xs.size() - 1)) * c;
}

}  // namespace cdlab
