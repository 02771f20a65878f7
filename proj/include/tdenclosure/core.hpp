#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>

namespace tde {

inline constexpr double pi = std::numbers::pi;

struct Vec3 {
  double x{0.0}, y{0.0}, z{0.0};

  constexpr double &operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }

  constexpr Vec3 &operator+=(const Vec3 &o) { x += o.x; y += o.y; z += o.z; return *this; }
  constexpr Vec3 &operator-=(const Vec3 &o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  constexpr Vec3 &operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

  friend constexpr Vec3 operator+(Vec3 a, const Vec3 &b) { return a += b; }
  friend constexpr Vec3 operator-(Vec3 a, const Vec3 &b) { return a -= b; }
  friend constexpr Vec3 operator-(const Vec3 &a) { return {-a.x, -a.y, -a.z}; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
  friend constexpr Vec3 operator/(Vec3 a, double s) { return a *= (1.0 / s); }
  friend constexpr bool operator==(const Vec3 &, const Vec3 &) = default;

  friend std::ostream &operator<<(std::ostream &os, const Vec3 &v) {
    return os << '(' << v.x << ", " << v.y << ", " << v.z << ')';
  }
};

constexpr double dot(const Vec3 &a, const Vec3 &b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3 &a, const Vec3 &b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3 &a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3 &a) { return a / norm(a); }

/// Any unit vector orthogonal to `n` (assumed unit).
inline Vec3 any_orthogonal(const Vec3 &n) {
  const Vec3 t = std::abs(n.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  return normalized(t - dot(t, n) * n);
}

/// Orthonormal frame whose third axis is `axis`.
struct Frame {
  Vec3 e1, e2, e3;

  static Frame from_axis(const Vec3 &axis) {
    Frame f;
    f.e3 = normalized(axis);
    f.e1 = any_orthogonal(f.e3);
    f.e2 = cross(f.e3, f.e1);
    return f;
  }
  Vec3 to_world(double a, double b, double c) const { return a * e1 + b * e2 + c * e3; }
};

// Error hierarchy. Every failure the library reports derives from tde::Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Series or iteration failed to reach its tolerance.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Linear solve failed or produced an unacceptable residual.
class SolverError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Invalid or degenerate surface mesh.
class MeshError : public Error {
 public:
  using Error::Error;
};

}  // namespace tde
