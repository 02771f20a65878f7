#pragma once

// Closed-form probe field v solving (Delta - tau^2) v + chi_B = 0 in R^3.
//
// Outside B:  v(x) = phi(tau eta) / tau^3 * exp(-tau r) / r,   r = |x - p|
// Inside B:   v(x) = (1 - (1 + tau eta) exp(-tau eta) sinh(tau r)/(tau r)) / tau^2
// with phi(xi) = xi cosh(xi) - sinh(xi). The interior branch follows from
// continuity of value and flux at r = eta.

#include <array>
#include <cmath>
#include <functional>

#include "tdenclosure/core.hpp"
#include "tdenclosure/geometry.hpp"

namespace tde::fields {

/// Arguments below this use power series.
inline constexpr double series_crossover = 0.5;

/// phi(xi) = xi cosh xi - sinh xi = sum_{k>=1} 2k xi^(2k+1) / (2k+1)!.
inline double phi(double xi) {
  if (xi < 0.0) throw DomainError("phi: argument must be nonnegative");
  if (xi < series_crossover) {
    const double x2 = xi * xi;
    double term = xi * x2 / 6.0;  // xi^3 / 3!
    double sum = 0.0;
    for (int k = 1; k < 30; ++k) {
      const double t = 2.0 * k * term;
      sum += t;
      if (t < 1e-18 * sum) break;
      term *= x2 / ((2.0 * k + 2.0) * (2.0 * k + 3.0));
    }
    return sum;
  }
  return xi * std::cosh(xi) - std::sinh(xi);
}

/// phi(xi) * exp(-xi), finite for all xi >= 0.
inline double phi_scaled(double xi) {
  if (xi < 20.0) return phi(xi) * std::exp(-xi);
  return 0.5 * ((xi - 1.0) + (xi + 1.0) * std::exp(-2.0 * xi));
}

inline double log_phi(double xi) {
  if (xi == 0.0) return -std::numeric_limits<double>::infinity();
  return std::log(phi_scaled(xi)) + xi;
}

/// sinh(z)/z with the z -> 0 limit.
inline double sinhc(double z) {
  if (std::abs(z) < series_crossover) {
    const double z2 = z * z;
    double term = 1.0, sum = 1.0;
    for (int k = 1; k < 20; ++k) {
      term *= z2 / ((2.0 * k) * (2.0 * k + 1.0));
      sum += term;
      if (term < 1e-18 * sum) break;
    }
    return sum;
  }
  return std::sinh(z) / z;
}

/// d/dz [sinh(z)/z] = phi(z) / z^2.
inline double sinhc_prime(double z) {
  if (z == 0.0) return 0.0;
  return phi(z) / (z * z);
}

namespace detail {
inline void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("tau must be positive and finite");
}
}  // namespace detail

/// v as a function of the radial distance r = |x - p|.
inline double v_radial(double r, double tau, double eta) {
  detail::check_tau(tau);
  const double xi = tau * eta;
  if (r >= eta) return phi_scaled(xi) * std::exp(-tau * (r - eta)) / (tau * tau * tau * r);
  return (1.0 - (1.0 + xi) * std::exp(-xi) * sinhc(tau * r)) / (tau * tau);
}

/// dv/dr.
inline double v_radial_derivative(double r, double tau, double eta) {
  detail::check_tau(tau);
  const double xi = tau * eta;
  if (r >= eta) return -(tau + 1.0 / r) * v_radial(r, tau, eta);
  return -(1.0 + xi) * std::exp(-xi) * sinhc_prime(tau * r) / tau;
}

inline double v_eval(const Vec3 &x, double tau, const Probe &b) {
  return v_radial(norm(x - b.center), tau, b.radius);
}

inline Vec3 v_gradient(const Vec3 &x, double tau, const Probe &b) {
  const Vec3 d = x - b.center;
  const double r = norm(d);
  if (r == 0.0) return {};
  return (v_radial_derivative(r, tau, b.radius) / r) * d;
}

/// dv/dnu = (tau + 1/r) ((p - x)/r . nu) v for x outside B.
inline double v_normal_derivative(const Vec3 &x, const Vec3 &nu, double tau, const Probe &b) {
  const Vec3 d = b.center - x;
  const double r = norm(d);
  if (r < b.radius) throw DomainError("v_normal_derivative: point lies inside the probe ball");
  return (tau + 1.0 / r) * (dot(d, nu) / r) * v_radial(r, tau, b.radius);
}

/// dv/dnu - tau gamma v.
inline double robin_trace(const Vec3 &x, const Vec3 &nu, double tau, double gamma, const Probe &b) {
  if (gamma < 0.0) throw DomainError("robin_trace: gamma must be nonnegative");
  return v_normal_derivative(x, nu, tau, b) - tau * gamma * v_eval(x, tau, b);
}

/// v(x) * exp(tau * shift), evaluated without intermediate under/overflow (x outside B).
inline double v_shifted(const Vec3 &x, double tau, const Probe &b, double shift) {
  const double r = norm(x - b.center);
  if (r < b.radius) throw DomainError("v_shifted: point lies inside the probe ball");
  const double xi = tau * b.radius;
  return phi_scaled(xi) * std::exp(-tau * (r - b.radius - shift)) / (tau * tau * tau * r);
}

/// robin_trace(x) * exp(tau * shift) (x outside B).
inline double robin_trace_shifted(const Vec3 &x, const Vec3 &nu, double tau, double gamma,
                                  const Probe &b, double shift) {
  const Vec3 d = b.center - x;
  const double r = norm(d);
  return ((tau + 1.0 / r) * dot(d, nu) / r - tau * gamma) * v_shifted(x, tau, b, shift);
}

/// 4 pi phi(tau eta) / tau^3: the ball-average weight for solutions of (Delta - tau^2) h = 0.
inline double ball_average_weight(double tau, double eta) {
  detail::check_tau(tau);
  return 4.0 * pi * phi(tau * eta) / (tau * tau * tau);
}

/// int_B h dx = 4 pi phi(tau eta)/tau^3 * h(p) for (Delta - tau^2) h = 0 near the closed ball.
inline double ball_average_identity(const std::function<double(const Vec3 &)> &h, double tau,
                                    const Probe &b) {
  b.validate();
  return ball_average_weight(tau, b.radius) * h(b.center);
}

/// int_B v dx = 4 pi / tau^5 * (xi^3/3 - (1 + xi) e^{-xi} phi(xi)), xi = tau eta.
inline double ball_integral_v(double tau, const Probe &b) {
  detail::check_tau(tau);
  const double xi = tau * b.radius;
  double g = 0.0;
  if (xi < 1.0) {
    // Taylor coefficients of (1 + xi) e^{-xi} and phi, multiplied out.
    static const std::array<double, 40> coef = [] {
      std::array<double, 40> c1{}, c2{}, out{};
      double fact = 1.0;
      for (int n = 0; n < 40; ++n) {
        if (n > 0) fact *= n;
        c1[n] = ((n % 2) ? -1.0 : 1.0) * (1.0 - n) / fact;
        c2[n] = (n >= 3 && n % 2 == 1) ? (n - 1.0) / fact : 0.0;
      }
      for (int i = 0; i < 40; ++i)
        for (int j = 0; i + j < 40; ++j) out[i + j] -= c1[i] * c2[j];
      out[3] += 1.0 / 3.0;
      return out;
    }();
    double pw = 1.0;
    for (int n = 0; n < 40; ++n) {
      g += coef[n] * pw;
      pw *= xi;
    }
  } else {
    g = xi * xi * xi / 3.0 - (1.0 + xi) * phi_scaled(xi);
  }
  const double t2 = tau * tau;
  return 4.0 * pi * g / (t2 * t2 * tau);
}

}  // namespace tde::fields
