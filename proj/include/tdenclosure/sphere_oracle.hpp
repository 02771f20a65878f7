#pragma once

// Series solution of the exterior modified-Helmholtz Robin problem
//   (Delta - tau^2) R = 0 outside the sphere |x - c| = a,
//   dR/dnu - tau gamma R = -(dv/dnu - tau gamma v) on the sphere,
// for constant gamma, with v the probe field. Coordinates are centred at c with
// the polar axis through the probe centre p, so every mode is axisymmetric.
//
// Degree-n parts at the surface (z = tau a):
//   v_n(a) = phi/tau^3 * (2 tau/pi)(2n+1) i_n(z) k_n(tau r_p)
//   R_n(r) = R_n(a) k_n(tau r) / k_n(z),  R_n(a) = -v_n(a) (i_n'/i_n - gamma) / (k_n'/k_n - gamma)
// All exponentials are factored out so large tau does not underflow.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tdenclosure/bessel.hpp"
#include "tdenclosure/core.hpp"
#include "tdenclosure/fields.hpp"
#include "tdenclosure/geometry.hpp"
#include "tdenclosure/indicator.hpp"

namespace tde::oracle {

struct SphereScenario {
  Vec3 center;
  double radius{1.0};
  double gamma{0.0};
  Probe probe;
  double tau{1.0};

  double probe_center_distance() const { return norm(probe.center - center); }
  /// d_dD(p).
  double boundary_distance() const { return probe_center_distance() - radius; }
  /// dist(D, B).
  double dist() const { return boundary_distance() - probe.radius; }

  void validate() const {
    probe.validate();
    if (!(radius > 0.0)) throw DomainError("sphere radius must be positive");
    if (!(gamma >= 0.0)) throw DomainError("gamma must be nonnegative");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("tau must be positive");
    if (!(probe_center_distance() > radius + probe.radius))
      throw DomainError("probe ball closure meets the sphere");
  }
};

struct OracleOptions {
  int min_degree = 40;
  double degree_factor = 1.5;
  int degree_pad = 20;
  int max_degree = 16000;
  double tail_tol = 1e-14;  // relative tail of the absolute series
};

inline int default_degree(const SphereScenario &s, const OracleOptions &o = {}) {
  return std::max(o.min_degree, static_cast<int>(std::ceil(o.degree_factor * s.tau * s.radius)) + o.degree_pad);
}

struct ModalCoefficients {
  int degree{0};
  double tau{0.0}, radius{0.0}, r_probe{0.0}, eta{0.0}, gamma{0.0};
  Vec3 center, axis;
  double log_prefactor{0.0};         // log(phi(tau eta) / tau^3)
  std::vector<double> base;          // (2 tau/pi)(2n+1) i_n(z) k_n(z)
  std::vector<double> log_kappa;     // log(e^{tau r_p} k_n(tau r_p) / (e^{z} k_n(z)))
  std::vector<double> log_k_surface; // log(e^{z} k_n(z))
  std::vector<double> log_i_surface; // log(e^{-z} i_n(z))
  std::vector<double> robin_ratio;   // R_n(a) / v_n(a); empty until solved
  double source_tail{0.0};
  double reflected_tail{0.0};

  bool solved() const { return !robin_ratio.empty(); }
};

namespace detail {
inline double tail_ratio(const std::vector<double> &abs_terms) {
  double tot = 0.0, tail = 0.0;
  const std::size_t n = abs_terms.size();
  for (std::size_t k = 0; k < n; ++k) {
    tot += abs_terms[k];
    if (k + 5 >= n) tail += abs_terms[k];
  }
  return tot > 0.0 ? tail / tot : 0.0;
}

inline ModalCoefficients expand_with_degree(const SphereScenario &s, int N) {
  ModalCoefficients m;
  m.degree = N;
  m.tau = s.tau;
  m.radius = s.radius;
  m.r_probe = s.probe_center_distance();
  m.eta = s.probe.radius;
  m.gamma = s.gamma;
  m.center = s.center;
  m.axis = normalized(s.probe.center - s.center);
  m.log_prefactor = fields::log_phi(s.tau * s.probe.radius) - 3.0 * std::log(s.tau);
  const double za = s.tau * s.radius, zp = s.tau * m.r_probe;
  const bessel::Table ta = bessel::table(N, za);
  const bessel::Table tp = bessel::table(N, zp);
  m.base.resize(N + 1);
  m.log_kappa.resize(N + 1);
  m.log_k_surface = ta.log_k_scaled;
  m.log_i_surface.resize(N + 1);
  for (int n = 0; n <= N; ++n) {
    m.base[n] = (2.0 * s.tau / pi) * (2.0 * n + 1.0) * ta.ik_product(n);
    m.log_kappa[n] = tp.log_k_scaled[n] - ta.log_k_scaled[n];
    m.log_i_surface[n] = ta.i_scaled[n] > 0.0 ? std::log(ta.i_scaled[n]) : -std::numeric_limits<double>::infinity();
  }
  std::vector<double> terms(N + 1);
  for (int n = 0; n <= N; ++n) terms[n] = m.base[n] * std::exp(m.log_kappa[n]);
  m.source_tail = tail_ratio(terms);
  return m;
}
}  // namespace detail

/// Degree-wise expansion of v around the sphere centre.
inline ModalCoefficients expand_source(const SphereScenario &s, const OracleOptions &o = {}) {
  s.validate();
  int N = default_degree(s, o);
  while (true) {
    ModalCoefficients m = detail::expand_with_degree(s, N);
    if (m.source_tail <= o.tail_tol) return m;
    if (2 * N > o.max_degree)
      throw ConvergenceError("source expansion did not converge by degree " + std::to_string(N));
    N *= 2;
  }
}

/// Fills the Robin-matched reflected coefficients.
inline void solve_reflected(ModalCoefficients &m) {
  const double za = m.tau * m.radius;
  const bessel::Table ta = bessel::table(m.degree, za);
  m.robin_ratio.resize(m.degree + 1);
  std::vector<double> terms(m.degree + 1);
  for (int n = 0; n <= m.degree; ++n) {
    const double num = ta.log_deriv_i(n) - m.gamma;
    const double den = ta.log_deriv_k(n) - m.gamma;
    if (!(std::abs(den) > 0.0) || !std::isfinite(den))
      throw SolverError("vanishing Robin denominator at degree " + std::to_string(n));
    m.robin_ratio[n] = -num / den;
    terms[n] = std::abs(m.base[n] * m.robin_ratio[n]) * std::exp(2.0 * m.log_kappa[n]);
  }
  m.reflected_tail = detail::tail_ratio(terms);
}

inline ModalCoefficients solve_reflected(const SphereScenario &s, const OracleOptions &o = {}) {
  s.validate();
  int N = default_degree(s, o);
  while (true) {
    ModalCoefficients m = detail::expand_with_degree(s, N);
    solve_reflected(m);
    if (m.source_tail <= o.tail_tol && m.reflected_tail <= o.tail_tol) return m;
    if (2 * N > o.max_degree)
      throw ConvergenceError("reflected series did not converge by degree " + std::to_string(N));
    N *= 2;
  }
}

/// Same coefficients with an explicit truncation degree (no tail control).
inline ModalCoefficients solve_reflected_with_degree(const SphereScenario &s, int N) {
  s.validate();
  ModalCoefficients m = detail::expand_with_degree(s, N);
  solve_reflected(m);
  return m;
}

namespace detail {
struct LocalCoords {
  double r, cos_theta;
};
inline LocalCoords local(const ModalCoefficients &m, const Vec3 &x) {
  const Vec3 d = x - m.center;
  const double r = norm(d);
  return {r, r > 0.0 ? std::clamp(dot(d, m.axis) / r, -1.0, 1.0) : 1.0};
}
}  // namespace detail

/// Source series v(x) * e^{tau shift}, valid for a <= |x - c| < r_p.
inline double source_value(const ModalCoefficients &m, const Vec3 &x, double shift = 0.0) {
  const auto [r, ct] = detail::local(m, x);
  if (r < m.radius * (1 - 1e-12) || r >= m.r_probe) throw DomainError("source_value: point outside series region");
  const bessel::Table tr = bessel::table(m.degree, m.tau * r);
  const std::vector<double> P = bessel::legendre(m.degree, ct);
  const double expo = m.log_prefactor - m.tau * (m.r_probe - r) + m.tau * shift;
  double sum = 0.0;
  for (int n = 0; n <= m.degree; ++n) {
    if (tr.i_scaled[n] <= 0.0) break;
    const double log_iota = std::log(tr.i_scaled[n]) - m.log_i_surface[n];
    sum += m.base[n] * P[n] * std::exp(m.log_kappa[n] + log_iota + expo);
  }
  return sum;
}

/// Reflected field R(x) * e^{tau shift} for |x - c| >= a.
inline double reflected_value(const ModalCoefficients &m, const Vec3 &x, double shift = 0.0) {
  if (!m.solved()) throw DomainError("reflected_value: coefficients not solved");
  const auto [r, ct] = detail::local(m, x);
  if (r < m.radius * (1 - 1e-12)) throw DomainError("reflected_value: point inside the sphere");
  const bessel::Table tr = bessel::table(m.degree, m.tau * r);
  const std::vector<double> P = bessel::legendre(m.degree, ct);
  const double expo = m.log_prefactor - m.tau * (m.r_probe - m.radius) - m.tau * (r - m.radius) + m.tau * shift;
  double sum = 0.0;
  for (int n = 0; n <= m.degree; ++n) {
    const double log_kx = tr.log_k_scaled[n] - m.log_k_surface[n];
    sum += m.base[n] * m.robin_ratio[n] * P[n] * std::exp(m.log_kappa[n] + log_kx + expo);
  }
  return sum;
}

/// Radial derivative of the reflected field, times e^{tau shift}.
inline double reflected_radial_derivative(const ModalCoefficients &m, const Vec3 &x, double shift = 0.0) {
  if (!m.solved()) throw DomainError("reflected_radial_derivative: coefficients not solved");
  const auto [r, ct] = detail::local(m, x);
  const bessel::Table tr = bessel::table(m.degree, m.tau * r);
  const std::vector<double> P = bessel::legendre(m.degree, ct);
  const double expo = m.log_prefactor - m.tau * (m.r_probe - m.radius) - m.tau * (r - m.radius) + m.tau * shift;
  double sum = 0.0;
  for (int n = 0; n <= m.degree; ++n) {
    const double log_kx = tr.log_k_scaled[n] - m.log_k_surface[n];
    sum += m.base[n] * m.robin_ratio[n] * P[n] * m.tau * tr.log_deriv_k(n) * std::exp(m.log_kappa[n] + log_kx + expo);
  }
  return sum;
}

/// Radial derivative of the source series at the sphere surface, times e^{tau shift}.
inline double source_radial_derivative_on_surface(const ModalCoefficients &m, double cos_theta, double shift = 0.0) {
  const bessel::Table ta = bessel::table(m.degree, m.tau * m.radius);
  const std::vector<double> P = bessel::legendre(m.degree, cos_theta);
  const double expo = m.log_prefactor - m.tau * (m.r_probe - m.radius) + m.tau * shift;
  double sum = 0.0;
  for (int n = 0; n <= m.degree; ++n)
    sum += m.base[n] * P[n] * m.tau * ta.log_deriv_i(n) * std::exp(m.log_kappa[n] + expo);
  return sum;
}

/// R(p) * e^{2 tau d}, d = r_p - a; the reflected field at the probe centre with
/// its leading exponential removed.
inline double reflected_at_probe_scaled(const ModalCoefficients &m) {
  if (!m.solved()) throw DomainError("reflected_at_probe_scaled: coefficients not solved");
  double sum = 0.0;
  for (int n = 0; n <= m.degree; ++n) sum += m.base[n] * m.robin_ratio[n] * std::exp(2.0 * m.log_kappa[n]);
  return std::exp(m.log_prefactor) * sum;
}

/// I_B(tau) = 4 pi phi(tau eta)/tau^3 * R(p), by the ball-average identity.
inline IndicatorSample indicator_oracle(const SphereScenario &s, const OracleOptions &o = {}) {
  const ModalCoefficients m = solve_reflected(s, o);
  double sum = 0.0;
  for (int n = 0; n <= m.degree; ++n) sum += m.base[n] * m.robin_ratio[n] * std::exp(2.0 * m.log_kappa[n]);
  const int sign = (sum > 0) - (sum < 0);
  const double d = m.r_probe - m.radius;
  const double log_abs = std::log(4.0 * pi) + 2.0 * m.log_prefactor - 2.0 * s.tau * d + (sign ? std::log(std::abs(sum)) : 0.0);
  return IndicatorSample::from_log(s.tau, sign, log_abs);
}

/// Indicator samples over a tau schedule (each sample independent).
inline std::vector<IndicatorSample> indicator_curve(SphereScenario s, const std::vector<double> &taus,
                                                    const OracleOptions &o = {}) {
  std::vector<IndicatorSample> out;
  out.reserve(taus.size());
  for (double t : taus) {
    s.tau = t;
    out.push_back(indicator_oracle(s, o));
  }
  return out;
}

}  // namespace tde::oracle
