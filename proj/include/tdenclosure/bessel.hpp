#pragma once

// Modified spherical Bessel functions
//   i_n(z) = sqrt(pi / 2z) I_{n+1/2}(z),   i_0(z) = sinh(z) / z
//   k_n(z) = sqrt(pi / 2z) K_{n+1/2}(z),   k_0(z) = (pi/2) e^{-z} / z
// With these, e^{-tau|x-y|}/|x-y| = (2 tau / pi) sum (2n+1) i_n(tau r<) k_n(tau r>) P_n(cos theta)
// and the Wronskian is i_n k_n' - i_n' k_n = -pi / (2 z^2).
//
// i_n is obtained from the ratio i_{n+1}/i_n (continued fraction at the top
// degree, downward recurrence below it); k_n from upward recurrence. Values are
// carried scaled by e^{-z} (for i) and e^{z} (for k).

#include <cmath>
#include <utility>
#include <vector>

#include "tdenclosure/core.hpp"

namespace tde::bessel {

/// i_{N+1}(z) / i_N(z) by modified Lentz evaluation of the continued fraction.
inline double ratio_i_top(int N, double z) {
  constexpr double tiny = 1e-300;
  auto b = [z](long j) { return (2.0 * j + 3.0) / z; };
  double f = b(N);
  if (f == 0.0) f = tiny;
  double C = f, D = 0.0;
  for (long j = N + 1; j < N + 200000; ++j) {
    D = b(j) + D;
    if (D == 0.0) D = tiny;
    C = b(j) + 1.0 / C;
    if (C == 0.0) C = tiny;
    D = 1.0 / D;
    const double delta = C * D;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-16) return 1.0 / f;
  }
  throw ConvergenceError("continued fraction for i_{n+1}/i_n did not converge");
}

/// Tables for degrees 0..nmax at a fixed argument z > 0.
struct Table {
  double z{0.0};
  int nmax{0};
  std::vector<double> ratio_i;   // i_{n+1}/i_n, n = 0..nmax
  std::vector<double> ratio_k;   // k_{n+1}/k_n, n = 0..nmax
  std::vector<double> i_scaled;  // e^{-z} i_n
  std::vector<double> k_scaled;  // e^{z} k_n (may overflow to inf for n >> z)
  std::vector<double> log_k_scaled;

  /// i_n(z) k_n(z), from the Wronskian; never over/underflows.
  double ik_product(int n) const { return pi / (2.0 * z * z * (ratio_k[n] + ratio_i[n])); }
  /// i_n'(z) / i_n(z).
  double log_deriv_i(int n) const { return ratio_i[n] + n / z; }
  /// k_n'(z) / k_n(z).
  double log_deriv_k(int n) const { return n / z - ratio_k[n]; }
};

inline Table table(int nmax, double z) {
  if (!(z > 0.0) || !std::isfinite(z)) throw DomainError("bessel: argument must be positive");
  if (nmax < 0) throw DomainError("bessel: degree must be nonnegative");
  Table t;
  t.z = z;
  t.nmax = nmax;
  t.ratio_i.resize(nmax + 1);
  t.ratio_k.resize(nmax + 1);
  t.ratio_i[nmax] = ratio_i_top(nmax, z);
  for (int n = nmax - 1; n >= 0; --n) t.ratio_i[n] = 1.0 / ((2.0 * n + 3.0) / z + t.ratio_i[n + 1]);
  t.ratio_k[0] = 1.0 + 1.0 / z;
  for (int n = 1; n <= nmax; ++n) t.ratio_k[n] = 1.0 / t.ratio_k[n - 1] + (2.0 * n + 1.0) / z;

  t.i_scaled.resize(nmax + 1);
  t.k_scaled.resize(nmax + 1);
  t.log_k_scaled.resize(nmax + 1);
  t.i_scaled[0] = -std::expm1(-2.0 * z) / (2.0 * z);
  t.k_scaled[0] = pi / (2.0 * z);
  t.log_k_scaled[0] = std::log(t.k_scaled[0]);
  for (int n = 1; n <= nmax; ++n) {
    t.i_scaled[n] = t.i_scaled[n - 1] * t.ratio_i[n - 1];
    t.k_scaled[n] = t.k_scaled[n - 1] * t.ratio_k[n - 1];
    t.log_k_scaled[n] = t.log_k_scaled[n - 1] + std::log(t.ratio_k[n - 1]);
  }
  return t;
}

/// (e^{-z} i_n(z), e^{z} k_n(z)).
inline std::pair<double, double> scaled_i_k(int n, double z) {
  const Table t = table(n, z);
  return {t.i_scaled[n], t.k_scaled[n]};
}

/// (i_n(z), k_n(z)); overflow to inf is possible for extreme arguments.
inline std::pair<double, double> bessel_i_k(int n, double z) {
  const auto [is, ks] = scaled_i_k(n, z);
  return {is * std::exp(z), ks * std::exp(-z)};
}

/// (i_n'(z), k_n'(z)).
inline std::pair<double, double> bessel_i_k_derivative(int n, double z) {
  const Table t = table(n + 1, z);
  const double ez = std::exp(z);
  const double in = t.i_scaled[n] * ez, in1 = t.i_scaled[n + 1] * ez;
  const double kn = t.k_scaled[n] / ez, kn1 = t.k_scaled[n + 1] / ez;
  return {in1 + n / z * in, n / z * kn - kn1};
}

/// Legendre polynomials P_0..P_nmax at x.
inline std::vector<double> legendre(int nmax, double x) {
  std::vector<double> p(nmax + 1);
  p[0] = 1.0;
  if (nmax >= 1) p[1] = x;
  for (int n = 1; n < nmax; ++n) p[n + 1] = ((2.0 * n + 1.0) * x * p[n] - n * p[n - 1]) / (n + 1.0);
  return p;
}

}  // namespace tde::bessel
