#pragma once

// Reading geometry and boundary dissipation off indicator curves.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tdenclosure/core.hpp"
#include "tdenclosure/fields.hpp"
#include "tdenclosure/geometry.hpp"
#include "tdenclosure/indicator.hpp"

namespace tde {

struct WindowError : Error {
  using Error::Error;
};
struct InconsistencyError : Error {
  using Error::Error;
};

struct IndicatorCurve {
  std::vector<IndicatorSample> samples;
  Provenance provenance{Provenance::synthetic};
  std::optional<Probe> probe;
  std::optional<double> known_dist;

  void validate() const {
    for (std::size_t i = 1; i < samples.size(); ++i)
      if (!(samples[i].tau > samples[i - 1].tau)) throw DomainError("indicator curve: tau must be strictly increasing");
  }
  std::vector<double> taus() const {
    std::vector<double> t;
    for (const auto &s : samples) t.push_back(s.tau);
    return t;
  }
  /// Indices of zero samples (flagged, never fitted).
  std::vector<std::size_t> zeros() const {
    std::vector<std::size_t> z;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].sign == 0) z.push_back(i);
    return z;
  }
};

struct Window {
  double lo{0.0}, hi{0.0};
  bool contains(double t) const { return t >= lo * (1 - 1e-12) && t <= hi * (1 + 1e-12); }
};

/// Upper half of the sampled tau range.
inline Window default_window(const IndicatorCurve &c) {
  if (c.samples.empty()) throw WindowError("empty indicator curve");
  const double lo = c.samples.front().tau, hi = c.samples.back().tau;
  return {0.5 * (lo + hi), hi};
}

namespace detail {
inline std::vector<IndicatorSample> in_window(const IndicatorCurve &c, const Window &w, std::size_t min_count) {
  c.validate();
  std::vector<IndicatorSample> out;
  for (const auto &s : c.samples)
    if (w.contains(s.tau)) out.push_back(s);
  if (out.size() < min_count)
    throw WindowError("window [" + std::to_string(w.lo) + ", " + std::to_string(w.hi) + "] holds " +
                      std::to_string(out.size()) + " samples; need " + std::to_string(min_count));
  for (const auto &s : out)
    if (s.sign == 0) throw WindowError("zero indicator sample at tau = " + std::to_string(s.tau));
  for (const auto &s : out)
    if (s.sign != out.front().sign) throw WindowError("indicator changes sign inside the window");
  return out;
}

/// Least squares with columns built by `row`; returns coefficients and RMS residual.
inline std::pair<Eigen::VectorXd, double> lsq(const std::vector<double> &x, const std::vector<double> &y, int cols,
                                              const std::function<void(double, double *)> &row) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd A(n, cols);
  Eigen::VectorXd b(n);
  std::vector<double> r(cols);
  for (int i = 0; i < n; ++i) {
    row(x[i], r.data());
    for (int k = 0; k < cols; ++k) A(i, k) = r[k];
    b(i) = y[i];
  }
  Eigen::VectorXd c = A.colPivHouseholderQr().solve(b);
  const double rms = std::sqrt((A * c - b).squaredNorm() / n);
  return {c, rms};
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Distance

struct DistanceFitOptions {
  double tau_power = 4.0;   // fit log(tau^p |I|); p = 4 matches the leading algebraic factor
  int correction_terms = 1; // extra 1/tau^k columns absorbing the slow algebraic drift
};

struct DistanceFit {
  double dist{0.0};
  double residual{0.0};
  Window window;
  std::vector<double> taus;
  std::vector<double> sequence;  // -log|I(tau_i)| / (2 tau_i)
};

inline DistanceFit fit_distance(const IndicatorCurve &c, std::optional<Window> w = std::nullopt,
                                const DistanceFitOptions &o = {}) {
  const Window win = w ? *w : default_window(c);
  const auto s = detail::in_window(c, win, 4);
  if (static_cast<int>(s.size()) < 2 + o.correction_terms + 1)
    throw WindowError("too few samples for the requested correction terms");
  std::vector<double> x, y;
  DistanceFit out;
  out.window = win;
  for (const auto &e : s) {
    x.push_back(e.tau);
    y.push_back(e.log_abs + o.tau_power * std::log(e.tau));
  }
  for (const auto &e : c.samples)
    if (e.sign != 0) {
      out.taus.push_back(e.tau);
      out.sequence.push_back(-e.log_abs / (2.0 * e.tau));
    }
  const int cols = 2 + o.correction_terms;
  auto [coef, rms] = detail::lsq(x, y, cols, [&](double t, double *r) {
    r[0] = 1.0;
    r[1] = t;
    for (int k = 0; k < o.correction_terms; ++k) r[2 + k] = std::pow(1.0 / t, k + 1);
  });
  out.dist = -coef(1) / 2.0;
  out.residual = rms;
  return out;
}

// ---------------------------------------------------------------------------
// Sign

struct SignClass {
  int sign{0};  // +1: gamma < 1 regime, -1: gamma > 1 regime, 0: indeterminate
  bool indeterminate{true};
  std::string reason;
  double collapse_slope{0.0};  // d log|normalized| / d log tau over the top half
};

/// Probe-only factor of the normalized indicator: (2 phi(tau eta) e^{-tau eta} / (tau eta))^2 -> 1.
inline double probe_factor(double tau, double eta) {
  const double xi = tau * eta;
  const double f = 2.0 * fields::phi_scaled(xi) / xi;
  return f * f;
}

struct SignOptions {
  double collapse_slope = -0.5;  // normalized magnitude decaying faster than tau^this counts as collapse
};

/// Stable sign from the top quartile; reports indecision when mixed or when the
/// normalized indicator collapses below the leading order (reflection factor ~ 0).
inline SignClass classify_sign(const IndicatorCurve &c, const SignOptions &o = {}) {
  c.validate();
  SignClass out;
  const std::size_t n = c.samples.size();
  if (n < 4) throw WindowError("classify_sign needs at least 4 samples");
  const std::size_t start = n - (n + 3) / 4;
  int s = c.samples[start].sign;
  for (std::size_t i = start; i < n; ++i)
    if (c.samples[i].sign != s || s == 0) {
      out.reason = "mixed signs in the top quartile";
      return out;
    }
  // Collapse test needs a distance; prefer the known one.
  double dist = 0.0;
  if (c.known_dist) {
    dist = *c.known_dist;
  } else {
    try {
      dist = fit_distance(c).dist;
    } catch (const WindowError &) {
      out.sign = s;
      out.indeterminate = false;
      return out;
    }
  }
  const Window w = default_window(c);
  std::vector<double> x, y;
  for (const auto &e : c.samples) {
    if (!w.contains(e.tau) || e.sign == 0) continue;
    double v = std::abs(e.normalized(dist));
    if (c.probe) v /= probe_factor(e.tau, c.probe->radius);
    x.push_back(std::log(e.tau));
    y.push_back(std::log(v));
  }
  if (x.size() >= 2) {
    auto [coef, rms] = detail::lsq(x, y, 2, [](double t, double *r) {
      r[0] = 1.0;
      r[1] = t;
    });
    out.collapse_slope = coef(1);
    if (out.collapse_slope < o.collapse_slope) {
      out.reason = "normalized indicator collapses below the leading order";
      return out;
    }
  }
  out.sign = s;
  out.indeterminate = false;
  return out;
}

// ---------------------------------------------------------------------------
// Leading coefficient

struct CoefficientFitOptions {
  int correction_order = 1;    // model C (1 + c1/tau + ... + ck/tau^k)
  bool compensate_probe = false;  // divide out probe_factor (requires curve.probe)
  double misfit_tolerance = 0.05; // relative RMS above this flags the fit
};

struct CoefficientFit {
  double coefficient{0.0};
  double residual{0.0};  // relative RMS of the model fit
  double last_value{0.0}; // pure-limit estimate: normalized value at the largest tau in the window
  bool misfit{false};
  Window window;
};

inline CoefficientFit fit_leading_coefficient(const IndicatorCurve &c, double dist, std::optional<Window> w = std::nullopt,
                                              const CoefficientFitOptions &o = {}) {
  const Window win = w ? *w : default_window(c);
  const auto s = detail::in_window(c, win, static_cast<std::size_t>(std::max(2, o.correction_order + 2)));
  if (o.compensate_probe && !c.probe) throw DomainError("probe compensation requested without probe metadata");
  std::vector<double> x, y;
  for (const auto &e : s) {
    double v = e.normalized(dist);
    if (o.compensate_probe) v /= probe_factor(e.tau, c.probe->radius);
    x.push_back(e.tau);
    y.push_back(v);
  }
  const int cols = o.correction_order + 1;
  auto [coef, rms] = detail::lsq(x, y, cols, [&](double t, double *r) {
    for (int k = 0; k < cols; ++k) r[k] = std::pow(1.0 / t, k);
  });
  CoefficientFit out;
  out.coefficient = coef(0);
  out.last_value = y.back();
  double scale = 0.0;
  for (double v : y) scale = std::max(scale, std::abs(v));
  out.residual = scale > 0 ? rms / scale : 0.0;
  out.misfit = out.residual > o.misfit_tolerance;
  out.window = win;
  return out;
}

// ---------------------------------------------------------------------------
// Point-wise recovery

/// Leading coefficient of one reflector: (pi/2)(eta/d)^2 hessDet^{-1/2} (1 - gamma)/(1 + gamma).
inline double leading_coefficient(double d, double eta, double H, double K, double gamma) {
  const double det = hessian_det(d, H, K);
  if (!(det > 0)) throw DomainError("leading_coefficient: degenerate reflector");
  return (pi / 2.0) * (eta / d) * (eta / d) / std::sqrt(det) * (1.0 - gamma) / (1.0 + gamma);
}

/// Reflection factor A = (1 - gamma)/(1 + gamma) and its inverse.
inline double reflection_factor(double gamma) { return (1.0 - gamma) / (1.0 + gamma); }
inline double gamma_from_reflection(double A) {
  if (A <= -1.0) throw InconsistencyError("reflection factor -1 has no finite gamma");
  return (1.0 - A) / (1.0 + A);
}

inline double gamma_from_curvature(double C, double d, double eta, double H, double K) {
  if (!std::isfinite(C)) throw DomainError("gamma_from_curvature: coefficient must be finite");
  const double det = hessian_det(d, H, K);
  if (!(det > 0)) throw DomainError("gamma_from_curvature: hessDet must be positive");
  const double A = C / ((pi / 2.0) * (eta / d) * (eta / d) / std::sqrt(det));
  if (std::abs(A) >= 1.0) throw InconsistencyError("|A| >= 1 is incompatible with gamma >= 0");
  return gamma_from_reflection(A);
}

/// F = (2/pi)(d/eta)^2 C, the calibrated coefficient used by the three-ball system.
inline double calibrated_coefficient(double C, double d, double eta) { return (2.0 / pi) * (d / eta) * (d / eta) * C; }

struct ThreeBallOptions {
  double relative_threshold = 1e-6;  // |M| below this times the F^2 lambda scale: warning
  double absolute_floor = 1e-300;
};

struct ThreeBallResult {
  double H{0.0}, K{0.0}, A{0.0}, gamma{0.0};
  double M{0.0};
  double M_scale{0.0};
  bool ill_conditioned{false};
};

inline ThreeBallResult three_ball_recover(const std::array<double, 3> &F, const std::array<double, 3> &lambda, int sign,
                                          const ThreeBallOptions &o = {}) {
  if (sign != 1 && sign != -1) throw DomainError("three_ball_recover: sign must be +1 or -1");
  for (int j = 0; j < 3; ++j)
    for (int k = j + 1; k < 3; ++k)
      if (lambda[j] == lambda[k]) throw SolverError("three_ball_recover: inverse distances must be distinct");
  for (double f : F)
    if (f == 0.0 || (f > 0) != (sign > 0)) throw DomainError("three_ball_recover: F values must share the given sign");
  std::array<double, 3> f2{};
  for (int j = 0; j < 3; ++j) f2[j] = F[j] * F[j];
  const auto &l = lambda;
  const double a11 = -(l[0] * f2[0] - l[1] * f2[1]), a12 = f2[0] - f2[1];
  const double a21 = -(l[1] * f2[1] - l[2] * f2[2]), a22 = f2[1] - f2[2];
  const double b1 = f2[1] * l[1] * l[1] - f2[0] * l[0] * l[0];
  const double b2 = f2[2] * l[2] * l[2] - f2[1] * l[1] * l[1];
  ThreeBallResult r;
  r.M = (l[2] - l[1]) * f2[2] * f2[1] + (l[1] - l[0]) * f2[1] * f2[0] + (l[0] - l[2]) * f2[0] * f2[2];
  r.M_scale = std::max({std::abs(l[2] * f2[2] * f2[1]), std::abs(l[1] * f2[1] * f2[0]), std::abs(l[0] * f2[0] * f2[2]),
                        std::abs(l[1] * f2[2] * f2[1]), std::abs(l[0] * f2[1] * f2[0]), std::abs(l[2] * f2[0] * f2[2])});
  if (!(std::abs(r.M) > o.absolute_floor)) throw SolverError("three_ball_recover: singular system (M ~ 0)");
  r.ill_conditioned = std::abs(r.M) < o.relative_threshold * r.M_scale;
  const double det = a11 * a22 - a12 * a21;
  const double twoH = (b1 * a22 - a12 * b2) / det;
  r.K = (a11 * b2 - a21 * b1) / det;
  r.H = 0.5 * twoH;
  double A2 = 0.0;
  for (int j = 0; j < 3; ++j) A2 += f2[j] * (l[j] * l[j] - twoH * l[j] + r.K);
  A2 /= 3.0;
  if (A2 < 0.0) throw InconsistencyError("three_ball_recover: negative A^2");
  r.A = sign * std::sqrt(A2);
  r.gamma = gamma_from_reflection(r.A);
  return r;
}

// ---------------------------------------------------------------------------
// Ratios

struct RatioFit {
  double ratio{0.0};
  double correction{0.0};
  double residual{0.0};
  Window window;
};

/// Fits I1/I0 = rho (1 + c/tau) on the shared tau grid inside the window.
inline RatioFit ratio_indicator(const IndicatorCurve &num, const IndicatorCurve &den, std::optional<Window> w = std::nullopt) {
  if (num.samples.size() != den.samples.size()) throw DomainError("ratio_indicator: curves must share the tau grid");
  for (std::size_t i = 0; i < num.samples.size(); ++i)
    if (std::abs(num.samples[i].tau - den.samples[i].tau) > 1e-12 * num.samples[i].tau)
      throw DomainError("ratio_indicator: curves must share the tau grid");
  const Window win = w ? *w : default_window(den);
  detail::in_window(den, win, 2);
  std::vector<double> x, y;
  for (std::size_t i = 0; i < den.samples.size(); ++i) {
    if (!win.contains(den.samples[i].tau)) continue;
    const auto &a = num.samples[i];
    const auto &b = den.samples[i];
    x.push_back(b.tau);
    y.push_back(a.sign * b.sign * std::exp(a.log_abs - b.log_abs));
  }
  auto [coef, rms] = detail::lsq(x, y, 2, [](double t, double *r) {
    r[0] = 1.0;
    r[1] = 1.0 / t;
  });
  RatioFit out;
  out.ratio = coef(0);
  out.correction = coef(0) != 0 ? coef(1) / coef(0) : 0.0;
  out.residual = rms;
  out.window = win;
  return out;
}

/// Bracket for the multi-reflector ratio limit: weighted mean of per-reflector
/// reflection-factor ratios lies between their min and max.
inline std::pair<double, double> ratio_bracket(const std::vector<double> &gamma1, const std::vector<double> &gamma0) {
  if (gamma1.size() != gamma0.size() || gamma1.empty()) throw DomainError("ratio_bracket: size mismatch");
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t i = 0; i < gamma1.size(); ++i) {
    const double r = reflection_factor(gamma1[i]) / reflection_factor(gamma0[i]);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  return {lo, hi};
}

// ---------------------------------------------------------------------------
// Direction scan

struct ScanHit {
  Vec3 direction;
  double dist_fit{0.0};
  double mismatch{0.0};  // dist_fit + s + eta - d(p)
  bool on_boundary{false};
};

struct ScanOptions {
  double tolerance = 0.02;  // relative to d(p)
  std::optional<Window> window;
  DistanceFitOptions fit;
};

/// Places a probe at p + s w for each direction and tests whether p + d(p) w lies on the boundary.
/// `indicator` maps a probe to its indicator curve; `boundary_distance` is d(p).
inline std::vector<ScanHit> probe_direction_scan(const std::function<IndicatorCurve(const Probe &)> &indicator,
                                                 const Vec3 &p, double boundary_distance, double eta,
                                                 const std::vector<Vec3> &directions, double s,
                                                 const ScanOptions &o = {}) {
  if (!(s > 0.0 && s < boundary_distance)) throw DomainError("probe_direction_scan: need 0 < s < d(p)");
  std::vector<ScanHit> out;
  for (const Vec3 &w0 : directions) {
    if (std::abs(norm(w0) - 1.0) > 1e-9) throw DomainError("probe_direction_scan: directions must be unit vectors");
    ScanHit h;
    h.direction = w0;
    const Probe b{p + s * w0, eta};
    const IndicatorCurve c = indicator(b);
    h.dist_fit = fit_distance(c, o.window, o.fit).dist;
    h.mismatch = h.dist_fit + s + eta - boundary_distance;
    h.on_boundary = std::abs(h.mismatch) <= o.tolerance * boundary_distance;
    out.push_back(h);
  }
  return out;
}

}  // namespace tde
