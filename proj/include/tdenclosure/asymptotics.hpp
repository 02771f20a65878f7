#pragma once

// Surface integrals behind the indicator asymptotics:
//   J(tau)  = int (dv/dnu - tau gamma v) v dS
//   E(tau)  = I_B(tau) - J(tau)            (>= 0, a sum of squares)
//   ratio   = E / int (dv/dnu - tau gamma v) (1 - gamma)/(1 + gamma) v dS  -> 1
// and the Laplace-method limit
//   tau e^{2 tau d} int A e^{-2 tau |x-p|} / |x-p|^2 dS -> (pi/d^2) sum_q A(q)/sqrt(hessDet(q)).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "tdenclosure/core.hpp"
#include "tdenclosure/fields.hpp"
#include "tdenclosure/gamma.hpp"
#include "tdenclosure/geometry.hpp"
#include "tdenclosure/indicator.hpp"
#include "tdenclosure/quadrature.hpp"

namespace tde::asym {

struct SurfaceQuadrature {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  std::vector<double> weights;
  std::vector<double> gamma;
  std::vector<int> component;

  std::size_t size() const { return points.size(); }
  double area() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }
  void append(const SurfaceQuadrature &o) {
    points.insert(points.end(), o.points.begin(), o.points.end());
    normals.insert(normals.end(), o.normals.begin(), o.normals.end());
    weights.insert(weights.end(), o.weights.begin(), o.weights.end());
    gamma.insert(gamma.end(), o.gamma.begin(), o.gamma.end());
    component.insert(component.end(), o.component.begin(), o.component.end());
  }
};

struct RefinedQuadratureOptions {
  double tau = 10.0;          // refinement scale
  int per_panel = 16;         // Gauss points per polar panel
  double first_fraction = 0.125; // first polar panel = this * sqrt(d/tau), capped by 1/(4 tau)
  double growth = 1.3;
  double max_panel = 0.1;     // radians
  int azimuthal = 64;         // trapezoid nodes in the azimuth
};

namespace detail {

/// Linear map of the unit sphere onto the component: x = c + diag(s) u.
inline std::pair<Vec3, Vec3> sphere_map(const Component &c) {
  if (const auto *s = std::get_if<Sphere>(&c)) return {s->center, Vec3{s->radius, s->radius, s->radius}};
  if (const auto *e = std::get_if<Ellipsoid>(&c)) return {e->center, e->semi_axes};
  throw DomainError("refined quadrature needs an analytic component");
}

inline Vec3 scale(const Vec3 &a, const Vec3 &s) { return {a.x * s.x, a.y * s.y, a.z * s.z}; }

}  // namespace detail

/// Polar-parametrised quadrature on an analytic component with its pole at the
/// point nearest `p`, graded so the Laplace boundary layer is resolved.
inline SurfaceQuadrature refined_component_quadrature(const Component &comp, int index, const Vec3 &p,
                                                      const GammaField &gamma, const RefinedQuadratureOptions &o = {}) {
  const auto [c, s] = detail::sphere_map(comp);
  const SurfacePoint q = closest_point(comp, p);
  const double d = norm(q.point - p);
  const Vec3 pole = normalized(Vec3{(q.point.x - c.x) / s.x, (q.point.y - c.y) / s.y, (q.point.z - c.z) / s.z});
  const Frame f = Frame::from_axis(pole);
  const double rmax = std::max({s.x, s.y, s.z});
  const double patch = std::sqrt(std::max(d, 1e-3) / o.tau) / rmax;  // boundary-layer width in pole angle
  const double first = std::min(o.first_fraction * patch, 1.0 / (4.0 * o.tau * rmax));
  const auto theta = quad::composite(quad::graded_breaks(0.0, pi, first, o.growth, o.max_panel), o.per_panel);
  const int nphi = o.azimuthal;
  SurfaceQuadrature out;
  for (std::size_t i = 0; i < theta.nodes.size(); ++i) {
    const double th = theta.nodes[i], st = std::sin(th), ct = std::cos(th);
    for (int k = 0; k < nphi; ++k) {
      const double ph = 2.0 * pi * k / nphi, sp = std::sin(ph), cp = std::cos(ph);
      const Vec3 u = f.to_world(st * cp, st * sp, ct);
      const Vec3 du_dth = f.to_world(ct * cp, ct * sp, -st);
      const Vec3 du_dph = f.to_world(-st * sp, st * cp, 0.0);
      const Vec3 x = c + detail::scale(u, s);
      const Vec3 n = cross(detail::scale(du_dth, s), detail::scale(du_dph, s));
      const double jac = norm(n);
      if (jac == 0.0) continue;
      Vec3 nu = n / jac;
      if (dot(nu, x - c) < 0) nu = -nu;
      out.points.push_back(x);
      out.normals.push_back(nu);
      out.weights.push_back(jac * theta.weights[i] * (2.0 * pi / nphi));
      out.gamma.push_back(gamma(x, index));
      out.component.push_back(index);
    }
  }
  return out;
}

/// Refined quadrature over every analytic component of the obstacle.
inline SurfaceQuadrature refined_quadrature(const Obstacle &o, const Vec3 &p, const GammaField &gamma,
                                            const RefinedQuadratureOptions &opt = {}) {
  SurfaceQuadrature out;
  for (std::size_t i = 0; i < o.components.size(); ++i)
    out.append(refined_component_quadrature(o.components[i], static_cast<int>(i), p, gamma, opt));
  return out;
}

/// Panel quadrature on a triangle mesh (flat panels, face normals).
inline SurfaceQuadrature mesh_quadrature(const TriangulatedSurface &m, int index, const GammaField &gamma,
                                         const quad::TriangleRule &rule = quad::triangle_deg5()) {
  SurfaceQuadrature out;
  for (const auto &t : m.triangles) {
    const Vec3 &a = m.vertices[t[0]], &b = m.vertices[t[1]], &c = m.vertices[t[2]];
    const Vec3 n = cross(b - a, c - a);
    const double area = 0.5 * norm(n);
    const Vec3 nu = normalized(n);
    for (std::size_t k = 0; k < rule.weights.size(); ++k) {
      const auto &w = rule.bary[k];
      const Vec3 x = w[0] * a + w[1] * b + w[2] * c;
      out.points.push_back(x);
      out.normals.push_back(nu);
      out.weights.push_back(area * rule.weights[k]);
      out.gamma.push_back(gamma(x, index));
      out.component.push_back(index);
    }
  }
  return out;
}

/// Mixed obstacle: refined analytic components, panel rule on meshes.
inline SurfaceQuadrature obstacle_quadrature(const Obstacle &o, const Vec3 &p, const GammaField &gamma,
                                             const RefinedQuadratureOptions &opt = {}) {
  SurfaceQuadrature out;
  for (std::size_t i = 0; i < o.components.size(); ++i) {
    const auto &c = o.components[i];
    if (is_analytic(c))
      out.append(refined_component_quadrature(c, static_cast<int>(i), p, gamma, opt));
    else
      out.append(mesh_quadrature(std::get<TriangulatedSurface>(c), static_cast<int>(i), gamma));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Surface integrals. `shift` rescales by e^{2 tau shift} to keep large-tau values in range.

inline double J_tau(const SurfaceQuadrature &q, double tau, const Probe &b, double shift = 0.0) {
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double v = fields::v_shifted(q.points[i], tau, b, shift);
    const double g = fields::robin_trace_shifted(q.points[i], q.normals[i], tau, q.gamma[i], b, shift);
    s += g * v * q.weights[i];
  }
  return s;
}

/// Denominator of the energy ratio: int robin_trace (1-gamma)/(1+gamma) v dS.
inline double reflected_J_tau(const SurfaceQuadrature &q, double tau, const Probe &b, double shift = 0.0) {
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double v = fields::v_shifted(q.points[i], tau, b, shift);
    const double g = fields::robin_trace_shifted(q.points[i], q.normals[i], tau, q.gamma[i], b, shift);
    s += g * v * (1.0 - q.gamma[i]) / (1.0 + q.gamma[i]) * q.weights[i];
  }
  return s;
}

/// (1/tau) int (1/gamma) |robin_trace|^2 dS; infinite when gamma vanishes somewhere.
inline double upper_bound_term(const SurfaceQuadrature &q, double tau, const Probe &b, double shift = 0.0) {
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (!(q.gamma[i] > 0.0)) return std::numeric_limits<double>::infinity();
    const double g = fields::robin_trace_shifted(q.points[i], q.normals[i], tau, q.gamma[i], b, shift);
    s += g * g / q.gamma[i] * q.weights[i];
  }
  return s / tau;
}

// ---------------------------------------------------------------------------
// Laplace limit

struct LaplaceRow {
  double tau{0.0};
  double quadrature{0.0};  // tau e^{2 tau d} int A e^{-2 tau |x-p|}/|x-p|^2 dS
  double formula{0.0};     // (pi/d^2) sum A(q)/sqrt(hessDet)
  double ratio{0.0};
  bool under_resolved{false};
};

using Amplitude = std::function<double(const Vec3 &)>;

inline double laplace_formula(const std::vector<ReflectorPoint> &refl, const Amplitude &A) {
  double s = 0.0;
  for (const auto &r : refl) {
    if (!(r.hess_det > 0)) throw DomainError("laplace_formula: degenerate reflector");
    s += A(r.q) / std::sqrt(r.hess_det);
  }
  if (refl.empty()) throw DomainError("laplace_formula: empty reflector set");
  return pi / (refl.front().d * refl.front().d) * s;
}

inline double laplace_integral(const SurfaceQuadrature &q, const Amplitude &A, const Vec3 &p, double d, double tau) {
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double r = norm(q.points[i] - p);
    s += A(q.points[i]) * std::exp(-2.0 * tau * (r - d)) / (r * r) * q.weights[i];
  }
  return tau * s;
}

/// Node spacing near each reflector against 1/(2 tau).
inline bool laplace_under_resolved(const SurfaceQuadrature &q, const std::vector<ReflectorPoint> &refl, double tau) {
  for (const auto &r : refl) {
    double best = INFINITY, w = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double dd = norm(q.points[i] - r.q);
      if (dd < best) {
        best = dd;
        w = q.weights[i];
      }
    }
    if (std::sqrt(w) > 1.0 / (2.0 * tau)) return true;
  }
  return false;
}

/// Quadrature side against the closed formula over a tau sequence. The
/// quadrature builder is called per tau so refinement can follow the scale.
inline std::vector<LaplaceRow> laplace_limit_check(const std::function<SurfaceQuadrature(double)> &quadrature_for_tau,
                                                   const Amplitude &A, const Vec3 &p,
                                                   const std::vector<ReflectorPoint> &refl,
                                                   const std::vector<double> &taus) {
  if (refl.empty()) throw DomainError("laplace_limit_check: empty reflector set");
  const double rhs = laplace_formula(refl, A);
  std::vector<LaplaceRow> rows;
  for (double t : taus) {
    const SurfaceQuadrature q = quadrature_for_tau(t);
    LaplaceRow r;
    r.tau = t;
    r.quadrature = laplace_integral(q, A, p, refl.front().d, t);
    r.formula = rhs;
    r.ratio = rhs != 0 ? r.quadrature / rhs : std::numeric_limits<double>::quiet_NaN();
    r.under_resolved = laplace_under_resolved(q, refl, t);
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Energy term, energy ratio, bounds

struct EnergyValue {
  double value{0.0};
  bool consistent{true};  // false when E < -tolerance
};

/// E = I_B - J; both in the same e^{2 tau shift} scaling.
inline EnergyValue E_tau(double indicator, double J, double tolerance) {
  EnergyValue e;
  e.value = indicator - J;
  e.consistent = e.value >= -std::abs(tolerance);
  return e;
}

inline EnergyValue E_tau(const IndicatorSample &I, double J, double tolerance, double shift = 0.0) {
  const double scaled = I.sign == 0 ? 0.0 : I.sign * std::exp(I.log_abs + 2.0 * I.tau * shift);
  return E_tau(scaled, J, tolerance);
}

struct EnergyRatio {
  double ratio{std::numeric_limits<double>::quiet_NaN()};
  double denominator{0.0};
  bool excluded{false};
  std::string reason;
};

/// E / int robin_trace (1-gamma)/(1+gamma) v dS. Samples whose denominator is
/// below `noise_floor` times |J| are excluded, as is gamma == 1 on every reflector.
inline EnergyRatio energy_ratio(double E, const SurfaceQuadrature &q, double tau, const Probe &b,
                                   const std::vector<double> &reflector_gamma, double shift = 0.0,
                                   double noise_floor = 1e-8) {
  EnergyRatio r;
  bool any = false;
  for (double g : reflector_gamma) any = any || std::abs(g - 1.0) > 1e-12;
  if (!any) {
    r.excluded = true;
    r.reason = "gamma equals 1 at every reflector";
    return r;
  }
  r.denominator = reflected_J_tau(q, tau, b, shift);
  const double J = J_tau(q, tau, b, shift);
  if (!(std::abs(r.denominator) > noise_floor * std::abs(J))) {
    r.excluded = true;
    r.reason = "denominator below noise floor";
    return r;
  }
  r.ratio = E / r.denominator;
  return r;
}

struct BoundsReport {
  double J{0.0};
  double indicator{0.0};
  double upper_extra{0.0};
  double slack{0.0};
  bool lower_ok{false};
  bool upper_applicable{false};
  bool upper_ok{false};
};

/// J - slack <= I_B <= J + (1/tau) int |robin_trace|^2/gamma dS + slack, slack = slack_rel |J|.
inline BoundsReport bounds_check(const IndicatorSample &I, const SurfaceQuadrature &q, const Probe &b,
                                 double slack_rel = 1e-3, double shift = 0.0) {
  BoundsReport r;
  const double tau = I.tau;
  r.J = J_tau(q, tau, b, shift);
  r.indicator = I.sign == 0 ? 0.0 : I.sign * std::exp(I.log_abs + 2.0 * tau * shift);
  r.slack = slack_rel * std::abs(r.J);
  r.lower_ok = r.indicator >= r.J - r.slack;
  r.upper_extra = upper_bound_term(q, tau, b, shift);
  r.upper_applicable = std::isfinite(r.upper_extra);
  r.upper_ok = r.upper_applicable && r.indicator <= r.J + r.upper_extra + r.slack;
  return r;
}

// ---------------------------------------------------------------------------
// Tables

struct SweepRow {
  double tau{0.0};
  double J{0.0};
  double E{0.0};
  double ratio{0.0};
  std::string bounds;  // "ok", "lower-fail", "upper-fail", "upper-n/a"
};

inline void write_sweep_csv(std::ostream &os, const std::vector<SweepRow> &rows) {
  os << "tau,J,E,ratio,bounds\n";
  os.precision(12);
  for (const auto &r : rows) os << r.tau << ',' << r.J << ',' << r.E << ',' << r.ratio << ',' << r.bounds << '\n';
}

inline void write_laplace_csv(std::ostream &os, const std::vector<LaplaceRow> &rows) {
  os << "tau,quadrature,formula,ratio,under_resolved\n";
  os.precision(12);
  for (const auto &r : rows)
    os << r.tau << ',' << r.quadrature << ',' << r.formula << ',' << r.ratio << ',' << (r.under_resolved ? 1 : 0) << '\n';
}

}  // namespace tde::asym
