#pragma once

// Collocation boundary elements for the exterior Robin problem
//   (Delta - tau^2) R = 0 outside D,   dR/dnu - tau gamma R = -(dv/dnu - tau gamma v) on dD,
// with R = S[psi], G(x, y) = e^{-tau |x-y|} / (4 pi |x-y|), flat triangles and
// piecewise-constant densities. The exterior trace of dS[psi]/dnu is
// (-1/2 I + K')psi, so psi solves (-1/2 I + K' - tau diag(gamma) S) psi = rhs.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tdenclosure/core.hpp"
#include "tdenclosure/fields.hpp"
#include "tdenclosure/gamma.hpp"
#include "tdenclosure/geometry.hpp"
#include "tdenclosure/indicator.hpp"
#include "tdenclosure/parallel.hpp"
#include "tdenclosure/quadrature.hpp"

namespace tde::bem {

struct Panel {
  Vec3 a, b, c;
  Vec3 centroid;
  Vec3 normal;
  double area{0.0};
  double diameter{0.0};
  double gamma{0.0};
  int component{0};
};

struct MeshingOptions {
  double h_pole = 0.03;  // edge length at the refinement pole, relative to the component size
  double growth = 0.08;  // per radian of polar angle
  double h_max = 0.15;
  std::optional<Vec3> refine_toward;  // pole placed at the point nearest to this
};

struct PanelSystem {
  std::vector<Panel> panels;
  double tau{1.0};
  int components{0};

  std::size_t size() const { return panels.size(); }
  double max_diameter() const {
    double d = 0.0;
    for (const auto &p : panels) d = std::max(d, p.diameter);
    return d;
  }
};

inline std::vector<Panel> panels_from_mesh(const TriangulatedSurface &m, int component, const GammaField &gamma) {
  std::vector<Panel> out;
  out.reserve(m.triangles.size());
  for (const auto &t : m.triangles) {
    Panel p;
    p.a = m.vertices[t[0]];
    p.b = m.vertices[t[1]];
    p.c = m.vertices[t[2]];
    const Vec3 n = cross(p.b - p.a, p.c - p.a);
    p.area = 0.5 * norm(n);
    if (!(p.area > 0.0)) throw MeshError("degenerate panel with zero area");
    p.normal = n / (2.0 * p.area);
    p.centroid = (p.a + p.b + p.c) / 3.0;
    p.diameter = std::max({norm(p.b - p.a), norm(p.c - p.b), norm(p.a - p.c)});
    p.component = component;
    p.gamma = gamma(p.centroid, component);
    out.push_back(p);
  }
  return out;
}

/// Mesh for one component: analytic components get a ring mesh with its pole
/// toward `refine_toward`; meshes are used as given.
inline TriangulatedSurface component_mesh(const Component &c, const MeshingOptions &o) {
  if (const auto *m = std::get_if<TriangulatedSurface>(&c)) return *m;
  const Vec3 ctr = component_center(c);
  RingMeshOptions r;
  r.pole = o.refine_toward ? normalized(closest_point(c, *o.refine_toward).point - ctr) : Vec3{0, 0, 1};
  double size = 1.0;
  if (const auto *s = std::get_if<Sphere>(&c)) size = s->radius;
  if (const auto *e = std::get_if<Ellipsoid>(&c)) size = std::max({e->semi_axes.x, e->semi_axes.y, e->semi_axes.z});
  r.h_pole = o.h_pole / size;
  r.growth = o.growth / size;
  r.h_max = o.h_max / size;
  return ring_mesh(c, r);
}

inline PanelSystem build_panel_system(const Obstacle &o, const GammaField &gamma, double tau,
                                      const MeshingOptions &mo = {}) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("bem: tau must be positive");
  PanelSystem ps;
  ps.tau = tau;
  ps.components = static_cast<int>(o.components.size());
  for (std::size_t i = 0; i < o.components.size(); ++i) {
    const auto m = component_mesh(o.components[i], mo);
    const auto p = panels_from_mesh(m, static_cast<int>(i), gamma);
    ps.panels.insert(ps.panels.end(), p.begin(), p.end());
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Panel integrals

struct AssemblyOptions {
  double far_ratio = 4.0;  // distance/diameter beyond which the 3-point rule is used
  double mid_ratio = 1.5;  // beyond this, the 7-point rule; closer panels are subdivided
  int max_depth = 3;
  int self_order = 16;     // Gauss points per sub-triangle angle in the self term
  int threads = 0;
  std::size_t dense_limit = 12000;  // dense LU up to this many panels, matrix-free GMRES above
  double gmres_tol = 1e-10;
  int gmres_restart = 60;
  int gmres_max_iter = 2000;
  double residual_tol = 1e-8;
};

struct KernelPair {
  double S{0.0};   // int G(x, y) dy
  double Kp{0.0};  // int dG/dnu_x (x, y) dy
};

namespace detail {

inline void accumulate_rule(const Vec3 &x, const Vec3 &nu, const Vec3 &a, const Vec3 &b, const Vec3 &c, double area,
                            double tau, const quad::TriangleRule &rule, KernelPair &acc) {
  for (std::size_t k = 0; k < rule.weights.size(); ++k) {
    const auto &w = rule.bary[k];
    const Vec3 y = w[0] * a + w[1] * b + w[2] * c;
    const Vec3 d = x - y;
    const double r = norm(d);
    const double g = std::exp(-tau * r) / (4.0 * pi * r);
    const double wt = area * rule.weights[k];
    acc.S += g * wt;
    acc.Kp += -(tau + 1.0 / r) * g * dot(d, nu) / r * wt;
  }
}

inline void integrate_adaptive(const Vec3 &x, const Vec3 &nu, const Vec3 &a, const Vec3 &b, const Vec3 &c,
                               double tau, const AssemblyOptions &o, int depth, KernelPair &acc) {
  const double area = 0.5 * norm(cross(b - a, c - a));
  const double diam = std::max({norm(b - a), norm(c - b), norm(a - c)});
  const double dist = norm(x - (a + b + c) / 3.0);
  if (dist > o.far_ratio * diam) return accumulate_rule(x, nu, a, b, c, area, tau, quad::triangle_deg2(), acc);
  if (dist > o.mid_ratio * diam || depth >= o.max_depth)
    return accumulate_rule(x, nu, a, b, c, area, tau, quad::triangle_deg5(), acc);
  const Vec3 ab = 0.5 * (a + b), bc = 0.5 * (b + c), ca = 0.5 * (c + a);
  integrate_adaptive(x, nu, a, ab, ca, tau, o, depth + 1, acc);
  integrate_adaptive(x, nu, ab, b, bc, tau, o, depth + 1, acc);
  integrate_adaptive(x, nu, ca, bc, c, tau, o, depth + 1, acc);
  integrate_adaptive(x, nu, ab, bc, ca, tau, o, depth + 1, acc);
}

/// int_panel G(x0, y) dy with x0 in the panel plane, in polar coordinates about x0:
/// sum over edges of int_theta (1 - e^{-tau rho(theta)}) / (4 pi tau) dtheta.
inline double self_single_layer(const Panel &p, const Vec3 &x0, double tau, int order) {
  const auto &g = quad::gauss_legendre_cached(order);
  const Vec3 v[3] = {p.a, p.b, p.c};
  double s = 0.0;
  for (int e = 0; e < 3; ++e) {
    const Vec3 A = v[e] - x0, B = v[(e + 1) % 3] - x0;
    const double la = norm(A), lb = norm(B);
    const double ang = std::acos(std::clamp(dot(A, B) / (la * lb), -1.0, 1.0));
    const Vec3 edge = B - A;
    const double h = norm(cross(A, edge)) / norm(edge);  // distance from x0 to the edge line
    const double th_a = std::acos(std::clamp(h / la, -1.0, 1.0));
    // Signed angle of A from the foot of the perpendicular, along the sweep direction.
    const double sgn = dot(A, edge) < 0 ? -1.0 : 1.0;
    const double t0 = sgn * th_a;
    for (int i = 0; i < order; ++i) {
      const double t = t0 + 0.5 * ang * (g.nodes[i] + 1.0);
      const double rho = h / std::cos(t);
      s += 0.5 * ang * g.weights[i] * (-std::expm1(-tau * rho)) / (4.0 * pi * tau);
    }
  }
  return s;
}

}  // namespace detail

/// Collocation entries for target point x (normal nu) against panel j.
inline KernelPair panel_entry(const PanelSystem &ps, std::size_t i, std::size_t j, const AssemblyOptions &o = {}) {
  const Panel &pi_ = ps.panels[i];
  const Panel &pj = ps.panels[j];
  if (i == j) return {detail::self_single_layer(pj, pj.centroid, ps.tau, o.self_order), 0.0};
  KernelPair acc;
  detail::integrate_adaptive(pi_.centroid, pi_.normal, pj.a, pj.b, pj.c, ps.tau, o, 0, acc);
  return acc;
}

struct Operators {
  Eigen::MatrixXd S;
  Eigen::MatrixXd Kp;
};

inline Operators assemble_operators(const PanelSystem &ps, const AssemblyOptions &o = {}) {
  const std::size_t n = ps.size();
  Operators op;
  op.S.resize(n, n);
  op.Kp.resize(n, n);
  parallel_for(0, n, [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j) {
      const KernelPair k = panel_entry(ps, i, j, o);
      op.S(i, j) = k.S;
      op.Kp(i, j) = k.Kp;
    }
  }, o.threads);
  return op;
}

/// Row i of -1/2 I + K' - tau diag(gamma) S.
inline void robin_row(const PanelSystem &ps, std::size_t i, const AssemblyOptions &o, double *row) {
  const std::size_t n = ps.size();
  const double tg = ps.tau * ps.panels[i].gamma;
  for (std::size_t j = 0; j < n; ++j) {
    const KernelPair k = panel_entry(ps, i, j, o);
    row[j] = k.Kp - tg * k.S - (i == j ? 0.5 : 0.0);
  }
}

// ---------------------------------------------------------------------------
// Solver

struct LayerDensity {
  Eigen::VectorXd psi;
  double shift{0.0};     // densities are scaled by e^{tau shift}
  double residual{0.0};  // relative residual of the discrete system
};

struct Diagnostics {
  std::size_t panels{0};
  bool iterative{false};
  int iterations{0};
  double rcond{0.0};
  double residual{0.0};
  double near_reflector_diameter{0.0};
  std::vector<std::string> warnings;
};

class RobinSolver {
 public:
  explicit RobinSolver(PanelSystem ps, AssemblyOptions o = {}) : ps_(std::move(ps)), o_(o) {
    const std::size_t n = ps_.size();
    if (n == 0) throw MeshError("bem: empty panel system");
    for (const auto &p : ps_.panels)
      if (!(p.gamma >= 0.0)) throw DomainError("bem: gamma must be nonnegative");
    diag_.panels = n;
    diag_.iterative = n > o_.dense_limit;
    if (!diag_.iterative) {
      A_.resize(n, n);
      parallel_for(0, n, [&](std::size_t i) {
        Eigen::VectorXd row(n);
        robin_row(ps_, i, o_, row.data());
        A_.row(i) = row.transpose();
      }, o_.threads);
      lu_.compute(A_);
      diag_.rcond = lu_.rcond();
    } else {
      jacobi_.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        jacobi_(i) = -0.5 - ps_.tau * ps_.panels[i].gamma * panel_entry(ps_, i, i, o_).S;
    }
  }

  const PanelSystem &system() const { return ps_; }
  const Diagnostics &diagnostics() const { return diag_; }

  /// Scaling used for a probe: distance from its centre to the nearest centroid.
  double shift_for(const Probe &b) const {
    double d = INFINITY;
    for (const auto &p : ps_.panels) d = std::min(d, norm(p.centroid - b.center));
    return d;
  }

  Eigen::VectorXd rhs(const Probe &b, double shift) const {
    const std::size_t n = ps_.size();
    Eigen::VectorXd r(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Panel &p = ps_.panels[i];
      r(i) = -fields::robin_trace_shifted(p.centroid, p.normal, ps_.tau, p.gamma, b, shift);
    }
    return r;
  }

  LayerDensity solve(const Probe &b) {
    b.validate();
    LayerDensity out;
    out.shift = shift_for(b);
    const Eigen::VectorXd r = rhs(b, out.shift);
    if (!diag_.iterative) {
      out.psi = lu_.solve(r);
      out.residual = (A_ * out.psi - r).norm() / r.norm();
    } else {
      out.psi = gmres(r, out.residual);
    }
    diag_.residual = std::max(diag_.residual, out.residual);
    check_resolution(b, out.shift);
    if (out.residual > o_.residual_tol)
      throw SolverError("bem: residual " + std::to_string(out.residual) + " above tolerance");
    return out;
  }

  /// R(x) e^{tau shift} at an off-surface point.
  double reflected_at(const LayerDensity &ld, const Vec3 &x) const {
    double s = 0.0;
    const Vec3 zero{};
    for (std::size_t j = 0; j < ps_.size(); ++j) {
      const Panel &p = ps_.panels[j];
      KernelPair k;
      detail::integrate_adaptive(x, zero, p.a, p.b, p.c, ps_.tau, o_, 0, k);
      s += ld.psi(j) * k.S;
    }
    return s;
  }

  IndicatorSample indicator(const Probe &b) {
    double nearest = INFINITY;
    double diam = 0.0;
    for (const auto &p : ps_.panels) {
      const double d = norm(p.centroid - b.center) - b.radius;
      if (d < nearest) {
        nearest = d;
        diam = p.diameter;
      }
    }
    if (nearest < diam) throw DomainError("bem: probe closer to the surface than one panel diameter");
    const LayerDensity ld = solve(b);
    const double R = reflected_at(ld, b.center);
    const double tau = ps_.tau;
    const double log_w = std::log(4.0 * pi) + fields::log_phi(tau * b.radius) - 3.0 * std::log(tau);
    const int sign = (R > 0) - (R < 0);
    return IndicatorSample::from_log(tau, sign, log_w + (sign ? std::log(std::abs(R)) : 0.0) - tau * ld.shift);
  }

 private:
  void check_resolution(const Probe &b, double dmin) {
    double worst = 0.0;
    for (const auto &p : ps_.panels)
      if (norm(p.centroid - b.center) <= dmin + 2.0 / ps_.tau) worst = std::max(worst, p.diameter);
    diag_.near_reflector_diameter = worst;
    if (worst > 1.0 / ps_.tau) {
      const std::string w = "panel diameter " + std::to_string(worst) + " near the reflector exceeds 1/tau = " +
                            std::to_string(1.0 / ps_.tau);
      if (std::find(diag_.warnings.begin(), diag_.warnings.end(), w) == diag_.warnings.end()) diag_.warnings.push_back(w);
    }
  }

  Eigen::VectorXd apply(const Eigen::VectorXd &x) const {
    const std::size_t n = ps_.size();
    Eigen::VectorXd y(n);
    parallel_for(0, n, [&](std::size_t i) {
      std::vector<double> row(n);
      robin_row(ps_, i, o_, row.data());
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += row[j] * x(j);
      y(i) = s;
    }, o_.threads);
    return y;
  }

  // Restarted GMRES, left Jacobi preconditioning.
  Eigen::VectorXd gmres(const Eigen::VectorXd &b, double &rel_res) {
    const int n = static_cast<int>(b.size());
    const int m = o_.gmres_restart;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    const Eigen::VectorXd pb = b.cwiseQuotient(jacobi_);
    const double bnorm = pb.norm();
    int it = 0;
    while (it < o_.gmres_max_iter) {
      Eigen::VectorXd r = pb - apply(x).cwiseQuotient(jacobi_);
      double beta = r.norm();
      if (beta <= o_.gmres_tol * bnorm) break;
      Eigen::MatrixXd V(n, m + 1);
      Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m + 1, m);
      Eigen::VectorXd cs(m), sn(m), g = Eigen::VectorXd::Zero(m + 1);
      V.col(0) = r / beta;
      g(0) = beta;
      int k = 0;
      for (; k < m && it < o_.gmres_max_iter; ++k, ++it) {
        Eigen::VectorXd w = apply(V.col(k)).cwiseQuotient(jacobi_);
        for (int j = 0; j <= k; ++j) {
          H(j, k) = V.col(j).dot(w);
          w -= H(j, k) * V.col(j);
        }
        H(k + 1, k) = w.norm();
        if (H(k + 1, k) > 0) V.col(k + 1) = w / H(k + 1, k);
        for (int j = 0; j < k; ++j) {
          const double t = cs(j) * H(j, k) + sn(j) * H(j + 1, k);
          H(j + 1, k) = -sn(j) * H(j, k) + cs(j) * H(j + 1, k);
          H(j, k) = t;
        }
        const double den = std::hypot(H(k, k), H(k + 1, k));
        cs(k) = H(k, k) / den;
        sn(k) = H(k + 1, k) / den;
        H(k, k) = den;
        H(k + 1, k) = 0.0;
        g(k + 1) = -sn(k) * g(k);
        g(k) = cs(k) * g(k);
        if (std::abs(g(k + 1)) <= o_.gmres_tol * bnorm) {
          ++k;
          ++it;
          break;
        }
      }
      const Eigen::VectorXd y = H.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(g.head(k));
      x += V.leftCols(k) * y;
    }
    diag_.iterations = it;
    rel_res = (apply(x) - b).norm() / b.norm();
    return x;
  }

  PanelSystem ps_;
  AssemblyOptions o_;
  Diagnostics diag_;
  Eigen::MatrixXd A_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  Eigen::VectorXd jacobi_;
};

inline LayerDensity solve_robin(const PanelSystem &ps, const Probe &b, const AssemblyOptions &o = {}) {
  RobinSolver s(ps, o);
  return s.solve(b);
}

inline IndicatorSample indicator_bem(const PanelSystem &ps, const Probe &b, const AssemblyOptions &o = {}) {
  RobinSolver s(ps, o);
  return s.indicator(b);
}

}  // namespace tde::bem
