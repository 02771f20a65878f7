#pragma once

// Obstacles, probes, nearest-point queries and the first reflector set.
//
// Curvature convention: mean curvature H and Gauss curvature K are taken with
// respect to the outward normal nu such that a sphere of radius a has
// H = -1/a, K = 1/a^2. With this convention the Hessian of y -> |y - p| at a
// nearest point q is lambda^2 - 2 H lambda + K, lambda = 1/|q - p|.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "tdenclosure/core.hpp"

namespace tde {

/// Open ball B = B_eta(p) supporting the initial data.
struct Probe {
  Vec3 center;
  double radius{0.0};

  void validate() const {
    if (!(radius > 0.0) || !std::isfinite(radius))
      throw DomainError("probe radius must be positive and finite");
  }
};

struct Sphere {
  Vec3 center;
  double radius{1.0};
};

/// Axis-aligned ellipsoid.
struct Ellipsoid {
  Vec3 center;
  Vec3 semi_axes{1.0, 1.0, 1.0};
};

/// Closed, outward-oriented triangle mesh with per-vertex normals and curvatures.
struct TriangulatedSurface {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec3> normals;
  std::vector<double> mean_curvature;
  std::vector<double> gauss_curvature;

  std::size_t vertex_count() const { return vertices.size(); }
  std::size_t triangle_count() const { return triangles.size(); }
};

using Component = std::variant<Sphere, Ellipsoid, TriangulatedSurface>;

/// Obstacle D as a union of disjoint closed components.
struct Obstacle {
  std::vector<Component> components;

  Obstacle() = default;
  Obstacle(std::initializer_list<Component> c) : components(c) {}
  explicit Obstacle(std::vector<Component> c) : components(std::move(c)) {}
};

/// A point on a component with its local differential geometry.
struct SurfacePoint {
  Vec3 point;
  Vec3 normal;
  double mean_curvature{0.0};
  double gauss_curvature{0.0};
  int component{0};
};

struct ReflectorPoint {
  Vec3 q;
  Vec3 normal;
  double d{0.0};
  double H{0.0};
  double K{0.0};
  double hess_det{0.0};
  int component{0};
};

class NonFiniteReflectorError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// det(S_q(dB_d(p)) - S_q(dD)) = (1/d)^2 - 2 H (1/d) + K.
inline double hessian_det(double d, double H, double K) {
  if (!(d > 0.0)) throw DomainError("hessian_det: distance must be positive");
  const double lam = 1.0 / d;
  return lam * lam - 2.0 * H * lam + K;
}

namespace detail {

// Curvatures of the level set F = 0 from gradient g and Hessian Hs of F,
// with the normal g/|g|.
inline std::pair<double, double> implicit_curvatures(const Vec3 &g, const Eigen::Matrix3d &Hs) {
  const Eigen::Vector3d gv(g.x, g.y, g.z);
  const double gn2 = gv.squaredNorm();
  const double gn = std::sqrt(gn2);
  const double H = (gv.dot(Hs * gv) - gn2 * Hs.trace()) / (2.0 * gn2 * gn);
  Eigen::Matrix3d adj;
  adj(0, 0) = Hs(1, 1) * Hs(2, 2) - Hs(1, 2) * Hs(2, 1);
  adj(0, 1) = Hs(0, 2) * Hs(2, 1) - Hs(0, 1) * Hs(2, 2);
  adj(0, 2) = Hs(0, 1) * Hs(1, 2) - Hs(0, 2) * Hs(1, 1);
  adj(1, 0) = Hs(1, 2) * Hs(2, 0) - Hs(1, 0) * Hs(2, 2);
  adj(1, 1) = Hs(0, 0) * Hs(2, 2) - Hs(0, 2) * Hs(2, 0);
  adj(1, 2) = Hs(0, 2) * Hs(1, 0) - Hs(0, 0) * Hs(1, 2);
  adj(2, 0) = Hs(1, 0) * Hs(2, 1) - Hs(1, 1) * Hs(2, 0);
  adj(2, 1) = Hs(0, 1) * Hs(2, 0) - Hs(0, 0) * Hs(2, 1);
  adj(2, 2) = Hs(0, 0) * Hs(1, 1) - Hs(0, 1) * Hs(1, 0);
  const double K = gv.dot(adj * gv) / (gn2 * gn2);
  return {H, K};
}

inline SurfacePoint ellipsoid_geometry(const Ellipsoid &e, const Vec3 &x) {
  const Vec3 y = x - e.center;
  Vec3 g;
  Eigen::Matrix3d Hs = Eigen::Matrix3d::Zero();
  for (int i = 0; i < 3; ++i) {
    const double a2 = e.semi_axes[i] * e.semi_axes[i];
    g[i] = 2.0 * y[i] / a2;
    Hs(i, i) = 2.0 / a2;
  }
  auto [H, K] = implicit_curvatures(g, Hs);
  return {x, normalized(g), H, K, 0};
}

// Closest point on an ellipsoid surface (any query point), via the largest root
// of sum (a_i y_i / (t + a_i^2))^2 = 1 in t > -min a_i^2.
inline Vec3 ellipsoid_closest(const Ellipsoid &e, const Vec3 &x) {
  const Vec3 y0 = x - e.center;
  const double amax = std::max({e.semi_axes.x, e.semi_axes.y, e.semi_axes.z});
  const double amin = std::min({e.semi_axes.x, e.semi_axes.y, e.semi_axes.z});
  Vec3 y;
  for (int i = 0; i < 3; ++i) {
    const double s = y0[i] < 0 ? -1.0 : 1.0;
    y[i] = s * std::max(std::abs(y0[i]), 1e-13 * amax);
  }
  auto G = [&](double t) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double a = e.semi_axes[i];
      const double r = a * y[i] / (t + a * a);
      s += r * r;
    }
    return s - 1.0;
  };
  double lo = -amin * amin, hi = norm(y) * amax + amax * amax;
  while (G(hi) > 0.0) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * (std::abs(hi) + amax * amax); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (G(mid) > 0.0 ? lo : hi) = mid;
  }
  const double t = 0.5 * (lo + hi);
  Vec3 q;
  for (int i = 0; i < 3; ++i) {
    const double a2 = e.semi_axes[i] * e.semi_axes[i];
    q[i] = a2 * y[i] / (t + a2);
  }
  // Pull exactly onto the surface along the ray.
  double f = 0.0;
  for (int i = 0; i < 3; ++i) f += q[i] * q[i] / (e.semi_axes[i] * e.semi_axes[i]);
  q *= 1.0 / std::sqrt(f);
  return q + e.center;
}

// Closest point on triangle (a, b, c) to p; also returns barycentric weights.
inline Vec3 closest_on_triangle(const Vec3 &p, const Vec3 &a, const Vec3 &b, const Vec3 &c,
                                std::array<double, 3> &bary) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0 && d2 <= 0) { bary = {1, 0, 0}; return a; }
  const Vec3 bp = p - b;
  const double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0 && d4 <= d3) { bary = {0, 1, 0}; return b; }
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    bary = {1 - v, v, 0};
    return a + v * ab;
  }
  const Vec3 cp = p - c;
  const double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0 && d5 <= d6) { bary = {0, 0, 1}; return c; }
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    bary = {1 - w, 0, w};
    return a + w * ac;
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    bary = {0, 1 - w, w};
    return b + w * (c - b);
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  bary = {1 - v - w, v, w};
  return a + v * ab + w * ac;
}

inline double triangle_solid_angle(const Vec3 &p, const Vec3 &a, const Vec3 &b, const Vec3 &c) {
  const Vec3 ra = a - p, rb = b - p, rc = c - p;
  const double la = norm(ra), lb = norm(rb), lc = norm(rc);
  const double num = dot(ra, cross(rb, rc));
  const double den = la * lb * lc + dot(ra, rb) * lc + dot(ra, rc) * lb + dot(rb, rc) * la;
  return 2.0 * std::atan2(num, den);
}

inline SurfacePoint mesh_point(const TriangulatedSurface &m, int tri, const Vec3 &q,
                               const std::array<double, 3> &bary) {
  const auto &t = m.triangles[tri];
  Vec3 n{};
  double H = 0.0, K = 0.0;
  for (int k = 0; k < 3; ++k) {
    n += bary[k] * m.normals[t[k]];
    H += bary[k] * m.mean_curvature[t[k]];
    K += bary[k] * m.gauss_curvature[t[k]];
  }
  return {q, normalized(n), H, K, 0};
}

}  // namespace detail

/// Nearest surface point of a single component to x.
inline SurfacePoint closest_point(const Component &c, const Vec3 &x) {
  return std::visit(
      [&](const auto &s) -> SurfacePoint {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Sphere>) {
          Vec3 dir = x - s.center;
          const double r = norm(dir);
          dir = r > 0.0 ? dir / r : Vec3{0, 0, 1};
          return {s.center + s.radius * dir, dir, -1.0 / s.radius, 1.0 / (s.radius * s.radius), 0};
        } else if constexpr (std::is_same_v<T, Ellipsoid>) {
          return detail::ellipsoid_geometry(s, detail::ellipsoid_closest(s, x));
        } else {
          double best = std::numeric_limits<double>::infinity();
          SurfacePoint sp;
          for (std::size_t i = 0; i < s.triangles.size(); ++i) {
            const auto &t = s.triangles[i];
            std::array<double, 3> bary{};
            const Vec3 q = detail::closest_on_triangle(x, s.vertices[t[0]], s.vertices[t[1]],
                                                       s.vertices[t[2]], bary);
            const double dd = dot(q - x, q - x);
            if (dd < best) {
              best = dd;
              sp = detail::mesh_point(s, static_cast<int>(i), q, bary);
            }
          }
          return sp;
        }
      },
      c);
}

/// True when x lies in the open interior of the component.
inline bool inside(const Component &c, const Vec3 &x) {
  return std::visit(
      [&](const auto &s) -> bool {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Sphere>) {
          return norm(x - s.center) < s.radius;
        } else if constexpr (std::is_same_v<T, Ellipsoid>) {
          double f = 0.0;
          for (int i = 0; i < 3; ++i) {
            const double r = (x[i] - s.center[i]) / s.semi_axes[i];
            f += r * r;
          }
          return f < 1.0;
        } else {
          double w = 0.0;
          for (const auto &t : s.triangles)
            w += detail::triangle_solid_angle(x, s.vertices[t[0]], s.vertices[t[1]], s.vertices[t[2]]);
          return w / (4.0 * pi) > 0.5;
        }
      },
      c);
}

inline bool inside(const Obstacle &o, const Vec3 &x) {
  return std::any_of(o.components.begin(), o.components.end(),
                     [&](const Component &c) { return inside(c, x); });
}

/// Nearest point over all components; `component` records which one.
inline SurfacePoint closest_point(const Obstacle &o, const Vec3 &x) {
  if (o.components.empty()) throw DomainError("obstacle has no components");
  SurfacePoint best;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < o.components.size(); ++i) {
    SurfacePoint sp = closest_point(o.components[i], x);
    const double dd = norm(sp.point - x);
    if (dd < bd) {
      bd = dd;
      best = sp;
      best.component = static_cast<int>(i);
    }
  }
  return best;
}

/// Signed distance: negative inside the obstacle.
inline double signed_distance(const Obstacle &o, const Vec3 &x) {
  const SurfacePoint sp = closest_point(o, x);
  const double d = norm(sp.point - x);
  return inside(o, x) ? -d : d;
}

/// d_dD(p) = inf over the boundary of |y - p|, for p strictly exterior.
inline double distance_to_boundary(const Obstacle &o, const Vec3 &p) {
  if (inside(o, p)) throw DomainError("distance_to_boundary: point lies inside the obstacle");
  const double d = norm(closest_point(o, p).point - p);
  if (!(d > 0.0)) throw DomainError("distance_to_boundary: point lies on the obstacle surface");
  return d;
}

/// dist(D, B) = d_dD(p) - eta; requires the closed ball to miss the closed obstacle.
inline double probe_distance(const Obstacle &o, const Probe &b) {
  b.validate();
  const double d = distance_to_boundary(o, b.center);
  if (!(d > b.radius)) throw DomainError("probe ball intersects the obstacle");
  return d - b.radius;
}

struct ReflectorOptions {
  double tol = 1e-6;                  // relative distance tolerance
  double merge_radius_rel = 1e-3;     // cluster linking radius / d
  double max_cluster_diameter_rel = 0.05;  // larger clusters signal a non-finite set
};

/// Nearest boundary points to p, clustered, with curvature data.
inline std::vector<ReflectorPoint> first_reflector(const Obstacle &o, const Vec3 &p,
                                                   const ReflectorOptions &opt = {}) {
  if (!(opt.tol > 0.0)) throw DomainError("first_reflector: tol must be positive");
  const double d = distance_to_boundary(o, p);

  struct Candidate {
    SurfacePoint sp;
    double dist;
    double link;
  };
  std::vector<Candidate> cands;
  for (std::size_t ci = 0; ci < o.components.size(); ++ci) {
    const Component &c = o.components[ci];
    if (const auto *m = std::get_if<TriangulatedSurface>(&c)) {
      double max_edge = 0.0;
      for (const auto &t : m->triangles)
        for (int k = 0; k < 3; ++k)
          max_edge = std::max(max_edge, norm(m->vertices[t[k]] - m->vertices[t[(k + 1) % 3]]));
      for (std::size_t i = 0; i < m->triangles.size(); ++i) {
        const auto &t = m->triangles[i];
        std::array<double, 3> bary{};
        const Vec3 q = detail::closest_on_triangle(p, m->vertices[t[0]], m->vertices[t[1]],
                                                   m->vertices[t[2]], bary);
        const double dq = norm(q - p);
        if (dq <= d * (1.0 + opt.tol)) {
          SurfacePoint sp = detail::mesh_point(*m, static_cast<int>(i), q, bary);
          sp.component = static_cast<int>(ci);
          cands.push_back({sp, dq, 1.5 * max_edge});
        }
      }
    } else {
      SurfacePoint sp = closest_point(c, p);
      sp.component = static_cast<int>(ci);
      const double dq = norm(sp.point - p);
      if (dq <= d * (1.0 + opt.tol)) cands.push_back({sp, dq, 0.0});
    }
  }

  // Single-linkage clustering.
  const std::size_t n = cands.size();
  std::vector<int> label(n, -1);
  int nlab = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] >= 0) continue;
    label[i] = nlab;
    std::vector<std::size_t> stack{i};
    while (!stack.empty()) {
      const std::size_t a = stack.back();
      stack.pop_back();
      for (std::size_t b = 0; b < n; ++b) {
        if (label[b] >= 0) continue;
        const double r = std::max({opt.merge_radius_rel * d, cands[a].link, cands[b].link});
        if (norm(cands[a].sp.point - cands[b].sp.point) <= r) {
          label[b] = nlab;
          stack.push_back(b);
        }
      }
    }
    ++nlab;
  }

  std::vector<ReflectorPoint> out;
  for (int l = 0; l < nlab; ++l) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i)
      if (label[i] == l) members.push_back(i);
    double diam = 0.0;
    for (auto a : members)
      for (auto b : members) diam = std::max(diam, norm(cands[a].sp.point - cands[b].sp.point));
    if (diam > opt.max_cluster_diameter_rel * d)
      throw NonFiniteReflectorError("first reflector set is not finite: cluster diameter " +
                                    std::to_string(diam) + " exceeds cap");
    const auto best = *std::min_element(members.begin(), members.end(), [&](auto a, auto b) {
      return cands[a].dist < cands[b].dist;
    });
    const SurfacePoint &sp = cands[best].sp;
    ReflectorPoint r;
    r.q = sp.point;
    r.normal = sp.normal;
    r.d = d;
    r.H = sp.mean_curvature;
    r.K = sp.gauss_curvature;
    r.hess_det = hessian_det(d, r.H, r.K);
    r.component = sp.component;
    out.push_back(r);
  }
  // Deterministic order: by component, then lexicographic position.
  std::sort(out.begin(), out.end(), [](const ReflectorPoint &a, const ReflectorPoint &b) {
    if (a.component != b.component) return a.component < b.component;
    if (a.q.x != b.q.x) return a.q.x < b.q.x;
    if (a.q.y != b.q.y) return a.q.y < b.q.y;
    return a.q.z < b.q.z;
  });
  return out;
}

struct NondegeneracyReport {
  bool ok{true};
  std::vector<std::size_t> offending;  // indices into the input list
  double min_hess_det{std::numeric_limits<double>::infinity()};
};

/// Checks hessDet > floor at every reflector point.
inline NondegeneracyReport check_nondegeneracy(const std::vector<ReflectorPoint> &refl,
                                               double floor = 1e-8) {
  if (refl.empty()) throw DomainError("check_nondegeneracy: empty reflector list");
  NondegeneracyReport rep;
  for (std::size_t i = 0; i < refl.size(); ++i) {
    rep.min_hess_det = std::min(rep.min_hess_det, refl[i].hess_det);
    if (!(refl[i].hess_det > floor)) {
      rep.ok = false;
      rep.offending.push_back(i);
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Star-shaped parametrisation of analytic components.

/// Surface point of an analytic component along direction w from its center.
inline Vec3 radial_surface_point(const Component &c, const Vec3 &w) {
  if (const auto *s = std::get_if<Sphere>(&c)) return s->center + s->radius * w;
  if (const auto *e = std::get_if<Ellipsoid>(&c)) {
    double f = 0.0;
    for (int i = 0; i < 3; ++i) f += w[i] * w[i] / (e->semi_axes[i] * e->semi_axes[i]);
    return e->center + w / std::sqrt(f);
  }
  throw DomainError("radial_surface_point: component is not analytic");
}

inline Vec3 component_center(const Component &c) {
  return std::visit(
      [](const auto &s) -> Vec3 {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, TriangulatedSurface>) {
          Vec3 m{};
          for (const auto &v : s.vertices) m += v;
          return m / static_cast<double>(s.vertices.size());
        } else {
          return s.center;
        }
      },
      c);
}

inline bool is_analytic(const Component &c) { return !std::holds_alternative<TriangulatedSurface>(c); }

/// Exact geometry at a surface point of an analytic component.
inline SurfacePoint analytic_geometry(const Component &c, const Vec3 &x) {
  if (const auto *s = std::get_if<Sphere>(&c)) {
    const Vec3 n = normalized(x - s->center);
    return {x, n, -1.0 / s->radius, 1.0 / (s->radius * s->radius), 0};
  }
  if (const auto *e = std::get_if<Ellipsoid>(&c)) return detail::ellipsoid_geometry(*e, x);
  throw DomainError("analytic_geometry: component is not analytic");
}

// ---------------------------------------------------------------------------
// Triangle meshes.

inline double triangle_area(const Vec3 &a, const Vec3 &b, const Vec3 &c) {
  return 0.5 * norm(cross(b - a, c - a));
}

/// Closed-manifold and orientation checks; throws MeshError on failure.
inline void validate_mesh(const TriangulatedSurface &m) {
  if (m.vertices.empty() || m.triangles.empty()) throw MeshError("mesh is empty");
  const int nv = static_cast<int>(m.vertices.size());
  std::map<std::pair<int, int>, int> directed;
  for (const auto &t : m.triangles) {
    for (int k = 0; k < 3; ++k) {
      if (t[k] < 0 || t[k] >= nv) throw MeshError("triangle index out of range");
      const int a = t[k], b = t[(k + 1) % 3];
      if (a == b) throw MeshError("degenerate triangle");
      if (++directed[{a, b}] > 1) throw MeshError("non-manifold or inconsistently oriented edge");
    }
    if (!(triangle_area(m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]]) > 0.0))
      throw MeshError("zero-area triangle");
  }
  for (const auto &[e, cnt] : directed)
    if (!directed.count({e.second, e.first})) throw MeshError("mesh is not closed");
  double vol = 0.0;
  for (const auto &t : m.triangles)
    vol += dot(m.vertices[t[0]], cross(m.vertices[t[1]], m.vertices[t[2]])) / 6.0;
  if (!(vol > 0.0)) throw MeshError("mesh orientation is not outward");
  if (!m.normals.empty() && m.normals.size() != m.vertices.size())
    throw MeshError("normal count does not match vertex count");
  for (std::size_t i = 0; i < m.mean_curvature.size() && i < m.gauss_curvature.size(); ++i) {
    const double H = m.mean_curvature[i], K = m.gauss_curvature[i];
    if (H * H < K - 1e-9 * (1.0 + std::abs(K))) throw MeshError("vertex curvature has H^2 < K");
  }
}

/// Area-weighted vertex normals.
inline std::vector<Vec3> vertex_normals(const TriangulatedSurface &m) {
  std::vector<Vec3> n(m.vertices.size(), Vec3{});
  for (const auto &t : m.triangles) {
    const Vec3 fn = cross(m.vertices[t[1]] - m.vertices[t[0]], m.vertices[t[2]] - m.vertices[t[0]]);
    for (int k = 0; k < 3; ++k) n[t[k]] += fn;
  }
  for (auto &v : n) v = normalized(v);
  return n;
}

/// Per-vertex (H, K) by a least-squares quadric over the 2-ring, refining the normal once.
inline void estimate_curvatures(TriangulatedSurface &m) {
  const std::size_t nv = m.vertices.size();
  std::vector<std::set<int>> adj(nv);
  for (const auto &t : m.triangles)
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < 3; ++j)
        if (j != k) adj[t[k]].insert(t[j]);
  if (m.normals.size() != nv) m.normals = vertex_normals(m);
  m.mean_curvature.assign(nv, 0.0);
  m.gauss_curvature.assign(nv, 0.0);
  for (std::size_t i = 0; i < nv; ++i) {
    std::set<int> ring = adj[i];
    for (int j : adj[i]) ring.insert(adj[j].begin(), adj[j].end());
    ring.erase(static_cast<int>(i));
    if (ring.size() < 5) throw MeshError("vertex neighbourhood too small for curvature fit");
    Vec3 n = m.normals[i];
    double H = 0.0, K = 0.0;
    for (int pass = 0; pass < 2; ++pass) {
      const Frame f = Frame::from_axis(n);
      Eigen::MatrixXd A(ring.size(), 5);
      Eigen::VectorXd b(ring.size());
      int r = 0;
      for (int j : ring) {
        const Vec3 dlt = m.vertices[j] - m.vertices[i];
        const double u = dot(dlt, f.e1), v = dot(dlt, f.e2), w = dot(dlt, f.e3);
        A.row(r) << u * u, u * v, v * v, u, v;
        b(r) = w;
        ++r;
      }
      const Eigen::VectorXd c = A.colPivHouseholderQr().solve(b);
      const double fu = c(3), fv = c(4), fuu = 2 * c(0), fuv = c(1), fvv = 2 * c(2);
      const double E = 1 + fu * fu, F = fu * fv, G = 1 + fv * fv;
      const double s = std::sqrt(1 + fu * fu + fv * fv);
      const double L = fuu / s, M = fuv / s, N = fvv / s;
      const double det1 = E * G - F * F;
      K = (L * N - M * M) / det1;
      H = (E * N - 2 * F * M + G * L) / (2 * det1);
      n = normalized(f.e3 - fu * f.e1 - fv * f.e2);
    }
    m.normals[i] = n;
    m.mean_curvature[i] = H;
    m.gauss_curvature[i] = std::min(K, H * H);
  }
}

/// ASCII OFF reader. Normals and curvatures are estimated after loading.
inline TriangulatedSurface read_off(std::istream &in) {
  auto next_line = [&](std::string &line) {
    while (std::getline(in, line)) {
      const auto pos = line.find('#');
      if (pos != std::string::npos) line.erase(pos);
      if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  };
  std::string line;
  if (!next_line(line)) throw MeshError("OFF: empty input");
  std::istringstream hdr(line);
  std::string magic;
  hdr >> magic;
  if (magic != "OFF") throw MeshError("OFF: missing header");
  std::size_t nv = 0, nf = 0, ne = 0;
  if (!(hdr >> nv >> nf >> ne)) {
    if (!next_line(line)) throw MeshError("OFF: missing counts");
    std::istringstream cs(line);
    if (!(cs >> nv >> nf >> ne)) throw MeshError("OFF: malformed counts");
  }
  TriangulatedSurface m;
  m.vertices.reserve(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    if (!next_line(line)) throw MeshError("OFF: truncated vertex list");
    std::istringstream vs(line);
    Vec3 v;
    if (!(vs >> v.x >> v.y >> v.z)) throw MeshError("OFF: malformed vertex at index " + std::to_string(i));
    m.vertices.push_back(v);
  }
  for (std::size_t i = 0; i < nf; ++i) {
    if (!next_line(line)) throw MeshError("OFF: truncated face list");
    std::istringstream fs(line);
    int k = 0;
    std::array<int, 3> t{};
    if (!(fs >> k >> t[0] >> t[1] >> t[2]) || k != 3)
      throw MeshError("OFF: face " + std::to_string(i) + " is not a triangle");
    m.triangles.push_back(t);
  }
  validate_mesh(m);
  m.normals = vertex_normals(m);
  estimate_curvatures(m);
  return m;
}

inline TriangulatedSurface read_off_file(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw MeshError("cannot open mesh file: " + path);
  return read_off(in);
}

inline void write_off(std::ostream &os, const TriangulatedSurface &m) {
  os.precision(17);
  os << "OFF\n" << m.vertices.size() << ' ' << m.triangles.size() << " 0\n";
  for (const auto &v : m.vertices) os << v.x << ' ' << v.y << ' ' << v.z << '\n';
  for (const auto &t : m.triangles) os << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

/// Options for the ring mesh generator. Target edge length grows linearly with
/// the polar angle measured from `pole`.
struct RingMeshOptions {
  Vec3 pole{0, 0, 1};
  double h_pole = 0.05;  // edge length at the pole (in units of the radius)
  double growth = 0.0;   // extra edge length per radian of polar angle
  double h_max = 0.3;
};

/// Triangulated unit sphere built from latitude rings about `pole`.
inline TriangulatedSurface ring_sphere_mesh(const RingMeshOptions &opt) {
  const Frame fr = Frame::from_axis(opt.pole);
  auto hfun = [&](double th) { return std::min(opt.h_pole + opt.growth * th, opt.h_max); };
  std::vector<double> thetas{0.0};
  while (true) {
    const double th = thetas.back();
    const double next = th + hfun(th) * std::sqrt(3.0) / 2.0;
    if (next >= pi - 0.5 * hfun(pi) * std::sqrt(3.0) / 2.0) break;
    thetas.push_back(next);
  }
  thetas.push_back(pi);
  // Stretch uniformly so the last gap matches its neighbours.
  const std::size_t nr = thetas.size();
  if (nr > 2) {
    const double scale = pi / thetas[nr - 1];
    for (auto &t : thetas) t *= scale;
  }

  TriangulatedSurface m;
  std::vector<std::vector<int>> rings(nr);
  std::vector<double> offsets(nr, 0.0);
  for (std::size_t k = 0; k < nr; ++k) {
    const double th = thetas[k];
    int cnt = 1;
    if (k != 0 && k != nr - 1) cnt = std::max(6, static_cast<int>(std::lround(2 * pi * std::sin(th) / hfun(th))));
    offsets[k] = (k % 2) ? 0.5 : 0.0;
    for (int j = 0; j < cnt; ++j) {
      const double ph = 2 * pi * (j + offsets[k]) / cnt;
      rings[k].push_back(static_cast<int>(m.vertices.size()));
      m.vertices.push_back(fr.to_world(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)));
    }
  }
  auto add = [&](int a, int b, int c) {
    const Vec3 fn = cross(m.vertices[b] - m.vertices[a], m.vertices[c] - m.vertices[a]);
    if (dot(fn, m.vertices[a] + m.vertices[b] + m.vertices[c]) < 0) std::swap(b, c);
    m.triangles.push_back({a, b, c});
  };
  for (std::size_t k = 0; k + 1 < nr; ++k) {
    const auto &A = rings[k];
    const auto &B = rings[k + 1];
    const std::size_t na = A.size(), nb = B.size();
    if (na == 1) {
      for (std::size_t j = 0; j < nb; ++j) add(A[0], B[j], B[(j + 1) % nb]);
      continue;
    }
    if (nb == 1) {
      for (std::size_t j = 0; j < na; ++j) add(B[0], A[j], A[(j + 1) % na]);
      continue;
    }
    // Merge-walk both rings by azimuth over one full turn.
    auto anga = [&](std::size_t i) { return (static_cast<double>(i) + offsets[k]) / static_cast<double>(na); };
    auto angb = [&](std::size_t j) { return (static_cast<double>(j) + offsets[k + 1]) / static_cast<double>(nb); };
    std::size_t i = 0, j = 0;
    while (i < na || j < nb) {
      if (j == nb || (i < na && anga(i + 1) < angb(j + 1))) {
        add(A[i % na], A[(i + 1) % na], B[j % nb]);
        ++i;
      } else {
        add(A[i % na], B[(j + 1) % nb], B[j % nb]);
        ++j;
      }
    }
  }
  m.normals = m.vertices;  // unit sphere
  m.mean_curvature.assign(m.vertices.size(), -1.0);
  m.gauss_curvature.assign(m.vertices.size(), 1.0);
  return m;
}

/// Ring mesh mapped onto an analytic component along rays from its center,
/// with exact normals and curvatures at the vertices.
inline TriangulatedSurface ring_mesh(const Component &c, const RingMeshOptions &opt) {
  TriangulatedSurface m = ring_sphere_mesh(opt);
  for (std::size_t i = 0; i < m.vertices.size(); ++i) {
    const Vec3 x = radial_surface_point(c, m.vertices[i]);
    const SurfacePoint sp = analytic_geometry(c, x);
    m.vertices[i] = x;
    m.normals[i] = sp.normal;
    m.mean_curvature[i] = sp.mean_curvature;
    m.gauss_curvature[i] = sp.gauss_curvature;
  }
  return m;
}

/// Torus about the z axis through `center`: major radius R, tube radius r.
/// The inner equator is concave toward the axis (principal curvature +1/(R - r)).
inline TriangulatedSurface torus_mesh(const Vec3 &center, double R, double r, int nu, int nv) {
  TriangulatedSurface m;
  for (int i = 0; i < nu; ++i) {
    const double u = 2 * pi * i / nu;
    for (int j = 0; j < nv; ++j) {
      const double v = 2 * pi * j / nv;
      const double rho = R + r * std::cos(v);
      m.vertices.push_back(center + Vec3{rho * std::cos(u), rho * std::sin(u), r * std::sin(v)});
      m.normals.push_back({std::cos(v) * std::cos(u), std::cos(v) * std::sin(u), std::sin(v)});
      // Principal curvatures with the sphere -> -1/a convention.
      const double k1 = -1.0 / r;
      const double k2 = -std::cos(v) / rho;
      m.mean_curvature.push_back(0.5 * (k1 + k2));
      m.gauss_curvature.push_back(k1 * k2);
    }
  }
  auto id = [&](int i, int j) { return ((i % nu + nu) % nu) * nv + ((j % nv + nv) % nv); };
  for (int i = 0; i < nu; ++i)
    for (int j = 0; j < nv; ++j) {
      m.triangles.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      m.triangles.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  return m;
}

inline double mesh_area(const TriangulatedSurface &m) {
  double a = 0.0;
  for (const auto &t : m.triangles) a += triangle_area(m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]]);
  return a;
}

inline double max_edge_length(const TriangulatedSurface &m) {
  double e = 0.0;
  for (const auto &t : m.triangles)
    for (int k = 0; k < 3; ++k) e = std::max(e, norm(m.vertices[t[k]] - m.vertices[t[(k + 1) % 3]]));
  return e;
}

}  // namespace tde
