#pragma once

#include <array>
#include <cmath>
#include <map>
#include <mutex>
#include <vector>

#include "tdenclosure/core.hpp"

namespace tde::quad {

struct Rule1D {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Legendre rule with n nodes on [-1, 1] (Newton iteration on P_n).
inline Rule1D gauss_legendre(int n) {
  Rule1D r;
  r.nodes.resize(n);
  r.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    r.nodes[i] = -x;
    r.nodes[n - 1 - i] = x;
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    r.weights[i] = w;
    r.weights[n - 1 - i] = w;
  }
  return r;
}

/// Cached Gauss-Legendre rule; safe for concurrent callers.
inline const Rule1D &gauss_legendre_cached(int n) {
  static std::mutex m;
  static std::map<int, Rule1D> cache;
  std::lock_guard lock(m);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, gauss_legendre(n)).first;
  return it->second;
}

/// Composite Gauss-Legendre over consecutive breakpoints.
inline Rule1D composite(const std::vector<double> &breaks, int per_panel) {
  const Rule1D &g = gauss_legendre_cached(per_panel);
  Rule1D r;
  for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
    const double a = breaks[k], b = breaks[k + 1];
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (int i = 0; i < per_panel; ++i) {
      r.nodes.push_back(mid + half * g.nodes[i]);
      r.weights.push_back(half * g.weights[i]);
    }
  }
  return r;
}

/// Breakpoints on [a, b] clustered geometrically toward a.
/// First panel has width `first`; widths grow by `ratio` until capped at `max_width`.
inline std::vector<double> graded_breaks(double a, double b, double first, double ratio,
                                         double max_width) {
  std::vector<double> br{a};
  double w = first;
  while (br.back() < b) {
    const double next = br.back() + std::min(w, max_width);
    br.push_back(next >= b - 1e-3 * first ? b : next);
    w *= ratio;
  }
  br.back() = b;
  return br;
}

/// Triangle rule in barycentric coordinates; weights sum to 1.
struct TriangleRule {
  std::vector<std::array<double, 3>> bary;
  std::vector<double> weights;
};

inline const TriangleRule &triangle_centroid() {
  static const TriangleRule r{{{1.0 / 3, 1.0 / 3, 1.0 / 3}}, {1.0}};
  return r;
}

/// Degree-2 rule (edge-interior points).
inline const TriangleRule &triangle_deg2() {
  static const TriangleRule r{{{2.0 / 3, 1.0 / 6, 1.0 / 6}, {1.0 / 6, 2.0 / 3, 1.0 / 6}, {1.0 / 6, 1.0 / 6, 2.0 / 3}},
                              {1.0 / 3, 1.0 / 3, 1.0 / 3}};
  return r;
}

/// Degree-5 seven-point rule (Radon).
inline const TriangleRule &triangle_deg5() {
  static const TriangleRule r = [] {
    const double s15 = std::sqrt(15.0);
    const double a1 = (6.0 - s15) / 21.0, b1 = (9.0 + 2.0 * s15) / 21.0;
    const double a2 = (6.0 + s15) / 21.0, b2 = (9.0 - 2.0 * s15) / 21.0;
    const double w0 = 9.0 / 40.0;
    const double w1 = (155.0 - s15) / 1200.0;
    const double w2 = (155.0 + s15) / 1200.0;
    TriangleRule t;
    t.bary = {{1.0 / 3, 1.0 / 3, 1.0 / 3}, {b1, a1, a1}, {a1, b1, a1}, {a1, a1, b1},
              {b2, a2, a2}, {a2, b2, a2}, {a2, a2, b2}};
    t.weights = {w0, w1, w1, w1, w2, w2, w2};
    return t;
  }();
  return r;
}

}  // namespace tde::quad
