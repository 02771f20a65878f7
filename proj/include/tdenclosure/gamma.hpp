#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tdenclosure/core.hpp"

namespace tde {

/// Boundary dissipation coefficient gamma >= 0 as a function of surface position
/// and component index.
class GammaField {
 public:
  using Fn = std::function<double(const Vec3 &, int)>;

  GammaField() : GammaField(constant(0.0)) {}

  static GammaField constant(double g) {
    check(g);
    GammaField f(Fn([g](const Vec3 &, int) { return g; }));
    f.constant_ = true;
    f.values_ = {g};
    return f;
  }
  static GammaField per_component(std::vector<double> g) {
    if (g.empty()) throw DomainError("gamma: per-component list is empty");
    for (double v : g) check(v);
    GammaField f(Fn([g](const Vec3 &, int c) {
      if (c < 0 || c >= static_cast<int>(g.size())) throw DomainError("gamma: component index out of range");
      return g[c];
    }));
    f.values_ = std::move(g);
    f.constant_ = f.values_.size() == 1;
    return f;
  }
  static GammaField function(Fn fn) { return GammaField(std::move(fn)); }

  double operator()(const Vec3 &x, int component) const {
    const double g = fn_(x, component);
    check(g);
    return g;
  }

  bool is_constant() const { return constant_; }
  /// Constant value(s) when known: one entry for a constant, one per component otherwise.
  const std::vector<double> &values() const { return values_; }

 private:
  explicit GammaField(Fn fn) : fn_(std::move(fn)) {}
  static void check(double g) {
    if (!(g >= 0.0) || !std::isfinite(g)) throw DomainError("gamma must be finite and nonnegative");
  }

  Fn fn_;
  bool constant_{false};
  std::vector<double> values_;
};

}  // namespace tde
