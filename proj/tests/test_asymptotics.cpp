#include <catch_amalgamated.hpp>

#include <sstream>

#include "tdenclosure/asymptotics.hpp"
#include "tdenclosure/sphere_oracle.hpp"

using namespace tde;
using namespace tde::asym;
using Catch::Approx;

namespace {

const Obstacle unit_sphere{Sphere{{0, 0, 0}, 1.0}};
const Probe probe{{0, 0, 3}, 0.1};

SurfaceQuadrature quad_for(double tau, const Obstacle &o = unit_sphere, const Vec3 &p = probe.center,
                           const GammaField &g = GammaField::constant(0.5)) {
  RefinedQuadratureOptions ro;
  ro.tau = tau;
  return refined_quadrature(o, p, g, ro);
}

double normalized(double scaled, double tau) { return std::pow(tau, 4) * scaled; }

// v on the surface carries (1 - 1/(tau eta))^2 from the ball profile; dividing it
// out leaves an O(1/tau) approach to the leading term.
double profile_factor(double tau) { return std::pow(1.0 - 1.0 / (tau * probe.radius), 2); }

}  // namespace

TEST_CASE("refined quadrature integrates the surface") {
  CHECK(quad_for(20).area() == Approx(4 * pi).epsilon(1e-10));
  const Obstacle e{Ellipsoid{{0, 0, 0}, {1.0, 1.5, 2.0}}};
  // reference from an adaptive double integral of the parametrised surface
  CHECK(quad_for(20, e, {0, 0, 3.5}).area() == Approx(27.886442473503).epsilon(1e-10));
}

TEST_CASE("J vanishes at the leading order when gamma is one") {
  const auto g1 = GammaField::constant(1.0);
  const double t = 40.0;
  const double J = normalized(J_tau(quad_for(t, unit_sphere, probe.center, g1), t, probe, 1.9), t);
  CHECK(std::abs(J) < 0.05 * 6.545e-4);
}

TEST_CASE("J approaches its leading term for gamma 1/2") {
  // (pi/4)(eta/d)^2 (1 - gamma)/sqrt(hessDet) at d = 2
  const double lead = pi / 4 * 0.0025 * 0.5 / 1.5;
  double prev = 1.0;
  for (double t : {40.0, 100.0, 200.0}) {
    const double J = normalized(J_tau(quad_for(t), t, probe, 1.9), t) / profile_factor(t);
    const double err = std::abs(J / lead - 1);
    CHECK(err < prev);
    prev = err;
  }
  CHECK(prev < 0.005);
}

TEST_CASE("J is invariant under rotation of the configuration") {
  const Frame f = Frame::from_axis({0.3, 0.5, -0.8});
  const Vec3 p = 3.0 * f.e3;
  const Probe b{p, 0.1};
  const double t = 15.0;
  const double a = J_tau(quad_for(t), t, probe, 1.9);
  const double r = J_tau(quad_for(t, unit_sphere, p), t, b, 1.9);
  CHECK(r == Approx(a).epsilon(1e-8));
}

TEST_CASE("laplace limit on a sphere") {
  const auto refl = first_reflector(unit_sphere, probe.center);
  const Amplitude one = [](const Vec3 &) { return 1.0; };
  CHECK(laplace_formula(refl, one) == Approx(pi / 4 / 1.5));
  const auto rows = laplace_limit_check([](double t) { return quad_for(t); }, one, probe.center, refl, {10, 40, 160});
  CHECK(std::abs(rows[2].ratio - 1) < std::abs(rows[0].ratio - 1));
  CHECK(rows[2].ratio == Approx(1.0).epsilon(0.01));
  for (const auto &r : rows) CHECK_FALSE(r.under_resolved);
  std::ostringstream os;
  write_laplace_csv(os, rows);
  CHECK(os.str().rfind("tau,", 0) == 0);
}

TEST_CASE("amplitude vanishing at the reflector gives a vanishing limit") {
  const auto refl = first_reflector(unit_sphere, probe.center);
  const Amplitude A = [](const Vec3 &x) { return (1.0 - x.z) * (1.0 - x.z); };
  CHECK(laplace_formula(refl, A) == Approx(0.0).margin(1e-14));
  const auto rows = laplace_limit_check([](double t) { return quad_for(t); }, A, probe.center, refl, {20, 80});
  CHECK(std::abs(rows[1].quadrature) < std::abs(rows[0].quadrature));
  CHECK(std::abs(rows[1].quadrature) < 1e-3);
}

TEST_CASE("two equidistant spheres double the laplace limit") {
  const Obstacle two{Sphere{{2, 0, 0}, 1.0}, Sphere{{-2, 0, 0}, 1.0}};
  const Vec3 p{0, 0, 3};
  const auto refl = first_reflector(two, p);
  REQUIRE(refl.size() == 2);
  const Amplitude one = [](const Vec3 &) { return 1.0; };
  const auto r1 = first_reflector(Obstacle{Sphere{{2, 0, 0}, 1.0}}, p);
  CHECK(laplace_formula(refl, one) == Approx(2 * laplace_formula(r1, one)));
  const auto rows = laplace_limit_check([&](double t) { return quad_for(t, two, p); }, one, p, refl, {80});
  CHECK(rows[0].ratio == Approx(1.0).epsilon(0.02));
  CHECK_THROWS_AS(laplace_limit_check([&](double t) { return quad_for(t, two, p); }, one, p, {}, {80}), DomainError);
}

TEST_CASE("energy term is nonnegative and has the predicted limit") {
  for (double g : {0.25, 0.5, 2.0, 4.0}) {
    oracle::SphereScenario s;
    s.radius = 1.0;
    s.gamma = g;
    s.probe = probe;
    for (double t : {20.0, 60.0}) {
      s.tau = t;
      const auto I = oracle::indicator_oracle(s);
      const auto q = quad_for(t, unit_sphere, probe.center, GammaField::constant(g));
      const double J = J_tau(q, t, probe, 1.9);
      const auto E = E_tau(I, J, 1e-9 * std::abs(J), 1.9);
      CHECK(E.consistent);
      CHECK(E.value >= -1e-9 * std::abs(J));
    }
    s.tau = 200.0;
    const auto I = oracle::indicator_oracle(s);
    const auto q = quad_for(s.tau, unit_sphere, probe.center, GammaField::constant(g));
    const double E = E_tau(I, J_tau(q, s.tau, probe, 1.9), 0.0, 1.9).value;
    const double limit = pi / 4 * 0.0025 * (1 - g) * (1 - g) / ((1 + g) * 1.5);
    CHECK(normalized(E, s.tau) / profile_factor(s.tau) == Approx(limit).epsilon(0.02));
    const auto r = energy_ratio(E, q, s.tau, probe, {g}, 1.9);
    CHECK_FALSE(r.excluded);
    CHECK(r.ratio == Approx(1.0).epsilon(0.01));
  }
  CHECK_FALSE(E_tau(1.0, 2.0, 1e-3).consistent);
}

TEST_CASE("energy ratio excludes gamma one") {
  const auto q = quad_for(20, unit_sphere, probe.center, GammaField::constant(1.0));
  const auto r = energy_ratio(1e-6, q, 20.0, probe, {1.0}, 1.9);
  CHECK(r.excluded);
  CHECK(std::isnan(r.ratio));
}

TEST_CASE("two-sided bounds hold on the oracle") {
  for (double g : {0.5, 2.0}) {
    oracle::SphereScenario s;
    s.radius = 1.0;
    s.gamma = g;
    s.probe = probe;
    s.tau = 15.0;
    const auto I = oracle::indicator_oracle(s);
    const auto b = bounds_check(I, quad_for(15, unit_sphere, probe.center, GammaField::constant(g)), probe, 1e-3, 1.9);
    CHECK(b.lower_ok);
    CHECK(b.upper_applicable);
    CHECK(b.upper_ok);
  }
  // Upper bound is not available where gamma vanishes.
  const auto q0 = quad_for(15, unit_sphere, probe.center, GammaField::constant(0.0));
  CHECK(std::isinf(upper_bound_term(q0, 15.0, probe, 1.9)));
}
