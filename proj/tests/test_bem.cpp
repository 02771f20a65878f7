#include <catch_amalgamated.hpp>

#include "tdenclosure/bem.hpp"
#include "tdenclosure/sphere_oracle.hpp"

using namespace tde;
using namespace tde::bem;
using Catch::Approx;

namespace {

MeshingOptions coarse(const Vec3 &toward) {
  MeshingOptions m;
  m.h_pole = 0.05;
  m.growth = 0.12;
  m.h_max = 0.25;
  m.refine_toward = toward;
  return m;
}

}  // namespace

TEST_CASE("single layer applied to a constant on the unit sphere") {
  // int_S e^{-tau |x-y|}/(4 pi |x-y|) dS_y = sinh(tau) e^{-tau} / tau for |x| = 1.
  const double tau = 2.0;
  const auto ps = build_panel_system(Obstacle{Sphere{{0, 0, 0}, 1.0}}, GammaField::constant(0.5), tau,
                                     coarse({0, 0, 3}));
  const auto op = assemble_operators(ps);
  const Eigen::VectorXd s1 = op.S * Eigen::VectorXd::Ones(ps.size());
  const double exact = std::sinh(tau) * std::exp(-tau) / tau;
  CHECK(s1.mean() == Approx(exact).epsilon(0.01));
  CHECK(s1.maxCoeff() == Approx(exact).epsilon(0.03));
}

TEST_CASE("sphere indicator agrees with the series solution") {
  const Obstacle o{Sphere{{0, 0, 0}, 1.0}};
  const Probe b{{0, 0, 3}, 0.1};
  for (double g : {0.5, 2.0}) {
    RobinSolver solver(build_panel_system(o, GammaField::constant(g), 4.0, coarse(b.center)));
    const auto I = solver.indicator(b);
    oracle::SphereScenario s;
    s.radius = 1.0;
    s.gamma = g;
    s.probe = b;
    s.tau = 4.0;
    const auto ref = oracle::indicator_oracle(s);
    CHECK(I.sign == ref.sign);
    CHECK(std::exp(I.log_abs - ref.log_abs) == Approx(1.0).epsilon(0.01));
    CHECK(solver.diagnostics().residual < 1e-8);
    CHECK_FALSE(solver.diagnostics().iterative);
  }
}

TEST_CASE("two equidistant spheres double the indicator") {
  const Probe b{{0, 0, 3}, 0.1};
  const auto g = GammaField::constant(0.5);
  const double tau = 8.0;
  const auto one = indicator_bem(build_panel_system(Obstacle{Sphere{{2, 0, 0}, 1.0}}, g, tau, coarse(b.center)), b);
  const Obstacle two{Sphere{{2, 0, 0}, 1.0}, Sphere{{-2, 0, 0}, 1.0}};
  const auto both = indicator_bem(build_panel_system(two, g, tau, coarse(b.center)), b);
  CHECK(std::exp(both.log_abs - one.log_abs) == Approx(2.0).epsilon(0.005));
}

TEST_CASE("iterative path agrees with the dense factorisation") {
  const Obstacle o{Sphere{{0, 0, 0}, 1.0}};
  const Probe b{{0, 0, 3}, 0.1};
  MeshingOptions m = coarse(b.center);
  m.h_max = 0.4;
  const auto ps = build_panel_system(o, GammaField::constant(0.5), 4.0, m);
  AssemblyOptions it;
  it.dense_limit = 0;
  const auto a = indicator_bem(ps, b);
  const auto c = indicator_bem(ps, b, it);
  CHECK(c.log_abs == Approx(a.log_abs).epsilon(1e-6));
}

TEST_CASE("bad inputs are rejected") {
  CHECK_THROWS_AS(RobinSolver(PanelSystem{}), MeshError);
  CHECK_THROWS_AS(build_panel_system(Obstacle{Sphere{{0, 0, 0}, 1.0}}, GammaField::constant(0.5), 0.0), DomainError);
}
