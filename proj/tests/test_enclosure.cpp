#include <catch_amalgamated.hpp>

#include <random>

#include "tdenclosure/enclosure.hpp"
#include "tdenclosure/sphere_oracle.hpp"

using namespace tde;
using Catch::Approx;

namespace {

IndicatorCurve synthetic(const std::function<double(double)> &f, double lo, double hi, int n) {
  IndicatorCurve c;
  c.provenance = Provenance::synthetic;
  for (int i = 0; i < n; ++i) {
    const double t = lo + (hi - lo) * i / (n - 1);
    c.samples.push_back(IndicatorSample::from_value(t, f(t)));
  }
  return c;
}

IndicatorCurve oracle_curve(double gamma, double d, double lo, double hi, int n, double eta = 0.1) {
  oracle::SphereScenario s;
  s.radius = 1.0;
  s.gamma = gamma;
  s.probe = {{0, 0, 1 + d}, eta};
  IndicatorCurve c;
  c.provenance = Provenance::oracle;
  c.probe = s.probe;
  c.known_dist = d - eta;
  for (int i = 0; i < n; ++i) {
    s.tau = lo + (hi - lo) * i / (n - 1);
    c.samples.push_back(oracle::indicator_oracle(s));
  }
  return c;
}

// Exact log-domain curve tau^-4 e^{-2 tau dist} C (1 + c1/tau); avoids underflow.
IndicatorCurve log_linear(double dist, double C, double c1, double lo, double hi, int n) {
  IndicatorCurve c;
  for (int i = 0; i < n; ++i) {
    const double t = lo + (hi - lo) * i / (n - 1);
    const double m = C * (1 + c1 / t);
    c.samples.push_back(IndicatorSample::from_log(t, m > 0 ? 1 : -1, std::log(std::abs(m)) - 4 * std::log(t) - 2 * t * dist));
  }
  return c;
}

}  // namespace

TEST_CASE("distance from an exactly log-linear curve") {
  const auto c = synthetic([](double t) { return std::pow(t, -4) * std::exp(-3.8 * t); }, 10, 30, 21);
  const auto f = fit_distance(c, Window{10, 30});
  CHECK(f.dist == Approx(1.9).epsilon(1e-12));
  CHECK(f.residual < 1e-10);
  CHECK(f.taus.size() == 21);
  CHECK(f.sequence.back() == Approx(-std::log(std::pow(30.0, -4) * std::exp(-3.8 * 30)) / 60));
}

TEST_CASE("distance fit preconditions") {
  const auto c = synthetic([](double t) { return std::exp(-t); }, 10, 30, 21);
  CHECK_THROWS_AS(fit_distance(c, Window{10, 12}), WindowError);  // three samples
  const auto flip = synthetic([](double t) { return (t - 20.5) * std::exp(-t); }, 10, 30, 21);
  CHECK_THROWS_AS(fit_distance(flip, Window{10, 30}), WindowError);
}

TEST_CASE("default window is the top half of the range") {
  const auto c = synthetic([](double t) { return std::exp(-t); }, 10, 30, 21);
  const Window w = default_window(c);
  CHECK(w.lo == 20);
  CHECK(w.hi == 30);
}

TEST_CASE("distance on the oracle curve") {
  const auto c = oracle_curve(0.5, 2.0, 10, 30, 21);
  CHECK(fit_distance(c, Window{10, 30}).dist == Approx(1.9).epsilon(0.01));
}

TEST_CASE("sign classification follows the regime") {
  for (double g : {0.25, 0.5, 0.8}) {
    const auto s = classify_sign(oracle_curve(g, 2.0, 50, 400, 36));
    CHECK(s.sign == 1);
    CHECK_FALSE(s.indeterminate);
  }
  for (double g : {1.25, 2.0, 4.0}) CHECK(classify_sign(oracle_curve(g, 2.0, 50, 400, 36)).sign == -1);
  const auto one = classify_sign(oracle_curve(1.0, 2.0, 50, 400, 36));
  CHECK(one.indeterminate);
  CHECK(one.sign == 0);
}

TEST_CASE("mixed top quartile is indeterminate") {
  const auto c = synthetic([](double t) { return (static_cast<int>(t) % 2 ? 1.0 : -1.0) * std::exp(-t); }, 10, 30, 21);
  CHECK(classify_sign(c).indeterminate);
}

TEST_CASE("leading coefficient on synthetic and oracle data") {
  const auto c = log_linear(1.9, 8.7e-4, -3.0, 100, 400, 31);
  const auto f = fit_leading_coefficient(c, 1.9, Window{100, 400});
  CHECK(f.coefficient == Approx(8.7e-4).epsilon(1e-10));
  CHECK_FALSE(f.misfit);
  const double expected = leading_coefficient(2.0, 0.1, -1, 1, 0.5);
  CHECK(expected == Approx(8.7266e-4).epsilon(1e-4));
  const auto o = fit_leading_coefficient(oracle_curve(0.5, 2.0, 100, 400, 31), 1.9, Window{100, 400});
  CHECK(o.coefficient == Approx(expected).epsilon(0.02));
  CHECK(o.last_value > 0);
}

TEST_CASE("two equidistant identical reflectors double the coefficient") {
  // Linearity in the reflector sum: the coefficient of I1 + I2 is C1 + C2.
  const auto c1 = log_linear(1.9, 8.7e-4, -3.0, 100, 400, 31);
  IndicatorCurve c2 = c1;
  for (auto &s : c2.samples) s.log_abs += std::log(2.0);
  const auto a = fit_leading_coefficient(c1, 1.9, Window{100, 400});
  const auto b = fit_leading_coefficient(c2, 1.9, Window{100, 400});
  CHECK(b.coefficient == Approx(2 * a.coefficient));
}

TEST_CASE("gamma from curvature inverts the forward formula") {
  for (double A : {-0.95, -0.5, -1.0 / 3, 0.0, 0.2, 1.0 / 3, 0.9}) {
    const double g = gamma_from_reflection(A);
    const double C = leading_coefficient(2.0, 0.1, -1, 1, g);
    CHECK(gamma_from_curvature(C, 2.0, 0.1, -1, 1) == Approx(g).epsilon(1e-12));
  }
  CHECK(gamma_from_curvature(8.7266462599716e-4, 2.0, 0.1, -1, 1) == Approx(0.5).epsilon(1e-9));
  CHECK(gamma_from_curvature(0.0, 2.0, 0.1, -1, 1) == 1.0);
  CHECK_THROWS_AS(gamma_from_curvature(1.0, 2.0, 0.1, -1, 1), InconsistencyError);
  CHECK_THROWS_AS(gamma_from_reflection(-1.0), InconsistencyError);
  CHECK_THROWS_AS(gamma_from_curvature(1e-4, 2.0, 0.1, 10, 0), DomainError);  // hessDet < 0
}

TEST_CASE("three-ball recovery is the identity on consistent inputs") {
  std::mt19937_64 rng(20240611);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  int done = 0;
  double worst = 0.0;
  while (done < 500) {
    const double H = -(0.1 + 3.0 * U(rng));
    const double K = H * H * (0.5 + 0.5 * U(rng));
    const double A = -0.9 + 1.8 * U(rng);
    if (std::abs(A) < 1e-3) continue;
    std::array<double, 3> L{0.2 + 2.0 * U(rng), 0.2 + 2.0 * U(rng), 0.2 + 2.0 * U(rng)};
    if (std::abs(L[0] - L[1]) < 0.05 || std::abs(L[1] - L[2]) < 0.05 || std::abs(L[0] - L[2]) < 0.05) continue;
    std::array<double, 3> F{};
    bool ok = true;
    for (int j = 0; j < 3; ++j) {
      const double q = L[j] * L[j] - 2 * H * L[j] + K;
      ok = ok && q > 0;
      F[j] = A / std::sqrt(q);
    }
    if (!ok) continue;
    const auto r = three_ball_recover(F, L, A > 0 ? 1 : -1);
    if (r.ill_conditioned) continue;
    worst = std::max({worst, std::abs(r.H - H) / std::abs(H), std::abs(r.K - K) / std::abs(K), std::abs(r.A - A)});
    ++done;
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("three-ball edge cases") {
  const std::array<double, 3> F{0.3, 0.3, 0.3};
  CHECK_THROWS_AS(three_ball_recover(F, {0.5, 0.5, 0.4}, 1), SolverError);
  CHECK_THROWS_AS(three_ball_recover(F, {0.5, 0.45, 0.4}, -1), DomainError);
  CHECK_THROWS_AS(three_ball_recover(F, {0.5, 0.45, 0.4}, 0), DomainError);
  // Unit sphere data at d = 1.8, 2.0, 2.2 (H = -1, K = 1, A = 1/3).
  std::array<double, 3> L{1 / 1.8, 1 / 2.0, 1 / 2.2}, G{};
  for (int j = 0; j < 3; ++j) G[j] = (1.0 / 3) / std::sqrt(L[j] * L[j] + 2 * L[j] + 1);
  const auto r = three_ball_recover(G, L, 1);
  CHECK(r.H == Approx(-1.0).epsilon(1e-9));
  CHECK(r.K == Approx(1.0).epsilon(1e-9));
  CHECK(r.gamma == Approx(0.5).epsilon(1e-9));
  CHECK(r.M != 0.0);
}

TEST_CASE("ratio of indicators") {
  const auto a = log_linear(1.9, 3e-4, 1.0, 100, 400, 31);
  const auto r = ratio_indicator(a, a);
  CHECK(r.ratio == Approx(1.0));
  CHECK(r.correction == Approx(0.0).margin(1e-12));
  const auto g1 = oracle_curve(0.5, 2.0, 100, 400, 31), g0 = oracle_curve(0.25, 2.0, 100, 400, 31);
  CHECK(ratio_indicator(g1, g0).ratio == Approx(5.0 / 9.0).epsilon(0.01));
  const auto [lo, hi] = ratio_bracket({0.5, 0.8}, {0.25, 0.25});
  CHECK(lo == Approx((1.0 / 9) / 0.6));
  CHECK(hi == Approx((1.0 / 3) / 0.6));
  CHECK_THROWS_AS(ratio_bracket({0.5}, {0.25, 0.3}), DomainError);
  const auto shorter = log_linear(1.9, 3e-4, 1.0, 100, 400, 30);
  CHECK_THROWS_AS(ratio_indicator(a, shorter), DomainError);
}

TEST_CASE("direction scan on a sphere") {
  // The oracle is the obstacle: probes placed along each direction from p.
  const Vec3 p{0, 0, 3};
  const double dp = 2.0;
  auto fn = [](const Probe &b) {
    oracle::SphereScenario s;
    s.radius = 1.0;
    s.gamma = 0.5;
    s.probe = b;
    IndicatorCurve c;
    for (int i = 0; i < 21; ++i) {
      s.tau = 10 + i;
      c.samples.push_back(oracle::indicator_oracle(s));
    }
    return c;
  };
  const auto hits = probe_direction_scan(fn, p, dp, 0.1, {{0, 0, -1}, {1, 0, 0}}, 0.5, {0.02, Window{10, 30}, {}});
  CHECK(hits[0].on_boundary);
  CHECK_FALSE(hits[1].on_boundary);
  CHECK_THROWS_AS(probe_direction_scan(fn, p, dp, 0.1, {{0, 0, -1}}, 2.5), DomainError);
}

TEST_CASE("sixteen-direction fan on an ellipsoid has exactly one hit") {
  // Indicator synthesized from the geometric distance: the scan logic is under test.
  const Obstacle o{Ellipsoid{{0, 0, 0}, {1.0, 1.5, 2.0}}};
  const Vec3 p{0, 0, 3.5};
  const double dp = distance_to_boundary(o, p);
  auto fn = [&](const Probe &b) {
    const double dist = probe_distance(o, b);
    return log_linear(dist, 1e-3, -2.0, 10, 30, 21);
  };
  std::vector<Vec3> dirs;
  for (int k = 0; k < 16; ++k) {
    const double th = pi * (k + 0.0) / 16.0 + pi / 2;  // sweep from sideways through straight down
    dirs.push_back({std::sin(th) * std::cos(0.3 * k), std::sin(th) * std::sin(0.3 * k), std::cos(th)});
  }
  dirs[8] = {0, 0, -1};
  const auto hits = probe_direction_scan(fn, p, dp, 0.1, dirs, 0.5, {0.005, Window{10, 30}, {}});
  int n = 0;
  for (const auto &h : hits) n += h.on_boundary;
  CHECK(n == 1);
  CHECK(hits[8].on_boundary);
}
