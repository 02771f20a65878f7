#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <numeric>

#include "tdenclosure/bessel.hpp"
#include "tdenclosure/gamma.hpp"
#include "tdenclosure/indicator.hpp"
#include "tdenclosure/parallel.hpp"
#include "tdenclosure/quadrature.hpp"

using namespace tde;
using Catch::Approx;

TEST_CASE("vector algebra") {
  const Vec3 a{1, 2, 3}, b{-2, 0.5, 4};
  CHECK(dot(a, cross(a, b)) == Approx(0.0).margin(1e-14));
  CHECK(norm(normalized(b)) == Approx(1.0));
  const Frame f = Frame::from_axis({0.3, -0.2, 0.9});
  CHECK(dot(f.e1, f.e2) == Approx(0.0).margin(1e-14));
  CHECK(dot(f.e1, f.e3) == Approx(0.0).margin(1e-14));
  CHECK(norm(f.e3 - normalized(Vec3{0.3, -0.2, 0.9})) < 1e-14);
}

TEST_CASE("gauss-legendre is exact to degree 2n-1") {
  for (int n : {1, 2, 5, 12, 33}) {
    const auto r = quad::gauss_legendre(n);
    for (int p = 0; p <= 2 * n - 1; ++p) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += r.weights[i] * std::pow(r.nodes[i], p);
      const double exact = p % 2 ? 0.0 : 2.0 / (p + 1);
      CHECK(s == Approx(exact).margin(1e-13));
    }
  }
}

TEST_CASE("composite rule on graded breaks") {
  const auto br = quad::graded_breaks(0.0, 2.0, 1e-3, 1.4, 0.2);
  CHECK(br.front() == 0.0);
  CHECK(br.back() == 2.0);
  for (std::size_t i = 1; i < br.size(); ++i) CHECK(br[i] > br[i - 1]);
  const auto r = quad::composite(br, 8);
  double s = 0.0;
  for (std::size_t i = 0; i < r.nodes.size(); ++i) s += r.weights[i] * std::exp(-5.0 * r.nodes[i]);
  CHECK(s == Approx((1.0 - std::exp(-10.0)) / 5.0).epsilon(1e-13));
}

TEST_CASE("triangle rules") {
  for (const auto *r : {&quad::triangle_centroid(), &quad::triangle_deg2(), &quad::triangle_deg5()})
    CHECK(std::accumulate(r->weights.begin(), r->weights.end(), 0.0) == Approx(1.0));
  // Average of x^2 y over the reference triangle (0,0),(1,0),(0,1) is 2 * 2!1!/5! = 1/30.
  const auto &r = quad::triangle_deg5();
  double s = 0.0;
  for (std::size_t i = 0; i < r.weights.size(); ++i) {
    const double x = r.bary[i][1], y = r.bary[i][2];
    s += r.weights[i] * x * x * y;
  }
  CHECK(s == Approx(1.0 / 30.0).epsilon(1e-13));
}

TEST_CASE("modified spherical bessel functions") {
  for (double z : {0.01, 0.3, 1.0, 7.5, 40.0}) {
    const auto [i0, k0] = bessel::bessel_i_k(0, z);
    CHECK(i0 == Approx(std::sinh(z) / z).epsilon(1e-13));
    CHECK(k0 == Approx(pi * std::exp(-z) / (2 * z)).epsilon(1e-13));
    const auto [i1, k1] = bessel::bessel_i_k(1, z);
    if (z > 0.1) CHECK(i1 == Approx((z * std::cosh(z) - std::sinh(z)) / (z * z)).epsilon(1e-12));
    CHECK(k1 == Approx(pi * std::exp(-z) * (1 + z) / (2 * z * z)).epsilon(1e-13));
  }
}

TEST_CASE("wronskian identity i_n k_n' - i_n' k_n = -pi/(2 z^2)") {
  for (double z : {0.05, 0.7, 3.0, 12.0, 60.0})
    for (int n : {0, 1, 3, 10, 25}) {
      if (n > 4 * z + 30) continue;
      const auto [in, kn] = bessel::bessel_i_k(n, z);
      const auto [dIn, dKn] = bessel::bessel_i_k_derivative(n, z);
      const double w = in * dKn - dIn * kn;
      CHECK(w == Approx(-pi / (2 * z * z)).epsilon(1e-11));
    }
  // Table form, valid where the unscaled values would overflow.
  const auto t = bessel::table(400, 250.0);
  for (int n : {0, 100, 399}) {
    const double lhs = t.ik_product(n) * (t.log_deriv_k(n) - t.log_deriv_i(n));
    CHECK(lhs == Approx(-pi / (2 * 250.0 * 250.0)).epsilon(1e-12));
  }
}

TEST_CASE("bessel rejects bad arguments") {
  CHECK_THROWS_AS(bessel::table(3, 0.0), DomainError);
  CHECK_THROWS_AS(bessel::table(-1, 1.0), DomainError);
}

TEST_CASE("legendre recurrence") {
  const auto p = bessel::legendre(3, 0.3);
  CHECK(p[2] == Approx(0.5 * (3 * 0.09 - 1)));
  CHECK(p[3] == Approx(0.5 * (5 * 0.027 - 3 * 0.3)));
}

TEST_CASE("gamma fields") {
  const auto c = GammaField::constant(0.5);
  CHECK(c({1, 2, 3}, 0) == 0.5);
  CHECK(c.is_constant());
  const auto pc = GammaField::per_component({0.5, 2.0});
  CHECK(pc({}, 1) == 2.0);
  CHECK_THROWS_AS(pc({}, 2), DomainError);
  CHECK_THROWS_AS(GammaField::constant(-0.1), DomainError);
  const auto f = GammaField::function([](const Vec3 &x, int) { return x.z; });
  CHECK_THROWS(f({0, 0, -1}, 0));
}

TEST_CASE("indicator samples keep sign and magnitude in log form") {
  const auto s = IndicatorSample::from_value(10.0, -3e-200);
  CHECK(s.sign == -1);
  CHECK(s.value() == Approx(-3e-200));
  const auto big = IndicatorSample::from_log(100.0, 1, -400.0);
  CHECK(big.normalized(2.0) == Approx(std::exp(-400.0 + 4 * std::log(100.0) + 400.0)));
  CHECK(IndicatorSample::from_value(1.0, 0.0).normalized(3.0) == 0.0);
}

TEST_CASE("parallel_for visits every index once, independent of the thread count") {
  std::vector<double> a(1000), b(1000);
  parallel_for(0, a.size(), [&](std::size_t i) { a[i] = std::sin(0.1 * i); }, 1);
  parallel_for(0, b.size(), [&](std::size_t i) { b[i] = std::sin(0.1 * i); }, 7);
  CHECK(a == b);
  CHECK_THROWS_AS(parallel_for(0, 10, [](std::size_t i) { if (i == 5) throw DomainError("x"); }, 3), DomainError);
}

TEST_CASE("thread count honours the environment") {
  setenv("TDE_THREADS", "3", 1);
  CHECK(thread_count() == 3);
  setenv("TDE_THREADS", "junk", 1);
  CHECK(thread_count() >= 1);
  unsetenv("TDE_THREADS");
}
