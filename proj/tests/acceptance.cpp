// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--scenarios DIR] [--strict] [--only N,...]
//
// Exit status is nonzero when a criterion fails, except that the criteria in
// kKnownFailures are reported but tolerated unless --strict is given.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "tdenclosure/scenario.hpp"

using namespace tde;
namespace sc = tde::scenario;
using sc::json;

namespace {

// Criteria whose tolerance is out of reach at the prescribed tau range; see README.
const std::set<int> kKnownFailures{7, 10};

std::filesystem::path scenario_dir =
#ifdef TDE_SCENARIO_DIR
    TDE_SCENARIO_DIR;
#else
    "scenarios";
#endif

struct Outcome {
  bool pass{false};
  std::string detail;
};

std::string fmt(const char *f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

sc::Scenario load(const std::string &name) { return sc::load(scenario_dir / (name + ".json")); }

const json &analysis(const json &report, const std::string &kind) {
  for (const auto &a : report.at("analyses"))
    if (a.at("kind") == kind) {
      if (a.at("status") != "ok") throw Error(kind + " failed: " + a.value("error", std::string("?")));
      return a;
    }
  throw Error("report has no " + kind + " analysis");
}

/// Oracle curve for the unit sphere reference configuration.
IndicatorCurve sphere_curve(double gamma, const std::vector<double> &taus) {
  sc::Scenario s = load("sphere-g0.5");
  s.gamma.value = gamma;
  s.tau = {};
  s.tau.list = taus;
  const Obstacle o = sc::build_obstacle(s);
  return sc::solve(s, o, s.gamma, s.probes).curves[0];
}

std::vector<double> range(double lo, double hi, double step) {
  std::vector<double> t;
  for (double x = lo; x <= hi + 1e-9; x += step) t.push_back(x);
  return t;
}

// ---------------------------------------------------------------------------

Outcome sign_dichotomy() {
  std::ostringstream os;
  bool ok = true;
  for (double g : {0.25, 0.5, 0.8, 1.25, 2.0, 4.0}) {
    const auto c = sphere_curve(g, range(8, 30, 1));
    const int want = g < 1 ? 1 : -1;
    int bad = 0;
    for (const auto &s : c.samples) bad += s.sign != want;
    ok = ok && bad == 0;
    os << "g=" << g << (bad ? " wrong:" + std::to_string(bad) : " ok") << ' ';
  }
  return {ok, os.str() + "(tau 8..30 step 1)"};
}

const json &sphere_report(double g) {
  static std::map<double, json> cache;
  if (!cache.count(g)) cache[g] = sc::run(load(g == 0.5 ? "sphere-g0.5" : "sphere-g2")).report;
  return cache[g];
}

Outcome distance() {
  const json &d = analysis(sphere_report(0.5), "dist_fit")["per_probe"][0];
  const double est = d["dist"], err = d["relative_error"];
  return {std::abs(err) < 0.01, fmt("dist=%.5f true=1.9 rel.err=%.2e (window [10,30], tol 1%%)", est, err)};
}

Outcome main_formula() {
  bool ok = true;
  std::string out;
  for (double g : {0.5, 2.0}) {
    const json &c = analysis(sphere_report(g), "coefficient_fit")["per_probe"][0];
    const double C = c["coefficient"], P = c["predicted"];
    const double rel = C / P - 1;
    ok = ok && std::abs(rel) < 0.02;
    out += fmt("g=%g C=%.5e predicted=%.5e rel=%+.2e; ", g, C, P, rel);
  }
  return {ok, out + "(window [100,400], tol 2%)"};
}

Outcome curvature_gamma() {
  const double g1 = analysis(sphere_report(0.5), "coefficient_fit")["per_probe"][0]["gamma_from_curvature"];
  const double g2 = analysis(sphere_report(2.0), "coefficient_fit")["per_probe"][0]["gamma_from_curvature"];
  return {std::abs(g1 - 0.5) <= 0.025 && std::abs(g2 - 2.0) <= 0.1,
          fmt("gamma=%.5f (0.5+-0.025), gamma=%.5f (2.0+-0.1)", g1, g2)};
}

Outcome three_ball() {
  const json r = sc::run(load("three-ball")).report;
  const json &a = analysis(r, "three_ball");
  const double H = a["H"], K = a["K"], g = a["gamma"], M = a["M"];
  const bool ok = std::abs(H + 1) <= 0.1 && std::abs(K - 1) <= 0.1 && std::abs(g - 0.5) <= 0.05;
  return {ok, fmt("H=%.4f K=%.4f gamma=%.4f M=%.3e (tol 0.1, 0.1, 0.05)", H, K, g, M)};
}

Outcome ratios() {
  const json r1 = sc::run(load("sphere-ratio")).report;
  const double q = analysis(r1, "ratio")["per_probe"][0]["ratio"];
  const double want = (1.0 / 3.0) / 0.6;
  const json r2 = sc::run(load("two-sphere")).report;
  const json &t = analysis(r2, "ratio")["per_probe"][0];
  const double q2 = t["ratio"];
  const bool inside = t["within_bracket"];
  const bool ok = std::abs(q / want - 1) <= 0.01 && inside;
  return {ok, fmt("sphere ratio=%.6f want %.6f (tol 1%%); two-sphere ratio=%.4f bracket [%.4f, %.4f] %s", q, want, q2,
                  t["bracket"][0].get<double>(), t["bracket"][1].get<double>(), inside ? "inside" : "outside")};
}

Outcome energy_term_ratio() {
  bool ok = true;
  std::string out;
  for (double g : {0.5, 2.0}) {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto &row : analysis(sphere_report(g), "energy_sweep")["per_probe"][0]["rows"]) {
      if (row["ratio"].is_null()) {
        ok = false;
        continue;
      }
      const double v = row["ratio"];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    ok = ok && lo <= hi && lo >= 0.95 && hi <= 1.05;
    out += fmt("g=%g ratio in [%.4f, %.4f]; ", g, lo, hi);
  }
  return {ok, out + "(tau 20..30, band [0.95, 1.05])"};
}

Outcome laplace() {
  const Obstacle o{Sphere{{0, 0, 0}, 1.0}};
  const Vec3 p{0, 0, 3};
  const auto refl = first_reflector(o, p);
  const auto rows = asym::laplace_limit_check(
      [&](double t) {
        asym::RefinedQuadratureOptions qo;
        qo.tau = t;
        return asym::refined_quadrature(o, p, GammaField::constant(1.0), qo);
      },
      [](const Vec3 &) { return 1.0; }, p, refl, {40.0});
  const double r = rows[0].ratio;
  return {r >= 0.99 && r <= 1.01, fmt("ratio=%.5f at tau 40 (band [0.99, 1.01])", r)};
}

Outcome bem_cross() {
  // Sphere against the series solution.
  sc::Scenario s = load("sphere-g0.5");
  s.solver.kind = "bem";
  s.tau = {};
  s.tau.list = {4, 6, 8, 10};
  s.analyses.clear();
  const Obstacle o = sc::build_obstacle(s);
  const auto bem = sc::solve(s, o, s.gamma, s.probes).curves[0];
  const auto ref = sphere_curve(0.5, s.tau.list);
  double worst = 0.0;
  for (std::size_t k = 0; k < ref.samples.size(); ++k)
    worst = std::max(worst, std::abs(std::exp(bem.samples[k].log_abs - ref.samples[k].log_abs) *
                                         bem.samples[k].sign * ref.samples[k].sign - 1.0));
  // Two equidistant spheres against one.
  sc::Scenario one = load("two-sphere");
  one.components.resize(1);
  one.gamma = {};
  one.gamma.value = 0.5;
  one.analyses.clear();
  const Obstacle o1 = sc::build_obstacle(one);
  const auto c1 = sc::solve(one, o1, one.gamma, one.probes).curves[0];
  CoefficientFitOptions fo;
  fo.compensate_probe = true;
  const double C1 = fit_leading_coefficient(c1, probe_distance(o1, one.probes[0]), Window{4, 10}, fo).coefficient;
  // Same gamma on both spheres is needed for a clean factor 2.
  const sc::Scenario twin = [&] {
    sc::Scenario t = load("two-sphere");
    t.gamma = {};
    t.gamma.value = 0.5;
    t.analyses.clear();
    return t;
  }();
  const Obstacle o2 = sc::build_obstacle(twin);
  const auto c2 = sc::solve(twin, o2, twin.gamma, twin.probes).curves[0];
  const double Ct = fit_leading_coefficient(c2, probe_distance(o2, twin.probes[0]), Window{4, 10}, fo).coefficient;
  const double factor = Ct / C1;
  const bool ok = worst < 0.01 && std::abs(factor / 2 - 1) <= 0.05;
  return {ok, fmt("sphere max rel.err=%.2e (tau 4,6,8,10; tol 1%%); two-sphere/one-sphere coefficient=%.5f (tol 5%%)",
                  worst, factor)};
}

Outcome time_domain() {
  std::string out;
  bool ok = true;
  // Gap to the series solution against the observation time.
  const sc::Scenario s = load("td-sphere");
  const Obstacle o = sc::build_obstacle(s);
  const auto sol = sc::solve(s, o, s.gamma, s.probes);
  std::vector<double> Ts;
  std::vector<IndicatorCurve> curves;
  for (const auto &[T, c] : sol.checkpoints[0]) {
    Ts.push_back(T);
    curves.push_back(c);
  }
  Ts.push_back(*s.T);
  curves.push_back(sol.curves[0]);
  if (Ts.size() < 3) return {false, "fewer than three observation times available"};
  const auto &sp = std::get<Sphere>(o.components[0]);
  const auto taus = s.tau.values();
  for (std::size_t k = 0; k < taus.size(); ++k) {
    const double ref = oracle::indicator_oracle({sp.center, sp.radius, s.gamma.value, s.probes[0], taus[k]}).value();
    std::vector<double> lg;
    for (const auto &c : curves) lg.push_back(std::log(std::abs(c.samples[k].value() - ref)));
    // least-squares slope of log gap against T
    double mt = 0, ml = 0;
    for (std::size_t i = 0; i < Ts.size(); ++i) {
      mt += Ts[i] / Ts.size();
      ml += lg[i] / Ts.size();
    }
    double num = 0, den = 0;
    for (std::size_t i = 0; i < Ts.size(); ++i) {
      num += (Ts[i] - mt) * (lg[i] - ml);
      den += (Ts[i] - mt) * (Ts[i] - mt);
    }
    const double slope = num / den;
    bool dec = true;
    for (std::size_t i = 1; i < lg.size(); ++i) dec = dec && lg[i] < lg[i - 1];
    const bool pass = dec && std::abs(-slope / taus[k] - 1) <= 0.25;
    ok = ok && pass;
    out += fmt("tau=%g slope=%.3f (want %.1f, %+.1f%%) %s; ", taus[k], slope, -taus[k],
               100 * (-slope / taus[k] - 1), pass ? "ok" : "off");
  }
  // Discrete energy on a closed box.
  for (double g : {0.0, 2.0}) {
    td::TdOptions opt;
    opt.h = 0.025;
    opt.T = 2.0;
    opt.margin = 0.0;
    opt.layer_cells = 0;
    opt.reflecting_outer = true;
    opt.formulation = td::Formulation::total;
    td::Simulation sim(Obstacle{Sphere{{0, 0, 0}, 0.25}}, GammaField::constant(g), Probe{{0, 0, 0.7}, 0.1}, opt);
    sim.enable_energy(true);
    sim.run();
    const auto &e = sim.energy_history();
    const double e0 = e.front().energy;
    if (g == 0.0) {
      double drift = 0.0;
      for (const auto &x : e) drift = std::max(drift, std::abs(x.energy / e0 - 1));
      ok = ok && drift <= 0.005;
      out += fmt("energy drift (gamma 0)=%.1e; ", drift);
    } else {
      bool mono = true;
      for (std::size_t i = 1; i < e.size(); ++i) mono = mono && e[i].energy <= e[i - 1].energy * (1 + 1e-12);
      ok = ok && mono;
      out += fmt("energy non-increasing (gamma 2): %s, loss %.1f%%", mono ? "yes" : "no",
                 100 * (1 - e.back().energy / e0));
    }
  }
  return {ok, out};
}

Outcome properties() {
  std::string out;
  bool ok = true;
  // Wronskian of the scaled table.
  double w = 0.0;
  for (double z : {0.5, 5.0, 50.0, 250.0}) {
    const auto t = bessel::table(300, z);
    for (int n : {0, 10, 100, 299})
      w = std::max(w, std::abs(t.ik_product(n) * (t.log_deriv_k(n) - t.log_deriv_i(n)) * 2 * z * z / pi + 1));
  }
  ok = ok && w < 1e-10;
  out += fmt("wronskian %.1e; ", w);
  // Ball-average identity against tensor-product volume quadrature.
  double ba = 0.0;
  for (double tau : {0.5, 3.0, 20.0}) {
    const Probe b{{0, 0, 0}, 0.3};
    const double yd = 0.9;
    const auto g = quad::gauss_legendre(48);
    double vol = 0.0;
    for (int i = 0; i < 48; ++i)
      for (int j = 0; j < 48; ++j) {
        const double r = 0.15 * (g.nodes[i] + 1), c = g.nodes[j];
        const double d = std::sqrt(r * r + yd * yd - 2 * r * yd * c);
        vol += 0.15 * g.weights[i] * g.weights[j] * 2 * pi * r * r * std::exp(-tau * d) / d;
      }
    const double id = fields::ball_average_identity(
        [&](const Vec3 &x) {
          const double r = norm(x - Vec3{0, 0, yd});
          return std::exp(-tau * r) / r;
        },
        tau, b);
    ba = std::max(ba, std::abs(id / vol - 1));
  }
  ok = ok && ba <= 1e-8;
  out += fmt("ball average %.1e; ", ba);
  // v: continuity at the probe surface and the radial PDE residual.
  double cont = 0.0, pde = 0.0;
  for (double tau : {0.5, 4.0, 40.0}) {
    const double eta = 0.2, e = 1e-9;
    cont = std::max(cont, std::abs(fields::v_radial(eta * (1 - e), tau, eta) / fields::v_radial(eta * (1 + e), tau, eta) - 1));
    for (double r : {0.05, 0.15, 0.3, 0.6}) {
      const double h = 1e-4;
      const double vm = fields::v_radial(r - h, tau, eta), v0 = fields::v_radial(r, tau, eta),
                   vp = fields::v_radial(r + h, tau, eta);
      const double res = (vp - 2 * v0 + vm) / (h * h) + (vp - vm) / (h * r) - tau * tau * v0 + (r < eta ? 1 : 0);
      pde = std::max(pde, std::abs(res) / (1 + tau * tau * std::abs(v0)));
    }
  }
  ok = ok && cont < 1e-7 && pde < 1e-4;
  out += fmt("v continuity %.1e, PDE residual %.1e; ", cont, pde);
  // Three-ball round trip.
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(0, 1);
  int n = 0;
  double tb = 0.0;
  while (n < 500) {
    const double H = -(0.1 + 3 * U(rng)), K = H * H * (0.5 + 0.5 * U(rng)), A = -0.9 + 1.8 * U(rng);
    std::array<double, 3> L{0.2 + 2 * U(rng), 0.2 + 2 * U(rng), 0.2 + 2 * U(rng)}, F{};
    if (std::abs(A) < 1e-3 || std::abs(L[0] - L[1]) < 0.05 || std::abs(L[1] - L[2]) < 0.05 || std::abs(L[0] - L[2]) < 0.05)
      continue;
    bool good = true;
    for (int j = 0; j < 3; ++j) {
      const double q = L[j] * L[j] - 2 * H * L[j] + K;
      good = good && q > 0;
      F[j] = A / std::sqrt(std::max(q, 1e-300));
    }
    if (!good) continue;
    const auto r = three_ball_recover(F, L, A > 0 ? 1 : -1);
    if (r.ill_conditioned) continue;
    tb = std::max({tb, std::abs(r.H / H - 1), std::abs(r.K / K - 1), std::abs(r.A - A)});
    ++n;
  }
  ok = ok && tb < 1e-8;
  out += fmt("three-ball round trip (500) %.1e; ", tb);
  // Repeated runs give identical files.
  const sc::Scenario s = load("sphere-g0.5");
  const auto a = sc::run(s), b = sc::run(s);
  bool same = a.files.size() == b.files.size();
  for (std::size_t i = 0; same && i < a.files.size(); ++i) same = a.files[i].second == b.files[i].second;
  ok = ok && same;
  out += std::string("repeat runs ") + (same ? "identical" : "differ");
  return {ok, out};
}

}  // namespace

int main(int argc, char **argv) {
  bool strict = false;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--strict") {
      strict = true;
    } else if (a == "--scenarios" && i + 1 < argc) {
      scenario_dir = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
    } else {
      std::fprintf(stderr, "usage: %s [--scenarios DIR] [--strict] [--only N,...]\n", argv[0]);
      return 2;
    }
  }
  const std::vector<std::pair<const char *, std::function<Outcome()>>> criteria{
      {"sign dichotomy", sign_dichotomy},
      {"distance from the log slope", distance},
      {"leading coefficient", main_formula},
      {"gamma from known curvature", curvature_gamma},
      {"three-ball recovery", three_ball},
      {"indicator ratios", ratios},
      {"energy-term ratio", energy_term_ratio},
      {"laplace limit", laplace},
      {"boundary elements vs series", bem_cross},
      {"time domain", time_domain},
      {"property suites", properties},
  };
  int unexpected = 0, known = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception &e) {
      r = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool tolerated = !r.pass && kKnownFailures.count(id);
    std::printf("criterion %2d %s: %s  %s [%.1fs]%s\n", id, r.pass ? "PASS" : "FAIL", criteria[i].first,
                r.detail.c_str(), secs, tolerated ? " (known)" : "");
    std::fflush(stdout);
    if (!r.pass) (tolerated ? known : unexpected)++;
  }
  std::printf("summary: %d unexpected failure(s), %d known failure(s)%s\n", unexpected, known,
              strict ? " [strict]" : "");
  return unexpected || (strict && known) ? 1 : 0;
}
