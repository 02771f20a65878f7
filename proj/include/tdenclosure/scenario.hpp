#pragma once

// Scenario files (JSON) and the experiment runner behind the command-line tool.
// The format is described in docs/scenario-format.md.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "tdenclosure/asymptotics.hpp"
#include "tdenclosure/bem.hpp"
#include "tdenclosure/core.hpp"
#include "tdenclosure/enclosure.hpp"
#include "tdenclosure/gamma.hpp"
#include "tdenclosure/geometry.hpp"
#include "tdenclosure/indicator.hpp"
#include "tdenclosure/parallel.hpp"
#include "tdenclosure/sphere_oracle.hpp"
#include "tdenclosure/tdwave.hpp"

namespace tde::scenario {

using json = nlohmann::ordered_json;

inline constexpr const char *kScenarioSchema = "tde-scenario/1";
inline constexpr const char *kReportSchema = "tde-report/1";

// Relative slack on the ratio bracket: the bracket is a large-tau limit, fits come from finite tau.
inline constexpr double kBracketSlack = 0.01;

// ---------------------------------------------------------------------------
// Types

struct ComponentSpec {
  std::string type;  // sphere | ellipsoid | mesh
  Vec3 center;
  double radius{1.0};
  Vec3 semi_axes{1.0, 1.0, 1.0};
  std::string path;  // OFF file for meshes, relative to the scenario file
};

struct GammaSpec {
  std::string kind = "constant";  // constant | per_component | linear
  double value{0.0};
  std::vector<double> values;
  double base{0.0};
  Vec3 gradient;
};

struct TauSchedule {
  std::vector<double> list;
  double lo{0.0}, hi{0.0};
  int count{0};
  std::string spacing = "linear";  // linear | log

  std::vector<double> values() const {
    if (!list.empty()) return list;
    std::vector<double> t;
    for (int i = 0; i < count; ++i) {
      const double s = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
      t.push_back(spacing == "log" ? lo * std::pow(hi / lo, s) : lo + (hi - lo) * s);
    }
    return t;
  }
};

struct SolverSpec {
  std::string kind = "oracle";  // oracle | bem | tdwave
  // bem
  double h_pole = 0.03, growth = 0.08, h_max = 0.15;
  bool refine_toward_probe = true;
  // tdwave
  double h = 0.05, cfl = 0.5;
  std::vector<double> checkpoints;
  std::string formulation = "scattered";
  std::string scheme = "cut_cell";
  double margin = 0.2;
  int layer_cells = 10;
  bool relaxed = false;
};

struct AnalysisSpec {
  std::string kind;  // sign | dist_fit | coefficient_fit | three_ball | ratio | energy_sweep | laplace_check | bounds_check
  std::optional<Window> window;
  int correction_order = 1;
  bool compensate_probe = false;             // coefficient_fit, three_ball: divide out the probe-size factor
  std::optional<GammaSpec> reference_gamma;  // ratio
  std::vector<double> taus;                  // laplace_check
  double slack = 1e-3;                       // bounds_check
};

struct ScanSpec {
  Vec3 origin;
  double step{0.0};
  double eta{0.1};
  std::vector<Vec3> directions;
  double tolerance = 0.02;
};

struct Scenario {
  std::string name;
  std::string description;
  std::vector<ComponentSpec> components;
  GammaSpec gamma;
  std::string declared_regime;  // optional: below_one | above_one | mixed
  std::vector<Probe> probes;
  SolverSpec solver;
  TauSchedule tau;
  std::optional<double> T;
  std::vector<AnalysisSpec> analyses;
  std::optional<ScanSpec> scan;
  std::string output_dir;
  std::filesystem::path base_dir;  // directory of the scenario file, not serialized
};

/// Schema violation, with the JSON pointer of the offending value.
class SchemaError : public ConfigError {
 public:
  SchemaError(const std::string &where, const std::string &what) : ConfigError(where + ": " + what) {}
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline const json &need(const json &j, const std::string &key, const std::string &at) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError(at, "missing key \"" + key + "\"");
  return j.at(key);
}

inline double number(const json &j, const std::string &at) {
  if (!j.is_number()) throw SchemaError(at, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw SchemaError(at, "must be finite");
  return v;
}

inline double positive(const json &j, const std::string &at) {
  const double v = number(j, at);
  if (!(v > 0.0)) throw SchemaError(at, "must be positive");
  return v;
}

inline std::string string(const json &j, const std::string &at) {
  if (!j.is_string()) throw SchemaError(at, "expected a string");
  return j.get<std::string>();
}

inline Vec3 vec3(const json &j, const std::string &at) {
  if (!j.is_array() || j.size() != 3) throw SchemaError(at, "expected [x, y, z]");
  return {number(j[0], at + "/0"), number(j[1], at + "/1"), number(j[2], at + "/2")};
}

inline std::vector<double> numbers(const json &j, const std::string &at) {
  if (!j.is_array()) throw SchemaError(at, "expected an array of numbers");
  std::vector<double> v;
  for (std::size_t i = 0; i < j.size(); ++i) v.push_back(number(j[i], at + "/" + std::to_string(i)));
  return v;
}

inline void only_keys(const json &j, std::initializer_list<const char *> keys, const std::string &at) {
  if (!j.is_object()) throw SchemaError(at, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char *k : keys) ok = ok || it.key() == k;
    if (!ok) throw SchemaError(at + "/" + it.key(), "unknown key");
  }
}

inline GammaSpec parse_gamma(const json &j, const std::string &at) {
  only_keys(j, {"constant", "per_component", "linear"}, at);
  if (j.size() != 1) throw SchemaError(at, "give exactly one of constant, per_component, linear");
  GammaSpec g;
  if (j.contains("constant")) {
    g.kind = "constant";
    g.value = number(j["constant"], at + "/constant");
    if (g.value < 0) throw SchemaError(at + "/constant", "gamma must be nonnegative");
  } else if (j.contains("per_component")) {
    g.kind = "per_component";
    g.values = numbers(j["per_component"], at + "/per_component");
    if (g.values.empty()) throw SchemaError(at + "/per_component", "empty list");
    for (std::size_t i = 0; i < g.values.size(); ++i)
      if (g.values[i] < 0) throw SchemaError(at + "/per_component/" + std::to_string(i), "gamma must be nonnegative");
  } else {
    const json &l = j["linear"];
    only_keys(l, {"base", "gradient"}, at + "/linear");
    g.kind = "linear";
    g.base = number(need(l, "base", at + "/linear"), at + "/linear/base");
    g.gradient = vec3(need(l, "gradient", at + "/linear"), at + "/linear/gradient");
  }
  return g;
}

inline std::optional<Window> parse_window(const json &a, const std::string &at) {
  if (!a.contains("window")) return std::nullopt;
  const auto w = numbers(a["window"], at + "/window");
  if (w.size() != 2 || !(w[0] > 0) || !(w[1] > w[0])) throw SchemaError(at + "/window", "expected [lo, hi] with 0 < lo < hi");
  return Window{w[0], w[1]};
}

inline const std::vector<std::string> &analysis_kinds() {
  static const std::vector<std::string> k{"sign",  "dist_fit",        "coefficient_fit", "three_ball",
                                          "ratio", "energy_sweep", "laplace_check",   "bounds_check"};
  return k;
}

inline AnalysisSpec parse_analysis(const json &j, const std::string &at) {
  AnalysisSpec a;
  if (j.is_string()) {
    a.kind = j.get<std::string>();
  } else {
    only_keys(j, {"kind", "window", "correction_order", "compensate_probe", "reference_gamma", "taus", "slack"}, at);
    a.kind = string(need(j, "kind", at), at + "/kind");
    a.window = parse_window(j, at);
    if (j.contains("correction_order")) {
      const double c = number(j["correction_order"], at + "/correction_order");
      if (c < 0 || c > 4 || c != std::floor(c)) throw SchemaError(at + "/correction_order", "expected an integer in [0, 4]");
      a.correction_order = static_cast<int>(c);
    }
    if (j.contains("compensate_probe")) {
      if (!j["compensate_probe"].is_boolean()) throw SchemaError(at + "/compensate_probe", "expected a boolean");
      a.compensate_probe = j["compensate_probe"].get<bool>();
    }
    if (j.contains("reference_gamma")) a.reference_gamma = parse_gamma(j["reference_gamma"], at + "/reference_gamma");
    if (j.contains("taus")) a.taus = numbers(j["taus"], at + "/taus");
    if (j.contains("slack")) a.slack = positive(j["slack"], at + "/slack");
  }
  const auto &k = analysis_kinds();
  if (std::find(k.begin(), k.end(), a.kind) == k.end()) throw SchemaError(at, "unknown analysis \"" + a.kind + "\"");
  if (a.kind == "ratio" && !a.reference_gamma) throw SchemaError(at, "ratio needs reference_gamma");
  return a;
}

}  // namespace detail

/// Parses and validates the structure of a scenario; physical invariants are
/// checked by validate().
inline Scenario parse_json(const json &j, const std::filesystem::path &base_dir = {}) {
  using namespace detail;
  only_keys(j, {"schema", "name", "description", "obstacle", "gamma", "regime", "probes", "solver", "tau", "T",
                "analyses", "scan", "output"},
            "");
  Scenario s;
  s.base_dir = base_dir;
  if (j.contains("schema") && string(j["schema"], "/schema") != kScenarioSchema)
    throw SchemaError("/schema", std::string("unsupported schema, expected ") + kScenarioSchema);
  s.name = string(need(j, "name", ""), "/name");
  if (j.contains("description")) s.description = string(j["description"], "/description");

  const json &ob = need(j, "obstacle", "");
  only_keys(ob, {"components"}, "/obstacle");
  const json &comps = need(ob, "components", "/obstacle");
  if (!comps.is_array()) throw SchemaError("/obstacle/components", "expected an array");
  for (std::size_t i = 0; i < comps.size(); ++i) {
    const std::string at = "/obstacle/components/" + std::to_string(i);
    const json &c = comps[i];
    ComponentSpec cs;
    cs.type = string(need(c, "type", at), at + "/type");
    if (cs.type == "sphere") {
      only_keys(c, {"type", "center", "radius"}, at);
      cs.center = vec3(need(c, "center", at), at + "/center");
      cs.radius = positive(need(c, "radius", at), at + "/radius");
    } else if (cs.type == "ellipsoid") {
      only_keys(c, {"type", "center", "semi_axes"}, at);
      cs.center = vec3(need(c, "center", at), at + "/center");
      cs.semi_axes = vec3(need(c, "semi_axes", at), at + "/semi_axes");
      for (int a = 0; a < 3; ++a)
        if (!(cs.semi_axes[a] > 0)) throw SchemaError(at + "/semi_axes", "semi-axes must be positive");
    } else if (cs.type == "mesh") {
      only_keys(c, {"type", "path"}, at);
      cs.path = string(need(c, "path", at), at + "/path");
    } else {
      throw SchemaError(at + "/type", "expected sphere, ellipsoid or mesh");
    }
    s.components.push_back(cs);
  }

  s.gamma = parse_gamma(need(j, "gamma", ""), "/gamma");
  if (j.contains("regime")) {
    s.declared_regime = string(j["regime"], "/regime");
    if (s.declared_regime != "below_one" && s.declared_regime != "above_one" && s.declared_regime != "mixed")
      throw SchemaError("/regime", "expected below_one, above_one or mixed");
  }

  const json &pr = need(j, "probes", "");
  if (!pr.is_array() || pr.empty()) throw SchemaError("/probes", "expected a nonempty array");
  for (std::size_t i = 0; i < pr.size(); ++i) {
    const std::string at = "/probes/" + std::to_string(i);
    only_keys(pr[i], {"center", "radius"}, at);
    s.probes.push_back({vec3(need(pr[i], "center", at), at + "/center"), positive(need(pr[i], "radius", at), at + "/radius")});
  }

  const json &sv = need(j, "solver", "");
  only_keys(sv, {"kind", "h_pole", "growth", "h_max", "refine_toward_probe", "h", "cfl", "checkpoints", "formulation",
                 "scheme", "margin", "layer_cells", "relaxed"},
            "/solver");
  SolverSpec &so = s.solver;
  so.kind = string(need(sv, "kind", "/solver"), "/solver/kind");
  if (so.kind != "oracle" && so.kind != "bem" && so.kind != "tdwave")
    throw SchemaError("/solver/kind", "expected oracle, bem or tdwave");
  if (sv.contains("h_pole")) so.h_pole = positive(sv["h_pole"], "/solver/h_pole");
  if (sv.contains("growth")) so.growth = number(sv["growth"], "/solver/growth");
  if (sv.contains("h_max")) so.h_max = positive(sv["h_max"], "/solver/h_max");
  if (sv.contains("refine_toward_probe")) {
    if (!sv["refine_toward_probe"].is_boolean()) throw SchemaError("/solver/refine_toward_probe", "expected a boolean");
    so.refine_toward_probe = sv["refine_toward_probe"].get<bool>();
  }
  if (sv.contains("h")) so.h = positive(sv["h"], "/solver/h");
  if (sv.contains("cfl")) so.cfl = positive(sv["cfl"], "/solver/cfl");
  if (sv.contains("checkpoints")) so.checkpoints = numbers(sv["checkpoints"], "/solver/checkpoints");
  if (sv.contains("formulation")) {
    so.formulation = string(sv["formulation"], "/solver/formulation");
    if (so.formulation != "scattered" && so.formulation != "total")
      throw SchemaError("/solver/formulation", "expected scattered or total");
  }
  if (sv.contains("scheme")) {
    so.scheme = string(sv["scheme"], "/solver/scheme");
    if (so.scheme != "cut_cell" && so.scheme != "ghost_cell") throw SchemaError("/solver/scheme", "expected cut_cell or ghost_cell");
  }
  if (sv.contains("margin")) so.margin = number(sv["margin"], "/solver/margin");
  if (sv.contains("layer_cells")) so.layer_cells = static_cast<int>(number(sv["layer_cells"], "/solver/layer_cells"));
  if (sv.contains("relaxed")) {
    if (!sv["relaxed"].is_boolean()) throw SchemaError("/solver/relaxed", "expected a boolean");
    so.relaxed = sv["relaxed"].get<bool>();
  }

  const json &tj = need(j, "tau", "");
  only_keys(tj, {"list", "lo", "hi", "count", "spacing"}, "/tau");
  if (tj.contains("list")) {
    s.tau.list = numbers(tj["list"], "/tau/list");
    if (tj.size() != 1) throw SchemaError("/tau", "list excludes lo/hi/count/spacing");
  } else {
    s.tau.lo = positive(need(tj, "lo", "/tau"), "/tau/lo");
    s.tau.hi = positive(need(tj, "hi", "/tau"), "/tau/hi");
    const double n = number(need(tj, "count", "/tau"), "/tau/count");
    if (n < 1 || n != std::floor(n)) throw SchemaError("/tau/count", "expected a positive integer");
    s.tau.count = static_cast<int>(n);
    if (tj.contains("spacing")) s.tau.spacing = string(tj["spacing"], "/tau/spacing");
    if (s.tau.spacing != "linear" && s.tau.spacing != "log") throw SchemaError("/tau/spacing", "expected linear or log");
    if (!(s.tau.hi >= s.tau.lo)) throw SchemaError("/tau/hi", "must not be below lo");
  }
  const auto taus = s.tau.values();
  if (taus.empty()) throw SchemaError("/tau", "empty schedule");
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (!(taus[i] > 0)) throw SchemaError("/tau", "tau values must be positive");
    if (i && !(taus[i] > taus[i - 1])) throw SchemaError("/tau", "tau values must be strictly increasing");
  }

  if (j.contains("T")) s.T = positive(j["T"], "/T");
  if (j.contains("analyses")) {
    const json &an = j["analyses"];
    if (!an.is_array()) throw SchemaError("/analyses", "expected an array");
    for (std::size_t i = 0; i < an.size(); ++i) s.analyses.push_back(parse_analysis(an[i], "/analyses/" + std::to_string(i)));
  }
  if (j.contains("scan")) {
    const json &sc = j["scan"];
    only_keys(sc, {"origin", "step", "eta", "directions", "tolerance"}, "/scan");
    ScanSpec sp;
    sp.origin = vec3(need(sc, "origin", "/scan"), "/scan/origin");
    sp.step = positive(need(sc, "step", "/scan"), "/scan/step");
    if (sc.contains("eta")) sp.eta = positive(sc["eta"], "/scan/eta");
    if (sc.contains("tolerance")) sp.tolerance = positive(sc["tolerance"], "/scan/tolerance");
    const json &dirs = need(sc, "directions", "/scan");
    if (!dirs.is_array() || dirs.empty()) throw SchemaError("/scan/directions", "expected a nonempty array");
    for (std::size_t i = 0; i < dirs.size(); ++i) {
      const Vec3 w = vec3(dirs[i], "/scan/directions/" + std::to_string(i));
      if (!(norm(w) > 0)) throw SchemaError("/scan/directions/" + std::to_string(i), "zero direction");
      sp.directions.push_back(w);
    }
    s.scan = sp;
  }
  if (j.contains("output")) {
    only_keys(j["output"], {"dir"}, "/output");
    s.output_dir = string(need(j["output"], "dir", "/output"), "/output/dir");
  }
  return s;
}

inline Scenario parse_text(const std::string &text, const std::filesystem::path &base_dir = {}) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error &e) {
    throw SchemaError("(document)", std::string("malformed JSON: ") + e.what());
  }
  return parse_json(j, base_dir);
}

inline Scenario load(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str(), path.parent_path());
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline json vec_json(const Vec3 &v) { return json::array({v.x, v.y, v.z}); }

inline json gamma_json(const GammaSpec &g) {
  if (g.kind == "constant") return {{"constant", g.value}};
  if (g.kind == "per_component") return {{"per_component", g.values}};
  return {{"linear", {{"base", g.base}, {"gradient", vec_json(g.gradient)}}}};
}

}  // namespace detail

inline json to_json(const Scenario &s) {
  using detail::vec_json;
  json j;
  j["schema"] = kScenarioSchema;
  j["name"] = s.name;
  if (!s.description.empty()) j["description"] = s.description;
  json comps = json::array();
  for (const auto &c : s.components) {
    json cj{{"type", c.type}};
    if (c.type == "sphere") {
      cj["center"] = vec_json(c.center);
      cj["radius"] = c.radius;
    } else if (c.type == "ellipsoid") {
      cj["center"] = vec_json(c.center);
      cj["semi_axes"] = vec_json(c.semi_axes);
    } else {
      cj["path"] = c.path;
    }
    comps.push_back(cj);
  }
  j["obstacle"] = {{"components", comps}};
  j["gamma"] = detail::gamma_json(s.gamma);
  if (!s.declared_regime.empty()) j["regime"] = s.declared_regime;
  json pr = json::array();
  for (const auto &p : s.probes) pr.push_back({{"center", vec_json(p.center)}, {"radius", p.radius}});
  j["probes"] = pr;
  const SolverSpec &so = s.solver;
  json sv{{"kind", so.kind}};
  if (so.kind == "bem") {
    sv["h_pole"] = so.h_pole;
    sv["growth"] = so.growth;
    sv["h_max"] = so.h_max;
    sv["refine_toward_probe"] = so.refine_toward_probe;
  } else if (so.kind == "tdwave") {
    sv["h"] = so.h;
    sv["cfl"] = so.cfl;
    sv["checkpoints"] = so.checkpoints;
    sv["formulation"] = so.formulation;
    sv["scheme"] = so.scheme;
    sv["margin"] = so.margin;
    sv["layer_cells"] = so.layer_cells;
    sv["relaxed"] = so.relaxed;
  }
  j["solver"] = sv;
  if (!s.tau.list.empty()) {
    j["tau"] = {{"list", s.tau.list}};
  } else {
    j["tau"] = {{"lo", s.tau.lo}, {"hi", s.tau.hi}, {"count", s.tau.count}, {"spacing", s.tau.spacing}};
  }
  if (s.T) j["T"] = *s.T;
  json an = json::array();
  for (const auto &a : s.analyses) {
    json aj{{"kind", a.kind}};
    if (a.window) aj["window"] = json::array({a.window->lo, a.window->hi});
    if (a.kind == "coefficient_fit" || a.kind == "three_ball") {
      aj["correction_order"] = a.correction_order;
      aj["compensate_probe"] = a.compensate_probe;
    }
    if (a.reference_gamma) aj["reference_gamma"] = detail::gamma_json(*a.reference_gamma);
    if (!a.taus.empty()) aj["taus"] = a.taus;
    if (a.kind == "bounds_check" || a.kind == "energy_sweep") aj["slack"] = a.slack;
    an.push_back(aj);
  }
  j["analyses"] = an;
  if (s.scan) {
    json dirs = json::array();
    for (const auto &w : s.scan->directions) dirs.push_back(vec_json(w));
    j["scan"] = {{"origin", vec_json(s.scan->origin)},
                 {"step", s.scan->step},
                 {"eta", s.scan->eta},
                 {"directions", dirs},
                 {"tolerance", s.scan->tolerance}};
  }
  if (!s.output_dir.empty()) j["output"] = {{"dir", s.output_dir}};
  return j;
}

inline std::string serialize(const Scenario &s) { return to_json(s).dump(2); }

// ---------------------------------------------------------------------------
// Model construction and invariants

inline Obstacle build_obstacle(const Scenario &s) {
  Obstacle o;
  for (const auto &c : s.components) {
    if (c.type == "sphere") {
      o.components.push_back(Sphere{c.center, c.radius});
    } else if (c.type == "ellipsoid") {
      o.components.push_back(Ellipsoid{c.center, c.semi_axes});
    } else {
      const auto p = c.path.empty() || std::filesystem::path(c.path).is_absolute() ? std::filesystem::path(c.path)
                                                                                   : s.base_dir / c.path;
      o.components.push_back(read_off_file(p.string()));
    }
  }
  return o;
}

inline GammaField build_gamma(const GammaSpec &g, std::size_t components) {
  if (g.kind == "constant") return GammaField::constant(g.value);
  if (g.kind == "per_component") {
    if (g.values.size() != components)
      throw ConfigError("/gamma/per_component: " + std::to_string(g.values.size()) + " values for " +
                        std::to_string(components) + " components");
    return GammaField::per_component(g.values);
  }
  const double base = g.base;
  const Vec3 grad = g.gradient;
  return GammaField::function([base, grad](const Vec3 &x, int) { return base + dot(grad, x); });
}

/// Range of gamma over the obstacle (exact for constants, over bounding boxes for linear fields).
inline std::pair<double, double> gamma_range(const GammaSpec &g, const Obstacle &o) {
  if (g.kind == "constant") return {g.value, g.value};
  if (g.kind == "per_component")
    return {*std::min_element(g.values.begin(), g.values.end()), *std::max_element(g.values.begin(), g.values.end())};
  double lo = INFINITY, hi = -INFINITY;
  for (const auto &c : o.components) {
    Vec3 cmin, cmax;
    if (const auto *sp = std::get_if<Sphere>(&c)) {
      cmin = sp->center - Vec3{sp->radius, sp->radius, sp->radius};
      cmax = sp->center + Vec3{sp->radius, sp->radius, sp->radius};
    } else if (const auto *e = std::get_if<Ellipsoid>(&c)) {
      cmin = e->center - e->semi_axes;
      cmax = e->center + e->semi_axes;
    } else {
      const auto &m = std::get<TriangulatedSurface>(c);
      cmin = cmax = m.vertices.front();
      for (const auto &v : m.vertices)
        for (int a = 0; a < 3; ++a) {
          cmin[a] = std::min(cmin[a], v[a]);
          cmax[a] = std::max(cmax[a], v[a]);
        }
    }
    for (int corner = 0; corner < 8; ++corner) {
      const Vec3 x{(corner & 1) ? cmax.x : cmin.x, (corner & 2) ? cmax.y : cmin.y, (corner & 4) ? cmax.z : cmin.z};
      const double v = g.base + dot(g.gradient, x);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  return {lo, hi};
}

/// below_one when gamma stays in (0, 1), above_one when it stays above 1, mixed otherwise.
inline std::string regime_of(std::pair<double, double> r) {
  if (r.second < 1.0) return "below_one";
  if (r.first > 1.0) return "above_one";
  return "mixed";
}

inline bool large_tau_analysis(const std::string &k) {
  return k == "sign" || k == "dist_fit" || k == "coefficient_fit" || k == "three_ball" || k == "ratio";
}

struct Validation {
  double dist{INFINITY};                      // min over probes of dist(D, B)
  std::vector<double> probe_dist;
  std::pair<double, double> gamma_range{0.0, 0.0};
  std::string regime;
  std::vector<std::string> warnings;
};

/// Physical invariants: probe disjointness, the observation-time thresholds,
/// oracle applicability and analysis prerequisites. Throws ConfigError.
inline Validation validate(const Scenario &s, const Obstacle &o) {
  Validation v;
  if (s.gamma.kind == "per_component" && s.gamma.values.size() != o.components.size())
    throw ConfigError("/gamma/per_component: " + std::to_string(s.gamma.values.size()) + " values for " +
                      std::to_string(o.components.size()) + " components");
  for (std::size_t i = 0; i < s.probes.size(); ++i) {
    if (o.components.empty()) {
      v.probe_dist.push_back(INFINITY);
      continue;
    }
    double d = 0.0;
    try {
      d = probe_distance(o, s.probes[i]);
    } catch (const DomainError &) {
      throw ConfigError("/probes/" + std::to_string(i) + ": probe ball must not meet the obstacle");
    }
    v.probe_dist.push_back(d);
    v.dist = std::min(v.dist, d);
  }
  if (!o.components.empty()) {
    v.gamma_range = gamma_range(s.gamma, o);
    if (v.gamma_range.first < 0) throw ConfigError("/gamma: gamma must be nonnegative on the obstacle");
    v.regime = regime_of(v.gamma_range);
    if (v.regime == "mixed")
      v.warnings.push_back("mixed regime: gamma ranges over [" + std::to_string(v.gamma_range.first) + ", " +
                           std::to_string(v.gamma_range.second) +
                           "], neither gamma < 1 nor gamma > 1 holds on the whole boundary, so the indicator sign is not "
                           "determined in advance");
    if (v.regime == "below_one" && v.gamma_range.first <= 0)
      v.warnings.push_back("gamma vanishes somewhere: the upper energy bound is not available");
    if (!s.declared_regime.empty() && s.declared_regime != v.regime)
      v.warnings.push_back("declared regime " + s.declared_regime + " differs from the gamma range (" + v.regime + ")");
  }
  bool large = false, any = false;
  for (const auto &a : s.analyses) {
    any = true;
    large = large || large_tau_analysis(a.kind);
  }
  const bool td = s.solver.kind == "tdwave";
  if (td && !s.T) throw ConfigError("/T: the tdwave solver needs an observation time T");
  if (s.T && std::isfinite(v.dist)) {
    const bool strict = large || (td && !s.solver.relaxed && !any);
    const double need = strict ? 2.0 * v.dist : v.dist;
    if (!(*s.T > need)) {
      std::ostringstream m;
      m << "/T: T = " << *s.T << " must exceed " << (strict ? "2 dist(D,B) = " : "dist(D,B) = ") << need
        << (strict ? " so the reflected wave is fully recorded (large-tau indicator analyses)"
                   : " for the energy-ratio analyses");
      throw ConfigError(m.str());
    }
  }
  if (s.solver.kind == "oracle") {
    if (o.components.size() != 1 || !std::holds_alternative<Sphere>(o.components[0]) || s.gamma.kind == "linear" ||
        (s.gamma.kind == "per_component" && s.gamma.values.size() != 1))
      throw ConfigError("/solver/kind: the oracle solver needs a single sphere with constant gamma");
  }
  if (td) {
    for (const auto &c : o.components)
      if (!is_analytic(c)) throw ConfigError("/solver/kind: tdwave supports analytic components only");
  }
  if (o.components.empty())
    for (const auto &a : s.analyses)
      throw ConfigError("/analyses: analysis \"" + a.kind + "\" needs an obstacle");
  for (const auto &a : s.analyses) {
    if (a.kind == "three_ball") {
      if (s.probes.size() != 3) throw ConfigError("/probes: three_ball needs exactly three probes");
      const Vec3 p0 = s.probes[0].center;
      const Vec3 u = s.probes[1].center - p0, w = s.probes[2].center - p0;
      if (norm(cross(u, w)) > 1e-9 * (norm(u) * norm(w) + 1e-300))
        throw ConfigError("/probes: three_ball probes must be collinear");
      for (const auto &p : s.probes)
        if (p.radius != s.probes[0].radius) throw ConfigError("/probes: three_ball probes must share the radius");
    }
    if (a.kind == "ratio" && a.reference_gamma && a.reference_gamma->kind == "per_component" &&
        a.reference_gamma->values.size() != o.components.size())
      throw ConfigError("/analyses: reference_gamma size does not match the obstacle");
    if ((a.kind == "ratio") && s.solver.kind == "oracle" && a.reference_gamma->kind == "linear")
      throw ConfigError("/analyses: the oracle needs a constant reference gamma");
  }
  if (s.scan && o.components.empty()) throw ConfigError("/scan: scanning needs an obstacle");
  return v;
}

// ---------------------------------------------------------------------------
// Solvers

struct SolveResult {
  std::vector<IndicatorCurve> curves;  // one per probe
  std::vector<std::vector<std::pair<double, IndicatorCurve>>> checkpoints;  // tdwave: per probe, (T, curve)
  json provenance;
  std::vector<std::string> warnings;
};

/// Time-domain options from the solver section.
inline td::TdOptions td_options(const Scenario &s) {
  if (!s.T) throw ConfigError("/T: the time-domain solver needs T");
  td::TdOptions opt;
  opt.h = s.solver.h;
  opt.cfl = s.solver.cfl;
  opt.T = *s.T;
  opt.checkpoints = s.solver.checkpoints;
  opt.taus = s.tau.values();
  opt.formulation = s.solver.formulation == "total" ? td::Formulation::total : td::Formulation::scattered;
  opt.scheme = s.solver.scheme == "ghost_cell" ? td::BoundaryScheme::ghost_cell : td::BoundaryScheme::cut_cell;
  opt.margin = s.solver.margin;
  opt.layer_cells = s.solver.layer_cells;
  opt.relaxed = s.solver.relaxed;
  return opt;
}

/// Indicator curves for every probe with the configured solver.
inline SolveResult solve(const Scenario &s, const Obstacle &o, const GammaSpec &gspec, const std::vector<Probe> &probes) {
  SolveResult r;
  const auto taus = s.tau.values();
  const GammaField gamma = build_gamma(gspec, o.components.size());
  const Provenance prov = s.solver.kind == "oracle" ? Provenance::oracle
                          : s.solver.kind == "bem" ? Provenance::bem
                                                   : Provenance::tdwave;
  r.curves.resize(probes.size());
  for (std::size_t i = 0; i < probes.size(); ++i) {
    r.curves[i].provenance = prov;
    r.curves[i].probe = probes[i];
    if (!o.components.empty()) r.curves[i].known_dist = probe_distance(o, probes[i]);
    r.curves[i].samples.resize(taus.size());
  }
  r.provenance["solver"] = s.solver.kind;
  if (s.solver.kind == "oracle") {
    const auto &sp = std::get<Sphere>(o.components[0]);
    const double g = gspec.kind == "constant" ? gspec.value : gspec.values.at(0);
    json degrees = json::array();
    for (std::size_t i = 0; i < probes.size(); ++i) {
      parallel_for(0, taus.size(), [&](std::size_t k) {
        oracle::SphereScenario sc{sp.center, sp.radius, g, probes[i], taus[k]};
        r.curves[i].samples[k] = oracle::indicator_oracle(sc);
      });
      json dj = json::array();
      for (double t : taus) dj.push_back(oracle::default_degree({sp.center, sp.radius, g, probes[i], t}));
      degrees.push_back(dj);
    }
    r.provenance["truncation_degree"] = degrees;
  } else if (s.solver.kind == "bem") {
    bem::MeshingOptions mo;
    mo.h_pole = s.solver.h_pole;
    mo.growth = s.solver.growth;
    mo.h_max = s.solver.h_max;
    if (s.solver.refine_toward_probe) mo.refine_toward = probes[0].center;
    json rows = json::array();
    for (std::size_t k = 0; k < taus.size(); ++k) {
      bem::RobinSolver solver(bem::build_panel_system(o, gamma, taus[k], mo));
      for (std::size_t i = 0; i < probes.size(); ++i) r.curves[i].samples[k] = solver.indicator(probes[i]);
      const auto &d = solver.diagnostics();
      rows.push_back({{"tau", taus[k]}, {"panels", d.panels}, {"residual", d.residual}, {"rcond", d.rcond},
                      {"iterative", d.iterative}});
      for (const auto &w : d.warnings) r.warnings.push_back("bem (tau " + std::to_string(taus[k]) + "): " + w);
    }
    r.provenance["mesh"] = {{"h_pole", mo.h_pole}, {"growth", mo.growth}, {"h_max", mo.h_max}};
    r.provenance["solves"] = rows;
  } else {
    const td::TdOptions opt = td_options(s);
    json grids = json::array();
    r.checkpoints.resize(probes.size());
    // Past about 0.6/h the transform is dominated by grid error.
    const double tau_cap = 0.6 / opt.h;
    if (taus.back() > tau_cap)
      r.warnings.push_back("tdwave: tau " + std::to_string(taus.back()) + " exceeds the grid limit " +
                           std::to_string(tau_cap) + "; values there sit near the discretisation noise floor");
    for (std::size_t i = 0; i < probes.size(); ++i) {
      td::Simulation sim(o, gamma, probes[i], opt);
      sim.run();
      for (std::size_t k = 0; k < taus.size(); ++k) r.curves[i].samples[k] = sim.indicator_td(taus[k]);
      for (double Tc : sim.options().checkpoints) {
        IndicatorCurve c = r.curves[i];
        try {
          for (std::size_t k = 0; k < taus.size(); ++k) c.samples[k] = sim.indicator_td(taus[k], Tc);
        } catch (const ConfigError &e) {
          r.warnings.push_back("tdwave: checkpoint skipped, " + std::string(e.what()));
          continue;
        }
        r.checkpoints[i].emplace_back(Tc, std::move(c));
      }
      const auto &g = sim.grid();
      grids.push_back({{"nodes", json::array({g.nx, g.ny, g.nz})}, {"h", g.h}, {"dt", sim.dt()},
                       {"boundary_cells", sim.cut_cells().size() + sim.ghost_nodes().size()}});
      for (const auto &w : sim.warnings()) r.warnings.push_back("tdwave: " + w);
    }
    r.provenance["grid"] = grids;
    r.provenance["T"] = *s.T;
    r.provenance["cfl"] = opt.cfl;
    r.provenance["tau_cap"] = tau_cap;
    r.provenance["formulation"] = s.solver.formulation;
    r.provenance["scheme"] = s.solver.scheme;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Report

namespace detail {

inline json window_json(const Window &w) { return json::array({w.lo, w.hi}); }

inline json curve_json(const IndicatorCurve &c) {
  json rows = json::array();
  for (const auto &smp : c.samples) {
    json r{{"tau", smp.tau}, {"sign", smp.sign}, {"log_abs", smp.sign ? json(smp.log_abs) : json(nullptr)}};
    rows.push_back(r);
  }
  return rows;
}

inline IndicatorCurve curve_from_json(const json &rows) {
  IndicatorCurve c;
  for (const auto &r : rows) {
    const int sign = r.at("sign").get<int>();
    c.samples.push_back(IndicatorSample::from_log(r.at("tau").get<double>(), sign,
                                                  sign ? r.at("log_abs").get<double>() : 0.0));
  }
  return c;
}

inline json reflector_json(const std::vector<ReflectorPoint> &refl, const GammaField &g) {
  json a = json::array();
  for (const auto &r : refl)
    a.push_back({{"q", vec_json(r.q)},
                 {"normal", vec_json(r.normal)},
                 {"d", r.d},
                 {"H", r.H},
                 {"K", r.K},
                 {"hess_det", r.hess_det},
                 {"component", r.component},
                 {"gamma", g(r.q, r.component)}});
  return a;
}

}  // namespace detail

struct RunOutput {
  json report;
  std::vector<std::pair<std::string, std::string>> files;  // name, contents
};

inline std::string curve_csv(const IndicatorCurve &c) {
  std::ostringstream os;
  os.precision(17);
  os << "tau,sign,log_abs,value";
  if (c.known_dist) os << ",normalized";
  os << '\n';
  for (const auto &smp : c.samples) {
    os << smp.tau << ',' << smp.sign << ',' << smp.log_abs << ',' << smp.value();
    if (c.known_dist) os << ',' << smp.normalized(*c.known_dist);
    os << '\n';
  }
  return os.str();
}

/// Runs the solver and every requested analysis. Analysis failures are
/// recorded in the report; solver failures propagate.
inline RunOutput run(const Scenario &s) {
  const Obstacle o = build_obstacle(s);
  const Validation val = validate(s, o);
  const GammaField gamma = build_gamma(s.gamma, o.components.size());
  RunOutput out;
  json &rep = out.report;
  rep["schema"] = kReportSchema;
  rep["scenario"] = to_json(s);
  std::vector<std::string> warnings = val.warnings;

  SolveResult sol = solve(s, o, s.gamma, s.probes);
  rep["provenance"] = sol.provenance;
  warnings.insert(warnings.end(), sol.warnings.begin(), sol.warnings.end());
  if (!o.components.empty()) {
    rep["assumptions"] = {{"gamma_range", json::array({val.gamma_range.first, val.gamma_range.second})},
                          {"regime", val.regime},
                          {"declared_regime", s.declared_regime.empty() ? json(nullptr) : json(s.declared_regime)}};
  }

  json probes = json::array();
  std::vector<std::vector<ReflectorPoint>> reflectors(s.probes.size());
  for (std::size_t i = 0; i < s.probes.size(); ++i) {
    json pj;
    pj["center"] = detail::vec_json(s.probes[i].center);
    pj["radius"] = s.probes[i].radius;
    if (!o.components.empty()) {
      pj["dist"] = val.probe_dist[i];
      try {
        reflectors[i] = first_reflector(o, s.probes[i].center);
        pj["reflectors"] = detail::reflector_json(reflectors[i], gamma);
      } catch (const Error &e) {
        warnings.push_back("probe " + std::to_string(i) + ": reflector set unavailable (" + e.what() + ")");
      }
    }
    pj["indicator"] = detail::curve_json(sol.curves[i]);
    if (i < sol.checkpoints.size() && !sol.checkpoints[i].empty()) {
      json cj = json::array();
      for (const auto &[Tc, c] : sol.checkpoints[i]) cj.push_back({{"T", Tc}, {"indicator", detail::curve_json(c)}});
      pj["checkpoints"] = cj;
    }
    probes.push_back(pj);
    out.files.push_back({"indicator_probe" + std::to_string(i) + ".csv", curve_csv(sol.curves[i])});
  }

  json analyses = json::array();
  for (const auto &a : s.analyses) {
    json aj{{"kind", a.kind}};
    try {
      if (a.kind == "sign") {
        json rows = json::array();
        for (const auto &c : sol.curves) {
          const SignClass sc = classify_sign(c);
          rows.push_back({{"sign", sc.sign}, {"indeterminate", sc.indeterminate}, {"collapse_slope", sc.collapse_slope},
                          {"reason", sc.reason}});
        }
        aj["per_probe"] = rows;
      } else if (a.kind == "dist_fit") {
        json rows = json::array();
        for (std::size_t i = 0; i < sol.curves.size(); ++i) {
          const Window w = a.window ? *a.window : default_window(sol.curves[i]);
          const DistanceFit f = fit_distance(sol.curves[i], w);
          rows.push_back({{"dist", f.dist}, {"residual", f.residual}, {"window", detail::window_json(w)},
                          {"true_dist", val.probe_dist[i]}, {"relative_error", f.dist / val.probe_dist[i] - 1.0}});
        }
        aj["per_probe"] = rows;
      } else if (a.kind == "coefficient_fit") {
        json rows = json::array();
        for (std::size_t i = 0; i < sol.curves.size(); ++i) {
          const Window w = a.window ? *a.window : default_window(sol.curves[i]);
          CoefficientFitOptions fo;
          fo.correction_order = a.correction_order;
          fo.compensate_probe = a.compensate_probe;
          const CoefficientFit f = fit_leading_coefficient(sol.curves[i], val.probe_dist[i], w, fo);
          json r{{"coefficient", f.coefficient}, {"residual", f.residual}, {"last_value", f.last_value},
                 {"misfit", f.misfit}, {"window", detail::window_json(w)}, {"correction_order", fo.correction_order}};
          if (reflectors[i].size() == 1) {
            const auto &q = reflectors[i][0];
            const double eta = s.probes[i].radius;
            r["predicted"] = leading_coefficient(q.d, eta, q.H, q.K, gamma(q.q, q.component));
            try {
              r["gamma_from_curvature"] = gamma_from_curvature(f.coefficient, q.d, eta, q.H, q.K);
            } catch (const Error &e) {
              r["gamma_from_curvature"] = nullptr;
              r["gamma_note"] = e.what();
            }
          }
          rows.push_back(r);
        }
        aj["per_probe"] = rows;
      } else if (a.kind == "three_ball") {
        std::array<double, 3> F{}, L{};
        // The square-root sign comes from the sign classification of the middle probe.
        const SignClass sc = classify_sign(sol.curves[1]);
        if (sc.indeterminate) throw InconsistencyError("three_ball: indicator sign is indeterminate (" + sc.reason + ")");
        const int sign = sc.sign;
        json fits = json::array();
        for (int j = 0; j < 3; ++j) {
          const Window w = a.window ? *a.window : default_window(sol.curves[j]);
          CoefficientFitOptions fo;
          fo.correction_order = a.correction_order;
          fo.compensate_probe = a.compensate_probe;
          const CoefficientFit f = fit_leading_coefficient(sol.curves[j], val.probe_dist[j], w, fo);
          const double d = val.probe_dist[j] + s.probes[j].radius;
          F[j] = calibrated_coefficient(f.coefficient, d, s.probes[j].radius);
          L[j] = 1.0 / d;
          fits.push_back({{"d", d}, {"coefficient", f.coefficient}, {"F", F[j]}, {"window", detail::window_json(w)}});
        }
        const ThreeBallResult tb = three_ball_recover(F, L, sign);
        aj["fits"] = fits;
        aj["H"] = tb.H;
        aj["K"] = tb.K;
        aj["A"] = tb.A;
        aj["gamma"] = tb.gamma;
        aj["M"] = tb.M;
        aj["M_scale"] = tb.M_scale;
        aj["ill_conditioned"] = tb.ill_conditioned;
        if (tb.ill_conditioned) warnings.push_back("three_ball: discriminant M is near zero relative to its scale");
      } else if (a.kind == "ratio") {
        SolveResult ref = solve(s, o, *a.reference_gamma, s.probes);
        const GammaField g0 = build_gamma(*a.reference_gamma, o.components.size());
        json rows = json::array();
        for (std::size_t i = 0; i < sol.curves.size(); ++i) {
          const Window w = a.window ? *a.window : default_window(sol.curves[i]);
          const RatioFit rf = ratio_indicator(sol.curves[i], ref.curves[i], w);
          json r{{"ratio", rf.ratio}, {"correction", rf.correction}, {"residual", rf.residual},
                 {"window", detail::window_json(w)}, {"reference_indicator", detail::curve_json(ref.curves[i])}};
          if (!reflectors[i].empty()) {
            std::vector<double> g1, g0v;
            for (const auto &q : reflectors[i]) {
              g1.push_back(gamma(q.q, q.component));
              g0v.push_back(g0(q.q, q.component));
            }
            const auto [lo, hi] = ratio_bracket(g1, g0v);
            r["bracket"] = json::array({lo, hi});
            r["bracket_slack"] = kBracketSlack;
            r["within_bracket"] = rf.ratio >= lo * (1 - kBracketSlack) && rf.ratio <= hi * (1 + kBracketSlack);
          }
          rows.push_back(r);
        }
        aj["per_probe"] = rows;
      } else if (a.kind == "energy_sweep" || a.kind == "bounds_check") {
        json rows = json::array();
        for (std::size_t i = 0; i < sol.curves.size(); ++i) {
          std::vector<asym::SweepRow> table;
          const double shift = val.probe_dist[i];
          std::vector<double> rg;
          for (const auto &q : reflectors[i]) rg.push_back(gamma(q.q, q.component));
          for (const auto &smp : sol.curves[i].samples) {
            if (a.window && !a.window->contains(smp.tau)) continue;
            asym::RefinedQuadratureOptions qo;
            qo.tau = smp.tau;
            const auto quad = asym::refined_quadrature(o, s.probes[i].center, gamma, qo);
            const asym::BoundsReport b = asym::bounds_check(smp, quad, s.probes[i], a.slack, shift);
            asym::SweepRow row;
            row.tau = smp.tau;
            row.J = b.J;
            row.E = b.indicator - b.J;
            row.bounds = !b.lower_ok ? "lower-fail" : !b.upper_applicable ? "upper-n/a" : b.upper_ok ? "ok" : "upper-fail";
            if (a.kind == "energy_sweep") {
              const asym::EnergyRatio er = asym::energy_ratio(row.E, quad, smp.tau, s.probes[i], rg, shift);
              row.ratio = er.ratio;
            } else {
              row.ratio = std::numeric_limits<double>::quiet_NaN();
            }
            table.push_back(row);
          }
          std::ostringstream os;
          asym::write_sweep_csv(os, table);
          const std::string name = a.kind + "_probe" + std::to_string(i) + ".csv";
          out.files.push_back({name, os.str()});
          json jr = json::array();
          for (const auto &t : table)
            jr.push_back({{"tau", t.tau}, {"J", t.J}, {"E", t.E},
                          {"ratio", std::isfinite(t.ratio) ? json(t.ratio) : json(nullptr)}, {"bounds", t.bounds}});
          rows.push_back({{"table", name}, {"rows", jr}, {"scale", "values multiplied by exp(2 tau dist)"}});
        }
        aj["per_probe"] = rows;
      } else if (a.kind == "laplace_check") {
        json rows = json::array();
        for (std::size_t i = 0; i < s.probes.size(); ++i) {
          const Vec3 p = s.probes[i].center;
          const auto ts = a.taus.empty() ? s.tau.values() : a.taus;
          const auto lr = asym::laplace_limit_check(
              [&](double t) {
                asym::RefinedQuadratureOptions qo;
                qo.tau = t;
                return asym::refined_quadrature(o, p, gamma, qo);
              },
              [](const Vec3 &) { return 1.0; }, p, reflectors[i], ts);
          std::ostringstream os;
          asym::write_laplace_csv(os, lr);
          const std::string name = "laplace_probe" + std::to_string(i) + ".csv";
          out.files.push_back({name, os.str()});
          json jr = json::array();
          for (const auto &r : lr)
            jr.push_back({{"tau", r.tau}, {"quadrature", r.quadrature}, {"formula", r.formula}, {"ratio", r.ratio},
                          {"under_resolved", r.under_resolved}});
          rows.push_back({{"table", name}, {"rows", jr}});
        }
        aj["per_probe"] = rows;
      }
      aj["status"] = "ok";
    } catch (const Error &e) {
      aj["status"] = "failed";
      aj["error"] = e.what();
      warnings.push_back("analysis " + a.kind + " failed: " + e.what());
    }
    analyses.push_back(aj);
  }
  rep["probes"] = probes;
  rep["analyses"] = analyses;
  rep["warnings"] = warnings;
  out.files.push_back({"report.json", rep.dump(2) + "\n"});
  return out;
}

inline void write_outputs(const RunOutput &r, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  for (const auto &[name, text] : r.files) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + (dir / name).string());
    f << text;
  }
}

// ---------------------------------------------------------------------------
// Report comparison

inline json load_report(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open report " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error &e) {
    throw ConfigError(path.string() + ": malformed JSON: " + e.what());
  }
  if (!j.contains("schema") || j["schema"] != kReportSchema) throw ConfigError(path.string() + ": not a run report");
  return j;
}

class ComparisonError : public Error {
 public:
  using Error::Error;
};

/// Ratio I_A / I_B per probe over the shared schedule, with the reflector bracket
/// when both reports carry reflector gammas.
inline json compare(const json &a, const json &b, std::optional<Window> window = std::nullopt) {
  const json &sa = a.at("scenario"), &sb = b.at("scenario");
  if (sa.at("obstacle") != sb.at("obstacle")) throw ComparisonError("compare: reports use different obstacles");
  if (sa.at("probes") != sb.at("probes")) throw ComparisonError("compare: reports use different probes");
  if (sa.at("tau") != sb.at("tau")) throw ComparisonError("compare: reports use different tau schedules");
  json out;
  out["schema"] = "tde-comparison/1";
  out["numerator"] = sa.at("name");
  out["denominator"] = sb.at("name");
  json rows = json::array();
  const json &pa = a.at("probes"), &pb = b.at("probes");
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const IndicatorCurve ca = detail::curve_from_json(pa[i].at("indicator"));
    const IndicatorCurve cb = detail::curve_from_json(pb[i].at("indicator"));
    const Window w = window ? *window : default_window(cb);
    const RatioFit rf = ratio_indicator(ca, cb, w);
    json r{{"ratio", rf.ratio}, {"correction", rf.correction}, {"residual", rf.residual},
           {"window", detail::window_json(w)}};
    if (pa[i].contains("reflectors") && pb[i].contains("reflectors") &&
        pa[i]["reflectors"].size() == pb[i]["reflectors"].size() && !pa[i]["reflectors"].empty()) {
      std::vector<double> g1, g0;
      for (const auto &q : pa[i]["reflectors"]) g1.push_back(q.at("gamma").get<double>());
      for (const auto &q : pb[i]["reflectors"]) g0.push_back(q.at("gamma").get<double>());
      try {
        const auto [lo, hi] = ratio_bracket(g1, g0);
        r["bracket"] = json::array({lo, hi});
        r["bracket_slack"] = kBracketSlack;
        r["within_bracket"] = rf.ratio >= lo * (1 - kBracketSlack) && rf.ratio <= hi * (1 + kBracketSlack);
      } catch (const Error &e) {
        r["bracket_note"] = e.what();
      }
    }
    rows.push_back(r);
  }
  out["per_probe"] = rows;
  return out;
}

// ---------------------------------------------------------------------------
// Direction scan

inline json scan(const Scenario &s) {
  if (!s.scan) throw ConfigError("/scan: the scenario has no scan section");
  const Obstacle o = build_obstacle(s);
  validate(s, o);
  const ScanSpec &sp = *s.scan;
  const double dp = distance_to_boundary(o, sp.origin);
  std::vector<Vec3> dirs;
  for (const auto &w : sp.directions) dirs.push_back(normalized(w));
  ScanOptions so;
  so.tolerance = sp.tolerance;
  const auto hits = probe_direction_scan(
      [&](const Probe &b) { return solve(s, o, s.gamma, {b}).curves[0]; }, sp.origin, dp, sp.eta, dirs, sp.step, so);
  json out;
  out["schema"] = "tde-scan/1";
  out["origin"] = detail::vec_json(sp.origin);
  out["boundary_distance"] = dp;
  json rows = json::array();
  for (const auto &h : hits)
    rows.push_back({{"direction", detail::vec_json(h.direction)}, {"dist_fit", h.dist_fit}, {"mismatch", h.mismatch},
                    {"on_boundary", h.on_boundary}});
  out["directions"] = rows;
  return out;
}

}  // namespace tde::scenario
