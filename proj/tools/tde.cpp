// tde: run, compare, scan and validate enclosure-method scenarios.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "tdenclosure/scenario.hpp"

namespace fs = std::filesystem;
using namespace tde;

namespace {

fs::path output_dir(const scenario::Scenario &s, const std::string &override_dir, const fs::path &config) {
  if (!override_dir.empty()) return override_dir;
  if (!s.output_dir.empty()) {
    const fs::path p(s.output_dir);
    return p.is_absolute() ? p : config.parent_path() / p;
  }
  return fs::path("runs") / s.name;
}

void print_warnings(const scenario::json &ws) {
  for (const auto &w : ws) std::cerr << "warning: " << w.get<std::string>() << '\n';
}

int cmd_validate(const std::string &config) {
  const auto s = scenario::load(config);
  const Obstacle o = scenario::build_obstacle(s);
  const auto v = scenario::validate(s, o);
  for (const auto &w : v.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << s.name << ": ok";
  if (!o.components.empty()) std::cout << " (dist " << v.dist << ", regime " << v.regime << ")";
  std::cout << '\n';
  return 0;
}

int cmd_run(const std::string &config, const std::string &out) {
  const auto s = scenario::load(config);
  const auto r = scenario::run(s);
  const fs::path dir = output_dir(s, out, config);
  scenario::write_outputs(r, dir);
  print_warnings(r.report["warnings"]);
  for (const auto &a : r.report["analyses"]) std::cout << a["kind"].get<std::string>() << ": " << a["status"].get<std::string>() << '\n';
  std::cout << "wrote " << (dir / "report.json").string() << '\n';
  return 0;
}

int cmd_compare(const std::string &a, const std::string &b, const std::vector<double> &window, const std::string &out) {
  std::optional<Window> w;
  if (!window.empty()) {
    if (window.size() != 2) throw ConfigError("--window expects two values");
    w = Window{window[0], window[1]};
  }
  const auto res = scenario::compare(scenario::load_report(a), scenario::load_report(b), w);
  const std::string text = res.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    std::ofstream(out) << text;
  }
  return 0;
}

int cmd_scan(const std::string &config, const std::string &out) {
  const auto s = scenario::load(config);
  const auto res = scenario::scan(s);
  const std::string text = res.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    std::ofstream(out) << text;
  }
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Time-domain enclosure method experiments. Worker threads: TDE_THREADS."};
  app.require_subcommand(1);

  std::string config, out, ra, rb;
  std::vector<double> window;

  auto *run = app.add_subcommand("run", "solve a scenario and write the report and CSV tables");
  run->add_option("config", config, "scenario file")->required()->check(CLI::ExistingFile);
  run->add_option("-o,--out", out, "output directory (overrides output.dir)");

  auto *cmp = app.add_subcommand("compare", "indicator ratio of two reports with the reflector bracket");
  cmp->add_option("reportA", ra, "numerator report")->required()->check(CLI::ExistingFile);
  cmp->add_option("reportB", rb, "denominator report")->required()->check(CLI::ExistingFile);
  cmp->add_option("-w,--window", window, "tau window lo hi")->expected(2);
  cmp->add_option("-o,--out", out, "write the comparison here instead of stdout");

  auto *scn = app.add_subcommand("scan", "direction scan from the scenario's scan section");
  scn->add_option("config", config, "scenario file")->required()->check(CLI::ExistingFile);
  scn->add_option("-o,--out", out, "write the scan result here instead of stdout");

  auto *val = app.add_subcommand("validate", "check a scenario without solving");
  val->add_option("config", config, "scenario file")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config, out);
    if (*cmp) return cmd_compare(ra, rb, window, out);
    if (*scn) return cmd_scan(config, out);
    if (*val) return cmd_validate(config);
  } catch (const scenario::ComparisonError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const ConfigError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
