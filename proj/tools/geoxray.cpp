#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "geoxray/harness.hpp"

using namespace geoxray;

namespace {

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParameterError(path + ": " + e.what());
  }
}

// Inline JSON, a path to a JSON file, or a bare word (kept as a string).
Json json_arg(const std::string& text) {
  if (std::filesystem::exists(text)) return read_json_file(text);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error&) {
    return text;
  }
}

// "a,b,c" -> [a, b, c] as numbers.
Json number_list(const std::string& text) {
  Json out = Json::array();
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ParameterError("expected a comma-separated number list, got '" + text + "'");
    }
  }
  return out;
}

Json int_list(const std::string& text) {
  Json out = Json::array();
  for (const Json& v : number_list(text)) out.push_back(static_cast<int>(v.get<double>()));
  return out;
}

struct Sub {
  CLI::App* app = nullptr;
  std::string config_path;
  std::string out_dir = ".";
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;  // config key -> raw flag value
};

void add_flag(Sub& s, const std::string& flag, const std::string& key, const std::string& help) {
  s.app->add_option(flag, s.flags[key], help);
}

void print_report(const ExperimentReport& r) {
  std::printf("%s  digest %s  rows %zu\n", r.id.c_str(), r.digest.c_str(), r.rows.size());
  for (const CheckResult& c : r.checks)
    std::printf("  %-4s %-32s %.6g %s %.6g\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.value, c.relation.c_str(),
                c.threshold);
  if (!r.summary.empty()) std::printf("  summary %s\n", r.summary.dump().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geodesic X-ray transform laboratory"};
  app.require_subcommand(1);
  std::map<std::string, Sub> subs;
  const std::map<std::string, std::string> help = {
      {"flow", "trace one geodesic (CSV t, x0, x1, v0, v1, c)"},
      {"xray", "I_m f on a boundary fan (CSV component, s, theta, value, flagged)"},
      {"decompose", "solenoidal decomposition f = f^s + D p on a grid"},
      {"distance", "marked boundary distance in a winding class"},
      {"energy", "E(tau) along g + tau f with the energy identity check"},
      {"audit-exponents", "exponent bookkeeping 2 gamma theta > 1"},
      {"probe", "discrete s-injectivity probe"},
      {"experiment", "named experiment driver"},
  };
  for (const std::string& name : command_names()) {
    Sub& s = subs[name];
    s.app = app.add_subcommand(name, help.at(name));
    s.app->add_option("--config", s.config_path, "JSON configuration file");
    s.app->add_option("--out", s.out_dir, "output directory for <id>.json / <id>.csv")->capture_default_str();
    s.app->add_option("--set", s.sets, "override: key=value (value parsed as JSON when possible)");
    if (name != "audit-exponents" && name != "experiment") add_flag(s, "--metric", "metric", "preset name, JSON or file");
  }
  add_flag(subs["flow"], "--start", "start", "x0,x1,theta");
  add_flag(subs["flow"], "--T", "T", "flow time");
  add_flag(subs["flow"], "--step", "step", "RK4 step");
  add_flag(subs["flow"], "--horizon", "horizon", "time horizon");
  for (const char* n : {"xray", "decompose", "energy"}) add_flag(subs[n], "--field", "field", "tensor field JSON or file");
  add_flag(subs["xray"], "--fan", "fan", "Ns,Ntheta");
  add_flag(subs["xray"], "--step", "step", "RK4 step");
  add_flag(subs["decompose"], "--grid", "grid", "Nr,Nphi");
  add_flag(subs["decompose"], "--cg-tol", "cg_tol", "CG tolerance");
  for (const char* n : {"distance", "energy"}) {
    add_flag(subs[n], "--from", "from", "component,angle");
    add_flag(subs[n], "--to", "to", "component,angle");
    add_flag(subs[n], "--winding", "winding", "winding class k");
  }
  add_flag(subs["audit-exponents"], "--n", "n", "dimension");
  add_flag(subs["audit-exponents"], "--q", "q", "q in (1, 2)");
  add_flag(subs["audit-exponents"], "--p", "p", "p > 1");
  add_flag(subs["audit-exponents"], "--delta", "delta", "delta >= 0");
  bool limit = false;
  subs["audit-exponents"].app->add_flag("--limit", limit, "q -> 1 limit for n = 2..n_max");
  add_flag(subs["probe"], "--grid", "grid", "Nr,Nphi");
  add_flag(subs["probe"], "--refine", "refine", "Nr,Nphi of the refinement level");
  add_flag(subs["experiment"], "--name", "experiment", "experiment id");

  CLI11_PARSE(app, argc, argv);

  for (auto& [name, s] : subs) {
    if (!s.app->parsed()) continue;
    try {
      Json cfg = s.config_path.empty() ? Json::object() : read_json_file(s.config_path);
      if (!cfg.is_object()) throw ParameterError("configuration must be a JSON object");
      for (const auto& [key, raw] : s.flags) {
        if (raw.empty()) continue;
        if (key == "start" || key == "from" || key == "to") {
          Json v = number_list(raw);
          if (key != "start") v[0] = static_cast<int>(v[0].get<double>());
          cfg[key] = v;
        } else if (key == "fan" || key == "grid" || key == "refine") {
          cfg[key] = int_list(raw);
        } else if (key == "metric" || key == "field" || key == "experiment") {
          cfg[key] = json_arg(raw);
        } else {
          cfg[key] = Json::parse(raw);
        }
      }
      if (limit) cfg["limit"] = true;
      for (const std::string& kv : s.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ParameterError("--set expects key=value, got '" + kv + "'");
        cfg[kv.substr(0, eq)] = json_arg(kv.substr(eq + 1));
      }
      const ExperimentReport r = run_command(name, cfg);
      std::filesystem::create_directories(s.out_dir);
      write_report(r, s.out_dir);
      print_report(r);
      return r.passed() ? 0 : 1;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "geoxray %s: %s\n", name.c_str(), e.what());
      return 2;
    }
  }
  return 2;
}
