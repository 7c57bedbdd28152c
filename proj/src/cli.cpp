#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "postop/bench.hpp"
#include "postop/model.hpp"
#include "postop/pde.hpp"
#include "postop/pfilter.hpp"
#include "postop/rmc.hpp"

namespace postop {
namespace {

struct CommonOptions {
  std::string config_path;
  std::string format = "json";
  bool timing = false;
  bool out_given = false;
  std::map<std::string, std::string> flags;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, CommonOptions& opt) {
  sub->add_option("--config", opt.config_path, "YAML config file (flat key: value mapping)");
  sub->add_option("--format", opt.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
  sub->add_flag("--timing", opt.timing, "Include runtimes in the output");
  sub->add_option("--set", opt.sets, "Override a config key (key=value)");
  for (const auto& key : ExperimentConfig::keys()) {
    sub->add_option_function<std::string>("--" + key, [&opt, key](const std::string& v) { opt.flags[key] = v; },
                                          "Config key '" + key + "'");
  }
  sub->add_option_function<std::string>("--s0", [&opt](const std::string& v) { opt.flags["s0"] = v; },
                                        "Initial price; sets y0 = ln(s0)");
}

ExperimentConfig resolve(const CommonOptions& opt, const std::string& default_model) {
  ExperimentConfig c = opt.config_path.empty() ? ExperimentConfig::defaults(default_model) : load_config(opt.config_path);
  std::map<std::string, std::string> overrides = opt.flags;
  for (const auto& s : opt.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    overrides[s.substr(0, eq)] = s.substr(eq + 1);
  }
  // The model switch resets defaults, so it goes first.
  if (auto it = overrides.find("model"); it != overrides.end()) {
    c.set("model", it->second);
    overrides.erase(it);
  }
  for (const auto& [k, v] : overrides) c.set(k, v);
  return c;
}

void emit(const CommonOptions& opt, const ExperimentConfig& c, const std::string& stem, const std::string& text) {
  std::cout << text;
  if (!opt.out_given) return;
  std::filesystem::create_directories(c.out);
  const auto path = std::filesystem::path(c.out) / (stem + "." + opt.format);
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write '" + path.string() + "'");
  f << text;
}

std::string render(const ResultTable& t, const CommonOptions& opt) {
  if (opt.format == "csv") {
    std::ostringstream os;
    t.write_csv(os, opt.timing);
    return os.str();
  }
  return t.to_json(opt.timing).dump(2) + "\n";
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("expected a comma separated integer list, got '" + s + "'");
    }
    if (out.back() < 2) throw ConfigError("particle counts must be at least 2");
  }
  return out;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Bermudan stopping under partial observation: simulation, filtering and PDE benchmarks"};
  app.require_subcommand(1);
  CommonOptions opt;
  std::vector<std::string> rows;
  std::string n_list = "50,100,200,400,800,1600";
  int trials = 200;

  auto* table1 = app.add_subcommand("table1", "Linear-Gaussian example: simulation, PDE and European values");
  auto* table2 = app.add_subcommand("table2", "Stein-Stein example: PDE and partial-observation values per dt");
  auto* converge = app.add_subcommand("converge", "Particle filter RMSE against the Kalman filter");
  auto* region = app.add_subcommand("region", "Stopping decisions and PDE boundary at one exercise date");
  auto* price_cmd = app.add_subcommand("price", "Single configuration run");
  for (auto* sub : {table1, table2, converge, region, price_cmd}) add_common(sub, opt);
  table1->add_option("--row", rows, "Restrict to row labels");
  converge->add_option("--n-list", n_list, "Comma separated particle counts");
  converge->add_option("--trials", trials, "Observation paths per particle count")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    opt.out_given = opt.flags.contains("out") ||
                    std::any_of(opt.sets.begin(), opt.sets.end(), [](const std::string& s) { return s.starts_with("out="); });
    if (*table1) {
      const ExperimentConfig c = resolve(opt, "linear");
      emit(opt, c, "table1", render(run_table1(c, rows), opt));
    } else if (*table2) {
      const ExperimentConfig c = resolve(opt, "stein_stein");
      emit(opt, c, "table2", render(run_table2(c), opt));
    } else if (*converge) {
      const ExperimentConfig c = resolve(opt, "linear");
      const ConvergenceReport rep = run_convergence_study(c, parse_int_list(n_list), trials);
      std::string text;
      if (opt.format == "csv") {
        std::ostringstream os;
        os.precision(17);
        os << "particles,rmse\n";
        for (std::size_t i = 0; i < rep.particles.size(); ++i) os << rep.particles[i] << ',' << rep.rmse[i] << '\n';
        os << "# slope," << rep.slope << ",ci," << rep.slope_ci_lo << ',' << rep.slope_ci_hi << '\n';
        text = os.str();
      } else {
        nlohmann::json j = rep.to_json();
        j["config_hash"] = c.hash();
        j["config"] = c.to_json();
        text = j.dump(2) + "\n";
      }
      emit(opt, c, "converge", text);
    } else if (*region) {
      const ExperimentConfig c = resolve(opt, "linear");
      std::filesystem::create_directories(c.out);
      const auto points = std::filesystem::path(c.out) / "region_points.csv";
      const auto boundary = std::filesystem::path(c.out) / "region_boundary.csv";
      std::ofstream pf(points);
      std::ofstream bf(boundary);
      if (!pf || !bf) throw ConfigError("cannot write region files under '" + c.out + "'");
      const RegionReport rep = export_stopping_region(c, pf, bf);
      nlohmann::json j = rep.to_json();
      j["points_csv"] = points.string();
      j["boundary_csv"] = boundary.string();
      j["config_hash"] = c.hash();
      std::cout << j.dump(2) << "\n";
    } else {
      const ExperimentConfig c = resolve(opt, "linear");
      ResultTable t;
      t.name = "price";
      t.rows.push_back(price(c));
      emit(opt, c, "price", render(t, opt));
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FilterCollapse& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const CflViolation& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ModelError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const FeatureError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}

}  // namespace postop
