#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "postop/model.hpp"

namespace postop {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat key/value experiment description. Every key can be set from a YAML
// mapping or from the command line.
struct ExperimentConfig {
  std::string model = "linear";  // linear | stein_stein
  LinearGaussianParams linear;
  SteinSteinParams stein;

  std::string x0_law = "gaussian";  // gaussian | uniform | two_point | dirac
  double x0_mean = 0.0;
  double x0_sd = 0.05;
  double x0_lo = -0.05;
  double x0_hi = 0.05;
  double x0_a = -0.05;
  double x0_b = 0.05;
  double x0_p = 0.5;
  double y0 = 2.0;

  double horizon = 1.0;
  double dt = 0.05;
  double delta = 0.01;
  int substeps = 0;  // 0: smallest count with Euler step <= 0.01

  std::size_t paths = 30000;
  int particles = 500;
  std::string basis = "default";
  std::string algo = "ls";     // ls | tvr
  std::string solver = "mc";   // mc | pde | european | kalman
  std::uint64_t seed = 1;
  std::string out = ".";

  // European rows of the tables; 0 keeps paths / substeps.
  std::size_t european_paths = 200000;
  int european_substeps = 0;

  int pde_nodes = 401;
  int pde_steps = 8000;
  double region_time = 0.5;

  // Defaults of the two worked examples.
  static ExperimentConfig defaults(const std::string& model);

  // Keys in canonical order.
  static const std::vector<std::string>& keys();
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  void validate() const;
  InitialLaw initial_law() const;
  SimGrid grid() const;
  std::string canonical() const;
  std::string hash() const;
  nlohmann::json to_json() const;
};

// YAML mapping of scalar values; `model` is applied first so that the
// remaining keys override the example's defaults.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& yaml_text);

struct ResultRow {
  std::string label;
  std::string solver;
  double value = 0.0;
  double std_error = -1.0;  // negative: not applicable
  double runtime = 0.0;
  ExperimentConfig config;
  nlohmann::json extra = nlohmann::json::object();
};

struct ResultTable {
  std::string name;
  std::vector<ResultRow> rows;

  const ResultRow& find(const std::string& label, const std::string& solver) const;
  void write_csv(std::ostream& os, bool with_runtime = false) const;
  nlohmann::json to_json(bool with_runtime = false) const;
};

// Single configuration run, dispatched on config.solver.
ResultRow price(const ExperimentConfig& config, const std::string& label = "price");

struct Table1Row {
  std::string label;
  std::string x0_law;
  double mean;
  double sd;
  double y0;
  bool has_pde;
};
const std::vector<Table1Row>& table1_rows();

// Rows of the linear example: simulation solver, PDE (Gaussian and Dirac laws)
// and European value. `only` restricts to the listed row labels.
ResultTable run_table1(const ExperimentConfig& base, const std::vector<std::string>& only = {});

// Stein-Stein Bermudan values for dt in {0.2, 0.1, 0.05}: full-observation PDE
// and partial-observation simulation, plus the European value.
ResultTable run_table2(const ExperimentConfig& base);

struct ConvergenceReport {
  std::vector<int> particles;
  std::vector<double> rmse;
  double slope = 0.0;
  double slope_ci_lo = 0.0;
  double slope_ci_hi = 0.0;
  int trials = 0;
  nlohmann::json to_json() const;
};

// RMSE of pi^n x against the Kalman mean at T over common observation paths.
ConvergenceReport run_convergence_study(const ExperimentConfig& base, const std::vector<int>& particles, int trials);

struct RegionReport {
  double time = 0.0;
  std::size_t points = 0;
  std::size_t stop = 0;
  std::size_t stopped_early = 0;  // simulation stops where the PDE continues
  std::size_t stopped_late = 0;   // simulation continues where the PDE stops
  nlohmann::json to_json() const;
};

// Per-path (m proxy, y, G, q, decision) at config.region_time plus the PDE
// exercise boundary, written as CSV to the two streams.
RegionReport export_stopping_region(const ExperimentConfig& config, std::ostream& points_csv,
                                    std::ostream& boundary_csv);

// Exit codes of the command line tool.
enum ExitCode { kExitOk = 0, kExitUsage = 1, kExitNumerical = 2 };

int run_cli(int argc, char** argv);

}  // namespace postop
