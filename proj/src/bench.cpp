#include "postop/bench.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <boost/uuid/detail/sha1.hpp>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numbers>
#include <ostream>
#include <sstream>

#include "postop/forward.hpp"
#include "postop/kalman.hpp"
#include "postop/pde.hpp"
#include "postop/pfilter.hpp"
#include "postop/rmc.hpp"

namespace postop {
namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const unsigned long long d = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" + v + "'");
  }
}

struct Key {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  // Keys that only apply to one model.
  std::string only_model;
};

#define POSTOP_DOUBLE(name_, field)                                                              \
  Key {                                                                                           \
    name_, [](ExperimentConfig& c, const std::string& v) { c.field = parse_double(name_, v); },   \
        [](const ExperimentConfig& c) { return fmt_double(c.field); }, ""                         \
  }
#define POSTOP_MODEL_DOUBLE(name_, lin, ss)                                                       \
  Key {                                                                                           \
    name_,                                                                                        \
        [](ExperimentConfig& c, const std::string& v) {                                           \
          (c.model == "linear" ? c.linear.lin : c.stein.ss) = parse_double(name_, v);             \
        },                                                                                        \
        [](const ExperimentConfig& c) { return fmt_double(c.model == "linear" ? c.linear.lin : c.stein.ss); }, \
        ""                                                                                        \
  }
#define POSTOP_LINEAR(name_, field)                                                                           \
  Key {                                                                                                        \
    name_, [](ExperimentConfig& c, const std::string& v) { c.linear.field = parse_double(name_, v); },        \
        [](const ExperimentConfig& c) { return fmt_double(c.linear.field); }, "linear"                        \
  }
#define POSTOP_STEIN(name_, field)                                                                            \
  Key {                                                                                                        \
    name_, [](ExperimentConfig& c, const std::string& v) { c.stein.field = parse_double(name_, v); },         \
        [](const ExperimentConfig& c) { return fmt_double(c.stein.field); }, "stein_stein"                    \
  }
#define POSTOP_STRING(name_, field)                                                         \
  Key {                                                                                      \
    name_, [](ExperimentConfig& c, const std::string& v) { c.field = v; },                  \
        [](const ExperimentConfig& c) { return c.field; }, ""                                \
  }
#define POSTOP_INT(name_, field)                                                                              \
  Key {                                                                                                        \
    name_,                                                                                                     \
        [](ExperimentConfig& c, const std::string& v) {                                                       \
          c.field = static_cast<decltype(c.field)>(parse_int(name_, v));                                      \
        },                                                                                                     \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }, ""                                 \
  }

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = {
      POSTOP_STRING("model", model),
      POSTOP_MODEL_DOUBLE("kappa", kappa, kappa),
      POSTOP_LINEAR("a", a),
      POSTOP_LINEAR("sigma_x", sigma_x),
      POSTOP_LINEAR("sigma_y", sigma_y),
      POSTOP_STEIN("sigma_bar", sigma_bar),
      POSTOP_STEIN("alpha", alpha),
      POSTOP_MODEL_DOUBLE("rho", rho, rho),
      POSTOP_MODEL_DOUBLE("r", r, r),
      POSTOP_LINEAR("c1", c1),
      POSTOP_LINEAR("c2", c2),
      POSTOP_STEIN("strike", strike),
      POSTOP_STRING("x0_law", x0_law),
      POSTOP_DOUBLE("x0_mean", x0_mean),
      POSTOP_DOUBLE("x0_sd", x0_sd),
      POSTOP_DOUBLE("x0_lo", x0_lo),
      POSTOP_DOUBLE("x0_hi", x0_hi),
      POSTOP_DOUBLE("x0_a", x0_a),
      POSTOP_DOUBLE("x0_b", x0_b),
      POSTOP_DOUBLE("x0_p", x0_p),
      POSTOP_DOUBLE("y0", y0),
      POSTOP_DOUBLE("horizon", horizon),
      POSTOP_DOUBLE("dt", dt),
      POSTOP_DOUBLE("delta", delta),
      POSTOP_INT("substeps", substeps),
      Key{"paths",
          [](ExperimentConfig& c, const std::string& v) {
            const long long n = parse_int("paths", v);
            if (n < 1) throw ConfigError("config key 'paths' must be at least 1");
            c.paths = static_cast<std::size_t>(n);
          },
          [](const ExperimentConfig& c) { return std::to_string(c.paths); }, ""},
      POSTOP_INT("particles", particles),
      POSTOP_STRING("basis", basis),
      POSTOP_STRING("algo", algo),
      POSTOP_STRING("solver", solver),
      Key{"seed", [](ExperimentConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
          [](const ExperimentConfig& c) { return std::to_string(c.seed); }, ""},
      POSTOP_STRING("out", out),
      Key{"european_paths",
          [](ExperimentConfig& c, const std::string& v) {
            const long long n = parse_int("european_paths", v);
            if (n < 0) throw ConfigError("config key 'european_paths' must be non-negative");
            c.european_paths = static_cast<std::size_t>(n);
          },
          [](const ExperimentConfig& c) { return std::to_string(c.european_paths); }, ""},
      POSTOP_INT("european_substeps", european_substeps),
      POSTOP_INT("pde_nodes", pde_nodes),
      POSTOP_INT("pde_steps", pde_steps),
      POSTOP_DOUBLE("region_time", region_time),
  };
  return table;
}

#undef POSTOP_DOUBLE
#undef POSTOP_MODEL_DOUBLE
#undef POSTOP_LINEAR
#undef POSTOP_STEIN
#undef POSTOP_STRING
#undef POSTOP_INT

const Key* find_key(const std::string& name) {
  for (const auto& k : key_table()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

using LinState = LinearGaussianModel::State;
using LinObs = LinearGaussianModel::Obs;
using SsState = SteinSteinModel::State;
using SsObs = SteinSteinModel::Obs;

InductionResult induct(const StoppingData& data, const std::string& algo) {
  return algo == "tvr" ? tvr_backward_induction(data) : backward_induction(data);
}

void fill_from_induction(ResultRow& row, const InductionResult& res) {
  row.value = res.estimate.value;
  row.std_error = res.estimate.std_error;
  row.extra["immediate"] = res.estimate.immediate;
  row.extra["mean_cashflow"] = res.estimate.mean_cashflow;
  row.extra["algorithm"] = res.estimate.algorithm;
  row.extra["basis"] = res.estimate.basis;
}

// E over xi_0 of the closed-form European value (linear model only).
double linear_european_exact(const ExperimentConfig& c) {
  const LinearEuropean eur(c.linear, c.horizon, 64);
  const InitialLaw law = c.initial_law();
  switch (law.kind()) {
    case InitialLaw::Kind::kDirac: return eur.value(0.0, c.x0_mean, c.y0);
    case InitialLaw::Kind::kTwoPoint:
      return c.x0_p * eur.value(0.0, c.x0_a, c.y0) + (1.0 - c.x0_p) * eur.value(0.0, c.x0_b, c.y0);
    case InitialLaw::Kind::kGaussian: {
      auto [z, w] = gauss_hermite(32);
      double acc = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) acc += w[i] * eur.value(0.0, c.x0_mean + c.x0_sd * z[i], c.y0);
      return acc;
    }
    case InitialLaw::Kind::kUniform: {
      constexpr int kCells = 400;
      double acc = 0.0;
      for (int i = 0; i < kCells; ++i) acc += eur.value(0.0, c.x0_lo + (i + 0.5) / kCells * (c.x0_hi - c.x0_lo), c.y0);
      return acc / kCells;
    }
  }
  return NAN;
}

ResultRow price_linear(const ExperimentConfig& c, ResultRow row) {
  const LinearGaussianModel model(c.linear);
  const SimGrid grid = c.grid();
  const InitialLaw law = c.initial_law();
  const LinObs y0(c.y0);
  if (c.solver == "mc") {
    const auto basis = linear_cloud_basis(model, make_linear_european_table(c.linear, grid, c.y0));
    const StoppingData data =
        reference_forward_pass(model, grid, law_sampler<LinState>(law), y0, c.paths, c.particles, basis, c.seed);
    fill_from_induction(row, induct(data, c.algo));
  } else if (c.solver == "kalman") {
    const auto eur = std::make_shared<const LinearEuropean>(c.linear, c.horizon);
    const StoppingData data = kalman_forward_pass(c.linear, law.mean(), law.variance(), c.y0, grid, c.paths,
                                                  kalman_basis(c.linear, eur), c.seed);
    fill_from_induction(row, induct(data, c.algo));
  } else if (c.solver == "pde") {
    const RiccatiSolution ric = riccati_solve(c.linear, law.variance(), c.horizon, c.horizon / c.pde_steps);
    Grid2D g = default_kalman_grid(c.horizon, grid.exercise_dates());
    g.u_nodes = c.pde_nodes;
    g.v_nodes = c.pde_nodes;
    g.v_lo = g.v_hi / g.v_nodes;
    g.time_steps = c.pde_steps;
    const SolverResult res = solve_bermudan_kalman(c.linear, ric, g);
    row.value = query_value(res, law.mean(), c.y0);
    row.extra["time_steps"] = res.time_steps;
    row.extra["max_cfl"] = res.max_cfl;
  } else {  // european
    const ValueEstimate est = european_monte_carlo(model, grid, law_sampler<LinState>(law), y0, c.paths, c.seed);
    row.value = est.value;
    row.std_error = est.std_error;
    row.extra["closed_form"] = linear_european_exact(c);
  }
  return row;
}

ResultRow price_stein_stein(const ExperimentConfig& c, ResultRow row) {
  const SteinSteinModel model(c.stein);
  const SimGrid grid = c.grid();
  const InitialLaw law = c.initial_law();
  const SsObs y0(c.y0);
  if (c.solver == "mc") {
    const StoppingData data = candidate_forward_pass(model, grid, law_sampler<SsState>(law), y0, c.paths,
                                                     c.particles, stein_stein_basis(model), KernelSpec::gaussian(),
                                                     c.seed);
    fill_from_induction(row, induct(data, c.algo));
  } else if (c.solver == "pde") {
    Grid2D g = default_stein_stein_grid(c.stein, c.y0, c.horizon, grid.exercise_dates());
    g.u_nodes = c.pde_nodes;
    g.v_nodes = c.pde_nodes;
    g.time_steps = c.pde_steps;
    const SolverResult res = solve_bermudan_stein_stein(c.stein, g);
    row.value = query_value(res, law.mean(), c.y0);
    row.extra["time_steps"] = res.time_steps;
    row.extra["max_cfl"] = res.max_cfl;
  } else if (c.solver == "european") {
    const ValueEstimate est = european_monte_carlo(model, grid, law_sampler<SsState>(law), y0, c.paths, c.seed);
    row.value = est.value;
    row.std_error = est.std_error;
  } else {
    throw ConfigError("solver '" + c.solver + "' is only available for the linear model");
  }
  return row;
}

ExperimentConfig apply_law(ExperimentConfig c, const Table1Row& r) {
  c.x0_law = r.x0_law;
  c.y0 = r.y0;
  if (r.x0_law == "gaussian" || r.x0_law == "dirac") {
    c.x0_mean = r.mean;
    c.x0_sd = r.sd;
  } else if (r.x0_law == "uniform") {
    c.x0_lo = r.mean - std::sqrt(3.0) * r.sd;
    c.x0_hi = r.mean + std::sqrt(3.0) * r.sd;
  } else {
    c.x0_a = r.mean - r.sd;
    c.x0_b = r.mean + r.sd;
    c.x0_p = 0.5;
  }
  return c;
}

ExperimentConfig european_config(ExperimentConfig c) {
  c.solver = "european";
  if (c.european_paths > 0) c.paths = c.european_paths;
  if (c.european_substeps > 0) c.substeps = c.european_substeps;
  return c;
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults(const std::string& model) {
  ExperimentConfig c;
  if (model == "linear") return c;
  if (model != "stein_stein") throw ConfigError("unknown model '" + model + "' (expected linear or stein_stein)");
  c.model = "stein_stein";
  c.x0_law = "dirac";
  c.x0_mean = 0.15;
  c.x0_sd = 0.0;
  c.y0 = std::log(110.0);
  c.particles = 1000;
  return c;
}

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& k : key_table()) out.push_back(k.name);
    return out;
  }();
  return names;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (key == "s0") {
    const double s0 = parse_double(key, value);
    if (!(s0 > 0.0)) throw ConfigError("config key 's0' must be positive");
    y0 = std::log(s0);
    return;
  }
  const Key* k = find_key(key);
  if (!k) throw ConfigError("unknown config key '" + key + "'");
  if (key == "model") {
    // Switching model resets to that example's defaults; other keys follow.
    ExperimentConfig fresh = defaults(value);
    fresh.seed = seed;
    fresh.out = out;
    *this = fresh;
    return;
  }
  if (!k->only_model.empty() && k->only_model != model) {
    throw ConfigError("config key '" + key + "' does not apply to model '" + model + "'");
  }
  k->set(*this, value);
}

std::string ExperimentConfig::get(const std::string& key) const {
  const Key* k = find_key(key);
  if (!k) throw ConfigError("unknown config key '" + key + "'");
  return k->get(*this);
}

void ExperimentConfig::validate() const {
  if (model != "linear" && model != "stein_stein") throw ConfigError("model must be linear or stein_stein");
  try {
    if (model == "linear") {
      linear.validate();
    } else {
      stein.validate();
    }
    grid().validate();
    (void)initial_law();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (particles < 2) throw ConfigError("particles must be at least 2");
  if (paths < 1) throw ConfigError("paths must be at least 1");
  if (algo != "ls" && algo != "tvr") throw ConfigError("algo must be ls or tvr");
  if (solver != "mc" && solver != "pde" && solver != "european" && solver != "kalman") {
    throw ConfigError("solver must be mc, pde, european or kalman");
  }
  if (basis != "default") throw ConfigError("basis must be 'default'");
  if (pde_nodes < 3) throw ConfigError("pde_nodes must be at least 3");
  if (pde_steps < 1) throw ConfigError("pde_steps must be positive");
  if (substeps < 0 || european_substeps < 0) throw ConfigError("substeps must be non-negative");
  if ((solver == "pde" || solver == "kalman") && model == "linear" && x0_law != "gaussian" && x0_law != "dirac") {
    throw ConfigError("the " + solver + " solver needs a gaussian or dirac initial law");
  }
  if (model == "linear" && (solver == "pde" || solver == "kalman") && !(y0 > 0.0)) {
    throw ConfigError("the linear model's " + solver + " solver needs y0 > 0");
  }
}

InitialLaw ExperimentConfig::initial_law() const {
  if (x0_law == "gaussian") return InitialLaw::gaussian(x0_mean, x0_sd);
  if (x0_law == "uniform") return InitialLaw::uniform(x0_lo, x0_hi);
  if (x0_law == "two_point") return InitialLaw::two_point(x0_a, x0_b, x0_p);
  if (x0_law == "dirac") return InitialLaw::dirac(x0_mean);
  throw ConfigError("x0_law must be gaussian, uniform, two_point or dirac");
}

SimGrid ExperimentConfig::grid() const {
  SimGrid g = SimGrid::make(horizon, dt, delta);
  if (substeps > 0) g.substeps = substeps;
  return g;
}

std::string ExperimentConfig::canonical() const {
  std::string s;
  for (const auto& k : key_table()) {
    if (!k.only_model.empty() && k.only_model != model) continue;
    s += k.name + "=" + k.get(*this) + "\n";
  }
  return s;
}

std::string ExperimentConfig::hash() const {
  boost::uuids::detail::sha1 sha;
  const std::string text = canonical();
  sha.process_bytes(text.data(), text.size());
  unsigned int digest[5];
  sha.get_digest(digest);
  char buf[41];
  for (int i = 0; i < 5; ++i) std::snprintf(buf + 8 * i, 9, "%08x", digest[i]);
  return std::string(buf, 40);
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& k : key_table()) {
    if (!k.only_model.empty() && k.only_model != model) continue;
    j[k.name] = k.get(*this);
  }
  return j;
}

ExperimentConfig parse_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  ExperimentConfig c;
  if (!root || root.IsNull()) return c;
  if (!root.IsMap()) throw ConfigError("malformed config: expected a key/value mapping");
  if (root["model"]) c.set("model", root["model"].as<std::string>());
  for (const auto& kv : root) {
    const auto key = kv.first.as<std::string>();
    if (key == "model") continue;
    if (!kv.second.IsScalar()) throw ConfigError("config key '" + key + "' must have a scalar value");
    c.set(key, kv.second.as<std::string>());
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

const ResultRow& ResultTable::find(const std::string& label, const std::string& solver) const {
  for (const auto& r : rows) {
    if (r.label == label && r.solver == solver) return r;
  }
  throw std::out_of_range("result table: no row " + label + "/" + solver);
}

void ResultTable::write_csv(std::ostream& os, bool with_runtime) const {
  os << "table,label,solver,value,std_error,paths,particles,dt,delta,seed,config_hash";
  if (with_runtime) os << ",runtime_s";
  os << '\n';
  for (const auto& r : rows) {
    os << name << ',' << r.label << ',' << r.solver << ',' << fmt_double(r.value) << ','
       << (r.std_error >= 0.0 ? fmt_double(r.std_error) : "") << ',' << r.config.paths << ','
       << r.config.particles << ',' << fmt_double(r.config.dt) << ',' << fmt_double(r.config.delta) << ','
       << r.config.seed << ',' << r.config.hash();
    if (with_runtime) os << ',' << fmt_double(r.runtime);
    os << '\n';
  }
}

nlohmann::json ResultTable::to_json(bool with_runtime) const {
  nlohmann::json j;
  j["table"] = name;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row;
    row["label"] = r.label;
    row["solver"] = r.solver;
    row["value"] = r.value;
    row["std_error"] = r.std_error >= 0.0 ? nlohmann::json(r.std_error) : nlohmann::json(nullptr);
    row["config_hash"] = r.config.hash();
    row["config"] = r.config.to_json();
    row["extra"] = r.extra;
    if (with_runtime) row["runtime_s"] = r.runtime;
    j["rows"].push_back(row);
  }
  return j;
}

ResultRow price(const ExperimentConfig& config, const std::string& label) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  ResultRow row;
  row.label = label;
  row.solver = config.solver;
  row.config = config;
  row = config.model == "linear" ? price_linear(config, row) : price_stein_stein(config, row);
  row.runtime = seconds_since(t0);
  return row;
}

const std::vector<Table1Row>& table1_rows() {
  static const std::vector<Table1Row> rows = {
      {"normal(0,0.05^2) y0=2", "gaussian", 0.0, 0.05, 2.0, true},
      {"normal(-0.12,0.05^2) y0=2.24", "gaussian", -0.12, 0.05, 2.24, true},
      {"normal(0.2,0.05^2) y0=1.8", "gaussian", 0.2, 0.05, 1.8, true},
      {"normal(0,0.1^2) y0=2", "gaussian", 0.0, 0.1, 2.0, true},
      {"dirac(0) y0=2", "dirac", 0.0, 0.0, 2.0, true},
      {"uniform y0=2", "uniform", 0.0, 0.05, 2.0, false},
      {"two-point y0=2", "two_point", 0.0, 0.05, 2.0, false},
  };
  return rows;
}

ResultTable run_table1(const ExperimentConfig& base, const std::vector<std::string>& only) {
  if (base.model != "linear") throw ConfigError("table1 needs the linear model");
  ResultTable table;
  table.name = "table1";
  for (const auto& r : table1_rows()) {
    if (!only.empty() && std::find(only.begin(), only.end(), r.label) == only.end()) continue;
    ExperimentConfig c = apply_law(base, r);
    for (const char* solver : {"mc", "pde", "european"}) {
      if (std::string(solver) == "pde" && !r.has_pde) continue;
      c.solver = solver;
      table.rows.push_back(price(c.solver == "european" ? european_config(c) : c, r.label));
    }
  }
  return table;
}

ResultTable run_table2(const ExperimentConfig& base) {
  if (base.model != "stein_stein") throw ConfigError("table2 needs the stein_stein model");
  ExperimentConfig c = base;
  c.validate();
  ResultTable table;
  table.name = "table2";
  const std::vector<double> dts = {0.2, 0.1, 0.05};

  for (double dt : dts) {
    ExperimentConfig pc = c;
    pc.dt = dt;
    pc.solver = "pde";
    table.rows.push_back(price(pc, "dt=" + fmt_double(dt)));
  }

  // One filter run on the finest exercise grid serves every coarser grid.
  ExperimentConfig mc = c;
  mc.dt = dts.back();
  mc.solver = "mc";
  mc.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const SteinSteinModel model(mc.stein);
  const StoppingData fine =
      candidate_forward_pass(model, mc.grid(), law_sampler<SsState>(mc.initial_law()), SsObs(mc.y0), mc.paths,
                             mc.particles, stein_stein_basis(model), KernelSpec::gaussian(), mc.seed);
  const double forward_time = seconds_since(t0);
  for (double dt : dts) {
    const int stride = static_cast<int>(std::lround(dt / mc.dt));
    const auto t1 = std::chrono::steady_clock::now();
    ResultRow row;
    row.label = "dt=" + fmt_double(dt);
    row.solver = "mc";
    row.config = mc;
    row.config.dt = dt;
    fill_from_induction(row, induct(fine.subsample(stride), mc.algo));
    row.runtime = forward_time + seconds_since(t1);
    table.rows.push_back(row);
  }

  table.rows.push_back(price(european_config(c), "european"));
  return table;
}

nlohmann::json ConvergenceReport::to_json() const {
  nlohmann::json j;
  j["particles"] = particles;
  j["rmse"] = rmse;
  j["slope"] = slope;
  j["slope_ci"] = {slope_ci_lo, slope_ci_hi};
  j["trials"] = trials;
  return j;
}

ConvergenceReport run_convergence_study(const ExperimentConfig& base, const std::vector<int>& particles, int trials) {
  if (base.model != "linear") throw ConfigError("the convergence study needs the linear model");
  if (base.x0_law != "gaussian" && base.x0_law != "dirac") {
    throw ConfigError("the convergence study needs a gaussian or dirac initial law");
  }
  if (particles.size() < 3) throw ConfigError("the convergence study needs at least 3 particle counts");
  if (trials < 2) throw ConfigError("the convergence study needs at least 2 trials");
  base.validate();
  const LinearGaussianModel model(base.linear);
  const SimGrid grid = base.grid();
  const InitialLaw law = base.initial_law();
  const RiccatiSolution ric = riccati_solve(base.linear, law.variance(), grid);
  const int sub = grid.substeps;
  const double h = grid.substep();
  const int steps = grid.obs_steps();
  const auto sampler = law_sampler<LinState>(law);

  ConvergenceReport rep;
  rep.particles = particles;
  rep.trials = trials;
  std::vector<std::vector<double>> err(particles.size(), std::vector<double>(trials));
  detail::for_each_path(static_cast<std::size_t>(trials), [&](std::uint32_t k) {
    // The observation path is drawn once under P and shared by every n.
    const PathSample truth = simulate_joint_path(model, grid, sampler, LinObs(base.y0), base.seed, k);
    KalmanState ks{law.mean(), law.variance(), 0.0};
    for (int f = 1; f <= steps * sub; ++f) ks = kalman_step(ks, base.linear, truth.y(0, f) - truth.y(0, f - 1), ric, h);
    for (std::size_t a = 0; a < particles.size(); ++a) {
      const std::uint32_t stream = k * static_cast<std::uint32_t>(particles.size()) + static_cast<std::uint32_t>(a);
      RandomStream init_rng(base.seed, stream, StreamPurpose::kInitialState);
      RandomStream noise_rng(base.seed, stream, StreamPurpose::kParticleNoise);
      RandomStream branch_rng(base.seed, stream, StreamPurpose::kBranching);
      auto cloud = init_cloud<LinState>(particles[a], sampler, init_rng);
      std::vector<LinObs> inc(sub);
      for (int i = 1; i <= steps; ++i) {
        const int f0 = (i - 1) * sub;
        for (int s = 0; s < sub; ++s) inc[s] = LinObs(truth.y(0, f0 + s + 1) - truth.y(0, f0 + s));
        update_weights_discrete(cloud, model, LinObs(truth.y(0, f0 + sub) - truth.y(0, f0)), grid.obs_step);
        propagate_reference(cloud, model, std::span<const LinObs>(inc), h, noise_rng);
        if (i < steps) branch(cloud, branch_rng);
      }
      err[a][k] = estimate_pi(cloud, [](const LinState& v) { return v(0); }) - ks.m;
    }
  });
  std::vector<double> lx;
  std::vector<double> ly;
  for (std::size_t a = 0; a < particles.size(); ++a) {
    double s2 = 0.0;
    for (double e : err[a]) s2 += e * e;
    rep.rmse.push_back(std::sqrt(s2 / trials));
    lx.push_back(std::log(static_cast<double>(particles[a])));
    ly.push_back(std::log(rep.rmse.back()));
  }
  // Ordinary least squares of log RMSE on log n with a t-based interval.
  const auto m = static_cast<double>(lx.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i] / m;
    my += ly[i] / m;
  }
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  rep.slope = sxy / sxx;
  double rss = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double fit = my + rep.slope * (lx[i] - mx);
    rss += (ly[i] - fit) * (ly[i] - fit);
  }
  const double se = std::sqrt(rss / (m - 2.0) / sxx);
  const boost::math::students_t dist(m - 2.0);
  const double q = boost::math::quantile(boost::math::complement(dist, 0.025));
  rep.slope_ci_lo = rep.slope - q * se;
  rep.slope_ci_hi = rep.slope + q * se;
  return rep;
}

nlohmann::json RegionReport::to_json() const {
  nlohmann::json j;
  j["time"] = time;
  j["points"] = points;
  j["stop"] = stop;
  j["stopped_early"] = stopped_early;
  j["stopped_late"] = stopped_late;
  return j;
}

RegionReport export_stopping_region(const ExperimentConfig& config, std::ostream& points_csv,
                                    std::ostream& boundary_csv) {
  if (config.model != "linear") throw ConfigError("region export needs the linear model");
  ExperimentConfig c = config;
  c.solver = "mc";
  c.validate();
  if (c.x0_law != "gaussian" && c.x0_law != "dirac") {
    throw ConfigError("region export compares against the PDE and needs a gaussian or dirac initial law");
  }
  const SimGrid grid = c.grid();
  const double pos = c.region_time / grid.exercise_step;
  const int date = static_cast<int>(std::lround(pos));
  if (std::abs(pos - date) > 1e-9 || date < 0 || date > grid.exercise_dates()) {
    throw ConfigError("region_time " + fmt_double(c.region_time) + " is not an exercise date");
  }
  const LinearGaussianModel model(c.linear);
  const InitialLaw law = c.initial_law();
  const auto basis = linear_cloud_basis(model, make_linear_european_table(c.linear, grid, c.y0));
  const StoppingData data =
      reference_forward_pass(model, grid, law_sampler<LinState>(law), LinObs(c.y0), c.paths, c.particles, basis, c.seed);
  const InductionResult res = induct(data, c.algo);
  const StoppingPolicy policy = extract_policy(res, data.dates);

  const RiccatiSolution ric = riccati_solve(c.linear, law.variance(), c.horizon, c.horizon / c.pde_steps);
  Grid2D g = default_kalman_grid(c.horizon, grid.exercise_dates());
  g.u_nodes = c.pde_nodes;
  g.v_nodes = c.pde_nodes;
  g.v_lo = g.v_hi / g.v_nodes;
  g.time_steps = c.pde_steps;
  const SolverResult pde = solve_bermudan_kalman(c.linear, ric, g);
  const auto& mask = pde.exercise[date];

  RegionReport rep;
  rep.time = c.region_time;
  points_csv << "path,t,m_proxy,y,G,q_hat,decision,pde_decision\n";
  points_csv.precision(10);
  for (Eigen::Index k = 0; k < data.paths(); ++k) {
    const double m = data.filter_mean(k, date);
    const double y = data.observation(k, date);
    const double reward = data.payoff(k, date);
    double q = NAN;
    bool stop = true;
    if (date == 0) {
      q = res.continuation0;
      stop = policy.stop_at_zero(data.payoff.col(0).mean());
    } else if (date < data.dates) {
      q = policy.continuation(date, data.features[date].row(k));
      stop = policy.stop(date, data.features[date].row(k), reward);
    }
    const int i = std::clamp(static_cast<int>(std::lround((m - g.u_lo) / g.du())), 0, g.u_nodes - 1);
    const int j = std::clamp(static_cast<int>(std::lround((y - g.v_lo) / g.dv())), 0, g.v_nodes - 1);
    const bool pde_stop = mask(i, j);
    ++rep.points;
    if (stop) ++rep.stop;
    if (stop && !pde_stop) ++rep.stopped_early;
    if (!stop && pde_stop) ++rep.stopped_late;
    points_csv << k << ',' << c.region_time << ',' << m << ',' << y << ',' << reward << ',' << q << ','
               << (stop ? "stop" : "continue") << ',' << (pde_stop ? "stop" : "continue") << '\n';
  }
  // Lowest exercising y on each m node: the boundary of the PDE stopping region.
  boundary_csv << "t,m,y_boundary\n";
  boundary_csv.precision(10);
  for (int i = 0; i < g.u_nodes; ++i) {
    for (int j = 0; j < g.v_nodes; ++j) {
      if (mask(i, j)) {
        boundary_csv << c.region_time << ',' << g.u(i) << ',' << g.v(j) << '\n';
        break;
      }
    }
  }
  return rep;
}

}  // namespace postop
