#include "postop/model.hpp"

#include <sstream>

namespace postop {
namespace {

bool is_integer_ratio(double num, double den, int& out) {
  const double q = num / den;
  const double r = std::round(q);
  if (r < 1.0 || std::abs(q - r) > 1e-9 * std::max(1.0, r)) return false;
  out = static_cast<int>(r);
  return true;
}

}  // namespace

void LinearGaussianParams::validate() const {
  if (!(sigma_x > 0.0)) throw std::invalid_argument("linear model: sigma_x must be positive");
  if (!(sigma_y > 0.0)) throw std::invalid_argument("linear model: sigma_y must be positive");
  if (!(std::abs(rho) <= 1.0)) throw std::invalid_argument("linear model: |rho| must be at most 1");
  if (!(r >= 0.0)) throw std::invalid_argument("linear model: discount rate must be nonnegative");
  if (!std::isfinite(kappa) || !std::isfinite(a) || !std::isfinite(c1) || !std::isfinite(c2)) {
    throw std::invalid_argument("linear model: non-finite parameter");
  }
}

LinearGaussianModel::LinearGaussianModel(const LinearGaussianParams& p) : p_(p) { p_.validate(); }

void SteinSteinParams::validate() const {
  if (!(alpha > 0.0)) throw std::invalid_argument("stein-stein: alpha must be positive");
  if (!(std::abs(rho) <= 1.0)) throw std::invalid_argument("stein-stein: |rho| must be at most 1");
  if (!(r >= 0.0)) throw std::invalid_argument("stein-stein: discount rate must be nonnegative");
  if (!(strike >= 0.0)) throw std::invalid_argument("stein-stein: strike must be nonnegative");
  if (!std::isfinite(kappa) || !std::isfinite(sigma_bar)) {
    throw std::invalid_argument("stein-stein: non-finite parameter");
  }
}

SteinSteinModel::SteinSteinModel(const SteinSteinParams& p) : p_(p) { p_.validate(); }

SimGrid SimGrid::make(double horizon, double exercise_step, double obs_step) {
  SimGrid g{horizon, exercise_step, obs_step, 1};
  g.substeps = std::max(1, static_cast<int>(std::ceil(obs_step / 0.01 - 1e-9)));
  g.validate();
  return g;
}

void SimGrid::validate() const {
  int m = 0;
  int k = 0;
  if (!(horizon > 0.0) || !(exercise_step > 0.0) || !(obs_step > 0.0)) {
    throw std::invalid_argument("grid: T, dt and delta must be positive");
  }
  if (!is_integer_ratio(horizon, exercise_step, m)) {
    throw std::invalid_argument("grid: T / dt must be a positive integer");
  }
  if (!is_integer_ratio(exercise_step, obs_step, k)) {
    throw std::invalid_argument("grid: dt / delta must be a positive integer");
  }
  if (substeps < 1) throw std::invalid_argument("grid: substeps must be at least 1");
}

int SimGrid::exercise_dates() const {
  return static_cast<int>(std::lround(horizon / exercise_step));
}

int SimGrid::obs_per_exercise() const {
  return static_cast<int>(std::lround(exercise_step / obs_step));
}

int SimGrid::obs_steps() const { return exercise_dates() * obs_per_exercise(); }

InitialLaw InitialLaw::gaussian(double mean, double sd) {
  if (!(sd >= 0.0)) throw std::invalid_argument("initial law: sd must be nonnegative");
  return {Kind::kGaussian, mean, sd, 0.0};
}

InitialLaw InitialLaw::uniform(double lo, double hi) {
  if (!(hi > lo)) throw std::invalid_argument("initial law: uniform needs lo < hi");
  return {Kind::kUniform, lo, hi, 0.0};
}

InitialLaw InitialLaw::two_point(double a, double b, double prob_a) {
  if (!(prob_a >= 0.0 && prob_a <= 1.0)) throw std::invalid_argument("initial law: prob outside [0,1]");
  return {Kind::kTwoPoint, a, b, prob_a};
}

InitialLaw InitialLaw::dirac(double x) { return {Kind::kDirac, x, 0.0, 0.0}; }

double InitialLaw::sample(RandomStream& rng) const {
  switch (kind_) {
    case Kind::kGaussian: return p1_ + p2_ * rng.normal();
    case Kind::kUniform: return p1_ + (p2_ - p1_) * rng.uniform();
    case Kind::kTwoPoint: return rng.uniform() < p3_ ? p1_ : p2_;
    case Kind::kDirac: return p1_;
  }
  return p1_;
}

double InitialLaw::mean() const {
  switch (kind_) {
    case Kind::kGaussian: return p1_;
    case Kind::kUniform: return 0.5 * (p1_ + p2_);
    case Kind::kTwoPoint: return p3_ * p1_ + (1.0 - p3_) * p2_;
    case Kind::kDirac: return p1_;
  }
  return p1_;
}

double InitialLaw::variance() const {
  switch (kind_) {
    case Kind::kGaussian: return p2_ * p2_;
    case Kind::kUniform: return (p2_ - p1_) * (p2_ - p1_) / 12.0;
    case Kind::kTwoPoint: return p3_ * (1.0 - p3_) * (p1_ - p2_) * (p1_ - p2_);
    case Kind::kDirac: return 0.0;
  }
  return 0.0;
}

// Non-excess kurtosis E[(X-m)^4] / var^2; 0 for a point mass.
double InitialLaw::kurtosis() const {
  switch (kind_) {
    case Kind::kGaussian: return p2_ > 0.0 ? 3.0 : 0.0;
    case Kind::kUniform: return 1.8;
    case Kind::kTwoPoint: {
      const double p = p3_;
      const double q = 1.0 - p;
      if (p * q == 0.0) return 0.0;
      return (1.0 - 3.0 * p * q) / (p * q);
    }
    case Kind::kDirac: return 0.0;
  }
  return 0.0;
}

std::string InitialLaw::describe() const {
  std::ostringstream os;
  os.precision(6);
  switch (kind_) {
    case Kind::kGaussian: os << "gaussian(" << p1_ << "," << p2_ << ")"; break;
    case Kind::kUniform: os << "uniform(" << p1_ << "," << p2_ << ")"; break;
    case Kind::kTwoPoint: os << "two_point(" << p1_ << "," << p2_ << "," << p3_ << ")"; break;
    case Kind::kDirac: os << "dirac(" << p1_ << ")"; break;
  }
  return os.str();
}

PathSample simulate_observation_path(const SimGrid& grid, const Eigen::VectorXd& y0, double scale,
                                     std::uint64_t seed, std::uint32_t path_index) {
  const int steps = grid.fine_steps();
  const double sd = scale * std::sqrt(grid.substep());
  RandomStream rng(seed, path_index, StreamPurpose::kObservation);
  PathSample out;
  out.times.resize(steps + 1);
  out.y.resize(y0.size(), steps + 1);
  out.y.col(0) = y0;
  out.times[0] = 0.0;
  for (int k = 1; k <= steps; ++k) {
    out.times[k] = grid.horizon * static_cast<double>(k) / steps;
    for (Eigen::Index i = 0; i < y0.size(); ++i) out.y(i, k) = out.y(i, k - 1) + sd * rng.normal();
  }
  return out;
}

std::vector<PathSample> simulate_observation_paths(const SimGrid& grid, const Eigen::VectorXd& y0,
                                                   std::size_t n_paths, std::uint64_t seed, double scale) {
  if (n_paths < 1) throw std::invalid_argument("simulate_observation_paths: N must be at least 1");
  grid.validate();
  std::vector<PathSample> paths(n_paths);
  for (std::size_t k = 0; k < n_paths; ++k) {
    paths[k] = simulate_observation_path(grid, y0, scale, seed, static_cast<std::uint32_t>(k));
  }
  return paths;
}

}  // namespace postop
