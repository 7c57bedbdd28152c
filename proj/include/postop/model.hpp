#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "postop/random.hpp"

namespace postop {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DriftMode { kPhysical, kReference };

// Fixed-size linear algebra types for a model with state dimension D,
// observation dimension DY and independent-noise dimension DW.
template <int D, int DY, int DW>
struct ModelShape {
  static constexpr int kStateDim = D;
  static constexpr int kObsDim = DY;
  static constexpr int kNoiseDim = DW;
  using State = Eigen::Matrix<double, D, 1>;
  using Obs = Eigen::Matrix<double, DY, 1>;
  using Noise = Eigen::Matrix<double, DW, 1>;
  using ObsLoading = Eigen::Matrix<double, D, DY>;
  using NoiseLoading = Eigen::Matrix<double, D, DW>;
  using ObsVol = Eigen::Matrix<double, DY, DY>;
};

// dX = b dt + alpha dU + sigma dW,  dY = h dt + obs_vol dU.
// The payoff returns the discounted reward e^{-rt} g(x, y).
template <class M>
concept DiffusionModel = requires(const M& m, const typename M::State& x, const typename M::Obs& y, double t) {
  { M::kStateDim } -> std::convertible_to<int>;
  { M::kObsDim } -> std::convertible_to<int>;
  { M::kNoiseDim } -> std::convertible_to<int>;
  { m.drift(x) } -> std::convertible_to<typename M::State>;
  { m.obs_loading(x) } -> std::convertible_to<typename M::ObsLoading>;
  { m.noise_loading(x) } -> std::convertible_to<typename M::NoiseLoading>;
  { m.obs_drift(x) } -> std::convertible_to<typename M::Obs>;
  { m.obs_vol(x) } -> std::convertible_to<typename M::ObsVol>;
  { m.obs_vol_is_constant() } -> std::convertible_to<bool>;
  { m.discount_rate() } -> std::convertible_to<double>;
  { m.payoff(t, x, y) } -> std::convertible_to<double>;
};

struct LinearGaussianParams {
  double kappa = 2.0;
  double a = 0.05;
  double sigma_x = 0.3;
  double sigma_y = 0.1;
  double rho = 0.6;
  double r = 0.1;
  double c1 = 1.0;
  double c2 = 2.0;

  void validate() const;
};

// Drift-uncertain linear model: dX = -kappa X dt + sigma_x dB,
// dY = (X - a) dt + sigma_y dU with corr(B, U) = rho.
class LinearGaussianModel : public ModelShape<1, 1, 1> {
 public:
  explicit LinearGaussianModel(const LinearGaussianParams& p);

  const LinearGaussianParams& params() const { return p_; }

  State drift(const State& x) const { return State(-p_.kappa * x(0)); }
  ObsLoading obs_loading(const State&) const { return ObsLoading(p_.rho * p_.sigma_x); }
  NoiseLoading noise_loading(const State&) const {
    return NoiseLoading(std::sqrt(1.0 - p_.rho * p_.rho) * p_.sigma_x);
  }
  Obs obs_drift(const State& x) const { return Obs(x(0) - p_.a); }
  ObsVol obs_vol(const State&) const { return ObsVol(p_.sigma_y); }
  bool obs_vol_is_constant() const { return true; }
  double discount_rate() const { return p_.r; }
  double payoff(double t, const State& x, const Obs& y) const {
    return std::exp(-p_.r * t) * std::max(y(0) * (p_.c1 + x(0)) - p_.c2, 0.0);
  }

 private:
  LinearGaussianParams p_;
};

struct SteinSteinParams {
  double kappa = 1.0;
  double sigma_bar = 0.15;
  double alpha = 0.1;
  double rho = 0.0;
  double r = 0.05;
  double strike = 100.0;

  void validate() const;
};

// Stochastic volatility X, log-price Y:
// dX = kappa (sigma_bar - X) dt + alpha dB,  dY = (r - X^2/2) dt + X dU.
class SteinSteinModel : public ModelShape<1, 1, 1> {
 public:
  explicit SteinSteinModel(const SteinSteinParams& p);

  const SteinSteinParams& params() const { return p_; }

  State drift(const State& x) const { return State(p_.kappa * (p_.sigma_bar - x(0))); }
  ObsLoading obs_loading(const State&) const { return ObsLoading(p_.rho * p_.alpha); }
  NoiseLoading noise_loading(const State&) const {
    return NoiseLoading(std::sqrt(1.0 - p_.rho * p_.rho) * p_.alpha);
  }
  Obs obs_drift(const State& x) const { return Obs(p_.r - 0.5 * x(0) * x(0)); }
  ObsVol obs_vol(const State& x) const { return ObsVol(x(0)); }
  bool obs_vol_is_constant() const { return false; }
  double discount_rate() const { return p_.r; }
  double payoff(double t, const State&, const Obs& y) const {
    return std::exp(-p_.r * t) * std::max(p_.strike - std::exp(y(0)), 0.0);
  }

 private:
  SteinSteinParams p_;
};

// Model assembled from callables, for tests and ad hoc experiments.
template <int D, int DY, int DW>
class FunctionModel : public ModelShape<D, DY, DW> {
 public:
  using Shape = ModelShape<D, DY, DW>;
  using typename Shape::Noise;
  using typename Shape::NoiseLoading;
  using typename Shape::Obs;
  using typename Shape::ObsLoading;
  using typename Shape::ObsVol;
  using typename Shape::State;

  std::function<State(const State&)> b;
  std::function<ObsLoading(const State&)> alpha;
  std::function<NoiseLoading(const State&)> sigma;
  std::function<Obs(const State&)> h;
  std::function<ObsVol(const State&)> vol = [](const State&) -> ObsVol { return ObsVol::Identity(); };
  bool constant_vol = true;
  double rate = 0.0;
  std::function<double(double, const State&, const Obs&)> g =
      [](double, const State&, const Obs&) { return 0.0; };

  State drift(const State& x) const { return b(x); }
  ObsLoading obs_loading(const State& x) const { return alpha(x); }
  NoiseLoading noise_loading(const State& x) const { return sigma(x); }
  Obs obs_drift(const State& x) const { return h(x); }
  ObsVol obs_vol(const State& x) const { return vol(x); }
  bool obs_vol_is_constant() const { return constant_vol; }
  double discount_rate() const { return rate; }
  double payoff(double t, const State& x, const Obs& y) const { return g(t, x, y); }
};

// Observation drift in units of the observation noise.
template <DiffusionModel M>
typename M::Obs normalized_obs_drift(const M& model, const typename M::State& x) {
  if constexpr (M::kObsDim == 1) {
    return typename M::Obs(model.obs_drift(x)(0) / model.obs_vol(x)(0, 0));
  } else {
    return model.obs_vol(x).partialPivLu().solve(model.obs_drift(x));
  }
}

template <DiffusionModel M>
typename M::State euler_step(const M& model, const typename M::State& x, DriftMode mode,
                             const typename M::Obs& dy, const typename M::Noise& dw, double h_step) {
  if (h_step < 0.0) throw std::invalid_argument("euler_step: negative time increment");
  if (h_step == 0.0) return x;
  const typename M::ObsLoading a = model.obs_loading(x);
  typename M::State drift = model.drift(x);
  if (mode == DriftMode::kReference) drift -= a * normalized_obs_drift(model, x);
  typename M::State out = x + drift * h_step + a * dy + model.noise_loading(x) * dw;
  if (!out.allFinite()) throw ModelError("euler_step: non-finite state; check model coefficients");
  return out;
}

struct SimGrid {
  double horizon = 1.0;
  double exercise_step = 0.05;
  double obs_step = 0.01;
  int substeps = 1;

  // Default substeps keep the Euler step at or below 0.01.
  static SimGrid make(double horizon, double exercise_step, double obs_step);

  void validate() const;
  int exercise_dates() const;    // M = T / dt
  int obs_per_exercise() const;  // dt / delta
  int obs_steps() const;         // T / delta
  double substep() const { return obs_step / substeps; }
  int fine_steps() const { return obs_steps() * substeps; }
};

struct PathSample {
  std::vector<double> times;
  Eigen::MatrixXd y;                 // d_Y x K
  std::optional<Eigen::MatrixXd> x;  // d x K, physical-measure paths only
};

// Scalar initial law xi_0 for the state.
class InitialLaw {
 public:
  enum class Kind { kGaussian, kUniform, kTwoPoint, kDirac };

  static InitialLaw gaussian(double mean, double sd);
  static InitialLaw uniform(double lo, double hi);
  static InitialLaw two_point(double a, double b, double prob_a = 0.5);
  static InitialLaw dirac(double x);

  Kind kind() const { return kind_; }
  double sample(RandomStream& rng) const;
  double mean() const;
  double variance() const;
  double kurtosis() const;
  std::string describe() const;

 private:
  InitialLaw(Kind k, double p1, double p2, double p3) : kind_(k), p1_(p1), p2_(p2), p3_(p3) {}
  Kind kind_;
  double p1_;
  double p2_;
  double p3_;
};

// One Brownian observation path under the reference measure, sampled at every
// fine Euler step. Increments are scaled by `scale` (the raw observation noise).
PathSample simulate_observation_path(const SimGrid& grid, const Eigen::VectorXd& y0, double scale,
                                     std::uint64_t seed, std::uint32_t path_index);

std::vector<PathSample> simulate_observation_paths(const SimGrid& grid, const Eigen::VectorXd& y0,
                                                   std::size_t n_paths, std::uint64_t seed,
                                                   double scale = 1.0);

// One physical-measure path of (X, Y) sampled at every fine Euler step.
template <DiffusionModel M, class Sampler>
PathSample simulate_joint_path(const M& model, const SimGrid& grid, const Sampler& x0_sampler,
                               const typename M::Obs& y0, std::uint64_t seed, std::uint32_t path_index) {
  grid.validate();
  using State = typename M::State;
  using Obs = typename M::Obs;
  using Noise = typename M::Noise;
  RandomStream init_rng(seed, path_index, StreamPurpose::kJointInitial);
  RandomStream rng(seed, path_index, StreamPurpose::kJointPath);
  const int steps = grid.fine_steps();
  const double h = grid.substep();
  const double sqrt_h = std::sqrt(h);

  PathSample out;
  out.times.resize(steps + 1);
  out.y.resize(M::kObsDim, steps + 1);
  out.x = Eigen::MatrixXd(M::kStateDim, steps + 1);
  State x = x0_sampler(init_rng);
  Obs y = y0;
  out.times[0] = 0.0;
  out.y.col(0) = y;
  out.x->col(0) = x;
  Obs du;
  Noise dw;
  for (int k = 1; k <= steps; ++k) {
    for (int i = 0; i < M::kObsDim; ++i) du(i) = sqrt_h * rng.normal();
    for (int i = 0; i < M::kNoiseDim; ++i) dw(i) = sqrt_h * rng.normal();
    const Obs dy = model.obs_drift(x) * h + model.obs_vol(x) * du;
    x = euler_step(model, x, DriftMode::kPhysical, du, dw, h);
    y += dy;
    out.times[k] = grid.horizon * static_cast<double>(k) / steps;
    out.y.col(k) = y;
    out.x->col(k) = x;
  }
  return out;
}

template <DiffusionModel M, class Sampler>
std::vector<PathSample> simulate_joint_paths(const M& model, const SimGrid& grid, const Sampler& x0_sampler,
                                             const typename M::Obs& y0, std::size_t n_paths,
                                             std::uint64_t seed) {
  std::vector<PathSample> paths(n_paths);
  for (std::size_t k = 0; k < n_paths; ++k) {
    paths[k] = simulate_joint_path(model, grid, x0_sampler, y0, seed, static_cast<std::uint32_t>(k));
  }
  return paths;
}

// Scalar-state sampler adapter for InitialLaw.
template <class State>
auto law_sampler(const InitialLaw& law) {
  return [law](RandomStream& rng) { return State::Constant(law.sample(rng)); };
}

}  // namespace postop
