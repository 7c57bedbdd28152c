#pragma once

#include <exception>
#include <memory>
#include <mutex>

#include "postop/kalman.hpp"
#include "postop/model.hpp"
#include "postop/pfilter.hpp"
#include "postop/rmc.hpp"

namespace postop {

template <DiffusionModel M>
using CloudBasis = BasisSet<CloudMoments<typename M::State>, typename M::Obs>;

using KalmanBasis = BasisSet<KalmanState, Eigen::Matrix<double, 1, 1>>;

// {1, y, y^2, rho_t x, rho_t g, rho_t EUR}
CloudBasis<LinearGaussianModel> linear_cloud_basis(const LinearGaussianModel& model,
                                                   std::shared_ptr<const EuropeanTable> european);

// {1, y, y^2, (K - e^y)_+, pi_t x, pi_t x^2}
CloudBasis<SteinSteinModel> stein_stein_basis(const SteinSteinModel& model);

// {1, y, y^2, m, G(m,P,y), EUR(m,P,y)} on exact Kalman states.
KalmanBasis kalman_basis(const LinearGaussianParams& p, std::shared_ptr<const LinearEuropean> european);

// European table covering the region visited by filter particles.
std::shared_ptr<const EuropeanTable> make_linear_european_table(const LinearGaussianParams& p, const SimGrid& grid,
                                                                double y0);

namespace detail {

// Runs body(k) for every path; the first exception is rethrown after the loop.
template <class Body>
void for_each_path(std::size_t n_paths, const Body& body) {
  std::exception_ptr failure;
  std::mutex mu;
  const auto n = static_cast<long>(n_paths);
#pragma omp parallel for schedule(dynamic, 8)
  for (long k = 0; k < n; ++k) {
    try {
      body(static_cast<std::uint32_t>(k));
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu);
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
}

// e^{-r t_d} per exercise date; payoff(t, .) = e^{-rt} payoff(0, .) by contract.
inline std::vector<double> discount_factors(double rate, const SimGrid& grid) {
  std::vector<double> out(grid.exercise_dates() + 1);
  for (std::size_t d = 0; d < out.size(); ++d) out[d] = std::exp(-rate * static_cast<double>(d) * grid.exercise_step);
  return out;
}

inline StoppingData allocate_data(const SimGrid& grid, std::size_t n_paths, const std::vector<std::string>& names) {
  StoppingData data;
  const int m = grid.exercise_dates();
  const auto n = static_cast<Eigen::Index>(n_paths);
  data.exercise_step = grid.exercise_step;
  data.dates = m;
  data.basis_names = names;
  data.payoff.resize(n, m + 1);
  data.features.resize(m + 1);
  for (int d = 1; d < m; ++d) data.features[d].resize(n, static_cast<Eigen::Index>(names.size()));
  data.filter_mean.resize(n, m + 1);
  data.observation.resize(n, m + 1);
  return data;
}

}  // namespace detail

// Forward pass under the reference measure: observation paths are Brownian,
// the filter is the discrete-observation particle filter, rewards are rho_t g.
template <DiffusionModel M, class Sampler>
StoppingData reference_forward_pass(const M& model, const SimGrid& grid, const Sampler& x0_sampler,
                                    const typename M::Obs& y0, std::size_t n_paths, int n_particles,
                                    const CloudBasis<M>& basis, std::uint64_t seed) {
  using State = typename M::State;
  using Obs = typename M::Obs;
  grid.validate();
  if (!model.obs_vol_is_constant()) {
    throw std::invalid_argument("reference forward pass needs state-independent observation noise");
  }
  StoppingData data = detail::allocate_data(grid, n_paths, basis.names());
  const int sub = grid.substeps;
  const int per_ex = grid.obs_per_exercise();
  const int obs_steps = grid.obs_steps();
  const int m = grid.exercise_dates();
  const double h = grid.substep();
  const std::vector<double> disc = detail::discount_factors(model.discount_rate(), grid);
  const typename M::ObsVol vol = model.obs_vol(State::Zero());

  detail::for_each_path(n_paths, [&](std::uint32_t k) {
    const PathSample bm = simulate_observation_path(grid, Eigen::VectorXd::Zero(M::kObsDim), 1.0, seed, k);
    auto y_at = [&](int fine) -> Obs { return y0 + vol * Obs(bm.y.col(fine)); };
    RandomStream init_rng(seed, k, StreamPurpose::kInitialState);
    RandomStream noise_rng(seed, k, StreamPurpose::kParticleNoise);
    RandomStream branch_rng(seed, k, StreamPurpose::kBranching);
    ParticleCloud<State> cloud = init_cloud<State>(n_particles, x0_sampler, init_rng);
    {
      const CloudMoments<State> mom(cloud);
      data.payoff(k, 0) = mom.rho([&](const State& v) { return model.payoff(0.0, v, y0); });
      data.filter_mean(k, 0) = mom.pi([](const State& v) { return v(0); });
      data.observation(k, 0) = y0(0);
    }
    std::vector<Obs> increments(sub);
    for (int i = 1; i <= obs_steps; ++i) {
      const int f0 = (i - 1) * sub;
      for (int s = 0; s < sub; ++s) increments[s] = y_at(f0 + s + 1) - y_at(f0 + s);
      update_weights_discrete(cloud, model, Obs(y_at(f0 + sub) - y_at(f0)), grid.obs_step);
      propagate_reference(cloud, model, std::span<const Obs>(increments), h, noise_rng);
      if (i % per_ex == 0) {
        const int d = i / per_ex;
        const double t = d * grid.exercise_step;
        const Obs y = y_at(i * sub);
        const CloudMoments<State> mom(cloud);
        data.payoff(k, d) = disc[d] * mom.rho([&](const State& v) { return model.payoff(0.0, v, y); });
        data.filter_mean(k, d) = mom.pi([](const State& v) { return v(0); });
        data.observation(k, d) = y(0);
        if (d < m) evaluate_basis_into(basis, t, mom, y, data.features[d].row(k), k);
      }
      branch(cloud, branch_rng);
    }
  });
  return data;
}

// Forward pass under the physical measure with candidate-observation weights:
// the observation path comes from a joint simulation of (X, Y).
template <DiffusionModel M, class Sampler>
StoppingData candidate_forward_pass(const M& model, const SimGrid& grid, const Sampler& x0_sampler,
                                    const typename M::Obs& y0, std::size_t n_paths, int n_particles,
                                    const CloudBasis<M>& basis, const KernelSpec& kernel, std::uint64_t seed) {
  using State = typename M::State;
  using Obs = typename M::Obs;
  grid.validate();
  StoppingData data = detail::allocate_data(grid, n_paths, basis.names());
  const int sub = grid.substeps;
  const int per_ex = grid.obs_per_exercise();
  const int obs_steps = grid.obs_steps();
  const int m = grid.exercise_dates();
  const double h = grid.substep();
  const std::vector<double> disc = detail::discount_factors(model.discount_rate(), grid);

  detail::for_each_path(n_paths, [&](std::uint32_t k) {
    const PathSample truth = simulate_joint_path(model, grid, x0_sampler, y0, seed, k);
    RandomStream init_rng(seed, k, StreamPurpose::kInitialState);
    RandomStream noise_rng(seed, k, StreamPurpose::kParticleNoise);
    RandomStream branch_rng(seed, k, StreamPurpose::kBranching);
    ParticleCloud<State> cloud = init_cloud<State>(n_particles, x0_sampler, init_rng);
    {
      const CloudMoments<State> mom(cloud);
      data.payoff(k, 0) = mom.pi([&](const State& v) { return model.payoff(0.0, v, y0); });
      data.filter_mean(k, 0) = mom.pi([](const State& v) { return v(0); });
      data.observation(k, 0) = y0(0);
    }
    for (int i = 1; i <= obs_steps; ++i) {
      const Obs y_prev = truth.y.col((i - 1) * sub);
      const Obs y_now = truth.y.col(i * sub);
      const std::vector<Obs> cand = propagate_candidate(cloud, model, y_prev, sub, h, noise_rng);
      update_weights_candidate(cloud, std::span<const Obs>(cand), y_now, kernel);
      if (i % per_ex == 0) {
        const int d = i / per_ex;
        const double t = d * grid.exercise_step;
        const CloudMoments<State> mom(cloud);
        data.payoff(k, d) = disc[d] * mom.pi([&](const State& v) { return model.payoff(0.0, v, y_now); });
        data.filter_mean(k, d) = mom.pi([](const State& v) { return v(0); });
        data.observation(k, d) = y_now(0);
        if (d < m) evaluate_basis_into(basis, t, mom, y_now, data.features[d].row(k), k);
      }
      branch(cloud, branch_rng);
    }
  });
  return data;
}

// Forward pass on exact Kalman states (m_t, P_t) of the linear model; rewards
// are the discounted closed-form conditional payoff.
StoppingData kalman_forward_pass(const LinearGaussianParams& p, double m0, double P0, double y0, const SimGrid& grid,
                                 std::size_t n_paths, const KalmanBasis& basis, std::uint64_t seed);

// Discounted terminal payoff averaged over joint physical-measure paths.
template <DiffusionModel M, class Sampler>
ValueEstimate european_monte_carlo(const M& model, const SimGrid& grid, const Sampler& x0_sampler,
                                   const typename M::Obs& y0, std::size_t n_paths, std::uint64_t seed) {
  grid.validate();
  Eigen::VectorXd payoff(static_cast<Eigen::Index>(n_paths));
  const int last = grid.fine_steps();
  detail::for_each_path(n_paths, [&](std::uint32_t k) {
    const PathSample path = simulate_joint_path(model, grid, x0_sampler, y0, seed, k);
    payoff(k) = model.payoff(grid.horizon, typename M::State(path.x->col(last)), typename M::Obs(path.y.col(last)));
  });
  ValueEstimate est;
  est.value = payoff.mean();
  est.mean_cashflow = est.value;
  const double var = (payoff.array() - est.value).square().sum() / std::max<double>(1.0, payoff.size() - 1.0);
  est.std_error = std::sqrt(var / static_cast<double>(n_paths));
  est.paths = n_paths;
  est.exercise_step = grid.horizon;
  est.obs_step = grid.obs_step;
  est.seed = seed;
  est.algorithm = "european";
  return est;
}

}  // namespace postop
