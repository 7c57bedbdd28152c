#pragma once

#include <cmath>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "postop/model.hpp"
#include "postop/random.hpp"

namespace postop {

class FilterCollapse : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Weighted particle approximation. Weights are kept in log space; the
// unnormalized measure is exp(log_normalizer) (1/n) sum_j a_j delta_{v_j}.
template <class State>
struct ParticleCloud {
  std::vector<State> locations;
  std::vector<double> log_weights;
  double log_normalizer = 0.0;

  std::size_t size() const { return locations.size(); }
};

struct BranchingOutcome {
  std::vector<int> offspring;
  std::vector<int> parent_map;
};

// Kernel phi for candidate-observation weights, evaluated in log space.
struct KernelSpec {
  std::function<double(double)> log_density;
  double bandwidth_exponent = 1.0 / 3.0;

  static KernelSpec gaussian();
  // Wraps a tabulated/user density; rejects negative values or mass away from 1.
  static KernelSpec from_density(std::function<double(double)> density, double lo = -50.0,
                                 double hi = 50.0);
};

double log_sum_exp(std::span<const double> v);

// Normalized weights computed stably from log weights; optionally reports
// log(sum_j exp(log_weights_j)).
std::vector<double> normalize_log_weights(std::span<const double> log_weights, double* log_total = nullptr);

// Minimal-variance offspring counts for normalized weights w (sum 1) and a
// single uniform shift u in [0, 1).
BranchingOutcome systematic_offspring(std::span<const double> weights, int n, double u);

struct FilterTraceRow {
  double t = 0.0;
  double mean = 0.0;
  double second_moment = 0.0;
  double ess = 0.0;
};

void write_filter_trace_csv(std::ostream& os, const std::vector<FilterTraceRow>& rows);

template <class State, class Sampler>
ParticleCloud<State> init_cloud(int n, const Sampler& x0_sampler, RandomStream& rng) {
  if (n < 2) throw std::invalid_argument("init_cloud: need at least 2 particles");
  ParticleCloud<State> cloud;
  cloud.locations.reserve(n);
  for (int j = 0; j < n; ++j) cloud.locations.push_back(x0_sampler(rng));
  cloud.log_weights.assign(n, 0.0);
  return cloud;
}

// Discrete-observation likelihood over one interval, h taken at the current
// (interval-start) locations. dy is the raw observed increment.
template <DiffusionModel M>
void update_weights_discrete(ParticleCloud<typename M::State>& cloud, const M& model,
                             const typename M::Obs& dy, double delta) {
  if (!model.obs_vol_is_constant()) {
    throw std::invalid_argument("update_weights_discrete: observation noise must be state independent");
  }
  const std::size_t n = cloud.size();
  for (std::size_t j = 0; j < n; ++j) {
    const auto& v = cloud.locations[j];
    const typename M::Obs ht = normalized_obs_drift(model, v);
    typename M::Obs dyt;
    if constexpr (M::kObsDim == 1) {
      dyt(0) = dy(0) / model.obs_vol(v)(0, 0);
    } else {
      dyt = model.obs_vol(v).partialPivLu().solve(dy);
    }
    cloud.log_weights[j] += ht.dot(dyt) - 0.5 * ht.squaredNorm() * delta;
  }
}

// Mutation under the reference measure: every particle sees the observed raw
// increments (one per Euler substep) plus private independent noise.
template <DiffusionModel M>
void propagate_reference(ParticleCloud<typename M::State>& cloud, const M& model,
                         std::span<const typename M::Obs> dy_substeps, double h_step, RandomStream& rng) {
  using Obs = typename M::Obs;
  using Noise = typename M::Noise;
  if (!model.obs_vol_is_constant()) {
    throw std::invalid_argument("propagate_reference: observation noise must be state independent");
  }
  const double sqrt_h = std::sqrt(h_step);
  std::vector<Obs> dyt(dy_substeps.size());
  for (std::size_t s = 0; s < dy_substeps.size(); ++s) {
    const auto& v0 = cloud.locations.front();
    if constexpr (M::kObsDim == 1) {
      dyt[s](0) = dy_substeps[s](0) / model.obs_vol(v0)(0, 0);
    } else {
      dyt[s] = model.obs_vol(v0).partialPivLu().solve(dy_substeps[s]);
    }
  }
  Noise dw;
  for (std::size_t j = 0; j < cloud.size(); ++j) {
    auto x = cloud.locations[j];
    try {
      for (std::size_t s = 0; s < dyt.size(); ++s) {
        for (int i = 0; i < M::kNoiseDim; ++i) dw(i) = sqrt_h * rng.normal();
        x = euler_step(model, x, DriftMode::kReference, dyt[s], dw, h_step);
      }
    } catch (const ModelError& e) {
      throw ModelError(std::string(e.what()) + " (particle " + std::to_string(j) + ")");
    }
    cloud.locations[j] = x;
  }
}

// Mutation under the physical measure with a private candidate observation per
// particle, started at y_start. Returns the candidates at the interval end.
template <DiffusionModel M>
std::vector<typename M::Obs> propagate_candidate(ParticleCloud<typename M::State>& cloud, const M& model,
                                                 const typename M::Obs& y_start, int substeps, double h_step,
                                                 RandomStream& rng) {
  using Obs = typename M::Obs;
  using Noise = typename M::Noise;
  const double sqrt_h = std::sqrt(h_step);
  std::vector<Obs> candidates(cloud.size());
  Obs du;
  Noise dw;
  for (std::size_t j = 0; j < cloud.size(); ++j) {
    auto x = cloud.locations[j];
    Obs y = y_start;
    try {
      for (int s = 0; s < substeps; ++s) {
        for (int i = 0; i < M::kObsDim; ++i) du(i) = sqrt_h * rng.normal();
        for (int i = 0; i < M::kNoiseDim; ++i) dw(i) = sqrt_h * rng.normal();
        y += model.obs_drift(x) * h_step + model.obs_vol(x) * du;
        x = euler_step(model, x, DriftMode::kPhysical, du, dw, h_step);
      }
    } catch (const ModelError& e) {
      throw ModelError(std::string(e.what()) + " (particle " + std::to_string(j) + ")");
    }
    if (!y.allFinite()) {
      throw ModelError("propagate_candidate: non-finite candidate observation (particle " + std::to_string(j) + ")");
    }
    cloud.locations[j] = x;
    candidates[j] = y;
  }
  return candidates;
}

// Multiplies each weight by n^{1/3} phi(n^{1/3} (Y_j - y_obs)) (per component).
template <class State, class Obs>
void update_weights_candidate(ParticleCloud<State>& cloud, std::span<const Obs> candidates, const Obs& y_obs,
                              const KernelSpec& kernel) {
  if (candidates.size() != cloud.size()) {
    throw std::invalid_argument("update_weights_candidate: candidate count does not match cloud");
  }
  const double n = static_cast<double>(cloud.size());
  const double scale = std::pow(n, kernel.bandwidth_exponent);
  const double log_scale = std::log(scale);
  double best = -INFINITY;
  for (std::size_t j = 0; j < cloud.size(); ++j) {
    double lw = 0.0;
    for (Eigen::Index i = 0; i < y_obs.size(); ++i) {
      lw += log_scale + kernel.log_density(scale * (candidates[j](i) - y_obs(i)));
    }
    cloud.log_weights[j] += lw;
    best = std::max(best, cloud.log_weights[j]);
  }
  // exp of the largest weight underflows: nothing left to normalize.
  if (!(best > -708.0)) {
    throw FilterCollapse("filter collapse: every candidate observation is far from the data; "
                         "increase the particle count or the kernel bandwidth");
  }
}

// Minimal-variance branching; resets weights to 1 and accumulates the
// normalizer log((1/n) sum a_j).
template <class State>
BranchingOutcome branch(ParticleCloud<State>& cloud, RandomStream& rng) {
  const int n = static_cast<int>(cloud.size());
  double lse = 0.0;
  std::vector<double> w = normalize_log_weights(cloud.log_weights, &lse);
  if (!std::isfinite(lse)) throw FilterCollapse("branch: weights are not finite");
  BranchingOutcome out = systematic_offspring(w, n, rng.uniform());
  thread_local std::vector<State> next;
  next.resize(n);
  for (int slot = 0; slot < n; ++slot) next[slot] = cloud.locations[out.parent_map[slot]];
  cloud.locations.swap(next);
  cloud.log_normalizer += lse - std::log(static_cast<double>(n));
  std::fill(cloud.log_weights.begin(), cloud.log_weights.end(), 0.0);
  return out;
}

// Normalized weights and the total mass rho_t 1, computed once and reused for
// several test functions.
template <class State>
struct CloudMoments {
  const ParticleCloud<State>* cloud = nullptr;
  std::vector<double> weights;
  double rho_one = 0.0;

  explicit CloudMoments(const ParticleCloud<State>& c) : cloud(&c) {
    double lse = 0.0;
    weights = normalize_log_weights(c.log_weights, &lse);
    const double n = static_cast<double>(c.size());
    rho_one = std::exp(c.log_normalizer + lse - std::log(n));
  }

  template <class F>
  double pi(const F& f) const {
    double acc = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) acc += weights[j] * f(cloud->locations[j]);
    return acc;
  }

  template <class F>
  double rho(const F& f) const {
    return rho_one * pi(f);
  }
};

template <class State, class F>
double estimate_pi(const ParticleCloud<State>& cloud, const F& f) {
  return CloudMoments<State>(cloud).pi(f);
}

template <class State, class F>
double estimate_rho(const ParticleCloud<State>& cloud, const F& f) {
  return CloudMoments<State>(cloud).rho(f);
}

template <class State>
double effective_sample_size(const ParticleCloud<State>& cloud) {
  const auto w = normalize_log_weights(cloud.log_weights);
  double s2 = 0.0;
  for (double x : w) s2 += x * x;
  return 1.0 / s2;
}

// Infeasible particles get a log weight far enough below the best feasible one
// that their normalized weight is exactly zero in double precision.
template <class State, class Pred>
void apply_state_constraints(ParticleCloud<State>& cloud, const Pred& feasible) {
  double best = -INFINITY;
  std::vector<char> ok(cloud.size());
  for (std::size_t j = 0; j < cloud.size(); ++j) {
    ok[j] = feasible(cloud.locations[j]) ? 1 : 0;
    if (ok[j]) best = std::max(best, cloud.log_weights[j]);
  }
  if (best == -INFINITY) throw FilterCollapse("state constraints: no feasible particle left");
  const double floor = best - 1000.0;
  for (std::size_t j = 0; j < cloud.size(); ++j) {
    if (!ok[j]) cloud.log_weights[j] = floor;
  }
}

template <class State>
FilterTraceRow trace_row(const ParticleCloud<State>& cloud, double t) {
  const CloudMoments<State> mom(cloud);
  FilterTraceRow row;
  row.t = t;
  row.mean = mom.pi([](const State& v) { return v(0); });
  row.second_moment = mom.pi([](const State& v) { return v(0) * v(0); });
  double s2 = 0.0;
  for (double x : mom.weights) s2 += x * x;
  row.ess = 1.0 / s2;
  return row;
}

}  // namespace postop
