#pragma once

#include <cstdint>
#include <vector>

#include "postop/model.hpp"

namespace postop {

struct KalmanState {
  double m = 0.0;
  double P = 0.0;
  double t = 0.0;
};

// Deterministic conditional variance on a uniform time grid, linearly
// interpolated between nodes.
struct RiccatiSolution {
  std::vector<double> t;
  std::vector<double> P;

  double at(double time) const;
  double horizon() const { return t.back(); }
};

// Right-hand side of the variance equation.
double riccati_rhs(const LinearGaussianParams& p, double P);

// Positive root of the stationarity equation riccati_rhs(P) = 0.
double steady_state_variance(const LinearGaussianParams& p);

RiccatiSolution riccati_solve(const LinearGaussianParams& p, double P0, double horizon, double step);
RiccatiSolution riccati_solve(const LinearGaussianParams& p, double P0, const SimGrid& grid);

// Filter gain rho sigma_x + P / sigma_y.
inline double kalman_gain(const LinearGaussianParams& p, double P) { return p.rho * p.sigma_x + P / p.sigma_y; }

// Euler update of the conditional mean driven by the innovation of dy.
KalmanState kalman_step(const KalmanState& s, const LinearGaussianParams& p, double dy, const RiccatiSolution& riccati,
                        double h_step);

// E[(y (c1 + X) - c2)_+] for X ~ N(m, P); undiscounted.
double conditional_payoff(double m, double P, double y, const LinearGaussianParams& p);

// Paths of (m_t, Y_t) under P driven by the innovation Brownian motion.
// PathSample::x holds m_t.
PathSample simulate_filter_path(const LinearGaussianParams& p, double m0, const RiccatiSolution& riccati, double y0,
                                const SimGrid& grid, std::uint64_t seed, std::uint32_t path_index);

std::vector<PathSample> simulate_filter_paths(const LinearGaussianParams& p, double m0, double P0, double y0,
                                              const SimGrid& grid, std::size_t n_paths, std::uint64_t seed);

}  // namespace postop
