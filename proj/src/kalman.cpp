#include "postop/kalman.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace postop {

double RiccatiSolution::at(double time) const {
  if (t.size() == 1 || time <= t.front()) return P.front();
  if (time >= t.back()) return P.back();
  const double step = (t.back() - t.front()) / static_cast<double>(t.size() - 1);
  const double pos = (time - t.front()) / step;
  const auto i = std::min(static_cast<std::size_t>(pos), t.size() - 2);
  const double w = pos - static_cast<double>(i);
  return (1.0 - w) * P[i] + w * P[i + 1];
}

double riccati_rhs(const LinearGaussianParams& p, double P) {
  const double g = kalman_gain(p, P);
  return -2.0 * p.kappa * P + p.sigma_x * p.sigma_x - g * g;
}

double steady_state_variance(const LinearGaussianParams& p) {
  // P^2 / sy^2 + (2 kappa + 2 rho sx / sy) P - sx^2 (1 - rho^2) = 0
  const double qa = 1.0 / (p.sigma_y * p.sigma_y);
  const double qb = 2.0 * p.kappa + 2.0 * p.rho * p.sigma_x / p.sigma_y;
  const double qc = -p.sigma_x * p.sigma_x * (1.0 - p.rho * p.rho);
  const double disc = std::sqrt(qb * qb - 4.0 * qa * qc);
  // Stable form of the larger root.
  return qb >= 0.0 ? (2.0 * -qc) / (qb + disc) : (-qb + disc) / (2.0 * qa);
}

RiccatiSolution riccati_solve(const LinearGaussianParams& p, double P0, double horizon, double step) {
  if (!(P0 >= 0.0)) throw std::invalid_argument("riccati_solve: P0 must be nonnegative");
  if (!(horizon > 0.0) || !(step > 0.0)) throw std::invalid_argument("riccati_solve: bad time grid");
  const auto n = static_cast<std::size_t>(std::ceil(horizon / step - 1e-9));
  const double h = horizon / static_cast<double>(n);
  RiccatiSolution sol;
  sol.t.resize(n + 1);
  sol.P.resize(n + 1);
  sol.t[0] = 0.0;
  sol.P[0] = P0;
  double P = P0;
  for (std::size_t i = 1; i <= n; ++i) {
    const double k1 = riccati_rhs(p, P);
    const double k2 = riccati_rhs(p, P + 0.5 * h * k1);
    const double k3 = riccati_rhs(p, P + 0.5 * h * k2);
    const double k4 = riccati_rhs(p, P + h * k3);
    P = std::max(0.0, P + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    sol.t[i] = horizon * static_cast<double>(i) / static_cast<double>(n);
    sol.P[i] = P;
  }
  return sol;
}

RiccatiSolution riccati_solve(const LinearGaussianParams& p, double P0, const SimGrid& grid) {
  return riccati_solve(p, P0, grid.horizon, grid.substep());
}

KalmanState kalman_step(const KalmanState& s, const LinearGaussianParams& p, double dy, const RiccatiSolution& riccati,
                        double h_step) {
  const double innovation = (dy - (s.m - p.a) * h_step) / p.sigma_y;
  KalmanState out;
  out.m = s.m - p.kappa * s.m * h_step + kalman_gain(p, riccati.at(s.t)) * innovation;
  out.t = s.t + h_step;
  out.P = riccati.at(out.t);
  return out;
}

double conditional_payoff(double m, double P, double y, const LinearGaussianParams& p) {
  if (!(y > 0.0)) throw std::domain_error("conditional_payoff: y must be positive");
  if (P < 0.0) throw std::domain_error("conditional_payoff: negative variance");
  const double intrinsic = (p.c1 + m) * y - p.c2;
  if (P == 0.0) return std::max(intrinsic, 0.0);
  const double s = y * std::sqrt(P);
  const double xs = -intrinsic / s;
  const double pdf = std::exp(-0.5 * xs * xs) / std::sqrt(2.0 * std::numbers::pi);
  const double tail = 0.5 * std::erfc(xs / std::numbers::sqrt2);
  return s * pdf + intrinsic * tail;
}

PathSample simulate_filter_path(const LinearGaussianParams& p, double m0, const RiccatiSolution& riccati, double y0,
                                const SimGrid& grid, std::uint64_t seed, std::uint32_t path_index) {
  const int steps = grid.fine_steps();
  const double h = grid.substep();
  const double sqrt_h = std::sqrt(h);
  RandomStream rng(seed, path_index, StreamPurpose::kFilterPath);
  PathSample out;
  out.times.resize(steps + 1);
  out.y.resize(1, steps + 1);
  out.x = Eigen::MatrixXd(1, steps + 1);
  double m = m0;
  double y = y0;
  out.times[0] = 0.0;
  out.y(0, 0) = y;
  (*out.x)(0, 0) = m;
  for (int k = 1; k <= steps; ++k) {
    const double t = grid.horizon * static_cast<double>(k - 1) / steps;
    const double dw = sqrt_h * rng.normal();
    const double m_next = m - p.kappa * m * h + kalman_gain(p, riccati.at(t)) * dw;
    y += (m - p.a) * h + p.sigma_y * dw;
    m = m_next;
    out.times[k] = grid.horizon * static_cast<double>(k) / steps;
    out.y(0, k) = y;
    (*out.x)(0, k) = m;
  }
  return out;
}

std::vector<PathSample> simulate_filter_paths(const LinearGaussianParams& p, double m0, double P0, double y0,
                                              const SimGrid& grid, std::size_t n_paths, std::uint64_t seed) {
  grid.validate();
  const RiccatiSolution riccati = riccati_solve(p, P0, grid);
  std::vector<PathSample> paths(n_paths);
  for (std::size_t k = 0; k < n_paths; ++k) {
    paths[k] = simulate_filter_path(p, m0, riccati, y0, grid, seed, static_cast<std::uint32_t>(k));
  }
  return paths;
}

}  // namespace postop
