#include "postop/pde.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

namespace postop {
namespace {

struct Stencil {
  double um, up, vm, vp, cross, center;
  double cfl;  // dt-free
};

Stencil make_stencil(const PdeCoefficients::Row& c, double rate, double du, double dv) {
  Stencil s{};
  const double du2 = du * du;
  const double dv2 = dv * dv;
  // Central convection while it keeps the stencil monotone, upwind otherwise.
  if (std::abs(c.mu_u) * du <= 2.0 * c.a_uu) {
    s.um = c.a_uu / du2 - c.mu_u / (2 * du);
    s.up = c.a_uu / du2 + c.mu_u / (2 * du);
  } else {
    s.um = c.a_uu / du2 + std::max(-c.mu_u, 0.0) / du;
    s.up = c.a_uu / du2 + std::max(c.mu_u, 0.0) / du;
  }
  if (std::abs(c.mu_v) * dv <= 2.0 * c.a_vv) {
    s.vm = c.a_vv / dv2 - c.mu_v / (2 * dv);
    s.vp = c.a_vv / dv2 + c.mu_v / (2 * dv);
  } else {
    s.vm = c.a_vv / dv2 + std::max(-c.mu_v, 0.0) / dv;
    s.vp = c.a_vv / dv2 + std::max(c.mu_v, 0.0) / dv;
  }
  s.cross = c.b_uv / (4 * du * dv);
  s.center = -(s.um + s.up + s.vm + s.vp) - rate;
  s.cfl = s.um + s.up + s.vm + s.vp + std::abs(c.b_uv) / (du * dv);
  return s;
}

double max_cfl_rate(const PdeCoefficients& coeff, const Grid2D& grid, int steps) {
  const double dt = grid.horizon / steps;
  double worst = 0.0;
  // Coefficients are evaluated at the upper end of each step.
  for (int n = 1; n <= steps; ++n) {
    const double t = n * dt;
    for (int i = 1; i + 1 < grid.u_nodes; ++i) {
      worst = std::max(worst, make_stencil(coeff.at(t, grid.u(i)), coeff.rate, grid.du(), grid.dv()).cfl);
    }
  }
  return worst;
}

template <class Mat>
void extrapolate_boundaries(Mat& v) {
  const Eigen::Index nu = v.rows();
  const Eigen::Index nv = v.cols();
  v.row(0) = 2.0 * v.row(1) - v.row(2);
  v.row(nu - 1) = 2.0 * v.row(nu - 2) - v.row(nu - 3);
  v.col(0) = 2.0 * v.col(1) - v.col(2);
  v.col(nv - 1) = 2.0 * v.col(nv - 2) - v.col(nv - 3);
}

}  // namespace

void Grid2D::validate() const {
  if (u_nodes < 3 || v_nodes < 3) throw std::invalid_argument("grid: need at least 3 nodes per axis");
  if (!(u_hi > u_lo) || !(v_hi > v_lo)) throw std::invalid_argument("grid: empty axis range");
  if (!(horizon > 0.0)) throw std::invalid_argument("grid: horizon must be positive");
  if (exercise_dates < 1 || time_steps < 1 || time_steps % exercise_dates != 0) {
    throw std::invalid_argument("grid: time steps must be a positive multiple of the exercise date count");
  }
}

int stable_time_steps(const PdeCoefficients& coeff, const Grid2D& grid) {
  // The CFL rate varies slowly in t; scan a fine time grid, then confirm.
  const double rate = max_cfl_rate(coeff, grid, 1000);
  int steps = static_cast<int>(std::ceil(rate * grid.horizon * 1.0000001));
  steps = std::max(steps, grid.exercise_dates);
  steps = ((steps + grid.exercise_dates - 1) / grid.exercise_dates) * grid.exercise_dates;
  while (grid.horizon / steps * max_cfl_rate(coeff, grid, steps) > 1.0) steps += grid.exercise_dates;
  return steps;
}

SolverResult solve_bermudan(const PdeCoefficients& coeff, const std::function<double(double, double, double)>& obstacle,
                            const Grid2D& requested, const SolverOptions& options) {
  requested.validate();
  Grid2D grid = requested;
  double cfl = grid.horizon / grid.time_steps * max_cfl_rate(coeff, grid, grid.time_steps);
  if (cfl > 1.0) {
    if (!options.auto_time_steps) {
      throw CflViolation("explicit scheme unstable: CFL ratio " + std::to_string(cfl) + " with " +
                         std::to_string(grid.time_steps) + " steps");
    }
    grid.time_steps = stable_time_steps(coeff, grid);
    cfl = grid.horizon / grid.time_steps * max_cfl_rate(coeff, grid, grid.time_steps);
  }
  const int nu = grid.u_nodes;
  const int nv = grid.v_nodes;
  const double du = grid.du();
  const double dv = grid.dv();
  const double dt = grid.horizon / grid.time_steps;
  const int per_ex = grid.time_steps / grid.exercise_dates;

  auto obstacle_at = [&](double t) {
    Eigen::MatrixXd g(nu, nv);
    for (int i = 0; i < nu; ++i) {
      for (int j = 0; j < nv; ++j) g(i, j) = obstacle(t, grid.u(i), grid.v(j));
    }
    return g;
  };

  SolverResult res;
  res.grid = grid;
  res.time_steps = grid.time_steps;
  res.max_cfl = cfl;
  res.surfaces.resize(grid.exercise_dates + 1);
  res.exercise.resize(grid.exercise_dates + 1);

  // Row-major storage with v contiguous: value(i, j) at i * nv + j.
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMat cur = obstacle_at(grid.horizon);
  res.surfaces.back() = cur;
  res.exercise.back().setConstant(nu, nv, true);
  RowMat next(nu, nv);
  std::vector<Stencil> stencils(nu);

  for (int n = grid.time_steps - 1; n >= 0; --n) {
    const double t_upper = (n + 1) * dt;
    for (int i = 1; i + 1 < nu; ++i) stencils[i] = make_stencil(coeff.at(t_upper, grid.u(i)), coeff.rate, du, dv);
#pragma omp parallel for schedule(static)
    for (int i = 1; i < nu - 1; ++i) {
      const Stencil& s = stencils[i];
      const double* vm = cur.data() + static_cast<std::size_t>(i - 1) * nv;
      const double* v0 = cur.data() + static_cast<std::size_t>(i) * nv;
      const double* vp = cur.data() + static_cast<std::size_t>(i + 1) * nv;
      double* out = next.data() + static_cast<std::size_t>(i) * nv;
      for (int j = 1; j < nv - 1; ++j) {
        const double lv = s.um * vm[j] + s.up * vp[j] + s.vm * v0[j - 1] + s.vp * v0[j + 1] +
                          s.cross * (vp[j + 1] - vp[j - 1] - vm[j + 1] + vm[j - 1]) + s.center * v0[j];
        out[j] = v0[j] + dt * lv;
      }
    }
    extrapolate_boundaries(next);
    cur.swap(next);
    if (n % per_ex == 0) {
      const int date = n / per_ex;
      const double t = n * dt;
      Eigen::MatrixXd value = cur;
      if (options.bermudan || date == grid.exercise_dates) {
        const Eigen::MatrixXd g = obstacle_at(t);
        res.exercise[date] = (g.array() >= value.array());
        value = value.cwiseMax(g);
        cur = value;
      } else {
        res.exercise[date].setConstant(nu, nv, false);
      }
      if (!value.allFinite()) throw std::runtime_error("pde solver: non-finite value surface");
      res.surfaces[date] = value;
    }
  }
  return res;
}

Grid2D default_kalman_grid(double horizon, int exercise_dates) {
  Grid2D g;
  g.u_lo = -0.6;
  g.u_hi = 0.6;
  g.u_nodes = 401;
  g.v_hi = 4.0;
  g.v_nodes = 401;
  g.v_lo = g.v_hi / g.v_nodes;  // y > 0, uniform spacing
  g.horizon = horizon;
  g.time_steps = 8000;
  g.exercise_dates = exercise_dates;
  return g;
}

SolverResult solve_bermudan_kalman(const LinearGaussianParams& p, const RiccatiSolution& riccati, const Grid2D& grid,
                                   const SolverOptions& options) {
  if (!(grid.v_lo > 0.0)) throw std::invalid_argument("kalman pde: observation axis must stay positive");
  PdeCoefficients coeff;
  coeff.rate = p.r;
  coeff.at = [p, &riccati](double t, double m) {
    const double P = riccati.at(t);
    const double gain = kalman_gain(p, P);
    return PdeCoefficients::Row{-p.kappa * m, 0.5 * gain * gain, m - p.a, 0.5 * p.sigma_y * p.sigma_y,
                                p.rho * p.sigma_x * p.sigma_y + P};
  };
  auto obstacle = [&p, &riccati](double t, double m, double y) {
    return conditional_payoff(m, riccati.at(t), y, p);
  };
  return solve_bermudan(coeff, obstacle, grid, options);
}

Grid2D default_stein_stein_grid(const SteinSteinParams& p, double y0, double horizon, int exercise_dates) {
  Grid2D g;
  const double x_half = 5.0 * p.alpha / std::sqrt(2.0 * p.kappa);
  const double y_half = 5.0 * p.sigma_bar * std::sqrt(horizon);
  g.u_lo = p.sigma_bar - x_half;
  g.u_hi = p.sigma_bar + x_half;
  g.v_lo = y0 - y_half;
  g.v_hi = y0 + y_half;
  g.u_nodes = 401;
  g.v_nodes = 401;
  g.horizon = horizon;
  g.time_steps = 8000;
  g.exercise_dates = exercise_dates;
  return g;
}

SolverResult solve_bermudan_stein_stein(const SteinSteinParams& p, const Grid2D& grid, const SolverOptions& options) {
  p.validate();
  PdeCoefficients coeff;
  coeff.rate = p.r;
  coeff.at = [p](double, double x) {
    return PdeCoefficients::Row{p.kappa * (p.sigma_bar - x), 0.5 * p.alpha * p.alpha, p.r - 0.5 * x * x, 0.5 * x * x,
                                p.rho * p.alpha * x};
  };
  auto obstacle = [k = p.strike](double, double, double y) { return std::max(k - std::exp(y), 0.0); };
  return solve_bermudan(coeff, obstacle, grid, options);
}

double query_value(const SolverResult& result, double u, double v, int date) {
  const Grid2D& g = result.grid;
  if (date < 0 || date >= static_cast<int>(result.surfaces.size())) throw std::out_of_range("query_value: bad date");
  if (u < g.u_lo || u > g.u_hi || v < g.v_lo || v > g.v_hi) {
    throw std::out_of_range("query_value: point outside the grid");
  }
  const Eigen::MatrixXd& s = result.surfaces[date];
  const double pu = (u - g.u_lo) / g.du();
  const double pv = (v - g.v_lo) / g.dv();
  const int i = std::min(static_cast<int>(pu), g.u_nodes - 2);
  const int j = std::min(static_cast<int>(pv), g.v_nodes - 2);
  const double wu = pu - i;
  const double wv = pv - j;
  return (1 - wu) * ((1 - wv) * s(i, j) + wv * s(i, j + 1)) + wu * ((1 - wv) * s(i + 1, j) + wv * s(i + 1, j + 1));
}

void write_surface_csv(std::ostream& os, const SolverResult& result, int date) {
  const Grid2D& g = result.grid;
  const auto& s = result.surfaces.at(date);
  const auto& ex = result.exercise.at(date);
  os << "u,v,value,exercise\n";
  os.precision(12);
  for (int i = 0; i < g.u_nodes; ++i) {
    for (int j = 0; j < g.v_nodes; ++j) os << g.u(i) << ',' << g.v(j) << ',' << s(i, j) << ',' << ex(i, j) << '\n';
  }
}

}  // namespace postop
