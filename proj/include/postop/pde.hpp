#pragma once

#include <Eigen/Dense>

#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "postop/kalman.hpp"
#include "postop/model.hpp"

namespace postop {

class CflViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Axis 1 is the filter/volatility variable u, axis 2 the observation v.
struct Grid2D {
  double u_lo = 0.0;
  double u_hi = 1.0;
  int u_nodes = 401;
  double v_lo = 0.0;
  double v_hi = 1.0;
  int v_nodes = 401;
  double horizon = 1.0;
  int time_steps = 8000;
  int exercise_dates = 20;  // exercise at t = j * horizon / exercise_dates, j = 0..exercise_dates

  void validate() const;
  double du() const { return (u_hi - u_lo) / (u_nodes - 1); }
  double dv() const { return (v_hi - v_lo) / (v_nodes - 1); }
  double u(int i) const { return u_lo + i * du(); }
  double v(int j) const { return v_lo + j * dv(); }
};

// L V = mu_u V_u + a_uu V_uu + mu_v V_v + a_vv V_vv + b_uv V_uv - rate V,
// with all coefficients functions of (t, u) only.
struct PdeCoefficients {
  struct Row {
    double mu_u, a_uu, mu_v, a_vv, b_uv;
  };
  std::function<Row(double t, double u)> at;
  double rate = 0.0;
};

struct SolverOptions {
  bool bermudan = true;
  // Raise the step count to the smallest stable multiple of the exercise count
  // instead of failing when the requested steps violate the CFL bound.
  bool auto_time_steps = true;
};

struct SolverResult {
  Grid2D grid;
  // Value surfaces at each exercise date after the obstacle, u-major (u_nodes x v_nodes).
  std::vector<Eigen::MatrixXd> surfaces;
  // Exercise region at each date: obstacle >= continuation.
  std::vector<Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>> exercise;
  double max_cfl = 0.0;
  int time_steps = 0;

  const Eigen::MatrixXd& value_surface() const { return surfaces.front(); }
};

// Smallest step count (a multiple of the exercise count) with CFL ratio <= 1.
int stable_time_steps(const PdeCoefficients& coeff, const Grid2D& grid);

SolverResult solve_bermudan(const PdeCoefficients& coeff, const std::function<double(double, double, double)>& obstacle,
                            const Grid2D& grid, const SolverOptions& options = {});

// Default truncation m in [-0.6, 0.6], y in (0, 4].
Grid2D default_kalman_grid(double horizon, int exercise_dates);
SolverResult solve_bermudan_kalman(const LinearGaussianParams& p, const RiccatiSolution& riccati, const Grid2D& grid,
                                   const SolverOptions& options = {});

// Default truncation: x within 5 stationary sd of sigma_bar, log-price within
// 5 sigma_bar sqrt(T) of y0.
Grid2D default_stein_stein_grid(const SteinSteinParams& p, double y0, double horizon, int exercise_dates);
SolverResult solve_bermudan_stein_stein(const SteinSteinParams& p, const Grid2D& grid, const SolverOptions& options = {});

// Bilinear interpolation of the surface at exercise date `date` (0 = t=0).
double query_value(const SolverResult& result, double u, double v, int date = 0);

void write_surface_csv(std::ostream& os, const SolverResult& result, int date);

}  // namespace postop
