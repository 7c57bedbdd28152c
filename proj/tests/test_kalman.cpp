#include <doctest.h>

#include <cmath>
#include <numbers>

#include "postop/kalman.hpp"

using namespace postop;

namespace {

// Positive root of A P^2 + B P + C = 0 for the stationarity equation,
// expanded by hand: -2kP + sx^2 - (rho sx + P/sy)^2 = 0.
double hand_root(const LinearGaussianParams& p) {
  const double A = 1.0 / (p.sigma_y * p.sigma_y);
  const double B = 2.0 * p.kappa + 2.0 * p.rho * p.sigma_x / p.sigma_y;
  const double C = p.rho * p.rho * p.sigma_x * p.sigma_x - p.sigma_x * p.sigma_x;
  return (-B + std::sqrt(B * B - 4 * A * C)) / (2 * A);
}

}  // namespace

TEST_CASE("steady-state variance") {
  const LinearGaussianParams p;
  const double ps = hand_root(p);
  CHECK(ps == doctest::Approx(0.006944).epsilon(1e-3));
  CHECK(steady_state_variance(p) == doctest::Approx(ps).epsilon(1e-12));
  const auto sol = riccati_solve(p, 0.0025, 10.0, 1e-3);
  CHECK(sol.P.back() == doctest::Approx(ps).epsilon(1e-9));
  const auto fixed = riccati_solve(p, ps, 1.0, 1e-3);
  for (double v : fixed.P) CHECK(v == doctest::Approx(ps).epsilon(1e-10));
  LinearGaussianParams deg = p;
  deg.sigma_x = 0.0;
  deg.rho = 0.0;
  const auto zero = riccati_solve(deg, 0.0, 1.0, 1e-2);
  for (double v : zero.P) CHECK(v == 0.0);
}

TEST_CASE("riccati interpolation") {
  const LinearGaussianParams p;
  const auto sol = riccati_solve(p, 0.0025, 1.0, 0.01);
  CHECK(sol.at(0.0) == doctest::Approx(0.0025));
  CHECK(sol.at(0.005) == doctest::Approx(0.5 * (sol.P[0] + sol.P[1])));
  CHECK(sol.horizon() == doctest::Approx(1.0));
}

TEST_CASE("kalman step") {
  const LinearGaussianParams p;
  const auto ric = riccati_solve(p, steady_state_variance(p), 1.0, 1e-3);
  CHECK(kalman_gain(p, steady_state_variance(p)) == doctest::Approx(0.2494).epsilon(1e-3));
  const double h = 0.01;
  const KalmanState s{0.3, steady_state_variance(p), 0.0};
  const auto next = kalman_step(s, p, (0.3 - p.a) * h, ric, h);
  CHECK(next.m == doctest::Approx(0.3 - p.kappa * 0.3 * h));
  CHECK(next.t == doctest::Approx(h));
  LinearGaussianParams still = p;
  still.kappa = 0.0;
  const auto ric0 = riccati_solve(still, 0.0025, 1.0, 1e-3);
  const auto same = kalman_step(KalmanState{0.1, 0.0025, 0.0}, still, (0.1 - p.a) * h, ric0, h);
  CHECK(same.m == doctest::Approx(0.1));
}

TEST_CASE("conditional payoff closed form") {
  const LinearGaussianParams p;
  CHECK(conditional_payoff(0.2, 0.0, 2.0, p) == doctest::Approx(0.4));
  // (c1 + m) y = c2 exactly: y sqrt(P) / sqrt(2 pi)
  const double P = 0.01;
  CHECK(conditional_payoff(0.0, P, 2.0, p) == doctest::Approx(2.0 * 0.1 / std::sqrt(2 * std::numbers::pi)));
  CHECK_THROWS_AS(conditional_payoff(0.0, P, 0.0, p), std::domain_error);

  RandomStream rng(11, 0, StreamPurpose::kTest);
  const double pts[][3] = {{0.0, 0.0025, 2.0}, {-0.12, 0.004, 2.24}, {0.2, 0.0069, 1.8}, {0.05, 0.02, 1.5}};
  for (const auto& q : pts) {
    const int n = 400000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
      const double v = std::max(q[2] * (p.c1 + q[0] + std::sqrt(q[1]) * rng.normal()) - p.c2, 0.0);
      s += v;
      s2 += v * v;
    }
    const double mean = s / n;
    const double se = std::sqrt((s2 / n - mean * mean) / n);
    CHECK(std::abs(conditional_payoff(q[0], q[1], q[2], p) - mean) < 3.5 * se);
  }
}

TEST_CASE("conditional payoff monotone in m and P") {
  const LinearGaussianParams p;
  RandomStream rng(12, 0, StreamPurpose::kTest);
  for (int i = 0; i < 100; ++i) {
    const double m = -0.3 + 0.6 * rng.uniform();
    const double P = 1e-4 + 0.02 * rng.uniform();
    const double y = 1.5 + rng.uniform();
    const double g = conditional_payoff(m, P, y, p);
    CHECK(conditional_payoff(m + 1e-4, P, y, p) >= g);
    CHECK(conditional_payoff(m, P + 1e-5, y, p) >= g);
  }
}

TEST_CASE("filter paths") {
  const LinearGaussianParams p;
  const SimGrid g = SimGrid::make(1.0, 0.05, 0.01);
  const int n = 20000;
  const auto paths = simulate_filter_paths(p, 0.2, 0.0025, 2.0, g, n, 3);
  const int last = static_cast<int>(paths[0].y.cols()) - 1;
  double mean = 0.0, m2 = 0.0, dy = 0.0, dy2 = 0.0;
  for (const auto& path : paths) {
    const double m = (*path.x)(0, last);
    mean += m / n;
    m2 += m * m / n;
    const double d = path.y(0, 1) - path.y(0, 0);
    dy += d / n;
    dy2 += d * d / n;
  }
  CHECK(std::abs(mean - 0.2 * std::exp(-p.kappa)) < 4.0 * std::sqrt((m2 - mean * mean) / n));
  const double h = g.substep();
  const double var = dy2 - dy * dy;
  CHECK(std::abs(var - p.sigma_y * p.sigma_y * h) < 0.05 * p.sigma_y * p.sigma_y * h);
}
