#include "postop/forward.hpp"

namespace postop {

CloudBasis<LinearGaussianModel> linear_cloud_basis(const LinearGaussianModel& model,
                                                   std::shared_ptr<const EuropeanTable> european) {
  using State = LinearGaussianModel::State;
  using Obs = LinearGaussianModel::Obs;
  using Mom = CloudMoments<State>;
  CloudBasis<LinearGaussianModel> basis;
  basis.add("y", [](double, const Mom&, const Obs& y) { return y(0); });
  basis.add("y^2", [](double, const Mom&, const Obs& y) { return y(0) * y(0); });
  basis.add("rho_t x", [](double, const Mom& mom, const Obs&) { return mom.rho([](const State& v) { return v(0); }); });
  // payoff(t, .) = e^{-rt} payoff(0, .), so the discount leaves the particle loop.
  basis.add("rho_t g", [model](double t, const Mom& mom, const Obs& y) {
    return std::exp(-model.discount_rate() * t) * mom.rho([&](const State& v) { return model.payoff(0.0, v, y); });
  });
  basis.add("rho_t EUR", [european](double t, const Mom& mom, const Obs& y) {
    return mom.rho([&](const State& v) { return european->value_at(t, v(0), y(0)); });
  });
  return basis;
}

CloudBasis<SteinSteinModel> stein_stein_basis(const SteinSteinModel& model) {
  using State = SteinSteinModel::State;
  using Obs = SteinSteinModel::Obs;
  using Mom = CloudMoments<State>;
  const double strike = model.params().strike;
  CloudBasis<SteinSteinModel> basis;
  basis.add("y", [](double, const Mom&, const Obs& y) { return y(0); });
  basis.add("y^2", [](double, const Mom&, const Obs& y) { return y(0) * y(0); });
  basis.add("(K-e^y)_+", [strike](double, const Mom&, const Obs& y) { return std::max(strike - std::exp(y(0)), 0.0); });
  basis.add("pi_t x", [](double, const Mom& mom, const Obs&) { return mom.pi([](const State& v) { return v(0); }); });
  basis.add("pi_t x^2",
            [](double, const Mom& mom, const Obs&) { return mom.pi([](const State& v) { return v(0) * v(0); }); });
  return basis;
}

KalmanBasis kalman_basis(const LinearGaussianParams& p, std::shared_ptr<const LinearEuropean> european) {
  using Obs = Eigen::Matrix<double, 1, 1>;
  auto [nodes, weights] = gauss_hermite(16);
  KalmanBasis basis;
  basis.add("y", [](double, const KalmanState&, const Obs& y) { return y(0); });
  basis.add("y^2", [](double, const KalmanState&, const Obs& y) { return y(0) * y(0); });
  basis.add("m", [](double, const KalmanState& s, const Obs&) { return s.m; });
  basis.add("G(m,P,y)", [p](double, const KalmanState& s, const Obs& y) {
    return conditional_payoff(s.m, s.P, y(0), p);
  });
  basis.add("EUR(m,P,y)", [european, nodes, weights](double t, const KalmanState& s, const Obs& y) {
    const double sd = std::sqrt(s.P);
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) acc += weights[i] * european->value(t, s.m + sd * nodes[i], y(0));
    return acc;
  });
  return basis;
}

std::shared_ptr<const EuropeanTable> make_linear_european_table(const LinearGaussianParams& p, const SimGrid& grid,
                                                                double y0) {
  std::vector<double> dates;
  for (int d = 0; d <= grid.exercise_dates(); ++d) dates.push_back(d * grid.exercise_step);
  const double y_half = std::max(1.0, 10.0 * p.sigma_y * std::sqrt(grid.horizon));
  return std::make_shared<const EuropeanTable>(LinearEuropean(p, grid.horizon), dates,
                                               EuropeanTable::Axis{-1.5, 1.5, 151},
                                               EuropeanTable::Axis{y0 - y_half, y0 + y_half, 201});
}

StoppingData kalman_forward_pass(const LinearGaussianParams& p, double m0, double P0, double y0, const SimGrid& grid,
                                 std::size_t n_paths, const KalmanBasis& basis, std::uint64_t seed) {
  grid.validate();
  const RiccatiSolution riccati = riccati_solve(p, P0, grid);
  StoppingData data = detail::allocate_data(grid, n_paths, basis.names());
  const int m = grid.exercise_dates();
  const int stride = grid.obs_per_exercise() * grid.substeps;
  detail::for_each_path(n_paths, [&](std::uint32_t k) {
    const PathSample path = simulate_filter_path(p, m0, riccati, y0, grid, seed, k);
    for (int d = 0; d <= m; ++d) {
      const int col = d * stride;
      const double t = d * grid.exercise_step;
      const KalmanState s{(*path.x)(0, col), riccati.at(t), t};
      const Eigen::Matrix<double, 1, 1> y(path.y(0, col));
      data.payoff(k, d) = std::exp(-p.r * t) * conditional_payoff(s.m, s.P, y(0), p);
      data.filter_mean(k, d) = s.m;
      data.observation(k, d) = y(0);
      if (d >= 1 && d < m) evaluate_basis_into(basis, t, s, y, data.features[d].row(k), k);
    }
  });
  return data;
}

}  // namespace postop
