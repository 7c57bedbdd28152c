#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "postop/pfilter.hpp"

using namespace postop;

namespace {

using Lin = LinearGaussianModel;
using Scalar = FunctionModel<1, 1, 1>;
using S1 = Scalar::State;
using O1 = Scalar::Obs;

Scalar h_model(double h_value) {
  Scalar m;
  m.b = [](const S1&) { return S1::Zero(); };
  m.alpha = [](const S1&) { return Scalar::ObsLoading::Zero(); };
  m.sigma = [](const S1&) { return Scalar::NoiseLoading::Zero(); };
  m.h = [h_value](const S1& x) { return O1(h_value * (x(0) >= 0 ? 1.0 : -1.0)); };
  m.g = [](double, const S1&, const O1&) { return 0.0; };
  return m;
}

ParticleCloud<S1> cloud_of(std::vector<double> x, std::vector<double> a) {
  ParticleCloud<S1> c;
  for (double v : x) c.locations.push_back(S1(v));
  for (double w : a) c.log_weights.push_back(std::log(w));
  return c;
}

}  // namespace

TEST_CASE("init cloud") {
  RandomStream rng(1, 0, StreamPurpose::kTest);
  auto c = init_cloud<S1>(64, law_sampler<S1>(InitialLaw::dirac(0.15)), rng);
  for (const auto& v : c.locations) CHECK(v(0) == 0.15);
  for (double w : c.log_weights) CHECK(w == 0.0);
  const int n = 4000;
  auto g = init_cloud<S1>(n, law_sampler<S1>(InitialLaw::gaussian(0.0, 0.05)), rng);
  CHECK(std::abs(estimate_pi(g, [](const S1& v) { return v(0); })) < 4.0 * 0.05 / std::sqrt(n));
  CHECK_THROWS(init_cloud<S1>(1, law_sampler<S1>(InitialLaw::dirac(0.0)), rng));
}

TEST_CASE("discrete weight update") {
  auto c = cloud_of({1.0}, {1.0});
  c.locations.push_back(S1(1.0));
  c.log_weights.push_back(0.0);
  const double delta = 0.01;
  update_weights_discrete(c, h_model(0.0), O1(0.3), delta);
  CHECK(c.log_weights[0] == 0.0);
  update_weights_discrete(c, h_model(1.0), O1(delta), delta);
  CHECK(c.log_weights[0] == doctest::Approx(delta / 2));

  auto sym = cloud_of({1.0, -1.0}, {1.0, 1.0});
  update_weights_discrete(sym, h_model(1.0), O1(0.0), delta);
  CHECK(sym.log_weights[0] == doctest::Approx(-delta / 2));
  CHECK(sym.log_weights[1] == doctest::Approx(-delta / 2));
  const auto w = normalize_log_weights(sym.log_weights);
  CHECK(w[0] == doctest::Approx(0.5));
}

TEST_CASE("reference propagation without private noise") {
  // Noise-free linear model: x moves by (-2x - 1.8(x - 0.05)) h + 0.18 dY.
  LinearGaussianParams p;
  p.rho = 1.0;
  p.sigma_x = 0.3;
  const Lin lin(p);
  RandomStream rng(3, 0, StreamPurpose::kTest);
  auto c = cloud_of({0.0, 0.1}, {1.0, 1.0});
  const std::vector<Lin::Obs> dy = {Lin::Obs(0.02), Lin::Obs(-0.01)};
  const double h = 0.005;
  propagate_reference(c, lin, std::span<const Lin::Obs>(dy), h, rng);
  for (int j = 0; j < 2; ++j) {
    double x = j == 0 ? 0.0 : 0.1;
    for (double d : {0.02, -0.01}) x += (-2.0 * x - 3.0 * (x - 0.05)) * h + 0.3 * d / 0.1;
    CHECK(c.locations[j](0) == doctest::Approx(x).epsilon(1e-12));
  }

  // The hand values quoted for rho = 0.6: drift -2x - 1.8(x - 0.05) and loading 0.18 per unit dY / sigma_y.
  const Lin lin6{LinearGaussianParams{}};
  CHECK(normalized_obs_drift(lin6, Lin::State(0.0))(0) == doctest::Approx(-0.5));
  CHECK(lin6.obs_loading(Lin::State(0.0))(0) == doctest::Approx(0.18));
}

TEST_CASE("candidate propagation drift") {
  SteinSteinParams p;
  p.alpha = 1e-12;
  p.kappa = 50.0;
  const SteinSteinModel model(p);
  RandomStream rng(5, 0, StreamPurpose::kTest);
  const int n = 20000;
  ParticleCloud<SteinSteinModel::State> c;
  c.locations.assign(n, SteinSteinModel::State(0.15));
  c.log_weights.assign(n, 0.0);
  const double delta = 0.01;
  const auto cand = propagate_candidate(c, model, SteinSteinModel::Obs(0.0), 2, delta / 2, rng);
  double mean = 0.0;
  for (const auto& y : cand) mean += y(0) / n;
  const double expect = (0.05 - 0.5 * 0.15 * 0.15) * delta;
  CHECK(std::abs(mean - expect) < 4.0 * 0.15 * std::sqrt(delta / n));
}

TEST_CASE("candidate weights") {
  const KernelSpec k = KernelSpec::gaussian();
  const int n = 27;
  ParticleCloud<S1> c;
  c.locations.assign(n, S1(0.0));
  c.log_weights.assign(n, 0.0);
  std::vector<O1> cand(n, O1(1.0));
  cand[1] = O1(1.0 + 0.1);
  cand[2] = O1(1.0 - 0.1);
  cand[3] = O1(1.0 + 0.2);
  update_weights_candidate(c, std::span<const O1>(cand), O1(1.0), k);
  CHECK(std::exp(c.log_weights[0]) == doctest::Approx(3.0 / std::sqrt(2 * std::numbers::pi)));
  CHECK(c.log_weights[1] == doctest::Approx(c.log_weights[2]));
  // ratio exp(-n^{2/3}(d1^2 - d2^2)/2)
  CHECK(c.log_weights[3] - c.log_weights[1] == doctest::Approx(-9.0 * (0.04 - 0.01) / 2));

  std::vector<O1> far(n, O1(1e6));
  CHECK_THROWS_AS(update_weights_candidate(c, std::span<const O1>(far), O1(0.0), k), FilterCollapse);
  CHECK_THROWS(KernelSpec::from_density([](double x) { return x > 0 ? 0.5 : 0.0; }, -1.0, 1.0));
  const KernelSpec tri = KernelSpec::from_density([](double x) { return std::max(0.0, 1.0 - std::abs(x)); });
  CHECK(std::exp(tri.log_density(0.5)) == doctest::Approx(0.5));
}

TEST_CASE("systematic offspring") {
  const std::vector<double> eq(4, 0.25);
  for (double u : {0.0, 0.3, 0.999}) {
    const auto o = systematic_offspring(eq, 4, u);
    CHECK(o.offspring == std::vector<int>{1, 1, 1, 1});
  }
  const std::vector<double> w = {0.75, 0.25};
  RandomStream rng(8, 0, StreamPurpose::kTest);
  const int trials = 100000;
  double mean = 0.0;
  for (int t = 0; t < trials; ++t) {
    const auto o = systematic_offspring(w, 2, rng.uniform());
    REQUIRE(o.offspring[0] + o.offspring[1] == 2);
    REQUIRE((o.offspring[0] == 1 || o.offspring[0] == 2));
    REQUIRE((o.offspring[1] == 0 || o.offspring[1] == 1));
    mean += o.offspring[0] / double(trials);
  }
  CHECK(std::abs(mean - 1.5) < 0.01);
}

TEST_CASE("branch keeps count and accumulates the normalizer") {
  RandomStream rng(2, 0, StreamPurpose::kTest);
  auto c = cloud_of({0.0, 1.0, 2.0, 3.0}, {1.0, 2.0, 3.0, 2.0});
  const double before = estimate_rho(c, [](const S1&) { return 1.0; });
  CHECK(before == doctest::Approx(2.0));
  const auto out = branch(c, rng);
  int total = 0;
  for (int o : out.offspring) total += o;
  CHECK(total == 4);
  CHECK(c.size() == 4);
  CHECK(std::exp(c.log_normalizer) == doctest::Approx(2.0));
  CHECK(estimate_rho(c, [](const S1&) { return 1.0; }) == doctest::Approx(2.0));
}

TEST_CASE("estimators") {
  auto c = cloud_of({1.0, 0.0}, {3.0, 1.0});
  CHECK(estimate_pi(c, [](const S1&) { return 1.0; }) == doctest::Approx(1.0));
  CHECK(estimate_pi(c, [](const S1& v) { return v(0); }) == doctest::Approx(0.75));
  // rho x = (1/n) sum a_j x_j = 3/2
  CHECK(estimate_rho(c, [](const S1& v) { return v(0); }) == doctest::Approx(1.5));
  auto f = [](const S1& v) { return std::sin(v(0)) + 2.0; };
  CHECK(estimate_pi(c, f) ==
        doctest::Approx(estimate_rho(c, f) / estimate_rho(c, [](const S1&) { return 1.0; })));
  auto flat = cloud_of({1.0, 2.0, 6.0}, {1.0, 1.0, 1.0});
  CHECK(estimate_pi(flat, [](const S1& v) { return v(0); }) == doctest::Approx(3.0));
  CHECK(estimate_rho(flat, [](const S1& v) { return v(0); }) == doctest::Approx(3.0));
  CHECK(effective_sample_size(flat) == doctest::Approx(3.0));
}

TEST_CASE("state constraints") {
  auto c = cloud_of({-1.0, 1.0}, {1.0, 1.0});
  auto same = c;
  apply_state_constraints(same, [](const S1&) { return true; });
  CHECK(same.log_weights == c.log_weights);
  apply_state_constraints(c, [](const S1& v) { return v(0) > 0; });
  const auto w = normalize_log_weights(c.log_weights);
  CHECK(w[0] == 0.0);
  CHECK(w[1] == 1.0);
  RandomStream rng(4, 0, StreamPurpose::kTest);
  branch(c, rng);
  for (const auto& v : c.locations) CHECK(v(0) == 1.0);
  CHECK_THROWS_AS(apply_state_constraints(c, [](const S1&) { return false; }), FilterCollapse);
}

TEST_CASE("log-space helpers and trace") {
  const std::vector<double> v = {1000.0, 1000.0};
  CHECK(log_sum_exp(v) == doctest::Approx(1000.0 + std::log(2.0)));
  double lt = 0.0;
  const auto w = normalize_log_weights(std::vector<double>{-800.0, -800.0 + std::log(3.0)}, &lt);
  CHECK(w[1] == doctest::Approx(0.75));
  CHECK(lt == doctest::Approx(-800.0 + std::log(4.0)));
  auto c = cloud_of({1.0, 3.0}, {1.0, 1.0});
  const auto row = trace_row(c, 0.5);
  CHECK(row.mean == doctest::Approx(2.0));
  CHECK(row.second_moment == doctest::Approx(5.0));
  std::ostringstream os;
  write_filter_trace_csv(os, {row});
  CHECK(os.str().find("0.5") != std::string::npos);
}
