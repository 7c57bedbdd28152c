#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "postop/kalman.hpp"
#include "postop/model.hpp"
#include "postop/pfilter.hpp"

namespace postop {

class FeatureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ordered named features of (t, filter state, observation). The first feature
// is always the constant 1.
template <class FilterState, class Obs>
class BasisSet {
 public:
  using Feature = std::function<double(double, const FilterState&, const Obs&)>;

  BasisSet() { add("1", [](double, const FilterState&, const Obs&) { return 1.0; }); }

  BasisSet& add(std::string name, Feature f) {
    names_.push_back(std::move(name));
    features_.push_back(std::move(f));
    return *this;
  }

  int size() const { return static_cast<int>(features_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  const Feature& feature(int i) const { return features_[i]; }

 private:
  std::vector<std::string> names_;
  std::vector<Feature> features_;
};

template <class FilterState, class Obs, class Row>
void evaluate_basis_into(const BasisSet<FilterState, Obs>& basis, double t, const FilterState& state, const Obs& y,
                         Row&& out, long path_index = -1) {
  for (int i = 0; i < basis.size(); ++i) {
    const double v = basis.feature(i)(t, state, y);
    if (!std::isfinite(v)) {
      throw FeatureError("non-finite feature '" + basis.names()[i] + "' on path " + std::to_string(path_index) +
                         " at t=" + std::to_string(t));
    }
    out(i) = v;
  }
}

template <class FilterState, class Obs>
Eigen::VectorXd evaluate_basis(const BasisSet<FilterState, Obs>& basis, double t, const FilterState& state,
                               const Obs& y, long path_index = -1) {
  Eigen::VectorXd out(basis.size());
  evaluate_basis_into(basis, t, state, y, out, path_index);
  return out;
}

// Nodes and weights with sum_i w_i f(z_i) ~ E[f(Z)], Z ~ N(0,1).
std::pair<std::vector<double>, std::vector<double>> gauss_hermite(int order);

// Discounted-to-t European value e^{-r(T-t)} E[g(X_T, Y_T) | X_t = x, Y_t = y]
// for the linear model: quadrature over X_T, closed form over Y_T given X_T.
class LinearEuropean {
 public:
  LinearEuropean(const LinearGaussianParams& p, double horizon, int order = 48);

  double value(double t, double x, double y) const;
  double horizon() const { return horizon_; }

  struct Moments {
    double mean_x, mean_y, var_x, var_y, cov_xy;
  };
  // Joint Gaussian law of (X_T, Y_T) given (X_t, Y_t) = (x, y).
  Moments transition(double t, double x, double y) const;

 private:
  LinearGaussianParams p_;
  double horizon_;
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

// LinearEuropean tabulated per exercise date on an (x, y) grid; bilinear
// lookup inside the grid, direct evaluation outside.
class EuropeanTable {
 public:
  struct Axis {
    double lo, hi;
    int nodes;
  };

  EuropeanTable(LinearEuropean eur, std::vector<double> dates, Axis x_axis, Axis y_axis);

  double value(int date_index, double x, double y) const;
  // Looks up the tabulated date equal to t; untabulated times are evaluated directly.
  double value_at(double t, double x, double y) const;
  const std::vector<double>& dates() const { return dates_; }

 private:
  LinearEuropean eur_;
  std::vector<double> dates_;
  Axis xa_;
  Axis ya_;
  double dx_;
  double dy_;
  std::vector<std::vector<double>> tables_;
};

// Nested Monte Carlo European value for a generic model (Euler inner paths).
template <DiffusionModel M>
double nested_european(const M& model, double t, const typename M::State& x, const typename M::Obs& y,
                       double horizon, double h_step, int inner_paths, std::uint64_t seed, std::uint32_t stream) {
  const int steps = std::max(0, static_cast<int>(std::ceil((horizon - t) / h_step - 1e-9)));
  if (steps == 0) return model.payoff(horizon, x, y) * std::exp(model.discount_rate() * t);
  const double h = (horizon - t) / steps;
  const double sqrt_h = std::sqrt(h);
  RandomStream rng(seed, stream, StreamPurpose::kNestedMonteCarlo);
  typename M::Obs du;
  typename M::Noise dw;
  double acc = 0.0;
  for (int k = 0; k < inner_paths; ++k) {
    auto xs = x;
    auto ys = y;
    for (int s = 0; s < steps; ++s) {
      for (int i = 0; i < M::kObsDim; ++i) du(i) = sqrt_h * rng.normal();
      for (int i = 0; i < M::kNoiseDim; ++i) dw(i) = sqrt_h * rng.normal();
      ys += model.obs_drift(xs) * h + model.obs_vol(xs) * du;
      xs = euler_step(model, xs, DriftMode::kPhysical, du, dw, h);
    }
    acc += model.payoff(horizon, xs, ys);
  }
  // payoff() discounts to time 0; rebase to time t.
  return acc / inner_paths * std::exp(model.discount_rate() * t);
}

struct FitDiagnostics {
  double residual_norm = 0.0;
  double condition_estimate = 0.0;
  int rank = 0;
  std::vector<int> dropped;
};

struct LeastSquaresResult {
  Eigen::VectorXd coefficients;
  FitDiagnostics diagnostics;
};

// Column-scaled, column-pivoted QR. Dependent columns get coefficient 0.
LeastSquaresResult least_squares_fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets);

// Per-path data produced by a forward pass. Date d is time d * exercise_step,
// d = 0..dates. features[d] is N x r for 1 <= d < dates (others may be empty).
struct StoppingData {
  double exercise_step = 0.0;
  int dates = 0;
  Eigen::MatrixXd payoff;
  std::vector<Eigen::MatrixXd> features;
  std::vector<std::string> basis_names;
  Eigen::MatrixXd filter_mean;  // optional: pi_t x per path and date
  Eigen::MatrixXd observation;  // optional: y per path and date

  Eigen::Index paths() const { return payoff.rows(); }
  void validate() const;
  // Coarser exercise grid keeping every `stride`-th date.
  StoppingData subsample(int stride) const;
};

struct RegressionFit {
  std::vector<Eigen::VectorXd> coefficients;  // size dates + 1; empty at 0 and at dates
  std::vector<FitDiagnostics> diagnostics;
  std::vector<std::string> basis_names;
};

struct CashflowState {
  Eigen::VectorXd cashflow;
  std::vector<int> stop_date;
};

struct ValueEstimate {
  double value = 0.0;
  double mean_cashflow = 0.0;
  double std_error = 0.0;
  double immediate = 0.0;
  std::size_t paths = 0;
  int particles = 0;
  double exercise_step = 0.0;
  double obs_step = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> basis;
  std::string algorithm;
};

struct InductionResult {
  RegressionFit fit;
  CashflowState cashflows;
  ValueEstimate estimate;
  double continuation0 = 0.0;
};

InductionResult backward_induction(const StoppingData& data);
InductionResult tvr_backward_induction(const StoppingData& data);

class StoppingPolicy {
 public:
  StoppingPolicy(RegressionFit fit, int dates, double continuation0)
      : fit_(std::move(fit)), dates_(dates), continuation0_(continuation0) {}

  double continuation(int date, const Eigen::Ref<const Eigen::RowVectorXd>& features) const;
  // Stop when the reward is positive and the fitted continuation does not exceed it.
  bool stop(int date, const Eigen::Ref<const Eigen::RowVectorXd>& features, double reward) const;
  bool stop_at_zero(double reward0) const { return reward0 > 0.0 && continuation0_ <= reward0; }
  int dates() const { return dates_; }

 private:
  RegressionFit fit_;
  int dates_;
  double continuation0_;
};

StoppingPolicy extract_policy(const InductionResult& result, int dates);

// Values the policy on (typically fresh) forward-pass data.
std::pair<CashflowState, ValueEstimate> apply_policy(const StoppingPolicy& policy, const StoppingData& data);

void write_fit_diagnostics_csv(std::ostream& os, const RegressionFit& fit, double exercise_step);

}  // namespace postop
