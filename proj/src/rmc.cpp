#include "postop/rmc.hpp"

#include <algorithm>
#include <numbers>
#include <ostream>

namespace postop {
namespace {

double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
double norm_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

// E[(Y - k)_+] and E[(k - Y)_+] for Y ~ N(mu, s^2).
double gaussian_call(double mu, double s, double k) {
  if (s <= 0.0) return std::max(mu - k, 0.0);
  const double d = (mu - k) / s;
  return (mu - k) * norm_cdf(d) + s * norm_pdf(d);
}

double gaussian_put(double mu, double s, double k) {
  if (s <= 0.0) return std::max(k - mu, 0.0);
  const double d = (mu - k) / s;
  return (k - mu) * norm_cdf(-d) + s * norm_pdf(d);
}

double sample_std(const Eigen::VectorXd& v) {
  const auto n = v.size();
  if (n < 2) return 0.0;
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(n - 1));
}

}  // namespace

std::pair<std::vector<double>, std::vector<double>> gauss_hermite(int order) {
  if (order < 2) throw std::invalid_argument("gauss_hermite: order must be at least 2");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(order, order);
  for (int i = 0; i + 1 < order; ++i) {
    jacobi(i, i + 1) = std::sqrt(static_cast<double>(i + 1));
    jacobi(i + 1, i) = jacobi(i, i + 1);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
  std::vector<double> nodes(order);
  std::vector<double> weights(order);
  for (int i = 0; i < order; ++i) {
    nodes[i] = es.eigenvalues()(i);
    const double v0 = es.eigenvectors()(0, i);
    weights[i] = v0 * v0;
  }
  return {nodes, weights};
}

LinearEuropean::LinearEuropean(const LinearGaussianParams& p, double horizon, int order) : p_(p), horizon_(horizon) {
  if (order < 2) throw std::invalid_argument("european feature: quadrature order must be at least 2");
  std::tie(nodes_, weights_) = gauss_hermite(order);
}

LinearEuropean::Moments LinearEuropean::transition(double t, double x, double y) const {
  const double tau = std::max(0.0, horizon_ - t);
  const double k = p_.kappa;
  double a1 = 0.0;   // int_0^tau e^{-k s} ds
  double a2 = 0.0;   // int e^{-2ks}
  double i1 = 0.0;   // int phi,  phi(s) = (1 - e^{-ks}) / k
  double i2 = 0.0;   // int phi^2
  double i3 = 0.0;   // int e^{-ks} phi
  const double kt = k * tau;
  if (std::abs(kt) < 1e-4) {
    a1 = tau - k * tau * tau / 2 + k * k * tau * tau * tau / 6;
    a2 = tau - k * tau * tau + 2 * k * k * tau * tau * tau / 3;
    i1 = tau * tau / 2 - k * tau * tau * tau / 6;
    i2 = tau * tau * tau / 3 - k * tau * tau * tau * tau / 4;
    i3 = tau * tau / 2 - k * tau * tau * tau / 2;
  } else {
    a1 = -std::expm1(-kt) / k;
    a2 = -std::expm1(-2 * kt) / (2 * k);
    i1 = (tau - a1) / k;
    i2 = (tau - 2 * a1 + a2) / (k * k);
    i3 = (a1 - a2) / k;
  }
  const double sx = p_.sigma_x;
  const double sy = p_.sigma_y;
  Moments mo{};
  mo.mean_x = x * std::exp(-kt);
  mo.mean_y = y - p_.a * tau + x * a1;
  mo.var_x = sx * sx * a2;
  mo.var_y = sx * sx * i2 + sy * sy * tau + 2 * p_.rho * sx * sy * i1;
  mo.cov_xy = sx * sx * i3 + p_.rho * sx * sy * a1;
  return mo;
}

double LinearEuropean::value(double t, double x, double y) const {
  const double tau = std::max(0.0, horizon_ - t);
  const Moments mo = transition(t, x, y);
  const double c1 = p_.c1;
  const double c2 = p_.c2;
  auto inner = [&](double xi, double mu, double s) {
    const double c = c1 + xi;
    if (c > 0.0) return c * gaussian_call(mu, s, c2 / c);
    // c < 0: the payoff is |c| (c2 / c - Y)_+
    if (c < 0.0) return -c * gaussian_put(mu, s, c2 / c);
    return std::max(-c2, 0.0);
  };
  double expectation = 0.0;
  if (mo.var_x <= 0.0) {
    expectation = inner(mo.mean_x, mo.mean_y, std::sqrt(std::max(mo.var_y, 0.0)));
  } else {
    const double sdx = std::sqrt(mo.var_x);
    const double beta = mo.cov_xy / mo.var_x;
    const double s = std::sqrt(std::max(mo.var_y - beta * mo.cov_xy, 0.0));
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const double dev = sdx * nodes_[i];
      expectation += weights_[i] * inner(mo.mean_x + dev, mo.mean_y + beta * dev, s);
    }
  }
  return std::exp(-p_.r * tau) * expectation;
}

EuropeanTable::EuropeanTable(LinearEuropean eur, std::vector<double> dates, Axis x_axis, Axis y_axis)
    : eur_(std::move(eur)), dates_(std::move(dates)), xa_(x_axis), ya_(y_axis) {
  if (xa_.nodes < 2 || ya_.nodes < 2 || !(xa_.hi > xa_.lo) || !(ya_.hi > ya_.lo)) {
    throw std::invalid_argument("european table: bad axes");
  }
  dx_ = (xa_.hi - xa_.lo) / (xa_.nodes - 1);
  dy_ = (ya_.hi - ya_.lo) / (ya_.nodes - 1);
  tables_.resize(dates_.size());
  for (std::size_t d = 0; d < dates_.size(); ++d) {
    if (dates_[d] >= eur_.horizon()) continue;
    auto& tab = tables_[d];
    tab.resize(static_cast<std::size_t>(xa_.nodes) * ya_.nodes);
    for (int i = 0; i < xa_.nodes; ++i) {
      for (int j = 0; j < ya_.nodes; ++j) {
        tab[static_cast<std::size_t>(i) * ya_.nodes + j] = eur_.value(dates_[d], xa_.lo + i * dx_, ya_.lo + j * dy_);
      }
    }
  }
}

double EuropeanTable::value_at(double t, double x, double y) const {
  for (std::size_t d = 0; d < dates_.size(); ++d) {
    if (std::abs(dates_[d] - t) < 1e-9) return value(static_cast<int>(d), x, y);
  }
  return eur_.value(t, x, y);
}

double EuropeanTable::value(int date_index, double x, double y) const {
  const auto& tab = tables_.at(date_index);
  if (tab.empty() || x < xa_.lo || x > xa_.hi || y < ya_.lo || y > ya_.hi) {
    return eur_.value(dates_[date_index], x, y);
  }
  const double px = (x - xa_.lo) / dx_;
  const double py = (y - ya_.lo) / dy_;
  const int i = std::min(static_cast<int>(px), xa_.nodes - 2);
  const int j = std::min(static_cast<int>(py), ya_.nodes - 2);
  const double wx = px - i;
  const double wy = py - j;
  const auto at = [&](int a, int b) { return tab[static_cast<std::size_t>(a) * ya_.nodes + b]; };
  return (1 - wx) * ((1 - wy) * at(i, j) + wy * at(i, j + 1)) + wx * ((1 - wy) * at(i + 1, j) + wy * at(i + 1, j + 1));
}

LeastSquaresResult least_squares_fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) {
  const Eigen::Index n = features.rows();
  const Eigen::Index r = features.cols();
  if (targets.size() != n) throw std::invalid_argument("least_squares_fit: row count mismatch");
  if (n < r) throw std::invalid_argument("least_squares_fit: fewer observations than features");

  Eigen::VectorXd scale = features.colwise().norm().transpose();
  for (Eigen::Index c = 0; c < r; ++c) {
    if (!(scale(c) > 0.0)) scale(c) = 1.0;
  }
  const Eigen::MatrixXd scaled = features * scale.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
  qr.setThreshold(1e-12);
  const Eigen::Index rank = qr.rank();

  LeastSquaresResult out;
  out.coefficients = Eigen::VectorXd::Zero(r);
  if (rank > 0) {
    const Eigen::VectorXd qtb = qr.householderQ().transpose() * targets;
    const Eigen::VectorXd z = qr.matrixR()
                                  .topLeftCorner(rank, rank)
                                  .template triangularView<Eigen::Upper>()
                                  .solve(qtb.head(rank));
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index i = 0; i < rank; ++i) out.coefficients(perm(i)) = z(i) / scale(perm(i));
    const double r00 = std::abs(qr.matrixR()(0, 0));
    const double rkk = std::abs(qr.matrixR()(rank - 1, rank - 1));
    out.diagnostics.condition_estimate = rkk > 0.0 ? r00 / rkk : INFINITY;
    for (Eigen::Index i = rank; i < r; ++i) out.diagnostics.dropped.push_back(static_cast<int>(perm(i)));
    std::sort(out.diagnostics.dropped.begin(), out.diagnostics.dropped.end());
  } else {
    for (Eigen::Index i = 0; i < r; ++i) out.diagnostics.dropped.push_back(static_cast<int>(i));
  }
  out.diagnostics.rank = static_cast<int>(rank);
  out.diagnostics.residual_norm = (features * out.coefficients - targets).norm();
  return out;
}

void StoppingData::validate() const {
  if (dates < 1) throw std::invalid_argument("stopping data: need at least one exercise date");
  if (payoff.cols() != dates + 1) throw std::invalid_argument("stopping data: payoff columns != dates + 1");
  if (payoff.rows() < 1) throw std::invalid_argument("stopping data: no paths");
  if (static_cast<int>(features.size()) != dates + 1) throw std::invalid_argument("stopping data: feature dates");
  for (int d = 1; d < dates; ++d) {
    if (features[d].rows() != payoff.rows() || features[d].cols() != static_cast<Eigen::Index>(basis_names.size())) {
      throw std::invalid_argument("stopping data: feature matrix shape at date " + std::to_string(d));
    }
  }
}

StoppingData StoppingData::subsample(int stride) const {
  if (stride < 1 || dates % stride != 0) throw std::invalid_argument("subsample: stride must divide the date count");
  StoppingData out;
  out.exercise_step = exercise_step * stride;
  out.dates = dates / stride;
  out.basis_names = basis_names;
  out.payoff.resize(payoff.rows(), out.dates + 1);
  out.features.resize(out.dates + 1);
  const bool with_mean = filter_mean.size() > 0;
  const bool with_obs = observation.size() > 0;
  if (with_mean) out.filter_mean.resize(payoff.rows(), out.dates + 1);
  if (with_obs) out.observation.resize(payoff.rows(), out.dates + 1);
  for (int d = 0; d <= out.dates; ++d) {
    out.payoff.col(d) = payoff.col(d * stride);
    out.features[d] = features[d * stride];
    if (with_mean) out.filter_mean.col(d) = filter_mean.col(d * stride);
    if (with_obs) out.observation.col(d) = observation.col(d * stride);
  }
  return out;
}

namespace {

// Ties go to stopping; a zero reward is never taken since continuing cannot pay less.
bool exercise(double continuation, double reward) { return reward > 0.0 && continuation <= reward; }

void finish_estimate(InductionResult& res, const StoppingData& data, const Eigen::VectorXd& next_values,
                     const char* algorithm) {
  const double n = static_cast<double>(data.paths());
  const double g0 = data.payoff.col(0).mean();
  const double mean = next_values.mean();
  res.continuation0 = mean;
  res.estimate.immediate = g0;
  res.estimate.mean_cashflow = mean;
  res.estimate.value = std::max(g0, mean);
  res.estimate.std_error = sample_std(next_values) / std::sqrt(n);
  res.estimate.paths = static_cast<std::size_t>(data.paths());
  res.estimate.exercise_step = data.exercise_step;
  res.estimate.basis = data.basis_names;
  res.estimate.algorithm = algorithm;
  if (exercise(mean, g0)) {
    res.cashflows.cashflow = data.payoff.col(0);
    std::fill(res.cashflows.stop_date.begin(), res.cashflows.stop_date.end(), 0);
  }
}

}  // namespace

InductionResult backward_induction(const StoppingData& data) {
  data.validate();
  const Eigen::Index n = data.paths();
  const int m = data.dates;
  InductionResult res;
  res.fit.coefficients.resize(m + 1);
  res.fit.diagnostics.resize(m + 1);
  res.fit.basis_names = data.basis_names;
  Eigen::VectorXd cash = data.payoff.col(m);
  std::vector<int> stop(n, m);
  for (int d = m - 1; d >= 1; --d) {
    const LeastSquaresResult ls = least_squares_fit(data.features[d], cash);
    const Eigen::VectorXd q = data.features[d] * ls.coefficients;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (exercise(q(k), data.payoff(k, d))) {
        cash(k) = data.payoff(k, d);
        stop[k] = d;
      }
    }
    res.fit.coefficients[d] = ls.coefficients;
    res.fit.diagnostics[d] = ls.diagnostics;
  }
  res.cashflows.cashflow = cash;
  res.cashflows.stop_date = stop;
  finish_estimate(res, data, cash, "ls");
  return res;
}

InductionResult tvr_backward_induction(const StoppingData& data) {
  data.validate();
  const Eigen::Index n = data.paths();
  const int m = data.dates;
  InductionResult res;
  res.fit.coefficients.resize(m + 1);
  res.fit.diagnostics.resize(m + 1);
  res.fit.basis_names = data.basis_names;
  Eigen::VectorXd values = data.payoff.col(m);
  std::vector<int> stop(n, m);
  for (int d = m - 1; d >= 1; --d) {
    const LeastSquaresResult ls = least_squares_fit(data.features[d], values);
    const Eigen::VectorXd q = data.features[d] * ls.coefficients;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double g = data.payoff(k, d);
      if (exercise(q(k), g)) stop[k] = d;
      values(k) = std::max(g, q(k));
    }
    res.fit.coefficients[d] = ls.coefficients;
    res.fit.diagnostics[d] = ls.diagnostics;
  }
  res.cashflows.cashflow = values;
  res.cashflows.stop_date = stop;
  finish_estimate(res, data, values, "tvr");
  return res;
}

double StoppingPolicy::continuation(int date, const Eigen::Ref<const Eigen::RowVectorXd>& features) const {
  if (date <= 0 || date >= dates_) throw std::out_of_range("policy: no fitted continuation at this date");
  return features.dot(fit_.coefficients.at(date));
}

bool StoppingPolicy::stop(int date, const Eigen::Ref<const Eigen::RowVectorXd>& features, double reward) const {
  if (date >= dates_) return true;
  if (date == 0) return stop_at_zero(reward);
  return exercise(continuation(date, features), reward);
}

StoppingPolicy extract_policy(const InductionResult& result, int dates) {
  return StoppingPolicy(result.fit, dates, result.continuation0);
}

std::pair<CashflowState, ValueEstimate> apply_policy(const StoppingPolicy& policy, const StoppingData& data) {
  data.validate();
  if (data.dates != policy.dates()) throw std::invalid_argument("apply_policy: exercise grids differ");
  const Eigen::Index n = data.paths();
  const double g0 = data.payoff.col(0).mean();
  CashflowState cs;
  cs.cashflow.resize(n);
  cs.stop_date.assign(n, data.dates);
  const bool at_zero = policy.stop_at_zero(g0);
  for (Eigen::Index k = 0; k < n; ++k) {
    if (at_zero) {
      cs.cashflow(k) = data.payoff(k, 0);
      cs.stop_date[k] = 0;
      continue;
    }
    int d = 1;
    for (; d < data.dates; ++d) {
      if (policy.stop(d, data.features[d].row(k), data.payoff(k, d))) break;
    }
    cs.cashflow(k) = data.payoff(k, d);
    cs.stop_date[k] = d;
  }
  ValueEstimate est;
  est.value = cs.cashflow.mean();
  est.mean_cashflow = est.value;
  est.immediate = g0;
  est.std_error = sample_std(cs.cashflow) / std::sqrt(static_cast<double>(n));
  est.paths = static_cast<std::size_t>(n);
  est.exercise_step = data.exercise_step;
  est.basis = data.basis_names;
  est.algorithm = "policy";
  return {cs, est};
}

void write_fit_diagnostics_csv(std::ostream& os, const RegressionFit& fit, double exercise_step) {
  os << "date,t,residual_norm,condition,rank,dropped";
  for (const auto& name : fit.basis_names) os << ",coef[" << name << "]";
  os << '\n';
  os.precision(12);
  for (std::size_t d = 0; d < fit.coefficients.size(); ++d) {
    if (fit.coefficients[d].size() == 0) continue;
    const auto& diag = fit.diagnostics[d];
    os << d << ',' << d * exercise_step << ',' << diag.residual_norm << ',' << diag.condition_estimate << ','
       << diag.rank << ',';
    for (std::size_t i = 0; i < diag.dropped.size(); ++i) os << (i ? ";" : "") << diag.dropped[i];
    for (Eigen::Index i = 0; i < fit.coefficients[d].size(); ++i) os << ',' << fit.coefficients[d](i);
    os << '\n';
  }
}

}  // namespace postop
