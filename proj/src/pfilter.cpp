#include "postop/pfilter.hpp"

#include <algorithm>
#include <numbers>
#include <ostream>

namespace postop {

KernelSpec KernelSpec::gaussian() {
  KernelSpec k;
  const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi);
  k.log_density = [log_norm](double x) { return log_norm - 0.5 * x * x; };
  return k;
}

KernelSpec KernelSpec::from_density(std::function<double(double)> density, double lo, double hi) {
  constexpr int kNodes = 200001;
  const double step = (hi - lo) / (kNodes - 1);
  double mass = 0.0;
  for (int i = 0; i < kNodes; ++i) {
    const double v = density(lo + i * step);
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("kernel: density must be finite and >= 0");
    mass += (i == 0 || i == kNodes - 1) ? 0.5 * v : v;
  }
  mass *= step;
  if (std::abs(mass - 1.0) > 1e-3) {
    throw std::invalid_argument("kernel: density mass is " + std::to_string(mass) + ", expected 1");
  }
  KernelSpec k;
  k.log_density = [d = std::move(density)](double x) { return std::log(d(x)); };
  return k;
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return -INFINITY;
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

std::vector<double> normalize_log_weights(std::span<const double> log_weights, double* log_total) {
  std::vector<double> w(log_weights.size());
  if (w.empty()) {
    if (log_total) *log_total = -INFINITY;
    return w;
  }
  const double m = *std::max_element(log_weights.begin(), log_weights.end());
  if (!std::isfinite(m)) {
    if (log_total) *log_total = m;
    std::fill(w.begin(), w.end(), NAN);
    return w;
  }
  double total = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    w[j] = std::exp(log_weights[j] - m);
    total += w[j];
  }
  const double inv = 1.0 / total;
  for (double& x : w) x *= inv;
  if (log_total) *log_total = m + std::log(total);
  return w;
}

BranchingOutcome systematic_offspring(std::span<const double> weights, int n, double u) {
  const std::size_t m = weights.size();
  BranchingOutcome out;
  out.offspring.resize(m);
  thread_local std::vector<double> frac;
  frac.resize(m);
  long assigned = 0;
  double frac_sum = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double target = n * weights[j];
    const double fl = std::floor(target);
    out.offspring[j] = static_cast<int>(fl);
    frac[j] = target - fl;
    assigned += out.offspring[j];
    frac_sum += frac[j];
  }
  const long remaining = n - assigned;
  if (remaining < 0) throw std::logic_error("systematic_offspring: floor counts exceed n");
  if (remaining > 0) {
    // One uniform shift over the cumulative fractional parts, rescaled to sum
    // exactly to the number of missing offspring.
    const double scale = static_cast<double>(remaining) / frac_sum;
    double upper = 0.0;
    double point = u;
    long placed = 0;
    for (std::size_t j = 0; j < m && placed < remaining; ++j) {
      upper += frac[j] * scale;
      if (point < upper) {
        ++out.offspring[j];
        ++placed;
        point += 1.0;
        frac[j] = -1.0;  // marks an extra offspring
      }
    }
    // Rounding at the very end of the sweep can leave a point unplaced.
    while (placed < remaining) {
      std::size_t best = m;
      for (std::size_t j = 0; j < m; ++j) {
        if (frac[j] > 0.0 && (best == m || frac[j] > frac[best])) best = j;
      }
      if (best == m) throw std::logic_error("systematic_offspring: cannot place remaining offspring");
      ++out.offspring[best];
      frac[best] = -1.0;
      ++placed;
    }
  }
  out.parent_map.resize(n);
  int pos = 0;
  for (std::size_t j = 0; j < m; ++j) {
    for (int k = 0; k < out.offspring[j]; ++k) out.parent_map[pos++] = static_cast<int>(j);
  }
  return out;
}

void write_filter_trace_csv(std::ostream& os, const std::vector<FilterTraceRow>& rows) {
  os << "t,pi_x,pi_x2,ess\n";
  os.precision(12);
  for (const auto& r : rows) os << r.t << ',' << r.mean << ',' << r.second_moment << ',' << r.ess << '\n';
}

}  // namespace postop
