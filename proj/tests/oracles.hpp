#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

// Straightforward reference implementations used to check the library.
namespace oracle {

// Kolmogorov-Smirnov statistic of a sample against N(mu, sigma^2).
inline double ks_normal(std::vector<double> x, double mu, double sigma) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = 0.5 * std::erfc(-(x[i] - mu) / (sigma * std::sqrt(2.0)));
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return d;
}

// Asymptotic two-sided KS critical value at the 1% level.
inline double ks_critical_1pct(std::size_t n) { return 1.6276 / std::sqrt(static_cast<double>(n)); }

// O(M^2) CRPS: mean |x - y| minus half the mean pairwise |x_i - x_j|.
inline long double crps_pairwise(std::span<const double> x, double y, bool fair = false) {
  const long double m = static_cast<long double>(x.size());
  long double a = 0, b = 0;
  for (double xi : x) a += std::fabs(static_cast<long double>(xi) - y);
  for (double xi : x)
    for (double xj : x) b += std::fabs(static_cast<long double>(xi) - xj);
  return a / m - b / (2 * m * (fair ? m - 1 : m));
}

// Entropic OT by plain scaling iterations on K = exp(-C / eps) in long
// double, stopped when both scalings change by less than `tol` relatively.
inline std::vector<std::vector<long double>> sinkhorn_scaling(const std::vector<std::vector<double>>& cost,
                                                              std::span<const double> a, std::span<const double> b,
                                                              double eps, long double tol = 1e-13L,
                                                              int max_iter = 5000000) {
  const std::size_t n = cost.size(), m = cost[0].size();
  std::vector<std::vector<long double>> k(n, std::vector<long double>(m));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) k[i][j] = std::exp(-static_cast<long double>(cost[i][j]) / eps);
  std::vector<long double> u(n, 1), v(m, 1);
  for (int it = 0; it < max_iter; ++it) {
    long double change = 0;
    for (std::size_t i = 0; i < n; ++i) {
      long double s = 0;
      for (std::size_t j = 0; j < m; ++j) s += k[i][j] * v[j];
      const long double nu = a[i] / s;
      change = std::max(change, std::fabs(nu - u[i]) / nu);
      u[i] = nu;
    }
    for (std::size_t j = 0; j < m; ++j) {
      long double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += k[i][j] * u[i];
      const long double nv = b[j] / s;
      change = std::max(change, std::fabs(nv - v[j]) / nv);
      v[j] = nv;
    }
    if (change < tol) break;
  }
  std::vector<std::vector<long double>> p(n, std::vector<long double>(m));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) p[i][j] = u[i] * k[i][j] * v[j];
  return p;
}

}  // namespace oracle
