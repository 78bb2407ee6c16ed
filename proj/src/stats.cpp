#include "s2sk/stats.hpp"

#include <algorithm>
#include <cmath>

#include "s2sk/error.hpp"

namespace s2sk {

double empirical_quantile(std::vector<double> values, double p) {
  if (values.empty()) throw ValidationError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 100.0))
    throw ValidationError("percentile must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double mean(std::span<const double> values) {
  if (values.empty()) throw ValidationError("mean of an empty sample");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double sample_stddev(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

}  // namespace s2sk
