#pragma once

#include <span>
#include <vector>

namespace s2sk {

// Empirical quantile with linear interpolation between order statistics:
// h = (n - 1) * p / 100, q = x[floor h] + (h - floor h) * (x[floor h + 1] - x[floor h]).
// This is the default rule of numpy.percentile. `p` is a percentage.
double empirical_quantile(std::vector<double> values, double p);

double mean(std::span<const double> values);

// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double sample_stddev(std::span<const double> values);

}  // namespace s2sk
