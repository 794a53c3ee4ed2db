#pragma once

#include <cstddef>
#include <vector>

namespace pad::stats {

/// Normality test result: W statistic in (0, 1] and upper-tail p-value.
struct SwResult {
  double w = 0.0;
  double p = 0.0;
};

/// Shapiro-Wilk W test (Royston's AS R94 approximation, complete samples).
/// Valid for 3 <= n <= 5000; the input need not be sorted. Throws ValueError
/// for out-of-range n or an effectively constant sample.
SwResult shapiro_wilk(std::vector<double> values);

/// Inverse standard normal CDF (AS 111 rational approximation). p in (0, 1).
double normal_quantile(double p);

/// Population central moments g1 = m3 / m2^1.5 and g2 = m4 / m2^2 - 3
/// (excess; a normal sample gives ~0). Constant input -> 0 for both.
double skewness(const std::vector<double>& values);
double excess_kurtosis(const std::vector<double>& values);

double mean(const std::vector<double>& values);
/// Population variance (divide by n).
double variance(const std::vector<double>& values);

/// Ranks with ties assigned the average of their positions (1-based).
std::vector<double> average_ranks(const std::vector<double>& values);

/// Pearson r and Spearman rho (Pearson on average ranks). Requires equal
/// lengths >= 3 and non-constant inputs.
struct Correlation {
  double pearson = 0.0;
  double spearman = 0.0;
};
Correlation correlation(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace pad::stats
