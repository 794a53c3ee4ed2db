#include "pad/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pad/error.hpp"

namespace pad::stats {

namespace {

// Polynomial with coefficients in ascending order: c[0] + c[1] x + ...
double poly(const double* c, int nord, double x) {
  double p = c[nord - 1];
  for (int i = nord - 2; i >= 0; --i) p = p * x + c[i];
  return p;
}

// Upper tail of the standard normal CDF.
double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

double normal_quantile(double p) {
  // AS 111: rational approximations on |p - 1/2| <= 0.42 and the tails.
  static constexpr double kA[4] = {2.50662823884, -18.61500062529,
                                   41.39119773534, -25.44106049637};
  static constexpr double kB[4] = {-8.47351093090, 23.08336743743,
                                   -21.06224101826, 3.13082909833};
  static constexpr double kC[4] = {-2.78718931138, -2.29796479134,
                                   4.85014127135, 2.32121276858};
  static constexpr double kD[2] = {3.54388924762, 1.63706781897};
  if (!(p > 0.0 && p < 1.0)) {
    throw ValueError("normal_quantile: p must lie strictly inside (0, 1)");
  }
  const double q = p - 0.5;
  if (std::abs(q) <= 0.42) {
    const double r = q * q;
    return q * (((kA[3] * r + kA[2]) * r + kA[1]) * r + kA[0]) /
           ((((kB[3] * r + kB[2]) * r + kB[1]) * r + kB[0]) * r + 1.0);
  }
  double r = q > 0.0 ? 1.0 - p : p;
  r = std::sqrt(-std::log(r));
  const double v = (((kC[3] * r + kC[2]) * r + kC[1]) * r + kC[0]) /
                   ((kD[1] * r + kD[0]) * r + 1.0);
  return q < 0.0 ? -v : v;
}

SwResult shapiro_wilk(std::vector<double> x) {
  const std::size_t n = x.size();
  if (n < 3) throw ValueError("shapiro_wilk: need at least 3 values");
  if (n > 5000) {
    throw ValueError("shapiro_wilk: n > 5000 exceeds the approximation's "
                     "validity; subsample first");
  }
  std::sort(x.begin(), x.end());

  static constexpr double kC1[6] = {0.0, 0.221157, -0.147981, -2.07119,
                                    4.434685, -2.706056};
  static constexpr double kC2[6] = {0.0, 0.042981, -0.293762, -1.752461,
                                    5.682633, -3.582633};
  static constexpr double kC3[4] = {0.5440, -0.39978, 0.025054, -6.714e-4};
  static constexpr double kC4[4] = {1.3822, -0.77857, 0.062767, -0.0020322};
  static constexpr double kC5[4] = {-1.5861, -0.31082, -0.083751, 0.0038915};
  static constexpr double kC6[3] = {-0.4803, -0.082676, 0.0030302};
  static constexpr double kG[2] = {-2.273, 0.459};
  static constexpr double kPi6 = 1.909859;   // 6/pi
  static constexpr double kStqr = 1.047198;  // pi/3
  static constexpr double kSmall = 1e-19;

  const double an = static_cast<double>(n);
  const std::size_t n2 = n / 2;

  // Expected-order-statistic coefficients (first half, stored negated in
  // the source algorithm; here a[i] ends up as the i-th negative weight).
  std::vector<double> a(n2);
  if (n == 3) {
    a[0] = std::sqrt(0.5);
  } else {
    const double an25 = an + 0.25;
    double summ2 = 0.0;
    for (std::size_t i = 0; i < n2; ++i) {
      a[i] = normal_quantile((static_cast<double>(i + 1) - 0.375) / an25);
      summ2 += a[i] * a[i];
    }
    summ2 *= 2.0;
    const double ssumm2 = std::sqrt(summ2);
    const double rsn = 1.0 / std::sqrt(an);
    const double a1 = poly(kC1, 6, rsn) - a[0] / ssumm2;
    std::size_t i1;
    double fac;
    if (n > 5) {
      i1 = 2;
      const double a2 = -a[1] / ssumm2 + poly(kC2, 6, rsn);
      fac = std::sqrt((summ2 - 2.0 * a[0] * a[0] - 2.0 * a[1] * a[1]) /
                      (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
      a[0] = a1;
      a[1] = a2;
    } else {
      i1 = 1;
      fac = std::sqrt((summ2 - 2.0 * a[0] * a[0]) / (1.0 - 2.0 * a1 * a1));
      a[0] = a1;
    }
    for (std::size_t i = i1; i < n2; ++i) a[i] = -a[i] / fac;
  }

  const double range = x[n - 1] - x[0];
  if (range < kSmall) {
    throw ValueError("shapiro_wilk: sample range is effectively zero");
  }

  // Signed coefficient for position i (0-based): antisymmetric about the
  // middle, negative in the lower half.
  const auto coef = [&](std::size_t i) -> double {
    const std::size_t j = n - 1 - i;
    if (i == j) return 0.0;
    const double v = a[std::min(i, j)];
    return i < j ? -v : v;
  };

  double sa = 0.0, sx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sa += coef(i);
    sx += x[i] / range;
  }
  sa /= an;
  sx /= an;

  // W as a squared correlation; w1 = 1 - W accumulated directly so values
  // near 1 keep precision.
  double ssa = 0.0, ssx = 0.0, sax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double asa = coef(i) - sa;
    const double xsx = x[i] / range - sx;
    ssa += asa * asa;
    ssx += xsx * xsx;
    sax += asa * xsx;
  }
  const double ssassx = std::sqrt(ssa * ssx);
  const double w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);

  SwResult r;
  if (w1 <= 0.0) {  // perfect correlation up to rounding
    r.w = 1.0;
    r.p = 1.0;
    return r;
  }
  r.w = 1.0 - w1;

  if (n == 3) {  // exact distribution
    r.p = std::clamp(kPi6 * (std::asin(std::sqrt(r.w)) - kStqr), 0.0, 1.0);
    return r;
  }
  const double y = std::log(w1);
  const double lx = std::log(an);
  double m, s;
  if (n <= 11) {
    const double gamma = poly(kG, 2, an);
    if (y >= gamma) {
      r.p = kSmall;
      return r;
    }
    const double yl = -std::log(gamma - y);
    m = poly(kC3, 4, an);
    s = std::exp(poly(kC4, 4, an));
    r.p = normal_sf((yl - m) / s);
    return r;
  }
  m = poly(kC5, 4, lx);
  s = std::exp(poly(kC6, 3, lx));
  r.p = normal_sf((y - m) / s);
  return r;
}

// ---------------------------------------------------------------------------
// moments
// ---------------------------------------------------------------------------

namespace {

void central_moments(const std::vector<double>& v, double& m2, double& m3,
                     double& m4) {
  const double mu = mean(v);
  m2 = m3 = m4 = 0.0;
  for (double x : v) {
    const double d = x - mu;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  const double n = static_cast<double>(v.size());
  m2 /= n;
  m3 /= n;
  m4 /= n;
}

}  // namespace

double mean(const std::vector<double>& v) {
  if (v.empty()) throw ValueError("mean of empty sequence");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance(const std::vector<double>& v) {
  const double mu = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return s / static_cast<double>(v.size());
}

double skewness(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m2, m3, m4;
  central_moments(v, m2, m3, m4);
  if (m2 <= 0.0) return 0.0;
  return m3 / std::pow(m2, 1.5);
}

double excess_kurtosis(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m2, m3, m4;
  central_moments(v, m2, m3, m4);
  if (m2 <= 0.0) return 0.0;
  return m4 / (m2 * m2) - 3.0;
}

// ---------------------------------------------------------------------------
// correlation
// ---------------------------------------------------------------------------

std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based average
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

namespace {

double pearson_r(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = mean(a), mb = mean(b);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) {
    throw ValueError("correlation: constant sequence");
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

Correlation correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw ShapeError("correlation: length mismatch " + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()));
  }
  if (a.size() < 3) throw ValueError("correlation: need at least 3 points");
  Correlation c;
  c.pearson = pearson_r(a, b);
  c.spearman = pearson_r(average_ranks(a), average_ranks(b));
  return c;
}

}  // namespace pad::stats
