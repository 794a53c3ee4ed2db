#include <doctest.h>

#include <cmath>
#include <vector>

#include "pad/error.hpp"
#include "pad/rng.hpp"
#include "pad/stats.hpp"

using namespace pad;

namespace {

// Published reference sample for the W test (complete, n = 25):
// w = 0.83467, p = 0.000914.
const std::vector<double> kReference25 = {
    .139, .157,  .175,  .256,  .344,  .413, .503,  .577,  .614,
    .655, .954,  1.392, 1.557, 1.648, 1.690, 1.994, 2.174, 2.206,
    3.245, 3.510, 3.571, 4.354, 4.980, 6.084, 8.351};

}  // namespace

TEST_SUITE("stats") {

TEST_CASE("normal quantile matches tabulated values") {
  CHECK(stats::normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(stats::normal_quantile(0.975) == doctest::Approx(1.959964).epsilon(1e-4));
  CHECK(stats::normal_quantile(0.025) == doctest::Approx(-1.959964).epsilon(1e-4));
  CHECK(stats::normal_quantile(0.841344746) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(stats::normal_quantile(0.001) == doctest::Approx(-3.090232).epsilon(1e-4));
  CHECK_THROWS_AS(stats::normal_quantile(0.0), ValueError);
  CHECK_THROWS_AS(stats::normal_quantile(1.0), ValueError);
}

TEST_CASE("W test reproduces the published reference sample") {
  auto r = stats::shapiro_wilk(kReference25);
  CHECK(r.w == doctest::Approx(0.83467).epsilon(1e-4));
  CHECK(r.p == doctest::Approx(0.000914).epsilon(0.02));
}

TEST_CASE("W test is order independent") {
  std::vector<double> shuffled = kReference25;
  Rng rng(123);
  for (std::size_t i = shuffled.size(); i > 1; --i) {
    std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
  }
  auto r1 = stats::shapiro_wilk(kReference25);
  auto r2 = stats::shapiro_wilk(shuffled);
  CHECK(r1.w == r2.w);
  CHECK(r1.p == r2.p);
}

TEST_CASE("W stays in range and accepts normal samples") {
  Rng rng(777);
  std::vector<double> x(2000);
  for (auto& v : x) v = rng.normal();
  auto r = stats::shapiro_wilk(x);
  CHECK(r.w > 0.0);
  CHECK(r.w <= 1.0);
  CHECK(r.p > 0.05);  // seeded draw from the null
}

TEST_CASE("W rejects clearly non-normal samples") {
  Rng rng(13);
  std::vector<double> x(500);
  for (auto& v : x) {
    const double u = rng.uniform();
    v = u * u * u * u;  // heavily right-skewed
  }
  auto r = stats::shapiro_wilk(x);
  CHECK(r.p < 1e-6);
}

TEST_CASE("small n edge cases") {
  auto r3 = stats::shapiro_wilk({1.0, 2.0, 10.0});
  CHECK(r3.w > 0.0);
  CHECK(r3.w <= 1.0);
  CHECK(r3.p >= 0.0);
  CHECK(r3.p <= 1.0);
  // n=4..11 exercises the small-sample p branch
  for (std::size_t n = 4; n <= 11; ++n) {
    Rng rng(n);
    std::vector<double> x(n);
    for (auto& v : x) v = rng.normal();
    auto r = stats::shapiro_wilk(x);
    CHECK(r.w > 0.0);
    CHECK(r.w <= 1.0);
    CHECK(r.p >= 0.0);
    CHECK(r.p <= 1.0);
  }
}

TEST_CASE("W test input validation") {
  CHECK_THROWS_AS(stats::shapiro_wilk({1.0, 2.0}), ValueError);
  CHECK_THROWS_AS(stats::shapiro_wilk(std::vector<double>(5001, 0.0)), ValueError);
  CHECK_THROWS_AS(stats::shapiro_wilk({2.0, 2.0, 2.0, 2.0}), ValueError);
}

TEST_CASE("symmetric sample has exactly zero skewness") {
  CHECK(stats::skewness({1, 2, 3, 4, 5}) == 0.0);
  CHECK(stats::skewness({-3, 0, 3}) == 0.0);
}

TEST_CASE("moments match seeded reference distributions") {
  Rng rng(2024);
  std::vector<double> normal(100000), uniform(100000);
  for (auto& v : normal) v = rng.normal();
  for (auto& v : uniform) v = rng.uniform();
  CHECK(std::abs(stats::skewness(normal)) < 0.05);
  CHECK(std::abs(stats::excess_kurtosis(normal)) < 0.1);
  // analytic excess kurtosis of the uniform distribution is -1.2
  CHECK(stats::excess_kurtosis(uniform) == doctest::Approx(-1.2).epsilon(0.05 / 1.2));
  CHECK(stats::mean(uniform) == doctest::Approx(0.5).epsilon(0.01));
  CHECK(stats::variance(uniform) == doctest::Approx(1.0 / 12.0).epsilon(0.02));
}

TEST_CASE("constant input degenerates to zero moments") {
  CHECK(stats::skewness({7, 7, 7, 7}) == 0.0);
  CHECK(stats::excess_kurtosis({7, 7, 7, 7}) == 0.0);
  CHECK(stats::variance({7, 7, 7, 7}) == 0.0);
}

TEST_CASE("average ranks handle ties") {
  auto r = stats::average_ranks({10.0, 20.0, 20.0, 30.0});
  CHECK(r == std::vector<double>{1.0, 2.5, 2.5, 4.0});
  auto all_tied = stats::average_ranks({5.0, 5.0, 5.0});
  CHECK(all_tied == std::vector<double>{2.0, 2.0, 2.0});
}

TEST_CASE("affine relation gives correlation 1") {
  std::vector<double> a = {1, 2, 5, 3, 9, 4};
  std::vector<double> b;
  for (double v : a) b.push_back(2 * v + 1);
  auto c = stats::correlation(a, b);
  CHECK(c.pearson == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c.spearman == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("monotone decreasing relation gives spearman -1") {
  std::vector<double> a = {0.3, 1.7, -0.4, 2.5, 0.9};
  std::vector<double> b;
  for (double v : a) b.push_back(-v * v * v);
  auto c = stats::correlation(a, b);
  CHECK(c.spearman == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(c.pearson > -1.0);  // nonlinear, so strictly above -1
}

TEST_CASE("six point fixture matches hand-computed correlation") {
  // pearson from the definition: a = {1..6}, b = {2,1,4,3,7,5};
  // ma = 3.5, mb = 11/3, sab = 16, saa = 17.5, sbb = 104 - 6*(11/3)^2
  std::vector<double> a = {1, 2, 3, 4, 5, 6};
  std::vector<double> b = {2, 1, 4, 3, 7, 5};
  auto c = stats::correlation(a, b);
  const double sbb = 104.0 - 6.0 * (11.0 / 3.0) * (11.0 / 3.0);
  CHECK(c.pearson == doctest::Approx(16.0 / std::sqrt(17.5 * sbb)).epsilon(1e-9));
  // spearman: distinct values, rank diffs all +-1 -> 1 - 6*6/(6*35)
  CHECK(c.spearman == doctest::Approx(1.0 - 36.0 / 210.0).epsilon(1e-12));
}

TEST_CASE("correlation input validation") {
  CHECK_THROWS_AS(stats::correlation({1, 2, 3}, {1, 2}), ShapeError);
  CHECK_THROWS_AS(stats::correlation({1, 2}, {1, 2}), ValueError);
  CHECK_THROWS_AS(stats::correlation({1, 1, 1}, {1, 2, 3}), ValueError);
}

}  // TEST_SUITE
