#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "ergodic_limits/stats.hpp"

using namespace ergodic_limits::stats;
using doctest::Approx;

TEST_CASE("normal cdf and Kolmogorov tail") {
    CHECK(normal_cdf(0.0) == Approx(0.5));
    CHECK(normal_cdf(1.959963984540054) == Approx(0.975).epsilon(1e-12));
    CHECK(normal_cdf(-1.0) == Approx(0.15865525393145707).epsilon(1e-12));
    CHECK(kolmogorov_sf(0.0) == Approx(1.0));
    CHECK(kolmogorov_sf(1.3580986393225507) == Approx(0.05).epsilon(1e-8));
    CHECK(kolmogorov_sf(0.5) == Approx(0.9639452436648751).epsilon(1e-10));
    CHECK(kolmogorov_sf(3.0) < 1e-7);
    // Continuity across the switch between the two series.
    for (double l = 0.2; l < 3.0; l += 0.01) CHECK(kolmogorov_sf(l) >= kolmogorov_sf(l + 0.01));
}

TEST_CASE("KS tests") {
    std::mt19937_64 gen(3);
    std::normal_distribution<double> n01;
    std::vector<double> x(5000), y(5000), u(5000);
    for (auto& v : x) v = n01(gen);
    for (auto& v : y) v = n01(gen);
    for (auto& v : u) v = n01(gen) * 1.2;
    CHECK(ks_normal(x).pvalue > 0.01);
    CHECK(ks_normal(u).pvalue < 1e-6);
    CHECK(ks_two_sample(x, y).pvalue > 0.01);
    CHECK(ks_two_sample(x, u).pvalue < 1e-3);

    const std::vector<double> one{0.0};
    CHECK(ks_normal(one).statistic == Approx(0.5));
}

TEST_CASE("moments and regression") {
    const std::vector<double> a{1, 2, 3, 4, 5};
    CHECK(mean(a) == Approx(3.0));
    CHECK(variance(a) == Approx(2.5));
    CHECK(quantile(a, 0.5) == Approx(3.0));
    CHECK(quantile(a, 0.125) == Approx(1.5));
    CHECK(iqr(a) == Approx(2.0));
    CHECK(correlation(a, a) == Approx(1.0));
    CHECK(correlation_pvalue(0.0, 100) == Approx(1.0));
    CHECK(correlation_pvalue(0.5, 100) < 1e-5);

    const std::vector<double> y{3, 5, 7, 9, 11};
    const Regression r = linear_regression(a, y);
    CHECK(r.slope == Approx(2.0));
    CHECK(r.intercept == Approx(1.0));
    CHECK(r.slope_std_err == Approx(0.0).epsilon(1e-12));

    std::mt19937_64 gen(5);
    std::normal_distribution<double> n01;
    std::vector<double> g(200000);
    for (auto& v : g) v = n01(gen);
    CHECK(kurtosis(g) == Approx(3.0).epsilon(0.03));
}
