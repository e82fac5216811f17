#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ergodic_limits::stats {

double normal_cdf(double x) noexcept;

/// Survival function of the Kolmogorov distribution, P(K > lambda).
double kolmogorov_sf(double lambda) noexcept;

struct KsResult {
    double statistic = 0.0;
    double pvalue = 1.0;
};

/// One-sample KS test against the standard normal law.
KsResult ks_normal(std::span<const double> x);
/// Two-sample KS test.
KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);

struct Regression {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_std_err = 0.0;
};

Regression linear_regression(std::span<const double> x, std::span<const double> y);

double mean(std::span<const double> x) noexcept;
/// Unbiased sample variance.
double variance(std::span<const double> x) noexcept;
/// Fourth standardized moment (3 for a Gaussian).
double kurtosis(std::span<const double> x) noexcept;
double correlation(std::span<const double> x, std::span<const double> y) noexcept;
/// Two-sided p-value for zero correlation via the Fisher transform.
double correlation_pvalue(double r, std::size_t n) noexcept;

/// Linear-interpolation quantile, q in [0,1].
double quantile(std::vector<double> x, double q);
double iqr(std::span<const double> x);

}  // namespace ergodic_limits::stats
