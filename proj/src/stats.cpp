#include "ergodic_limits/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "ergodic_limits/errors.hpp"

namespace ergodic_limits::stats {

double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double kolmogorov_sf(double lambda) noexcept {
    if (!(lambda > 0.0)) return 1.0;
    if (lambda < 1.0) {
        // P(K <= lambda) = sqrt(2 pi)/lambda sum_k exp(-(2k-1)^2 pi^2 / (8 lambda^2))
        const double c = -std::numbers::pi * std::numbers::pi / (8.0 * lambda * lambda);
        double s = 0.0;
        for (int k = 1; k <= 20; ++k) s += std::exp(c * (2 * k - 1) * (2 * k - 1));
        return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * s, 0.0, 1.0);
    }
    double s = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        s += (k % 2 ? 2.0 : -2.0) * term;
        if (term < 1e-18) break;
    }
    return std::clamp(s, 0.0, 1.0);
}

namespace {

double ks_pvalue(double d, double n_eff) {
    const double sq = std::sqrt(n_eff);
    return kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d);
}

}  // namespace

KsResult ks_normal(std::span<const double> x) {
    if (x.empty()) throw InvalidArgument("KS test needs at least one sample");
    std::vector<double> s(x.begin(), x.end());
    std::sort(s.begin(), s.end());
    const double n = static_cast<double>(s.size());
    double d = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double f = normal_cdf(s[i]);
        d = std::max({d, (i + 1) / n - f, f - i / n});
    }
    return {d, ks_pvalue(d, n)};
}

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw InvalidArgument("KS test needs non-empty samples");
    std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    const double nx = static_cast<double>(x.size());
    const double ny = static_cast<double>(y.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < x.size() && j < y.size()) {
        const double v = std::min(x[i], y[j]);
        while (i < x.size() && x[i] == v) ++i;
        while (j < y.size() && y[j] == v) ++j;
        d = std::max(d, std::abs(i / nx - j / ny));
    }
    return {d, ks_pvalue(d, nx * ny / (nx + ny))};
}

Regression linear_regression(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("regression needs two equal-length series");
    const double n = static_cast<double>(x.size());
    const double mx = mean(x), my = mean(y);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (!(sxx > 0.0)) throw InvalidArgument("regression abscissae are all equal");
    Regression r;
    r.slope = sxy / sxx;
    r.intercept = my - r.slope * mx;
    if (x.size() > 2) {
        double rss = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double e = y[i] - r.intercept - r.slope * x[i];
            rss += e * e;
        }
        r.slope_std_err = std::sqrt(rss / (n - 2.0) / sxx);
    }
    return r;
}

double mean(std::span<const double> x) noexcept {
    if (x.empty()) return 0.0;
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance(std::span<const double> x) noexcept {
    if (x.size() < 2) return 0.0;
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
}

double kurtosis(std::span<const double> x) noexcept {
    if (x.size() < 2) return 0.0;
    const double m = mean(x);
    double m2 = 0.0, m4 = 0.0;
    for (double v : x) {
        const double d2 = (v - m) * (v - m);
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= static_cast<double>(x.size());
    m4 /= static_cast<double>(x.size());
    return m2 > 0.0 ? m4 / (m2 * m2) : 0.0;
}

double correlation(std::span<const double> x, std::span<const double> y) noexcept {
    const std::size_t n = std::min(x.size(), y.size());
    if (n < 2) return 0.0;
    const double mx = mean(x.first(n)), my = mean(y.first(n));
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxx > 0.0 && syy > 0.0 ? sxy / std::sqrt(sxx * syy) : 0.0;
}

double correlation_pvalue(double r, std::size_t n) noexcept {
    if (n < 4) return 1.0;
    const double z = std::atanh(std::clamp(r, -0.999999999999, 0.999999999999)) * std::sqrt(static_cast<double>(n) - 3.0);
    return 2.0 * (1.0 - normal_cdf(std::abs(z)));
}

double quantile(std::vector<double> x, double q) {
    if (x.empty()) throw InvalidArgument("quantile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("quantile level must lie in [0,1]");
    std::sort(x.begin(), x.end());
    const double pos = q * static_cast<double>(x.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, x.size() - 1);
    return x[lo] + (pos - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

double iqr(std::span<const double> x) {
    std::vector<double> v(x.begin(), x.end());
    return quantile(v, 0.75) - quantile(v, 0.25);
}

}  // namespace ergodic_limits::stats
