#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ergodic_limits/decomposition.hpp"
#include "ergodic_limits/map_families.hpp"

namespace ergodic_limits {

enum class InitialLaw { LebesgueOnDomain, InvariantApprox };

struct McConfig {
    std::int64_t n_orbit = 10'000;
    std::int64_t n_samples = 10'000;
    /// Applied only for InitialLaw::InvariantApprox.
    std::int64_t burn_in = 1'000;
    std::uint64_t seed = 1;
    InitialLaw initial_law = InitialLaw::InvariantApprox;
    /// Worker threads, 0 for the OpenMP default. Results never depend on it.
    int threads = 0;

    void validate() const;
};

/// Row i is S_n v for an orbit driven by stream (seed, i).
Eigen::MatrixXd birkhoff_samples(const MapDescriptor& map, const Observable& obs, const McConfig& cfg);

enum class CovarianceMethod { Direct, GreenKubo, Martingale };

std::string to_string(CovarianceMethod m);

struct CovarianceOptions {
    std::int64_t gk_length = 10'000'000;
    int gk_max_lag = 10'000;
    /// Sum exactly this many lags instead of applying the noise-floor rule.
    std::optional<int> gk_lags;
    int gk_batches = 20;
    int jackknife_groups = 20;
    /// Martingale method: grid size and series tolerance. The std_err is
    /// the change from a grid of half the size.
    int grid_cells = 4096;
    int tau_max = 500;
    double series_tol = 1e-10;
    /// InsufficientData needs std_err above both 0.2 |sigma| and this floor.
    double abs_floor = 1e-3;
};

struct CovarianceEstimate {
    Eigen::MatrixXd sigma;
    Eigen::MatrixXd std_err;
    CovarianceMethod method = CovarianceMethod::Direct;
    std::int64_t n_used = 0;
    /// Lags summed by Green-Kubo.
    int gk_lags = 0;
};

CovarianceEstimate covariance(const MapDescriptor& map, const Observable& obs, const McConfig& cfg,
                              CovarianceMethod method, const CovarianceOptions& opts = {});

struct MomentReport {
    double p = 2.0;
    /// NaN when every moment vanishes.
    double slope = 0.0;
    std::vector<std::int64_t> n;
    std::vector<double> value;  ///< E[max_{j<=n} |S_j|^p]^{1/p}
};

MomentReport moment_scaling(const MapDescriptor& map, const Observable& obs, const McConfig& cfg, double p,
                            const std::vector<std::int64_t>& n_ladder);

struct WipTimeResult {
    double time = 0.0;
    int functional = 0;
    double ks_statistic = 0.0;
    double pvalue = 1.0;
    double variance = 0.0;  ///< sample variance of W_n(t)
};

struct WipReport {
    double ks_statistic = 0.0;  ///< largest over times and functionals
    double ks_pvalue = 1.0;     ///< smallest over times and functionals
    std::vector<double> times_tested;
    std::vector<WipTimeResult> per_time;
    double increments_independent_pvalue = 1.0;
    double increment_correlation = 0.0;
    /// Least-squares slope of Var W_n(t) against t through the origin, and
    /// the sigma^2 it should match (first functional).
    double variance_slope = 0.0;
    double sigma2 = 0.0;
    /// Fourth standardized moment of W_n(max t).
    double kurtosis = 0.0;
};

/// W_n(t) = S_{floor(nt)} / sqrt(n), n = cfg.n_orbit, centered by the
/// ensemble mean. For d > 1 the tests run on c^T W_n for three fixed c.
WipReport wip_test(const MapDescriptor& map, const Observable& obs, const McConfig& cfg,
                   const CovarianceEstimate& sigma, const std::vector<double>& times);

struct FamilyMember {
    MapDescriptor map;
    Observable obs;
};

struct SweepReport {
    std::vector<CovarianceEstimate> estimates;
    double max_consecutive_diff = 0.0;
    double last_consecutive_diff = 0.0;
    /// Joint std_err of the last consecutive pair.
    double last_joint_std_err = 0.0;
    /// Distinct covariance values, each the mean of its cluster.
    std::vector<Eigen::MatrixXd> accumulation_points;
    std::vector<int> cluster_of;
};

SweepReport family_sweep(const std::vector<FamilyMember>& family, const McConfig& cfg, CovarianceMethod method,
                         const CovarianceOptions& opts = {});

struct B1B2Report {
    std::vector<std::int64_t> n;
    std::vector<double> times;
    Eigen::MatrixXd b1_iqr;     ///< n x times
    Eigen::MatrixXd b1_median;  ///< n x times
    std::vector<double> b2_sum;
    double sigma_trace = 0.0;
    double eps_prime = 1.0;
};

/// Tower orbits for the conditional-variance sums n^{-1} sum_{j<nt} UL(m m^T) o f^j
/// (trace) and the Lindeberg sums n^{-1} sum_{j<n} |m|^2 1{|m| >= eps' sqrt n}.
B1B2Report martingale_array_check(const TowerFunction& tf, const SecondaryDecomposition& sec, const McConfig& cfg,
                                  const std::vector<std::int64_t>& n_ladder, const std::vector<double>& times,
                                  double eps_prime = 1.0);

void write_covariance_csv(const std::filesystem::path& path, const std::vector<CovarianceEstimate>& estimates);
void write_wip_csv(const std::filesystem::path& path, const WipReport& rep);
void write_moments_csv(const std::filesystem::path& path, const std::vector<MomentReport>& reps);
void write_b1b2_csv(const std::filesystem::path& path, const B1B2Report& rep);

}  // namespace ergodic_limits
