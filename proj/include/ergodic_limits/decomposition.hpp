#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "ergodic_limits/map_families.hpp"
#include "ergodic_limits/transfer_operator.hpp"

namespace ergodic_limits {

/// Controls the truncated Neumann-type series sum_{k>=1} P^k g.
struct SeriesOptions {
    /// Sum exactly this many terms instead of stopping adaptively.
    std::optional<int> fixed_terms;
    int max_terms = 10'000;
};

struct SeriesResult {
    Eigen::MatrixXd sum;
    int terms = 0;
    double last_norm = 0.0;
    double decay_ratio = 0.0;
    double tail_bound = 0.0;
};

/// sum_{k=1}^{K} P^{k-1} first, with first = P g already applied by the
/// caller and P the preimage quadrature of op. Adaptive stop:
/// |P^K g|_inf < tol (1 - r) with r the observed geometric decay ratio; the
/// stationary mean is projected out after every application.
SeriesResult neumann_series(const TransferApproximation& op, Eigen::MatrixXd first, double tol,
                            const SeriesOptions& opts = {});

/// An induced observable phi'(y) = sum_{l < tau(y)} v(T^l y) sampled at the
/// cell midpoints (averaged over branch pieces) and pointwise at the preimage
/// quadrature nodes.
struct InducedField {
    Eigen::MatrixXd cells;  ///< N x d
    Eigen::MatrixXd nodes;  ///< (number of nodes) x d

    InducedField& operator+=(const InducedField& o);
    InducedField& operator*=(double a);
    friend InducedField operator+(InducedField a, const InducedField& b) { return a += b; }
    friend InducedField operator-(InducedField a, const InducedField& b) { return a += b * -1.0; }
    friend InducedField operator*(InducedField a, double c) { return a *= c; }
    friend InducedField operator*(double c, InducedField a) { return a *= c; }
};

/// phi' at each cell, averaged over the cell's branch pieces (a single
/// midpoint sample for cells inside one branch).
Eigen::MatrixXd induced_observable(const InducedSystem& sys, const MapDescriptor& map, const Observable& obs,
                                   const GridY& grid);

InducedField induced_field(const InducedSystem& sys, const MapDescriptor& map, const Observable& obs,
                           const TransferApproximation& op);

/// Pointwise phi'(y) by iterating T until the first return to Y.
void induced_value(const MapDescriptor& map, const Observable& obs, Interval y_set, double y, double* out,
                   int* tau = nullptr);

/// Grid-sampled martingale-coboundary decomposition phi' = m' + chi' o F - chi'.
struct Decomposition {
    GridY grid;
    Eigen::MatrixXd phi_prime;  ///< N x d, centered induced observable
    Eigen::MatrixXd chi_prime;  ///< N x d
    Eigen::MatrixXd m_prime;    ///< N x d, phi' - chi' o F + chi'
    Eigen::MatrixXd phi_nodes;  ///< centered phi' at the quadrature nodes
    int K = 0;
    double tail_bound = 0.0;
    double kernel_residual = 0.0;
    double decay_ratio = 0.0;
    /// c with phi' = input - c tau: the observable actually decomposed is
    /// v - c, whose induced mean vanishes on the grid.
    Eigen::RowVectorXd centering_correction;
    /// int_Y tau d mu_Y.
    double tau_mean = 1.0;
};

Decomposition primary_decomposition(const TransferApproximation& op, const InducedField& phi, double tol,
                                    const SeriesOptions& opts = {});

/// m'(y) = phi'(y) - chi'(F y) + chi'(y) at every quadrature node.
Eigen::MatrixXd m_prime_nodes(const TransferApproximation& op, const Decomposition& dec);

struct TowerPoint {
    double y = 0.0;
    int level = 0;
    int tau = 1;
};

/// chi and m lifted to the tower Delta = {(y, l) : 0 <= l < tau(y)}.
///   chi(y, l) = chi'(y) + sum_{k<l} v(T^k y)
///   m(y, l)   = 0 for l <= tau(y) - 2, m'(y) for l = tau(y) - 1
/// with m'(y) = phi'(y) - chi'(F y) + chi'(y) evaluated pointwise and chi'
/// interpolated from the grid.
class TowerFunction {
public:
    TowerFunction(std::shared_ptr<const Decomposition> dec, const InducedSystem& sys, MapDescriptor map,
                  Observable obs);

    int dimension() const noexcept { return obs_.dimension(); }
    Interval Y() const noexcept { return y_; }
    const MapDescriptor& map() const noexcept { return map_; }
    const Observable& observable() const noexcept { return obs_; }
    const Decomposition& decomposition() const noexcept { return *dec_; }

    /// v(x) - c, the observable the grid decomposition actually describes.
    void v(double x, double* out) const noexcept;

    int return_time(double y) const;
    TowerPoint point(double y, int level) const;
    /// f(y, l) = (y, l + 1) below the top level, (F y, 0) at the top.
    TowerPoint step(const TowerPoint& p) const;
    /// F y = T^tau(y) y.
    double induced_map(double y) const;

    void phi(const TowerPoint& p, double* out) const;
    void chi(const TowerPoint& p, double* out) const;
    void m(const TowerPoint& p, double* out) const;

    void chi_prime(double y, double* out) const;
    void phi_prime(double y, double* out) const;
    void m_prime(double y, double* out) const;

private:
    std::shared_ptr<const Decomposition> dec_;
    MapDescriptor map_;
    Observable obs_;
    std::vector<double> correction_;
    Interval y_;
    bool unit_tower_;
};

TowerFunction lift_to_tower(const Decomposition& dec, const InducedSystem& sys, const MapDescriptor& map,
                            const Observable& obs);

/// max |phi(p) - m(p) - chi(f p) + chi(p)| over tower points with y uniform
/// on Y and the level uniform below tau(y).
double tower_identity_error(const TowerFunction& tf, int points, std::uint64_t seed);

/// max |(P m')(u)| over points u uniform in Y, off the grid: P is summed over
/// every retained branch with density-based weights normalized to one, and m'
/// uses chi' interpolated at the preimages.
double offgrid_kernel_residual(const TransferApproximation& op, const InducedSystem& sys, const TowerFunction& tf,
                               int points, std::uint64_t seed);

/// Grid form of the secondary decomposition of UL(m m^T) - Sigma. Matrix-valued
/// fields are stored with one column per entry of the d x d matrix
/// (column-major flattening).
struct SecondaryDecomposition {
    Eigen::MatrixXd phi_breve_prime;  ///< (P(m'm'^T)) o F - tau Sigma
    Eigen::MatrixXd chi_breve_prime;
    Eigen::MatrixXd m_breve_prime;
    Eigen::MatrixXd p_mm;             ///< P(m'm'^T)
    Eigen::MatrixXd sigma_mart;       ///< d x d
    int K = 0;
    double tail_bound = 0.0;
    double kernel_residual = 0.0;
    double decay_ratio = 0.0;
};

/// Sigma = int_Y m'm'^T d mu_Y / int_Y tau d mu_Y by preimage quadrature.
Eigen::MatrixXd martingale_covariance(const TransferApproximation& op, const Decomposition& dec);

SecondaryDecomposition secondary_decomposition(const TransferApproximation& op, const Decomposition& dec, double tol,
                                               const SeriesOptions& opts = {});

struct GrowthReport {
    double slope = 0.0;
    double p = 2.0;
    std::vector<std::int64_t> n;
    std::vector<double> norm;  ///< L^p norm of max_{k<=n} |chi o f^k - chi|
};

/// Exponent p used by the growth diagnostics: min(2, 0.9/gamma) for LSV, 2 otherwise.
double growth_moment(const MapDescriptor& map);

GrowthReport chi_growth_exponent(const TowerFunction& tf, std::int64_t n_max, int samples, std::uint64_t seed,
                                 std::optional<double> p = std::nullopt, std::int64_t burn_in = 1'000);

}  // namespace ergodic_limits
