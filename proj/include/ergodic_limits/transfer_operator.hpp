#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "ergodic_limits/map_families.hpp"

namespace ergodic_limits {

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// N equal cells on Y.
class GridY {
public:
    GridY(Interval y, int n);

    Interval Y() const noexcept { return y_; }
    int size() const noexcept { return n_; }
    double cell_width() const noexcept { return width_; }
    double edge(int i) const noexcept;
    double midpoint(int i) const noexcept { return y_.lo + (i + 0.5) * width_; }
    /// Cell index containing y, clamped to [0, N-1].
    int cell_of(double y) const noexcept;

    std::vector<double> edges() const;
    Eigen::VectorXd midpoints() const;

private:
    Interval y_;
    int n_;
    double width_;
};

/// Intersection of a grid cell with one branch of the induced map.
struct CellPiece {
    int branch = 0;
    double lo = 0.0;
    double hi = 0.0;
    double weight = 0.0;         ///< Lebesgue fraction of the cell
    double image_of_mid = 0.0;   ///< F at the piece midpoint
    int return_time = 1;
};

/// Pointwise form of P at the cell midpoints,
///   (P g)(u_i) = sum_b zeta(y_{b,i}) g(y_{b,i}),   y_{b,i} = F_b^{-1}(u_i),
/// with zeta = rho / F' from the Ulam density, normalized so that each row of
/// weights sums to one. Since F(y_{b,i}) = u_i exactly, P(g o F) = g holds at
/// the midpoints for any g.
struct PreimageQuadrature {
    PreimageTable table;
    /// zeta weights, indexed like the table nodes.
    std::vector<double> weight;
    /// P acting on grid functions through linear interpolation at the nodes.
    SparseRowMatrix interp;
    /// Left fixed vector of interp (sums to one).
    Eigen::VectorXd stationary;
    /// max_i |1 - (unnormalized row sum of zeta)|: density and truncation consistency.
    double normalization_defect = 0.0;

    std::size_t nodes() const noexcept { return table.size(); }
    /// (P g)_i from values g at every node (rows indexed like the nodes).
    Eigen::MatrixXd apply_nodes(const Eigen::MatrixXd& node_values) const;
};

/// Ulam approximation of the induced transfer operator P on Y.
///
/// matrix(i, j) approximates the mu_Y-conditional weight with which source
/// cell j feeds target cell i, so (P g)_i = sum_j matrix(i, j) g_j acts on
/// cell-averaged functions and every row sums to one.
struct TransferApproximation {
    GridY grid;
    SparseRowMatrix matrix;
    /// Lebesgue Ulam matrix (target row, source column), column-stochastic.
    SparseRowMatrix reference;
    /// mu_Y cell masses, summing to one.
    Eigen::VectorXd invariant_density;
    /// Return time of the branch containing each midpoint.
    std::vector<int> cell_tau;
    /// Lebesgue-weighted mean return time over each cell's branch pieces.
    Eigen::VectorXd cell_tau_mean;
    /// Branch pieces of each cell: pieces[piece_offsets[i] .. piece_offsets[i+1]).
    std::vector<CellPiece> pieces;
    std::vector<int> piece_offsets;

    PreimageQuadrature quadrature;

    int power_iterations = 0;
    double fixed_point_residual = 0.0;
    double tail_mass_bound = 0.0;
};

struct UlamOptions {
    double power_tol = 1e-12;
    int max_power_iterations = 100'000;
    bool build_quadrature = true;
};

TransferApproximation build_ulam(const InducedSystem& sys, int n, const UlamOptions& opts = {});

/// Preimage quadrature on the midpoints of op.grid, using op's density.
PreimageQuadrature build_quadrature(const InducedSystem& sys, const TransferApproximation& op,
                                    const UlamOptions& opts = {});

/// Cell pieces of every grid cell (offsets has N+1 entries).
void cell_pieces(const InducedSystem& sys, const GridY& grid, std::vector<CellPiece>& pieces,
                 std::vector<int>& offsets);

/// matrix^k g for an N x d block of grid functions.
Eigen::MatrixXd apply_P(const TransferApproximation& op, const Eigen::MatrixXd& g, int k = 1);

/// mu_Y-weighted mean of each column.
Eigen::RowVectorXd mu_mean(const TransferApproximation& op, const Eigen::MatrixXd& g);

/// Piecewise-linear interpolation through the cell midpoints (linear
/// extrapolation past the outer midpoints).
double interpolate(const GridY& grid, const Eigen::Ref<const Eigen::VectorXd>& values, double y);

/// g o F on the grid: each cell averages the interpolant of g at the images of
/// its branch-piece midpoints.
Eigen::MatrixXd compose_with_F(const TransferApproximation& op, const Eigen::MatrixXd& g);

/// Density of mu_Y with respect to Lebesgue on Y, interpolated at y.
double density_at(const TransferApproximation& op, double y);

struct DistortionReport {
    double max_ratio = 0.0;        ///< sup_a sup_{x in a} zeta(x) / mu_Y(a)
    double holder_constant = 0.0;  ///< Lipschitz constant of log zeta against d(Fx, Fy)
    double min_expansion = 0.0;    ///< inf F'
};

DistortionReport check_distortion(const InducedSystem& sys, const TransferApproximation& op, int samples);

/// CSV dump: first row "N,Y_lo,Y_hi" values, then the dense matrix rows, then
/// the density row.
void write_operator_csv(const TransferApproximation& op, const std::string& path);

}  // namespace ergodic_limits
