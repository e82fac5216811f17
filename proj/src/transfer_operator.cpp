#include "ergodic_limits/transfer_operator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "ergodic_limits/errors.hpp"

namespace ergodic_limits {

GridY::GridY(Interval y, int n) : y_(y), n_(n), width_(y.width() / n) {
    if (n < 2) throw InvalidArgument("grid needs N >= 2 cells");
    if (!(y.width() > 0.0)) throw InvalidArgument("grid interval must have positive width");
}

double GridY::edge(int i) const noexcept {
    if (i <= 0) return y_.lo;
    if (i >= n_) return y_.hi;
    return y_.lo + i * width_;
}

int GridY::cell_of(double y) const noexcept {
    const double t = (y - y_.lo) / width_;
    if (!(t > 0.0)) return 0;
    const int i = static_cast<int>(t);
    return std::min(i, n_ - 1);
}

std::vector<double> GridY::edges() const {
    std::vector<double> e(static_cast<std::size_t>(n_) + 1);
    for (int i = 0; i <= n_; ++i) e[static_cast<std::size_t>(i)] = edge(i);
    return e;
}

Eigen::VectorXd GridY::midpoints() const {
    Eigen::VectorXd m(n_);
    for (int i = 0; i < n_; ++i) m[i] = midpoint(i);
    return m;
}

void cell_pieces(const InducedSystem& sys, const GridY& grid, std::vector<CellPiece>& pieces,
                 std::vector<int>& offsets) {
    const auto& branches = sys.branches();
    const int n = grid.size();
    pieces.clear();
    offsets.assign(static_cast<std::size_t>(n) + 1, 0);
    std::size_t b = 0;
    for (int i = 0; i < n; ++i) {
        offsets[static_cast<std::size_t>(i)] = static_cast<int>(pieces.size());
        const double lo = grid.edge(i);
        const double hi = grid.edge(i + 1);
        while (b < branches.size() && branches[b].interval.hi <= lo) ++b;
        for (std::size_t k = b; k < branches.size() && branches[k].interval.lo < hi; ++k) {
            const double plo = std::max(lo, branches[k].interval.lo);
            const double phi = std::min(hi, branches[k].interval.hi);
            if (!(phi > plo)) continue;
            CellPiece p;
            p.branch = static_cast<int>(k);
            p.lo = plo;
            p.hi = phi;
            p.weight = (phi - plo) / grid.cell_width();
            p.return_time = branches[k].return_time;
            const double mid = 0.5 * (plo + phi);
            p.image_of_mid = sys.forward(k, mid);
            pieces.push_back(p);
        }
    }
    offsets[static_cast<std::size_t>(n)] = static_cast<int>(pieces.size());
}

TransferApproximation build_ulam(const InducedSystem& sys, int n, const UlamOptions& opts) {
    GridY grid(sys.Y(), n);
    const std::vector<double> edges = grid.edges();
    const auto preimages = sys.inverse_images(edges);
    const double w = grid.cell_width();

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(n) * (sys.branches().size() + 2));
    for (std::size_t b = 0; b < preimages.size(); ++b) {
        const auto& e = preimages[b];
        for (int i = 0; i < n; ++i) {
            double lo = e[static_cast<std::size_t>(i)];
            double hi = e[static_cast<std::size_t>(i) + 1];
            if (hi < lo) std::swap(lo, hi);
            if (!(hi > lo)) continue;
            const int j0 = grid.cell_of(lo);
            const int j1 = grid.cell_of(hi);
            for (int j = j0; j <= j1; ++j) {
                const double olo = std::max(lo, grid.edge(j));
                const double ohi = std::min(hi, grid.edge(j + 1));
                if (ohi > olo) trip.emplace_back(i, j, (ohi - olo) / w);
            }
        }
    }
    SparseRowMatrix ref(n, n);
    ref.setFromTriplets(trip.begin(), trip.end());
    trip.clear();
    trip.shrink_to_fit();

    // Renormalize columns: the truncated tail is dropped and its mass spread
    // proportionally over the retained branches.
    Eigen::VectorXd colsum = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i)
        for (SparseRowMatrix::InnerIterator it(ref, i); it; ++it) colsum[it.col()] += it.value();
    for (int j = 0; j < n; ++j) {
        if (!(colsum[j] > 0.0)) {
            throw TruncationError("grid cell " + std::to_string(j) + " lies entirely in the truncated tail");
        }
    }
    for (int i = 0; i < n; ++i)
        for (SparseRowMatrix::InnerIterator it(ref, i); it; ++it) it.valueRef() /= colsum[it.col()];

    TransferApproximation op{grid, {}, {}, {}, {}, {}, {}, {}, {}, 0, 0.0, sys.tail_mass_bound()};

    Eigen::VectorXd h = Eigen::VectorXd::Constant(n, 1.0 / n);
    int it = 0;
    double change = std::numeric_limits<double>::infinity();
    while (change >= opts.power_tol) {
        if (it >= opts.max_power_iterations) {
            throw ConvergenceError("power iteration for the invariant density did not converge in " +
                                   std::to_string(it) + " iterations");
        }
        Eigen::VectorXd next = ref * h;
        next /= next.sum();
        change = (next - h).lpNorm<1>();
        h.swap(next);
        ++it;
    }
    op.power_iterations = it;

    // P(i, j) = h_j M(i, j) / sum_j h_j M(i, j).
    SparseRowMatrix p = ref * h.asDiagonal();
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (SparseRowMatrix::InnerIterator e(p, i); e; ++e) s += e.value();
        if (!(s > 0.0)) throw ConvergenceError("target cell " + std::to_string(i) + " carries no invariant mass");
        for (SparseRowMatrix::InnerIterator e(p, i); e; ++e) e.valueRef() /= s;
    }
    p.makeCompressed();
    op.fixed_point_residual = (Eigen::VectorXd(p.transpose() * h) - h).lpNorm<1>();
    op.matrix = std::move(p);
    op.reference = std::move(ref);
    op.invariant_density = std::move(h);

    cell_pieces(sys, grid, op.pieces, op.piece_offsets);
    op.cell_tau.resize(static_cast<std::size_t>(n));
    op.cell_tau_mean.resize(n);
    for (int i = 0; i < n; ++i) {
        const double mid = grid.midpoint(i);
        if (auto b = sys.branch_of(mid)) {
            op.cell_tau[static_cast<std::size_t>(i)] = sys.branches()[*b].return_time;
        } else {
            op.cell_tau[static_cast<std::size_t>(i)] = first_return_time(sys.map(), sys.Y(), mid);
        }
        double s = 0.0;
        double ws = 0.0;
        for (int k = op.piece_offsets[static_cast<std::size_t>(i)]; k < op.piece_offsets[static_cast<std::size_t>(i) + 1]; ++k) {
            const CellPiece& pc = op.pieces[static_cast<std::size_t>(k)];
            s += pc.weight * pc.return_time;
            ws += pc.weight;
        }
        op.cell_tau_mean[i] = s / ws;
    }
    if (opts.build_quadrature) op.quadrature = build_quadrature(sys, op, opts);
    return op;
}

PreimageQuadrature build_quadrature(const InducedSystem& sys, const TransferApproximation& op,
                                    const UlamOptions& opts) {
    const GridY& grid = op.grid;
    const int n = grid.size();
    const Eigen::VectorXd mids = grid.midpoints();
    PreimageQuadrature q;
    q.table = sys.preimage_table(std::span<const double>(mids.data(), static_cast<std::size_t>(n)));
    const std::size_t nb = q.table.branches();
    const std::size_t m = q.table.points();
    q.weight.resize(q.table.size());

    const Eigen::VectorXd rho = op.invariant_density / grid.cell_width();
    auto density = [&](double y) { return std::max(0.0, interpolate(grid, rho, y)); };
    std::vector<double> row_sum(m, 0.0);
    for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t k = 0; k < m; ++k) {
            const double w = density(q.table.node(b, k)) / q.table.derivative(b, k);
            q.weight[b * m + k] = w;
            row_sum[k] += w;
        }
    for (std::size_t k = 0; k < m; ++k) {
        const double r = density(mids[static_cast<Eigen::Index>(k)]);
        if (!(row_sum[k] > 0.0)) throw ConvergenceError("midpoint " + std::to_string(k) + " has no preimage weight");
        q.normalization_defect = std::max(q.normalization_defect, std::abs(1.0 - row_sum[k] / r));
    }
    for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t k = 0; k < m; ++k) q.weight[b * m + k] /= row_sum[k];

    // Linear interpolation through the midpoints, extrapolated past the ends.
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(2 * q.table.size());
    const double w = grid.cell_width();
    for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t k = 0; k < m; ++k) {
            const double t = (q.table.node(b, k) - grid.Y().lo) / w - 0.5;
            const int j = std::clamp(static_cast<int>(std::floor(t)), 0, n - 2);
            const double frac = t - j;
            const double z = q.weight[b * m + k];
            const int i = static_cast<int>(k);
            trip.emplace_back(i, j, z * (1.0 - frac));
            trip.emplace_back(i, j + 1, z * frac);
        }
    q.interp.resize(n, n);
    q.interp.setFromTriplets(trip.begin(), trip.end());
    q.interp.makeCompressed();

    Eigen::VectorXd pi = op.invariant_density;
    double change = std::numeric_limits<double>::infinity();
    for (int it = 0; change >= opts.power_tol; ++it) {
        if (it >= opts.max_power_iterations)
            throw ConvergenceError("stationary vector of the preimage quadrature did not converge");
        Eigen::VectorXd next = q.interp.transpose() * pi;
        next /= next.sum();
        change = (next - pi).lpNorm<1>();
        pi.swap(next);
    }
    q.stationary = std::move(pi);
    return q;
}

Eigen::MatrixXd PreimageQuadrature::apply_nodes(const Eigen::MatrixXd& node_values) const {
    const std::size_t m = table.points();
    const std::size_t nb = table.branches();
    if (static_cast<std::size_t>(node_values.rows()) != table.size())
        throw InvalidArgument("node field has the wrong number of rows");
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), node_values.cols());
    for (std::size_t b = 0; b < nb; ++b) {
        const auto blk = node_values.middleRows(static_cast<Eigen::Index>(b * m), static_cast<Eigen::Index>(m));
        const Eigen::Map<const Eigen::VectorXd> wb(weight.data() + b * m, static_cast<Eigen::Index>(m));
        out += wb.asDiagonal() * blk;
    }
    return out;
}

Eigen::MatrixXd apply_P(const TransferApproximation& op, const Eigen::MatrixXd& g, int k) {
    if (k < 1) throw InvalidArgument("apply_P needs k >= 1");
    if (g.rows() != op.grid.size()) throw InvalidArgument("apply_P: grid function has the wrong length");
    Eigen::MatrixXd out = op.matrix * g;
    for (int i = 1; i < k; ++i) out = op.matrix * out;
    return out;
}

Eigen::RowVectorXd mu_mean(const TransferApproximation& op, const Eigen::MatrixXd& g) {
    return op.invariant_density.transpose() * g;
}

double interpolate(const GridY& grid, const Eigen::Ref<const Eigen::VectorXd>& values, double y) {
    const int n = grid.size();
    const double t = (y - grid.Y().lo) / grid.cell_width() - 0.5;
    int i = static_cast<int>(std::floor(t));
    i = std::clamp(i, 0, n - 2);
    const double frac = t - i;
    return values[i] + frac * (values[i + 1] - values[i]);
}

Eigen::MatrixXd compose_with_F(const TransferApproximation& op, const Eigen::MatrixXd& g) {
    const int n = op.grid.size();
    Eigen::MatrixXd out(n, g.cols());
    for (int i = 0; i < n; ++i) {
        const int begin = op.piece_offsets[static_cast<std::size_t>(i)];
        const int end = op.piece_offsets[static_cast<std::size_t>(i) + 1];
        double ws = 0.0;
        for (int k = begin; k < end; ++k) ws += op.pieces[static_cast<std::size_t>(k)].weight;
        for (Eigen::Index c = 0; c < g.cols(); ++c) {
            double s = 0.0;
            for (int k = begin; k < end; ++k) {
                const CellPiece& p = op.pieces[static_cast<std::size_t>(k)];
                s += p.weight * interpolate(op.grid, g.col(c), p.image_of_mid);
            }
            out(i, c) = s / ws;
        }
    }
    return out;
}

double density_at(const TransferApproximation& op, double y) {
    const Eigen::VectorXd rho = op.invariant_density / op.grid.cell_width();
    return std::max(0.0, interpolate(op.grid, rho, y));
}

DistortionReport check_distortion(const InducedSystem& sys, const TransferApproximation& op, int samples) {
    if (samples < 2) throw InvalidArgument("check_distortion needs at least 2 samples per branch");
    const Interval y = sys.Y();
    std::vector<double> us(static_cast<std::size_t>(samples));
    for (int k = 0; k < samples; ++k) us[static_cast<std::size_t>(k)] = y.lo + (k + 0.5) / samples * y.width();
    const auto xs = sys.inverse_images(us);
    const GridY& grid = op.grid;

    const Eigen::VectorXd rho = op.invariant_density / grid.cell_width();
    auto density = [&](double v) { return std::max(0.0, interpolate(grid, rho, v)); };

    DistortionReport rep;
    rep.min_expansion = std::numeric_limits<double>::infinity();
    std::vector<double> log_zeta(static_cast<std::size_t>(samples));
    for (std::size_t b = 0; b < sys.branches().size(); ++b) {
        const Interval a = sys.branches()[b].interval;
        // mu_Y(a) from the piecewise-constant cell density.
        double mu_a = 0.0;
        for (int j = grid.cell_of(a.lo); j <= grid.cell_of(a.hi); ++j) {
            const double ov = std::min(a.hi, grid.edge(j + 1)) - std::max(a.lo, grid.edge(j));
            if (ov > 0.0) mu_a += op.invariant_density[j] * ov / grid.cell_width();
        }
        if (!(mu_a > 0.0)) continue;
        for (int k = 0; k < samples; ++k) {
            const double x = xs[b][static_cast<std::size_t>(k)];
            const double fx = us[static_cast<std::size_t>(k)];
            const double dfx = sys.forward_derivative(b, x);
            rep.min_expansion = std::min(rep.min_expansion, dfx);
            const double zeta = density(x) / (density(fx) * dfx);
            rep.max_ratio = std::max(rep.max_ratio, zeta / mu_a);
            log_zeta[static_cast<std::size_t>(k)] = std::log(zeta);
        }
        for (int k = 0; k + 1 < samples; ++k) {
            const double d = us[static_cast<std::size_t>(k) + 1] - us[static_cast<std::size_t>(k)];
            const double c = std::abs(log_zeta[static_cast<std::size_t>(k) + 1] - log_zeta[static_cast<std::size_t>(k)]) / d;
            rep.holder_constant = std::max(rep.holder_constant, c);
        }
    }
    return rep;
}

void write_operator_csv(const TransferApproximation& op, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot open " + path + " for writing");
    out << std::setprecision(17);
    const int n = op.grid.size();
    out << n << ',' << op.grid.Y().lo << ',' << op.grid.Y().hi << '\n';
    std::vector<double> row(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::fill(row.begin(), row.end(), 0.0);
        for (SparseRowMatrix::InnerIterator it(op.matrix, i); it; ++it) row[static_cast<std::size_t>(it.col())] = it.value();
        for (int j = 0; j < n; ++j) out << (j ? "," : "") << row[static_cast<std::size_t>(j)];
        out << '\n';
    }
    for (int j = 0; j < n; ++j) out << (j ? "," : "") << op.invariant_density[j];
    out << '\n';
}

}  // namespace ergodic_limits
