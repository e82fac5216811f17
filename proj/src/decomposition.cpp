#include "ergodic_limits/decomposition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ergodic_limits/errors.hpp"

namespace ergodic_limits {

namespace {

constexpr int kMaxReturnSteps = 100'000'000;

double sup_norm(const Eigen::MatrixXd& g) { return g.size() == 0 ? 0.0 : g.cwiseAbs().maxCoeff(); }

void project_mean(const TransferApproximation& op, Eigen::MatrixXd& g) {
    const Eigen::RowVectorXd mean = op.quadrature.stationary.transpose() * g;
    g.rowwise() -= mean;
}

void require_quadrature(const TransferApproximation& op) {
    if (op.quadrature.nodes() == 0) throw InvalidArgument("transfer approximation was built without a quadrature");
}

Eigen::VectorXd node_return_times(const PreimageTable& t) {
    Eigen::VectorXd tau(static_cast<Eigen::Index>(t.size()));
    for (std::size_t b = 0; b < t.branches(); ++b)
        tau.segment(static_cast<Eigen::Index>(b * t.points()), static_cast<Eigen::Index>(t.points()))
            .setConstant(t.return_time(b));
    return tau;
}

// g(F y) - g(y) at every node, with g interpolated and F(node(b, k)) = u_k.
Eigen::MatrixXd coboundary_at_nodes(const TransferApproximation& op, const Eigen::MatrixXd& g) {
    const PreimageTable& t = op.quadrature.table;
    const std::size_t m = t.points();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(t.size()), g.cols());
    for (std::size_t b = 0; b < t.branches(); ++b)
        for (std::size_t k = 0; k < m; ++k) {
            const auto row = static_cast<Eigen::Index>(b * m + k);
            for (Eigen::Index c = 0; c < g.cols(); ++c)
                out(row, c) = g(static_cast<Eigen::Index>(k), c) - interpolate(op.grid, g.col(c), t.node(b, k));
        }
    return out;
}

bool in_y(const Interval& y, double x) noexcept { return x >= y.lo && x <= y.hi; }

}  // namespace

SeriesResult neumann_series(const TransferApproximation& op, Eigen::MatrixXd first, double tol,
                            const SeriesOptions& opts) {
    require_quadrature(op);
    if (!(tol > 0.0)) throw InvalidArgument("series tolerance must be positive");
    if (opts.fixed_terms && *opts.fixed_terms < 1) throw InvalidArgument("fixed_terms must be >= 1");

    SeriesResult res;
    project_mean(op, first);
    res.sum = first;
    res.terms = 1;
    double norm = sup_norm(first);
    res.last_norm = norm;
    if (norm == 0.0 && !opts.fixed_terms) return res;

    const double floor = 1e-14 * norm;
    std::vector<double> ratios;
    Eigen::MatrixXd term = std::move(first);
    const int limit = opts.fixed_terms ? *opts.fixed_terms : opts.max_terms;

    auto decay = [&]() {
        if (ratios.empty()) return 0.0;
        const std::size_t from = ratios.size() > 5 ? ratios.size() - 5 : 0;
        return *std::max_element(ratios.begin() + static_cast<std::ptrdiff_t>(from), ratios.end());
    };

    while (res.terms < limit) {
        if (!opts.fixed_terms) {
            const double r = decay();
            if (norm == 0.0 || norm < floor) break;
            if (ratios.size() >= 2 && r < 1.0 && norm < tol * (1.0 - r)) break;
        }
        term = op.quadrature.interp * term;
        project_mean(op, term);
        const double next = sup_norm(term);
        if (norm > 0.0) ratios.push_back(next / norm);
        norm = next;
        res.sum += term;
        ++res.terms;
    }

    double r = decay();
    if (!opts.fixed_terms && res.terms >= limit && !(norm < floor || (r < 1.0 && norm < tol * (1.0 - r)))) {
        throw ConvergenceError("series shows no geometric decay within " + std::to_string(limit) + " terms");
    }
    r = std::min(r, 0.99);
    res.last_norm = norm;
    res.decay_ratio = r;
    res.tail_bound = norm * r / (1.0 - r);
    return res;
}

void induced_value(const MapDescriptor& map, const Observable& obs, Interval y_set, double y, double* out, int* tau) {
    const int d = obs.dimension();
    std::fill(out, out + d, 0.0);
    std::vector<double> buf(static_cast<std::size_t>(d));
    double x = y;
    int t = 0;
    do {
        obs.evaluate(x, buf.data());
        for (int c = 0; c < d; ++c) out[c] += buf[static_cast<std::size_t>(c)];
        x = evaluate(map, x);
        if (++t > kMaxReturnSteps) throw ConvergenceError("orbit does not return to Y");
    } while (!in_y(y_set, x));
    if (tau) *tau = t;
}

Eigen::MatrixXd induced_observable(const InducedSystem& sys, const MapDescriptor& map, const Observable& obs,
                                   const GridY& grid) {
    if (!(grid.Y() == sys.Y())) throw InvalidArgument("grid does not cover the induced set Y");
    std::vector<CellPiece> pieces;
    std::vector<int> offsets;
    cell_pieces(sys, grid, pieces, offsets);
    const int n = grid.size();
    const int d = obs.dimension();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, d);
#pragma omp parallel
    {
        std::vector<double> val(static_cast<std::size_t>(d));
#pragma omp for schedule(dynamic, 16)
        for (int i = 0; i < n; ++i) {
            const int begin = offsets[static_cast<std::size_t>(i)];
            const int end = offsets[static_cast<std::size_t>(i) + 1];
            double ws = 0.0;
            for (int k = begin; k < end; ++k) {
                const CellPiece& p = pieces[static_cast<std::size_t>(k)];
                induced_value(map, obs, sys.Y(), 0.5 * (p.lo + p.hi), val.data());
                for (int c = 0; c < d; ++c) out(i, c) += p.weight * val[static_cast<std::size_t>(c)];
                ws += p.weight;
            }
            if (ws > 0.0) out.row(i) /= ws;
        }
    }
    return out;
}

InducedField& InducedField::operator+=(const InducedField& o) {
    cells += o.cells;
    nodes += o.nodes;
    return *this;
}

InducedField& InducedField::operator*=(double a) {
    cells *= a;
    nodes *= a;
    return *this;
}

InducedField induced_field(const InducedSystem& sys, const MapDescriptor& map, const Observable& obs,
                           const TransferApproximation& op) {
    require_quadrature(op);
    InducedField f;
    f.cells = induced_observable(sys, map, obs, op.grid);
    const PreimageTable& t = op.quadrature.table;
    const int d = obs.dimension();
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> nodes(static_cast<Eigen::Index>(t.size()), d);
    t.orbit_sums([&obs](double x, double* out) { obs.evaluate(x, out); }, d, nodes.data());
    f.nodes = nodes;
    return f;
}

Decomposition primary_decomposition(const TransferApproximation& op, const InducedField& phi, double tol,
                                    const SeriesOptions& opts) {
    require_quadrature(op);
    const PreimageQuadrature& q = op.quadrature;
    if (phi.cells.rows() != op.grid.size() || phi.nodes.rows() != static_cast<Eigen::Index>(q.nodes()) ||
        phi.cells.cols() != phi.nodes.cols())
        throw InvalidArgument("induced field does not match the transfer approximation");
    Decomposition dec{op.grid, {}, {}, {}, {}, 0, 0.0, 0.0, 0.0, {}, 1.0};

    const Eigen::VectorXd tau_nodes = node_return_times(q.table);
    dec.tau_mean = q.stationary.dot(q.apply_nodes(tau_nodes).col(0));
    dec.centering_correction = q.stationary.transpose() * q.apply_nodes(phi.nodes) / dec.tau_mean;
    dec.phi_nodes = phi.nodes - tau_nodes * dec.centering_correction;
    dec.phi_prime = phi.cells - op.cell_tau_mean * dec.centering_correction;

    SeriesResult s = neumann_series(op, q.apply_nodes(dec.phi_nodes), tol, opts);
    dec.chi_prime = std::move(s.sum);
    dec.K = s.terms;
    dec.tail_bound = s.tail_bound;
    dec.decay_ratio = s.decay_ratio;
    dec.m_prime = dec.phi_prime - compose_with_F(op, dec.chi_prime) + dec.chi_prime;
    dec.kernel_residual = sup_norm(q.apply_nodes(m_prime_nodes(op, dec)));
    return dec;
}

Eigen::MatrixXd m_prime_nodes(const TransferApproximation& op, const Decomposition& dec) {
    require_quadrature(op);
    return dec.phi_nodes - coboundary_at_nodes(op, dec.chi_prime);
}

// ---------------------------------------------------------------------------

TowerFunction::TowerFunction(std::shared_ptr<const Decomposition> dec, const InducedSystem& sys, MapDescriptor map,
                             Observable obs)
    : dec_(std::move(dec)), map_(std::move(map)), obs_(std::move(obs)), y_(sys.Y()),
      unit_tower_(map_.kind() == MapKind::Doubling) {
    if (!dec_) throw InvalidArgument("tower lift needs a decomposition");
    if (dec_->chi_prime.cols() != obs_.dimension()) throw InvalidArgument("decomposition and observable dimensions differ");
    correction_.assign(static_cast<std::size_t>(obs_.dimension()), 0.0);
    for (int c = 0; c < dec_->centering_correction.size(); ++c)
        correction_[static_cast<std::size_t>(c)] = dec_->centering_correction[c];
}

void TowerFunction::v(double x, double* out) const noexcept {
    obs_.evaluate(x, out);
    for (std::size_t c = 0; c < correction_.size(); ++c) out[c] -= correction_[c];
}

int TowerFunction::return_time(double y) const {
    if (!in_y(y_, y)) throw DomainError("tower base point outside Y");
    if (unit_tower_) return 1;
    const int t = first_return_time(map_, y_, y, kMaxReturnSteps);
    if (t > kMaxReturnSteps) throw ConvergenceError("orbit does not return to Y");
    return t;
}

TowerPoint TowerFunction::point(double y, int level) const {
    const int tau = return_time(y);
    if (level < 0 || level >= tau) throw InvalidArgument("tower level outside [0, tau(y))");
    return {y, level, tau};
}

double TowerFunction::induced_map(double y) const {
    double x = y;
    const int tau = return_time(y);
    for (int k = 0; k < tau; ++k) x = evaluate(map_, x);
    return x;
}

TowerPoint TowerFunction::step(const TowerPoint& p) const {
    if (p.level + 1 < p.tau) return {p.y, p.level + 1, p.tau};
    const double fy = induced_map(p.y);
    return {fy, 0, return_time(fy)};
}

void TowerFunction::phi(const TowerPoint& p, double* out) const {
    double x = p.y;
    for (int k = 0; k < p.level; ++k) x = evaluate(map_, x);
    v(x, out);
}

void TowerFunction::chi(const TowerPoint& p, double* out) const {
    const int d = dimension();
    chi_prime(p.y, out);
    std::vector<double> buf(static_cast<std::size_t>(d));
    double x = p.y;
    for (int k = 0; k < p.level; ++k) {
        v(x, buf.data());
        for (int c = 0; c < d; ++c) out[c] += buf[static_cast<std::size_t>(c)];
        x = evaluate(map_, x);
    }
}

void TowerFunction::m(const TowerPoint& p, double* out) const {
    if (p.level == p.tau - 1) {
        m_prime(p.y, out);
    } else {
        std::fill(out, out + dimension(), 0.0);
    }
}

void TowerFunction::chi_prime(double y, double* out) const {
    for (int c = 0; c < dimension(); ++c) out[c] = interpolate(dec_->grid, dec_->chi_prime.col(c), y);
}

void TowerFunction::phi_prime(double y, double* out) const {
    const int d = dimension();
    std::fill(out, out + d, 0.0);
    std::vector<double> buf(static_cast<std::size_t>(d));
    double x = y;
    const int tau = return_time(y);
    for (int k = 0; k < tau; ++k) {
        v(x, buf.data());
        for (int c = 0; c < d; ++c) out[c] += buf[static_cast<std::size_t>(c)];
        x = evaluate(map_, x);
    }
}

void TowerFunction::m_prime(double y, double* out) const {
    const int d = dimension();
    phi_prime(y, out);
    const double fy = induced_map(y);
    for (int c = 0; c < d; ++c) {
        const auto col = dec_->chi_prime.col(c);
        out[c] += interpolate(dec_->grid, col, y) - interpolate(dec_->grid, col, fy);
    }
}

TowerFunction lift_to_tower(const Decomposition& dec, const InducedSystem& sys, const MapDescriptor& map,
                            const Observable& obs) {
    return TowerFunction(std::make_shared<const Decomposition>(dec), sys, map, obs);
}

// ---------------------------------------------------------------------------

double tower_identity_error(const TowerFunction& tf, int points, std::uint64_t seed) {
    if (points < 1) throw InvalidArgument("need at least one tower point");
    const int d = tf.dimension();
    const Interval Y = tf.Y();
    CounterStream rng(seed, 0, StreamDomain::Probe);
    std::vector<double> ph(static_cast<std::size_t>(d)), mm(ph), c0(ph), c1(ph);
    double worst = 0.0;
    for (int s = 0; s < points; ++s) {
        const double y = Y.lo + (Y.hi - Y.lo) * rng.uniform();
        const int tau = tf.return_time(y);
        const int level = std::min(tau - 1, static_cast<int>(rng.uniform() * tau));
        const TowerPoint p = tf.point(y, level);
        tf.phi(p, ph.data());
        tf.m(p, mm.data());
        tf.chi(p, c0.data());
        tf.chi(tf.step(p), c1.data());
        for (std::size_t c = 0; c < ph.size(); ++c) worst = std::max(worst, std::abs(ph[c] - mm[c] - c1[c] + c0[c]));
    }
    return worst;
}

double offgrid_kernel_residual(const TransferApproximation& op, const InducedSystem& sys, const TowerFunction& tf,
                               int points, std::uint64_t seed) {
    if (points < 1) throw InvalidArgument("need at least one probe point");
    const int d = tf.dimension();
    const Interval Y = sys.Y();
    std::vector<double> u(static_cast<std::size_t>(points));
    CounterStream rng(seed, 1, StreamDomain::Probe);
    for (auto& x : u) x = Y.lo + Y.width() * rng.uniform();
    const std::size_t nb = sys.branches().size();
    std::vector<double> worst(static_cast<std::size_t>(points), 0.0);
#pragma omp parallel
    {
        std::vector<double> mv(static_cast<std::size_t>(d)), acc(mv);
#pragma omp for schedule(dynamic, 4)
        for (int s = 0; s < points; ++s) {
            std::fill(acc.begin(), acc.end(), 0.0);
            double total = 0.0;
            for (std::size_t b = 0; b < nb; ++b) {
                const double y = sys.inverse(b, u[static_cast<std::size_t>(s)]);
                const double z = density_at(op, y) / sys.forward_derivative(b, y);
                tf.m_prime(y, mv.data());
                for (int c = 0; c < d; ++c) acc[static_cast<std::size_t>(c)] += z * mv[static_cast<std::size_t>(c)];
                total += z;
            }
            for (double a : acc) worst[static_cast<std::size_t>(s)] = std::max(worst[static_cast<std::size_t>(s)], std::abs(a / total));
        }
    }
    return *std::max_element(worst.begin(), worst.end());
}

namespace {

Eigen::MatrixXd outer_rows(const Eigen::MatrixXd& m) {
    const Eigen::Index d = m.cols();
    Eigen::MatrixXd out(m.rows(), d * d);
    for (Eigen::Index b = 0; b < d; ++b)
        for (Eigen::Index a = 0; a < d; ++a) out.col(a + d * b) = m.col(a).cwiseProduct(m.col(b));
    return out;
}

}  // namespace

Eigen::MatrixXd martingale_covariance(const TransferApproximation& op, const Decomposition& dec) {
    require_quadrature(op);
    const Eigen::Index d = dec.m_prime.cols();
    const Eigen::MatrixXd mm = outer_rows(m_prime_nodes(op, dec));
    const Eigen::RowVectorXd flat = op.quadrature.stationary.transpose() * op.quadrature.apply_nodes(mm);
    Eigen::MatrixXd sigma = Eigen::Map<const Eigen::MatrixXd>(flat.data(), d, d) / dec.tau_mean;
    for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = a + 1; b < d; ++b) sigma(b, a) = sigma(a, b);
    return sigma;
}

SecondaryDecomposition secondary_decomposition(const TransferApproximation& op, const Decomposition& dec, double tol,
                                               const SeriesOptions& opts) {
    require_quadrature(op);
    const PreimageQuadrature& q = op.quadrature;
    const Eigen::Index d = dec.m_prime.cols();
    SecondaryDecomposition sec;
    sec.p_mm = q.apply_nodes(outer_rows(m_prime_nodes(op, dec)));
    const Eigen::RowVectorXd flat = q.stationary.transpose() * sec.p_mm / dec.tau_mean;
    sec.sigma_mart = Eigen::Map<const Eigen::MatrixXd>(flat.data(), d, d);
    for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = a + 1; b < d; ++b) sec.sigma_mart(b, a) = sec.sigma_mart(a, b);
    const Eigen::RowVectorXd sigma_flat = Eigen::Map<const Eigen::RowVectorXd>(sec.sigma_mart.data(), d * d);

    const Eigen::VectorXd tau_nodes = node_return_times(q.table);
    const Eigen::VectorXd p_tau = q.apply_nodes(tau_nodes);
    sec.phi_breve_prime = compose_with_F(op, sec.p_mm) - op.cell_tau_mean * sigma_flat;

    // phi_breve'(y) = p_mm(F y) - tau(y) Sigma at the nodes, so
    // P phi_breve' = P(m'm'^T) - (P tau) Sigma.
    SeriesResult s = neumann_series(op, sec.p_mm - p_tau * sigma_flat, tol, opts);
    sec.chi_breve_prime = std::move(s.sum);
    sec.K = s.terms;
    sec.tail_bound = s.tail_bound;
    sec.decay_ratio = s.decay_ratio;
    sec.m_breve_prime = sec.phi_breve_prime - compose_with_F(op, sec.chi_breve_prime) + sec.chi_breve_prime;

    const std::size_t m = q.table.points();
    Eigen::MatrixXd breve_nodes(static_cast<Eigen::Index>(q.nodes()), d * d);
    for (std::size_t b = 0; b < q.table.branches(); ++b)
        breve_nodes.middleRows(static_cast<Eigen::Index>(b * m), static_cast<Eigen::Index>(m)) =
            sec.p_mm - Eigen::VectorXd::Constant(static_cast<Eigen::Index>(m), q.table.return_time(b)) * sigma_flat;
    breve_nodes -= coboundary_at_nodes(op, sec.chi_breve_prime);
    sec.kernel_residual = sup_norm(q.apply_nodes(breve_nodes));
    return sec;
}

// ---------------------------------------------------------------------------

double growth_moment(const MapDescriptor& map) {
    if (map.kind() == MapKind::LSV) return std::min(2.0, 0.9 / map.gamma());
    return 2.0;
}

GrowthReport chi_growth_exponent(const TowerFunction& tf, std::int64_t n_max, int samples, std::uint64_t seed,
                                 std::optional<double> p, std::int64_t burn_in) {
    if (n_max < 10) throw InvalidArgument("growth ladder needs n_max >= 10");
    if (samples < 2) throw InvalidArgument("growth estimate needs at least 2 samples");
    GrowthReport rep;
    rep.p = p.value_or(growth_moment(tf.map()));
    if (!(rep.p > 0.0)) throw InvalidArgument("moment p must be positive");

    for (double n = 10.0; n <= static_cast<double>(n_max) * (1.0 + 1e-12); n *= std::sqrt(2.0)) {
        const auto k = static_cast<std::int64_t>(std::llround(n));
        if (rep.n.empty() || k > rep.n.back()) rep.n.push_back(k);
    }
    if (rep.n.back() != n_max) rep.n.push_back(n_max);
    const std::size_t L = rep.n.size();
    const int d = tf.dimension();
    const Interval Y = tf.Y();
    std::vector<double> acc(L, 0.0);

#pragma omp parallel
    {
        std::vector<double> local(L, 0.0);
        std::vector<double> chi(static_cast<std::size_t>(d)), chi0(static_cast<std::size_t>(d)),
            buf(static_cast<std::size_t>(d));
#pragma omp for schedule(static)
        for (int s = 0; s < samples; ++s) {
            FastOrbit orb(tf.map(), CounterStream(seed, static_cast<std::uint64_t>(s), StreamDomain::Tower));
            // Walk until the orbit first enters Y, then carry chi along the tower.
            while (!in_y(Y, orb.x())) orb.step();
            tf.chi_prime(orb.x(), chi.data());
            auto advance = [&]() {
                tf.v(orb.x(), buf.data());
                orb.step();
                if (in_y(Y, orb.x())) {
                    tf.chi_prime(orb.x(), chi.data());
                } else {
                    for (int c = 0; c < d; ++c) chi[static_cast<std::size_t>(c)] += buf[static_cast<std::size_t>(c)];
                }
            };
            for (std::int64_t k = 0; k < burn_in; ++k) advance();
            chi0 = chi;
            double running = 0.0;
            std::size_t next = 0;
            for (std::int64_t k = 1; k <= n_max; ++k) {
                advance();
                double sq = 0.0;
                for (int c = 0; c < d; ++c) {
                    const double diff = chi[static_cast<std::size_t>(c)] - chi0[static_cast<std::size_t>(c)];
                    sq += diff * diff;
                }
                running = std::max(running, std::sqrt(sq));
                while (next < L && rep.n[next] == k) local[next++] += std::pow(running, rep.p);
            }
        }
#pragma omp critical
        for (std::size_t i = 0; i < L; ++i) acc[i] += local[i];
    }

    rep.norm.resize(L);
    for (std::size_t i = 0; i < L; ++i) rep.norm[i] = std::pow(acc[i] / samples, 1.0 / rep.p);

    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    int used = 0;
    for (std::size_t i = 0; i < L; ++i) {
        if (!(rep.norm[i] > 0.0)) continue;
        const double lx = std::log(static_cast<double>(rep.n[i]));
        const double ly = std::log(rep.norm[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++used;
    }
    if (used >= 2) rep.slope = (used * sxy - sx * sy) / (used * sxx - sx * sx);
    return rep;
}

}  // namespace ergodic_limits
