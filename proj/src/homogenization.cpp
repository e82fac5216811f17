#include "ergodic_limits/homogenization.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>

#include <omp.h>

#include "ergodic_limits/errors.hpp"
#include "ergodic_limits/rng.hpp"
#include "ergodic_limits/stats.hpp"

namespace ergodic_limits {

namespace {

constexpr double kBlowup = 1e8;

int worker_count(const McConfig& cfg) { return cfg.threads > 0 ? cfg.threads : omp_get_max_threads(); }

double cubic_inverse(double z) {
    // Cardano for x^3 + 3x - 3z = 0, then Newton polish.
    const double s = std::sqrt(2.25 * z * z + 1.0);
    double x = std::cbrt(1.5 * z + s) + std::cbrt(1.5 * z - s);
    for (int it = 0; it < 3; ++it) x -= (x + x * x * x / 3.0 - z) / (1.0 + x * x);
    return x;
}

// -1/2 sum_{alpha,beta,gamma} b^{alpha gamma} (d_alpha b)^{. beta} M^{beta gamma} at x.
void correction_for(const Diffeo& h, const double* x, const Eigen::MatrixXd& M, double* out) {
    const int d = h.dimension();
    if (h.kind() != DiffeoKind::Cubic) {
        std::fill(out, out + d, 0.0);
        return;
    }
    if (d == 1) {
        const double b = 1.0 / (1.0 + x[0] * x[0]);
        const double db = -b * (2.0 * x[0]) * b;
        out[0] = -0.5 * b * db * M(0, 0);
        return;
    }
    Eigen::MatrixXd b(d, d), dJ(d, d);
    h.b(x, b.data());
    const Eigen::MatrixXd bM = b * M;
    Eigen::VectorXd corr = Eigen::VectorXd::Zero(d);
    for (int alpha = 0; alpha < d; ++alpha) {
        h.jacobian_derivative(x, alpha, dJ.data());
        const Eigen::MatrixXd db = -b * dJ * b;
        corr += db * bM.row(alpha).transpose();
    }
    for (int i = 0; i < d; ++i) out[i] = -0.5 * corr(i);
}

std::vector<double> checked_times(std::vector<double> times, double T) {
    if (times.empty()) return uniform_times(T);
    std::sort(times.begin(), times.end());
    if (times.front() < 0.0 || times.back() > T * (1.0 + 1e-12))
        throw InvalidArgument("record times must lie in [0, T]");
    return times;
}

std::int64_t step_index(double t, double h) { return static_cast<std::int64_t>(std::floor(t / h + 1e-9)); }

void validate_eps(double eps, double T) {
    if (!(eps > 0.0 && eps <= 0.5)) throw InvalidArgument("eps must lie in (0, 0.5]");
    if (!(T > 0.0)) throw InvalidArgument("T must be positive");
}

struct BlowupFlag {
    std::atomic<std::int64_t> sample{std::numeric_limits<std::int64_t>::max()};
    std::atomic<std::int64_t> step{0};

    void record(std::int64_t s, std::int64_t n) {
        std::int64_t cur = sample.load();
        while (s < cur && !sample.compare_exchange_weak(cur, s)) {
        }
        if (sample.load() == s) step.store(n);
    }
    void raise(const std::string& what) const {
        if (sample.load() != std::numeric_limits<std::int64_t>::max())
            throw BlowupError(what + ": |x| exceeded 1e8 in sample " + std::to_string(sample.load()) + " at step " +
                                  std::to_string(step.load()),
                              step.load());
    }
};

bool blown(const double* x, int d) {
    for (int c = 0; c < d; ++c)
        if (!(std::abs(x[c]) <= kBlowup)) return true;
    return false;
}

enum class Recursion { X, Z };

PathEnsemble run_fast_slow(const FastSlowSpec& spec, double eps, double T, const McConfig& cfg,
                           std::vector<double> record_times, Recursion kind) {
    validate_eps(eps, T);
    cfg.validate();
    const int d = spec.d;
    if (spec.v.dimension() != d || spec.xi.size() != d) throw InvalidArgument("spec dimensions disagree");
    const std::vector<double> times = checked_times(std::move(record_times), T);
    const double e2 = eps * eps;
    const std::int64_t n_steps = step_index(T, e2);
    std::vector<std::int64_t> at;
    for (double t : times) at.push_back(std::min(step_index(t, e2), n_steps));
    const MapDescriptor map = spec.fast_map_at(eps);
    const bool identity = spec.h.kind() == DiffeoKind::Identity;

    PathEnsemble ens;
    ens.times = times;
    ens.d = d;
    ens.seed = cfg.seed;
    ens.scheme = kind == Recursion::X ? "fast-slow" : "fast-slow (z = h(x))";
    ens.dt = e2;
    ens.paths.resize(cfg.n_samples, static_cast<Eigen::Index>(times.size()) * d);
    BlowupFlag flag;

#pragma omp parallel num_threads(worker_count(cfg))
    {
        const auto du = static_cast<std::size_t>(d);
        std::vector<double> x(du), z(du), a(du), v(du), bv(du), b(du * du), J(du * du), dJ(du * du), tmp(du);
#pragma omp for schedule(dynamic, 8)
        for (std::int64_t s = 0; s < cfg.n_samples; ++s) {
            FastOrbit orb(map, CounterStream(cfg.seed, static_cast<std::uint64_t>(s), StreamDomain::Orbit));
            if (cfg.initial_law == InitialLaw::InvariantApprox) orb.advance(cfg.burn_in);
            for (int c = 0; c < d; ++c) x[static_cast<std::size_t>(c)] = spec.xi(c);
            if (kind == Recursion::Z) spec.h.apply(x.data(), z.data());
            std::size_t next = 0;
            bool failed = false;
            for (std::int64_t n = 0; n <= n_steps && !failed; ++n) {
                while (next < at.size() && at[next] == n) {
                    for (int c = 0; c < d; ++c)
                        ens.paths(s, static_cast<Eigen::Index>(next) * d + c) = x[static_cast<std::size_t>(c)];
                    ++next;
                }
                if (n == n_steps) break;
                const double y = orb.x();
                spec.a.evaluate(x.data(), y, a.data());
                spec.v.evaluate(y, v.data());
                if (kind == Recursion::X) {
                    if (identity) {
                        bv = v;
                    } else if (d == 1) {
                        spec.h.jacobian(x.data(), J.data());
                        bv[0] = v[0] / J[0];
                    } else {
                        spec.h.b(x.data(), b.data());
                        for (int r = 0; r < d; ++r) {
                            double acc = 0.0;
                            for (int c = 0; c < d; ++c) acc += b[static_cast<std::size_t>(c * d + r)] * v[static_cast<std::size_t>(c)];
                            bv[static_cast<std::size_t>(r)] = acc;
                        }
                    }
                    for (int c = 0; c < d; ++c) {
                        const auto k = static_cast<std::size_t>(c);
                        x[k] += e2 * a[k] + eps * bv[k];
                    }
                } else {
                    // z += eps v + eps^2 (dh a + 1/2 d^2h[b v, b v])
                    spec.h.jacobian(x.data(), J.data());
                    spec.h.b(x.data(), b.data());
                    for (int r = 0; r < d; ++r) {
                        double acc = 0.0;
                        for (int c = 0; c < d; ++c) acc += b[static_cast<std::size_t>(c * d + r)] * v[static_cast<std::size_t>(c)];
                        bv[static_cast<std::size_t>(r)] = acc;
                    }
                    std::fill(tmp.begin(), tmp.end(), 0.0);
                    for (int r = 0; r < d; ++r)
                        for (int c = 0; c < d; ++c)
                            tmp[static_cast<std::size_t>(r)] += J[static_cast<std::size_t>(c * d + r)] * a[static_cast<std::size_t>(c)];
                    for (int alpha = 0; alpha < d; ++alpha) {
                        spec.h.jacobian_derivative(x.data(), alpha, dJ.data());
                        for (int r = 0; r < d; ++r)
                            for (int c = 0; c < d; ++c)
                                tmp[static_cast<std::size_t>(r)] += 0.5 * dJ[static_cast<std::size_t>(c * d + r)] *
                                                                    bv[static_cast<std::size_t>(c)] *
                                                                    bv[static_cast<std::size_t>(alpha)];
                    }
                    for (int c = 0; c < d; ++c) {
                        const auto k = static_cast<std::size_t>(c);
                        z[k] += eps * v[k] + e2 * tmp[k];
                    }
                    spec.h.inverse(z.data(), x.data());
                }
                orb.step();
                if (blown(x.data(), d)) {
                    flag.record(s, n + 1);
                    failed = true;
                }
            }
        }
    }
    flag.raise("fast-slow recursion");
    return ens;
}

}  // namespace

// ---------------------------------------------------------------------------

Diffeo Diffeo::identity(int d) {
    if (d < 1) throw InvalidArgument("dimension must be positive");
    Diffeo h;
    h.kind_ = DiffeoKind::Identity;
    h.d_ = d;
    return h;
}

Diffeo Diffeo::cubic(int d) {
    Diffeo h = identity(d);
    h.kind_ = DiffeoKind::Cubic;
    return h;
}

Diffeo Diffeo::linear(Eigen::MatrixXd m) {
    if (m.rows() != m.cols() || m.rows() < 1) throw InvalidArgument("linear diffeomorphism needs a square matrix");
    Diffeo h = identity(static_cast<int>(m.rows()));
    h.kind_ = DiffeoKind::Linear;
    h.m_ = std::move(m);
    return h;
}

void Diffeo::apply(const double* x, double* out) const {
    switch (kind_) {
        case DiffeoKind::Identity: std::copy(x, x + d_, out); break;
        case DiffeoKind::Cubic:
            for (int i = 0; i < d_; ++i) out[i] = x[i] + x[i] * x[i] * x[i] / 3.0;
            break;
        case DiffeoKind::Linear:
            Eigen::Map<Eigen::VectorXd>(out, d_) = m_ * Eigen::Map<const Eigen::VectorXd>(x, d_);
            break;
    }
}

void Diffeo::inverse(const double* z, double* out) const {
    switch (kind_) {
        case DiffeoKind::Identity: std::copy(z, z + d_, out); break;
        case DiffeoKind::Cubic:
            for (int i = 0; i < d_; ++i) out[i] = cubic_inverse(z[i]);
            break;
        case DiffeoKind::Linear:
            Eigen::Map<Eigen::VectorXd>(out, d_) = m_.partialPivLu().solve(Eigen::Map<const Eigen::VectorXd>(z, d_));
            break;
    }
}

void Diffeo::jacobian(const double* x, double* out) const {
    Eigen::Map<Eigen::MatrixXd> J(out, d_, d_);
    switch (kind_) {
        case DiffeoKind::Identity: J.setIdentity(); break;
        case DiffeoKind::Cubic:
            J.setZero();
            for (int i = 0; i < d_; ++i) J(i, i) = 1.0 + x[i] * x[i];
            break;
        case DiffeoKind::Linear: J = m_; break;
    }
}

void Diffeo::jacobian_derivative(const double* x, int alpha, double* out) const {
    Eigen::Map<Eigen::MatrixXd> H(out, d_, d_);
    H.setZero();
    if (kind_ == DiffeoKind::Cubic) H(alpha, alpha) = 2.0 * x[alpha];
}

void Diffeo::b(const double* x, double* out) const {
    if (d_ == 1) {
        double J;
        jacobian(x, &J);
        out[0] = 1.0 / J;
        return;
    }
    Eigen::MatrixXd J(d_, d_);
    jacobian(x, J.data());
    Eigen::Map<Eigen::MatrixXd>(out, d_, d_) = J.partialPivLu().solve(Eigen::MatrixXd::Identity(d_, d_));
}

SlowDrift SlowDrift::zero(int d) { return linear(Eigen::MatrixXd::Zero(d, d)); }

SlowDrift SlowDrift::linear(Eigen::MatrixXd A, Eigen::VectorXd c) {
    if (A.rows() != A.cols() || A.rows() < 1) throw InvalidArgument("drift matrix must be square");
    SlowDrift a;
    if (c.size() == 0) c = Eigen::VectorXd::Zero(A.rows());
    if (c.size() != A.rows()) throw InvalidArgument("drift offset dimension mismatch");
    a.lipschitz = Eigen::JacobiSVD<Eigen::MatrixXd>(A).singularValues()(0);
    a.A = std::move(A);
    a.c = std::move(c);
    return a;
}

void SlowDrift::evaluate(const double* x, double y, double* out) const {
    const auto d = A.rows();
    if (d == 1) {
        out[0] = A(0, 0) * x[0] + c(0);
    } else {
        Eigen::Map<Eigen::VectorXd>(out, d) = A * Eigen::Map<const Eigen::VectorXd>(x, d) + c;
    }
    if (w) {
        double buf[16];
        std::vector<double> big;
        double* wb = buf;
        if (d > 16) {
            big.resize(static_cast<std::size_t>(d));
            wb = big.data();
        }
        w->evaluate(y, wb);
        for (Eigen::Index i = 0; i < d; ++i) out[i] += wb[i];
    }
}

void FastSlowSpec::validate(std::uint64_t seed, double probe_radius) const {
    if (d < 1) throw InvalidArgument("d must be positive");
    if (a.A.rows() != d || a.c.size() != d) throw InvalidArgument("drift dimension must equal d");
    if (a.w && a.w->dimension() != d) throw InvalidArgument("drift forcing dimension must equal d");
    if (h.dimension() != d) throw InvalidArgument("diffeomorphism dimension must equal d");
    if (v.dimension() != d) throw InvalidArgument("fast observable dimension must equal d");
    if (xi.size() != d) throw InvalidArgument("initial condition dimension must equal d");
    if (!(a.lipschitz >= 0.0)) throw InvalidArgument("Lipschitz constant must be non-negative");

    CounterStream rng(seed, 0, StreamDomain::Probe);
    auto draw = [&](Eigen::VectorXd& x) {
        for (int i = 0; i < d; ++i) x(i) = probe_radius * (2.0 * rng.uniform() - 1.0);
    };
    Eigen::VectorXd x(d), x2(d), ax(d), ax2(d);
    Eigen::MatrixXd J(d, d);
    for (int p = 0; p < 1000; ++p) {
        draw(x);
        h.jacobian(x.data(), J.data());
        const auto sv = Eigen::JacobiSVD<Eigen::MatrixXd>(J).singularValues();
        if (!(sv(d - 1) > 0.0) || sv(0) / sv(d - 1) >= 1e6)
            throw InvalidArgument("dh is singular or ill-conditioned at a probe point");
    }
    const double y = 0.5 * (fast_map.domain().lo + fast_map.domain().hi);
    for (int p = 0; p < 1000; ++p) {
        draw(x);
        draw(x2);
        a.evaluate(x.data(), y, ax.data());
        a.evaluate(x2.data(), y, ax2.data());
        if ((ax - ax2).norm() > a.lipschitz * (x - x2).norm() * (1.0 + 1e-9) + 1e-12)
            throw InvalidArgument("drift violates its declared Lipschitz constant");
    }
}

std::vector<double> uniform_times(double T, int m) {
    if (!(T > 0.0) || m < 1) throw InvalidArgument("time grid needs T > 0 and m >= 1");
    std::vector<double> t(static_cast<std::size_t>(m) + 1);
    for (int k = 0; k <= m; ++k) t[static_cast<std::size_t>(k)] = T * k / m;
    return t;
}

PathEnsemble simulate_fast_slow(const FastSlowSpec& spec, double eps, double T, const McConfig& cfg,
                                std::vector<double> record_times) {
    return run_fast_slow(spec, eps, T, cfg, std::move(record_times), Recursion::X);
}

PathEnsemble simulate_z_recursion(const FastSlowSpec& spec, double eps, double T, const McConfig& cfg,
                                  std::vector<double> record_times) {
    return run_fast_slow(spec, eps, T, cfg, std::move(record_times), Recursion::Z);
}

// ---------------------------------------------------------------------------

CorrectedDrift::CorrectedDrift(const FastSlowSpec& spec, Eigen::VectorXd mean_w, Eigen::MatrixXd M, bool correction)
    : a_(spec.a), h_(spec.h), d_(spec.d), mean_w_(std::move(mean_w)), M_(std::move(M)), correction_(correction) {
    if (mean_w_.size() != d_ || M_.rows() != d_ || M_.cols() != d_) throw InvalidArgument("drift moments dimension mismatch");
    a_.w.reset();
}

CorrectedDrift CorrectedDrift::without_correction() const {
    CorrectedDrift c = *this;
    c.correction_ = false;
    return c;
}

void CorrectedDrift::correction_term(const double* x, double* out) const { correction_for(h_, x, M_, out); }

void CorrectedDrift::operator()(const double* x, double* out) const {
    a_.evaluate(x, 0.0, out);
    for (int i = 0; i < d_; ++i) out[i] += mean_w_(i);
    if (!correction_) return;
    if (d_ == 1) {
        double c;
        correction_for(h_, x, M_, &c);
        out[0] += c;
        return;
    }
    Eigen::VectorXd c(d_);
    correction_for(h_, x, M_, c.data());
    for (int i = 0; i < d_; ++i) out[i] += c(i);
}

Eigen::VectorXd CorrectedDrift::operator()(const Eigen::VectorXd& x) const {
    Eigen::VectorXd out(d_);
    (*this)(x.data(), out.data());
    return out;
}

CorrectedDrift drift_P(const FastSlowSpec& spec, const Mu0Proxy& mu0, std::int64_t quad_samples) {
    if (quad_samples < 100'000) throw InvalidArgument("drift quadrature needs at least 1e5 samples");
    const int d = spec.d;
    FastOrbit orb(spec.fast_map_at(0.0), CounterStream(mu0.seed, 0, StreamDomain::LongOrbit));
    orb.advance(mu0.burn_in);
    Eigen::VectorXd vb(d), wb(d);
    Eigen::VectorXd wsum[2] = {Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d)};
    Eigen::MatrixXd msum[2] = {Eigen::MatrixXd::Zero(d, d), Eigen::MatrixXd::Zero(d, d)};
    double w2 = 0.0;
    const std::int64_t half = quad_samples / 2;
    for (std::int64_t j = 0; j < 2 * half; ++j) {
        const int k = j < half ? 0 : 1;
        const double y = orb.x();
        spec.v.evaluate(y, vb.data());
        msum[k].noalias() += vb * vb.transpose();
        if (spec.a.w) {
            spec.a.w->evaluate(y, wb.data());
            wsum[k] += wb;
            w2 += wb.squaredNorm();
        }
        orb.step();
    }
    const double n = static_cast<double>(half);
    const Eigen::MatrixXd M = (msum[0] + msum[1]) / (2.0 * n);
    const Eigen::VectorXd mean_w = (wsum[0] + wsum[1]) / (2.0 * n);
    const double m_scale = M.cwiseAbs().maxCoeff();
    const double m_diff = ((msum[0] - msum[1]) / n).cwiseAbs().maxCoeff();
    if (m_diff > 0.01 * m_scale)
        throw InsufficientData("int v v^T d mu0 differs by " + std::to_string(m_diff) + " between orbit halves");
    const double w_scale = std::sqrt(w2 / (2.0 * n));
    const double w_diff = ((wsum[0] - wsum[1]) / n).cwiseAbs().maxCoeff();
    if (w_diff > 0.01 * w_scale)
        throw InsufficientData("int w d mu0 differs by " + std::to_string(w_diff) + " between orbit halves");
    return CorrectedDrift(spec, mean_w, M, true);
}

SdeSpec limit_sde(const FastSlowSpec& spec, const CorrectedDrift& P, const Eigen::MatrixXd& Sigma) {
    if (Sigma.rows() != spec.d || Sigma.cols() != spec.d) throw InvalidArgument("Sigma dimension must equal d");
    SdeSpec sde;
    sde.d = spec.d;
    sde.drift = [P](const double* x, double* out) { P(x, out); };
    sde.diffusion = [h = spec.h](const double* x, double* out) { h.b(x, out); };
    sde.Sigma = Sigma;
    sde.xi = spec.xi;
    return sde;
}

PathEnsemble solve_sde(const SdeSpec& sde, double T, const McConfig& cfg, double dt, SdeScheme scheme,
                       std::vector<double> record_times) {
    cfg.validate();
    const int d = sde.d;
    if (!(T > 0.0)) throw InvalidArgument("T must be positive");
    if (!(dt > 0.0 && dt <= 1e-3 * (1.0 + 1e-12))) throw InvalidArgument("SDE step must be at most 1e-3");
    if (sde.Sigma.rows() != d || sde.Sigma.cols() != d || sde.xi.size() != d)
        throw InvalidArgument("SDE dimensions disagree");
    if ((sde.Sigma - sde.Sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + sde.Sigma.cwiseAbs().maxCoeff()))
        throw InvalidArgument("Sigma must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sde.Sigma);
    if (eig.eigenvalues().minCoeff() < -1e-10 * (1.0 + eig.eigenvalues().cwiseAbs().maxCoeff()))
        throw InvalidArgument("Sigma must be positive semi-definite");
    const Eigen::MatrixXd L =
        eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * std::sqrt(dt);

    const std::vector<double> times = checked_times(std::move(record_times), T);
    const std::int64_t n_steps = static_cast<std::int64_t>(std::llround(T / dt));
    std::vector<std::int64_t> at;
    for (double t : times) at.push_back(std::min<std::int64_t>(std::llround(t / dt), n_steps));

    PathEnsemble ens;
    ens.times = times;
    ens.d = d;
    ens.seed = cfg.seed;
    ens.scheme = scheme == SdeScheme::StratonovichHeun ? "stratonovich-heun" : "euler-maruyama";
    ens.dt = dt;
    ens.paths.resize(cfg.n_samples, static_cast<Eigen::Index>(times.size()) * d);
    BlowupFlag flag;
    const bool heun = scheme == SdeScheme::StratonovichHeun;

#pragma omp parallel num_threads(worker_count(cfg))
    {
        const auto du = static_cast<std::size_t>(d);
        std::vector<double> x(du), xp(du), f0(du), f1(du), B0(du * du), B1(du * du), z(du), dW(du);
#pragma omp for schedule(dynamic, 8)
        for (std::int64_t s = 0; s < cfg.n_samples; ++s) {
            CounterStream rng(cfg.seed, static_cast<std::uint64_t>(s), StreamDomain::SdeNoise);
            for (int c = 0; c < d; ++c) x[static_cast<std::size_t>(c)] = sde.xi(c);
            std::size_t next = 0;
            for (std::int64_t n = 0; n <= n_steps; ++n) {
                while (next < at.size() && at[next] == n) {
                    for (int c = 0; c < d; ++c)
                        ens.paths(s, static_cast<Eigen::Index>(next) * d + c) = x[static_cast<std::size_t>(c)];
                    ++next;
                }
                if (n == n_steps) break;
                if (d == 1) {
                    dW[0] = L(0, 0) * rng.normal();
                } else {
                    for (auto& zi : z) zi = rng.normal();
                    for (int r = 0; r < d; ++r) {
                        double acc = 0.0;
                        for (int c = 0; c < d; ++c) acc += L(r, c) * z[static_cast<std::size_t>(c)];
                        dW[static_cast<std::size_t>(r)] = acc;
                    }
                }
                sde.drift(x.data(), f0.data());
                sde.diffusion(x.data(), B0.data());
                auto increment = [&](const std::vector<double>& B, int r) {
                    double acc = 0.0;
                    for (int c = 0; c < d; ++c) acc += B[static_cast<std::size_t>(c * d + r)] * dW[static_cast<std::size_t>(c)];
                    return acc;
                };
                if (heun) {
                    for (int r = 0; r < d; ++r) {
                        const auto k = static_cast<std::size_t>(r);
                        xp[k] = x[k] + f0[k] * dt + increment(B0, r);
                    }
                    sde.drift(xp.data(), f1.data());
                    sde.diffusion(xp.data(), B1.data());
                    for (int r = 0; r < d; ++r) {
                        const auto k = static_cast<std::size_t>(r);
                        x[k] += 0.5 * (f0[k] + f1[k]) * dt + 0.5 * (increment(B0, r) + increment(B1, r));
                    }
                } else {
                    for (int r = 0; r < d; ++r) {
                        const auto k = static_cast<std::size_t>(r);
                        x[k] += f0[k] * dt + increment(B0, r);
                    }
                }
                if (blown(x.data(), d)) {
                    flag.record(s, n + 1);
                    break;
                }
            }
        }
    }
    flag.raise("SDE integration");
    return ens;
}

// ---------------------------------------------------------------------------

StudyReport homogenization_study(const FastSlowSpec& spec, const std::vector<double>& eps_ladder, double T,
                                 const McConfig& cfg, const std::vector<double>& compare_times,
                                 const StudyOptions& opts) {
    spec.validate(cfg.seed);
    if (eps_ladder.size() < 3) throw InvalidArgument("eps ladder needs at least 3 values");
    for (std::size_t i = 1; i < eps_ladder.size(); ++i)
        if (!(eps_ladder[i] < eps_ladder[i - 1])) throw InvalidArgument("eps ladder must be decreasing");
    if (compare_times.empty()) throw InvalidArgument("need at least one comparison time");
    const int d = spec.d;

    CorrectedDrift P = drift_P(spec, opts.mu0, opts.quad_samples);
    if (!opts.drift_correction) P = P.without_correction();
    StudyReport rep;
    rep.eps = eps_ladder;
    rep.M = P.M();
    const bool zero_noise = rep.M.cwiseAbs().maxCoeff() == 0.0;
    rep.sigma = zero_noise ? Eigen::MatrixXd::Zero(d, d)
                           : covariance(spec.fast_map_at(0.0), spec.v, cfg, opts.sigma_method, opts.covariance).sigma;
    const SdeSpec sde = limit_sde(spec, P, rep.sigma);

    std::vector<Eigen::VectorXd> functionals;
    for (int c = 0; c < d; ++c) functionals.push_back(Eigen::VectorXd::Unit(d, c));
    if (d > 1) {
        CounterStream rng(cfg.seed, 0, StreamDomain::Projection);
        Eigen::VectorXd u(d);
        for (int i = 0; i < d; ++i) u(i) = rng.normal();
        functionals.push_back(u.normalized());
    }
    auto project = [&](const PathEnsemble& e, std::size_t k, const Eigen::VectorXd& c) {
        Eigen::VectorXd out = Eigen::VectorXd::Zero(e.samples());
        for (int i = 0; i < d; ++i) out += c(i) * e.marginal(k, i);
        return out;
    };

    const double eps_min = eps_ladder.back();
    std::optional<PathEnsemble> shared;
    if (spec.eps_independent)
        shared = solve_sde(sde, T, cfg, std::min(1e-3, eps_min * eps_min), opts.scheme, compare_times);

    for (double eps : eps_ladder) {
        const PathEnsemble fs = simulate_fast_slow(spec, eps, T, cfg, compare_times);
        const PathEnsemble sd = shared ? *shared : solve_sde(sde, T, cfg, std::min(1e-3, eps * eps), opts.scheme, compare_times);
        double worst = 0.0;
        for (std::size_t k = 0; k < fs.times.size(); ++k) {
            for (std::size_t f = 0; f < functionals.size(); ++f) {
                const Eigen::VectorXd a = project(fs, k, functionals[f]);
                const Eigen::VectorXd b = project(sd, k, functionals[f]);
                std::vector<double> av(a.data(), a.data() + a.size()), bv(b.data(), b.data() + b.size());
                StudyRow row;
                row.eps = eps;
                row.t = fs.times[k];
                row.component = static_cast<int>(f);
                const auto ks = stats::ks_two_sample(av, bv);
                row.ks_stat = ks.statistic;
                row.pvalue = ks.pvalue;
                row.mean_fastslow = stats::mean(av);
                row.var_fastslow = stats::variance(av);
                row.mean_sde = stats::mean(bv);
                row.var_sde = stats::variance(bv);
                worst = std::max(worst, row.ks_stat);
                rep.rows.push_back(row);
            }
        }
        rep.ks_by_eps.push_back(worst);
    }
    rep.ks_decreasing = true;
    for (std::size_t i = 1; i < rep.ks_by_eps.size(); ++i)
        if (!(rep.ks_by_eps[i] < rep.ks_by_eps[i - 1])) rep.ks_decreasing = false;
    return rep;
}

void write_homog_report_csv(const std::filesystem::path& path, const StudyReport& rep) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.precision(17);
    out << "eps,t,component,ks_stat,pvalue,mean_fastslow,var_fastslow,mean_sde,var_sde\n";
    for (const auto& r : rep.rows)
        out << r.eps << ',' << r.t << ',' << r.component << ',' << r.ks_stat << ',' << r.pvalue << ','
            << r.mean_fastslow << ',' << r.var_fastslow << ',' << r.mean_sde << ',' << r.var_sde << '\n';
}

double ume_block_deviation(const FastSlowSpec& spec, const CorrectedDrift& P, const Eigen::VectorXd& x, double eps,
                           int samples, std::uint64_t seed) {
    if (!(eps > 0.0 && eps <= 0.5)) throw InvalidArgument("eps must lie in (0, 0.5]");
    if (samples < 1) throw InvalidArgument("need at least one sample");
    const int d = spec.d;
    const auto block = static_cast<std::int64_t>(std::ceil(1.0 / std::sqrt(eps)));
    const Eigen::VectorXd target = P(x);
    const MapDescriptor map = spec.fast_map_at(eps);
    double total = 0.0;
    Eigen::VectorXd a(d), v(d), corr(d), avg(d);
    for (int s = 0; s < samples; ++s) {
        FastOrbit orb(map, CounterStream(seed, static_cast<std::uint64_t>(s), StreamDomain::Probe));
        orb.advance(1000);
        avg.setZero();
        for (std::int64_t j = 0; j < block; ++j) {
            const double y = orb.x();
            spec.a.evaluate(x.data(), y, a.data());
            spec.v.evaluate(y, v.data());
            correction_for(spec.h, x.data(), v * v.transpose(), corr.data());
            avg += a + corr;
            orb.step();
        }
        avg /= static_cast<double>(block);
        total += (avg - target).norm();
    }
    return total / samples;
}

}  // namespace ergodic_limits
