#include "ergodic_limits/limit_law_harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <omp.h>

#include "ergodic_limits/errors.hpp"
#include "ergodic_limits/rng.hpp"
#include "ergodic_limits/stats.hpp"

namespace ergodic_limits {

namespace {

int worker_count(const McConfig& cfg) { return cfg.threads > 0 ? cfg.threads : omp_get_max_threads(); }

FastOrbit start_orbit(const MapDescriptor& map, const McConfig& cfg, std::uint64_t index,
                      StreamDomain domain = StreamDomain::Orbit) {
    FastOrbit orb(map, CounterStream(cfg.seed, index, domain));
    if (cfg.initial_law == InitialLaw::InvariantApprox) orb.advance(cfg.burn_in);
    return orb;
}

double max_abs(const Eigen::MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

void check_sufficient(const CovarianceEstimate& est, const CovarianceOptions& opts) {
    const double se = max_abs(est.std_err);
    if (se > 0.2 * max_abs(est.sigma) && se > opts.abs_floor)
        throw InsufficientData("covariance std_err " + std::to_string(se) + " exceeds 20% of |sigma| " +
                               std::to_string(max_abs(est.sigma)) + " (" + to_string(est.method) + ")");
}

CovarianceEstimate direct_covariance(const MapDescriptor& map, const Observable& obs, const McConfig& cfg,
                                     const CovarianceOptions& opts) {
    const Eigen::MatrixXd S = birkhoff_samples(map, obs, cfg);
    const Eigen::Index M = S.rows();
    const Eigen::Index d = S.cols();
    const int G = std::clamp<int>(opts.jackknife_groups, 2, static_cast<int>(M));
    const double n = static_cast<double>(cfg.n_orbit);

    std::vector<Eigen::VectorXd> s1(static_cast<std::size_t>(G), Eigen::VectorXd::Zero(d));
    std::vector<Eigen::MatrixXd> s2(static_cast<std::size_t>(G), Eigen::MatrixXd::Zero(d, d));
    std::vector<Eigen::Index> count(static_cast<std::size_t>(G), 0);
    for (Eigen::Index i = 0; i < M; ++i) {
        const auto g = static_cast<std::size_t>(i * G / M);
        const Eigen::VectorXd row = S.row(i).transpose();
        s1[g] += row;
        s2[g] += row * row.transpose();
        ++count[g];
    }
    Eigen::VectorXd t1 = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd t2 = Eigen::MatrixXd::Zero(d, d);
    for (int g = 0; g < G; ++g) {
        t1 += s1[static_cast<std::size_t>(g)];
        t2 += s2[static_cast<std::size_t>(g)];
    }
    auto estimate = [&](const Eigen::VectorXd& a, const Eigen::MatrixXd& b, double m) -> Eigen::MatrixXd {
        const Eigen::VectorXd mean = a / m;
        return (b - m * mean * mean.transpose()) / ((m - 1.0) * n);
    };

    CovarianceEstimate est;
    est.method = CovarianceMethod::Direct;
    est.n_used = cfg.n_orbit * cfg.n_samples;
    est.sigma = estimate(t1, t2, static_cast<double>(M));
    std::vector<Eigen::MatrixXd> leave(static_cast<std::size_t>(G));
    Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(d, d);
    for (int g = 0; g < G; ++g) {
        const auto gi = static_cast<std::size_t>(g);
        leave[gi] = estimate(t1 - s1[gi], t2 - s2[gi], static_cast<double>(M - count[gi]));
        avg += leave[gi] / G;
    }
    Eigen::MatrixXd var = Eigen::MatrixXd::Zero(d, d);
    for (const auto& l : leave) var += (l - avg).cwiseAbs2();
    est.std_err = (var * (G - 1.0) / G).cwiseSqrt();
    return est;
}

// Autocovariance at lag k over [lo, hi) of a row-major L x d series.
Eigen::MatrixXd lag_covariance(const std::vector<double>& x, int d, std::int64_t lo, std::int64_t hi, int k) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(d, d);
    const std::int64_t end = hi - k;
    if (d == 1) {
        double s = 0.0;
        for (std::int64_t j = lo; j < end; ++j) s += x[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j + k)];
        c(0, 0) = s;
    } else {
        for (std::int64_t j = lo; j < end; ++j) {
            const double* a = &x[static_cast<std::size_t>(j * d)];
            const double* b = &x[static_cast<std::size_t>((j + k) * d)];
            for (int r = 0; r < d; ++r)
                for (int s = 0; s < d; ++s) c(r, s) += a[r] * b[s];
        }
    }
    return c / static_cast<double>(end - lo);
}

CovarianceEstimate green_kubo_covariance(const MapDescriptor& map, const Observable& obs, const McConfig& cfg,
                                         const CovarianceOptions& opts) {
    const std::int64_t L = opts.gk_length;
    if (L < 1000) throw InvalidArgument("Green-Kubo orbit length must be at least 1000");
    const int d = obs.dimension();
    std::vector<double> x(static_cast<std::size_t>(L * d));
    FastOrbit orb = start_orbit(map, cfg, 0, StreamDomain::LongOrbit);
    for (std::int64_t j = 0; j < L; ++j) {
        obs.evaluate(orb.x(), &x[static_cast<std::size_t>(j * d)]);
        orb.step();
    }
    for (int c = 0; c < d; ++c) {
        double s = 0.0;
        for (std::int64_t j = 0; j < L; ++j) s += x[static_cast<std::size_t>(j * d + c)];
        const double mean = s / static_cast<double>(L);
        for (std::int64_t j = 0; j < L; ++j) x[static_cast<std::size_t>(j * d + c)] -= mean;
    }

    const Eigen::MatrixXd c0 = lag_covariance(x, d, 0, L, 0);
    Eigen::MatrixXd floor(d, d);
    for (int r = 0; r < d; ++r)
        for (int s = 0; s < d; ++s) floor(r, s) = std::sqrt(std::abs(c0(r, r) * c0(s, s)) / static_cast<double>(L));

    const int nt = worker_count(cfg);
    constexpr int kBlock = 8;
    constexpr int kRun = 5;
    std::vector<Eigen::MatrixXd> lags{c0};
    int run = 0;
    int K = -1;
    if (opts.gk_lags && *opts.gk_lags < 0) throw InvalidArgument("Green-Kubo lag count must be non-negative");
    const int max_lag = opts.gk_lags ? *opts.gk_lags : opts.gk_max_lag;
    if (opts.gk_lags) K = 0;
    for (int start = 1; start <= max_lag && (opts.gk_lags || K < 0); start += kBlock) {
        const int stop = std::min(start + kBlock, max_lag + 1);
        std::vector<Eigen::MatrixXd> block(static_cast<std::size_t>(stop - start));
#pragma omp parallel for num_threads(nt) schedule(dynamic, 1)
        for (int k = start; k < stop; ++k) block[static_cast<std::size_t>(k - start)] = lag_covariance(x, d, 0, L, k);
        for (int k = start; k < stop && (opts.gk_lags || K < 0); ++k) {
            const Eigen::MatrixXd& ck = block[static_cast<std::size_t>(k - start)];
            lags.push_back(ck);
            if (opts.gk_lags) {
                K = k;
                continue;
            }
            const bool below = ((ck.cwiseAbs().array() < 2.0 * floor.array()) || (floor.array() == 0.0)).all();
            run = below ? run + 1 : 0;
            if (run == kRun) K = k - kRun;
        }
    }
    if (K < 0) throw ConvergenceError("Green-Kubo autocovariances did not reach the noise floor within the lag cap");

    auto gk_sum = [&](const std::vector<Eigen::MatrixXd>& c) {
        Eigen::MatrixXd s = c[0];
        for (int k = 1; k <= K; ++k) s += c[static_cast<std::size_t>(k)] + c[static_cast<std::size_t>(k)].transpose();
        return s;
    };
    CovarianceEstimate est;
    est.method = CovarianceMethod::GreenKubo;
    est.n_used = L;
    est.gk_lags = K;
    est.sigma = gk_sum(lags);

    const int B = std::max(2, opts.gk_batches);
    std::vector<Eigen::MatrixXd> batch(static_cast<std::size_t>(B));
#pragma omp parallel for num_threads(nt) schedule(dynamic, 1)
    for (int b = 0; b < B; ++b) {
        const std::int64_t lo = L * b / B;
        const std::int64_t hi = L * (b + 1) / B;
        std::vector<Eigen::MatrixXd> c;
        for (int k = 0; k <= K; ++k) c.push_back(lag_covariance(x, d, lo, hi, k));
        batch[static_cast<std::size_t>(b)] = gk_sum(c);
    }
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(d, d);
    for (const auto& s : batch) mean += s / B;
    Eigen::MatrixXd var = Eigen::MatrixXd::Zero(d, d);
    for (const auto& s : batch) var += (s - mean).cwiseAbs2() / (B - 1.0);
    est.std_err = (var / B).cwiseSqrt();
    return est;
}

Eigen::MatrixXd martingale_sigma(const InducedSystem& sys, const MapDescriptor& map, const Observable& obs, int n,
                                 double tol) {
    const TransferApproximation op = build_ulam(sys, n);
    const InducedField field = induced_field(sys, map, obs, op);
    const Decomposition dec = primary_decomposition(op, field, tol);
    return martingale_covariance(op, dec);
}

CovarianceEstimate martingale_method(const MapDescriptor& map, const Observable& obs,
                                     const CovarianceOptions& opts) {
    if (opts.grid_cells < 8) throw InvalidArgument("martingale covariance needs at least 8 grid cells");
    const InducedSystem sys = build_induced(map, opts.tau_max);
    CovarianceEstimate est;
    est.method = CovarianceMethod::Martingale;
    est.n_used = opts.grid_cells;
    est.sigma = martingale_sigma(sys, map, obs, opts.grid_cells, opts.series_tol);
    const Eigen::MatrixXd coarse = martingale_sigma(sys, map, obs, opts.grid_cells / 2, opts.series_tol);
    est.std_err = (est.sigma - coarse).cwiseAbs();
    return est;
}

std::vector<Eigen::VectorXd> test_functionals(int d) {
    std::vector<Eigen::VectorXd> cs;
    cs.push_back(Eigen::VectorXd::Unit(d, 0));
    if (d > 1) {
        cs.push_back(Eigen::VectorXd::Ones(d).normalized());
        Eigen::VectorXd alt(d);
        for (int i = 0; i < d; ++i) alt(i) = (i % 2 == 0) ? 1.0 : -1.0;
        cs.push_back(alt.normalized());
    }
    return cs;
}

}  // namespace

void McConfig::validate() const {
    if (n_orbit < 1) throw InvalidArgument("n_orbit must be positive");
    if (n_samples < 100) throw InvalidArgument("n_samples must be at least 100");
    if (burn_in < 0) throw InvalidArgument("burn_in must be non-negative");
    if (threads < 0) throw InvalidArgument("threads must be non-negative");
}

std::string to_string(CovarianceMethod m) {
    switch (m) {
        case CovarianceMethod::Direct: return "Direct";
        case CovarianceMethod::GreenKubo: return "GreenKubo";
        case CovarianceMethod::Martingale: return "Martingale";
    }
    return "?";
}

Eigen::MatrixXd birkhoff_samples(const MapDescriptor& map, const Observable& obs, const McConfig& cfg) {
    cfg.validate();
    const int d = obs.dimension();
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(cfg.n_samples, d);
#pragma omp parallel num_threads(worker_count(cfg))
    {
        std::vector<double> buf(static_cast<std::size_t>(d)), sum(static_cast<std::size_t>(d));
#pragma omp for schedule(dynamic, 16)
        for (std::int64_t i = 0; i < cfg.n_samples; ++i) {
            FastOrbit orb = start_orbit(map, cfg, static_cast<std::uint64_t>(i));
            std::fill(sum.begin(), sum.end(), 0.0);
            for (std::int64_t j = 0; j < cfg.n_orbit; ++j) {
                obs.evaluate(orb.x(), buf.data());
                for (int c = 0; c < d; ++c) sum[static_cast<std::size_t>(c)] += buf[static_cast<std::size_t>(c)];
                orb.step();
            }
            for (int c = 0; c < d; ++c) S(i, c) = sum[static_cast<std::size_t>(c)];
        }
    }
    return S;
}

CovarianceEstimate covariance(const MapDescriptor& map, const Observable& obs, const McConfig& cfg,
                              CovarianceMethod method, const CovarianceOptions& opts) {
    cfg.validate();
    CovarianceEstimate est;
    switch (method) {
        case CovarianceMethod::Direct: est = direct_covariance(map, obs, cfg, opts); break;
        case CovarianceMethod::GreenKubo: est = green_kubo_covariance(map, obs, cfg, opts); break;
        case CovarianceMethod::Martingale: est = martingale_method(map, obs, opts); break;
    }
    est.sigma = 0.5 * (est.sigma + est.sigma.transpose()).eval();
    check_sufficient(est, opts);
    return est;
}

MomentReport moment_scaling(const MapDescriptor& map, const Observable& obs, const McConfig& cfg, double p,
                            const std::vector<std::int64_t>& n_ladder) {
    cfg.validate();
    if (!(p > 0.0)) throw InvalidArgument("moment order p must be positive");
    if (n_ladder.size() < 5) throw InvalidArgument("moment ladder needs at least 5 points");
    if (!std::is_sorted(n_ladder.begin(), n_ladder.end()) || n_ladder.front() < 1 ||
        std::adjacent_find(n_ladder.begin(), n_ladder.end()) != n_ladder.end())
        throw InvalidArgument("moment ladder must be strictly increasing and positive");

    const std::size_t L = n_ladder.size();
    const int d = obs.dimension();
    Eigen::MatrixXd maxima(cfg.n_samples, static_cast<Eigen::Index>(L));
#pragma omp parallel num_threads(worker_count(cfg))
    {
        std::vector<double> buf(static_cast<std::size_t>(d)), sum(static_cast<std::size_t>(d));
#pragma omp for schedule(dynamic, 16)
        for (std::int64_t i = 0; i < cfg.n_samples; ++i) {
            FastOrbit orb = start_orbit(map, cfg, static_cast<std::uint64_t>(i));
            std::fill(sum.begin(), sum.end(), 0.0);
            double running = 0.0;
            std::size_t next = 0;
            for (std::int64_t j = 1; j <= n_ladder.back(); ++j) {
                obs.evaluate(orb.x(), buf.data());
                orb.step();
                double sq = 0.0;
                for (int c = 0; c < d; ++c) {
                    sum[static_cast<std::size_t>(c)] += buf[static_cast<std::size_t>(c)];
                    sq += sum[static_cast<std::size_t>(c)] * sum[static_cast<std::size_t>(c)];
                }
                running = std::max(running, std::sqrt(sq));
                if (n_ladder[next] == j) maxima(i, static_cast<Eigen::Index>(next++)) = running;
            }
        }
    }

    MomentReport rep;
    rep.p = p;
    rep.n = n_ladder;
    rep.value.resize(L);
    for (std::size_t l = 0; l < L; ++l)
        rep.value[l] = std::pow(maxima.col(static_cast<Eigen::Index>(l)).array().pow(p).mean(), 1.0 / p);
    if (std::any_of(rep.value.begin(), rep.value.end(), [](double v) { return !(v > 0.0); })) {
        rep.slope = std::numeric_limits<double>::quiet_NaN();
        return rep;
    }
    std::vector<double> lx(L), ly(L);
    for (std::size_t l = 0; l < L; ++l) {
        lx[l] = std::log(static_cast<double>(n_ladder[l]));
        ly[l] = std::log(rep.value[l]);
    }
    rep.slope = stats::linear_regression(lx, ly).slope;
    return rep;
}

WipReport wip_test(const MapDescriptor& map, const Observable& obs, const McConfig& cfg,
                   const CovarianceEstimate& sigma, const std::vector<double>& times) {
    cfg.validate();
    const int d = obs.dimension();
    if (sigma.sigma.rows() != d || sigma.sigma.cols() != d)
        throw InvalidArgument("covariance dimension does not match the observable");
    if (times.empty()) throw InvalidArgument("WIP test needs at least one time");
    std::vector<double> ts(times);
    std::sort(ts.begin(), ts.end());
    if (!(ts.front() > 0.0) || ts.back() > 1.0) throw InvalidArgument("WIP times must lie in (0, 1]");

    const auto functionals = test_functionals(d);
    std::vector<double> sig2;
    for (const auto& c : functionals) {
        const double s2 = c.dot(sigma.sigma * c);
        if (!(s2 >= 1e-6)) throw DegenerateVariance("sigma^2 = " + std::to_string(s2) + " is below 1e-6");
        sig2.push_back(s2);
    }

    const std::int64_t n = cfg.n_orbit;
    std::vector<std::int64_t> steps;
    for (double t : ts) steps.push_back(static_cast<std::int64_t>(std::floor(n * t)));
    const std::size_t T = ts.size();
    // samples x (T * d), sample-major
    Eigen::MatrixXd W(cfg.n_samples, static_cast<Eigen::Index>(T * d));
#pragma omp parallel num_threads(worker_count(cfg))
    {
        std::vector<double> buf(static_cast<std::size_t>(d)), sum(static_cast<std::size_t>(d));
#pragma omp for schedule(dynamic, 16)
        for (std::int64_t i = 0; i < cfg.n_samples; ++i) {
            FastOrbit orb = start_orbit(map, cfg, static_cast<std::uint64_t>(i));
            std::fill(sum.begin(), sum.end(), 0.0);
            std::size_t next = 0;
            for (std::int64_t j = 0; next < T; ++j) {
                while (next < T && steps[next] == j) {
                    for (int c = 0; c < d; ++c)
                        W(i, static_cast<Eigen::Index>(next * d + c)) = sum[static_cast<std::size_t>(c)];
                    ++next;
                }
                if (next == T) break;
                obs.evaluate(orb.x(), buf.data());
                for (int c = 0; c < d; ++c) sum[static_cast<std::size_t>(c)] += buf[static_cast<std::size_t>(c)];
                orb.step();
            }
        }
    }
    W /= std::sqrt(static_cast<double>(n));
    W.rowwise() -= W.colwise().mean();

    WipReport rep;
    rep.times_tested = ts;
    rep.ks_statistic = 0.0;
    rep.ks_pvalue = 1.0;
    std::vector<std::vector<double>> proj(T);
    for (std::size_t f = 0; f < functionals.size(); ++f) {
        for (std::size_t t = 0; t < T; ++t) {
            const Eigen::VectorXd w =
                W.middleCols(static_cast<Eigen::Index>(t * d), d) * functionals[f];
            std::vector<double> z(w.data(), w.data() + w.size());
            WipTimeResult r;
            r.time = ts[t];
            r.functional = static_cast<int>(f);
            r.variance = stats::variance(z);
            const double scale = std::sqrt(ts[t] * sig2[f]);
            for (double& v : z) v /= scale;
            const auto ks = stats::ks_normal(z);
            r.ks_statistic = ks.statistic;
            r.pvalue = ks.pvalue;
            rep.ks_statistic = std::max(rep.ks_statistic, ks.statistic);
            rep.ks_pvalue = std::min(rep.ks_pvalue, ks.pvalue);
            rep.per_time.push_back(r);
            if (f == 0) proj[t].assign(w.data(), w.data() + w.size());
        }
    }

    rep.sigma2 = sig2[0];
    double stv = 0.0, stt = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        stv += ts[t] * rep.per_time[t].variance;
        stt += ts[t] * ts[t];
    }
    rep.variance_slope = stv / stt;
    rep.kurtosis = stats::kurtosis(proj[T - 1]);
    if (T >= 2) {
        std::vector<double> inc(proj[T - 1].size());
        for (std::size_t i = 0; i < inc.size(); ++i) inc[i] = proj[T - 1][i] - proj[0][i];
        rep.increment_correlation = stats::correlation(proj[0], inc);
        rep.increments_independent_pvalue = stats::correlation_pvalue(rep.increment_correlation, inc.size());
    }
    return rep;
}

SweepReport family_sweep(const std::vector<FamilyMember>& family, const McConfig& cfg, CovarianceMethod method,
                         const CovarianceOptions& opts) {
    if (family.empty()) throw InvalidArgument("family sweep needs at least one member");
    SweepReport rep;
    for (const auto& m : family) rep.estimates.push_back(covariance(m.map, m.obs, cfg, method, opts));

    auto joint = [](const CovarianceEstimate& a, const CovarianceEstimate& b) {
        return max_abs((a.std_err.cwiseAbs2() + b.std_err.cwiseAbs2()).cwiseSqrt());
    };
    for (std::size_t i = 1; i < rep.estimates.size(); ++i) {
        const double diff = max_abs(rep.estimates[i].sigma - rep.estimates[i - 1].sigma);
        rep.max_consecutive_diff = std::max(rep.max_consecutive_diff, diff);
        rep.last_consecutive_diff = diff;
        rep.last_joint_std_err = joint(rep.estimates[i], rep.estimates[i - 1]);
    }

    // Greedy clustering: a member joins the first cluster whose founding
    // estimate lies within 3 joint std_err (plus a relative 1e-6).
    std::vector<std::size_t> founder;
    std::vector<std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < rep.estimates.size(); ++i) {
        const auto& e = rep.estimates[i];
        int found = -1;
        for (std::size_t c = 0; c < founder.size() && found < 0; ++c) {
            const auto& f = rep.estimates[founder[c]];
            const double tol = 3.0 * joint(e, f) + 1e-6 * std::max(max_abs(e.sigma), max_abs(f.sigma));
            if (max_abs(e.sigma - f.sigma) <= tol) found = static_cast<int>(c);
        }
        if (found < 0) {
            found = static_cast<int>(founder.size());
            founder.push_back(i);
            members.emplace_back();
        }
        members[static_cast<std::size_t>(found)].push_back(i);
        rep.cluster_of.push_back(found);
    }
    for (const auto& group : members) {
        Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(rep.estimates[group[0]].sigma.rows(),
                                                     rep.estimates[group[0]].sigma.cols());
        for (std::size_t i : group) mean += rep.estimates[i].sigma;
        rep.accumulation_points.push_back(mean / static_cast<double>(group.size()));
    }
    return rep;
}

B1B2Report martingale_array_check(const TowerFunction& tf, const SecondaryDecomposition& sec, const McConfig& cfg,
                                  const std::vector<std::int64_t>& n_ladder, const std::vector<double>& times,
                                  double eps_prime) {
    cfg.validate();
    if (n_ladder.empty() || times.empty()) throw InvalidArgument("martingale array check needs n and t values");
    if (!std::is_sorted(n_ladder.begin(), n_ladder.end()) || n_ladder.front() < 1)
        throw InvalidArgument("n ladder must be increasing and positive");
    if (!(eps_prime > 0.0)) throw InvalidArgument("Lindeberg epsilon must be positive");
    for (double t : times)
        if (!(t > 0.0 && t <= 1.0)) throw InvalidArgument("times must lie in (0, 1]");

    const int d = tf.dimension();
    const Decomposition& dec = tf.decomposition();
    if (sec.p_mm.rows() != dec.grid.size() || sec.p_mm.cols() != d * d)
        throw InvalidArgument("secondary decomposition does not match the tower function");
    Eigen::VectorXd trace_pmm = Eigen::VectorXd::Zero(dec.grid.size());
    for (int c = 0; c < d; ++c) trace_pmm += sec.p_mm.col(c * d + c);

    const std::size_t L = n_ladder.size();
    const std::size_t T = times.size();
    // checkpoints j = floor(n t), sorted, with their (n, t) slot
    std::vector<std::pair<std::int64_t, std::size_t>> checks;
    for (std::size_t l = 0; l < L; ++l)
        for (std::size_t t = 0; t < T; ++t)
            checks.emplace_back(static_cast<std::int64_t>(std::floor(n_ladder[l] * times[t])), l * T + t);
    std::sort(checks.begin(), checks.end());
    const std::int64_t n_max = n_ladder.back();
    std::vector<double> threshold(L);
    for (std::size_t l = 0; l < L; ++l) threshold[l] = eps_prime * std::sqrt(static_cast<double>(n_ladder[l]));

    const Interval Y = tf.Y();
    auto in_y = [&](double x) { return x >= Y.lo && x <= Y.hi; };
    Eigen::MatrixXd b1(cfg.n_samples, static_cast<Eigen::Index>(L * T));
    Eigen::MatrixXd b2(cfg.n_samples, static_cast<Eigen::Index>(L));
    const std::int64_t burn = cfg.initial_law == InitialLaw::InvariantApprox ? cfg.burn_in : 0;

#pragma omp parallel num_threads(worker_count(cfg))
    {
        std::vector<double> acc(static_cast<std::size_t>(d)), chi_entry(static_cast<std::size_t>(d)),
            chi_ret(static_cast<std::size_t>(d)), buf(static_cast<std::size_t>(d));
        std::vector<double> lind(L);
#pragma omp for schedule(dynamic, 4)
        for (std::int64_t i = 0; i < cfg.n_samples; ++i) {
            FastOrbit orb(tf.map(), CounterStream(cfg.seed, static_cast<std::uint64_t>(i), StreamDomain::Tower));
            while (!in_y(orb.x())) orb.step();
            std::fill(acc.begin(), acc.end(), 0.0);
            tf.chi_prime(orb.x(), chi_entry.data());
            double cond = 0.0;
            std::fill(lind.begin(), lind.end(), 0.0);
            std::size_t next = 0;
            // Step j moves f^j p to f^{j+1} p; a return to Y means f^j p sat on the top level.
            for (std::int64_t j = -burn; j < n_max; ++j) {
                while (j >= 0 && next < checks.size() && checks[next].first == j) {
                    b1(i, static_cast<Eigen::Index>(checks[next].second)) = cond;
                    ++next;
                }
                tf.v(orb.x(), buf.data());
                for (int c = 0; c < d; ++c) acc[static_cast<std::size_t>(c)] += buf[static_cast<std::size_t>(c)];
                orb.step();
                if (!in_y(orb.x())) continue;
                tf.chi_prime(orb.x(), chi_ret.data());
                double m2 = 0.0;
                for (int c = 0; c < d; ++c) {
                    const auto k = static_cast<std::size_t>(c);
                    const double m = acc[k] - chi_ret[k] + chi_entry[k];
                    m2 += m * m;
                }
                if (j >= 0) {
                    cond += interpolate(dec.grid, trace_pmm, orb.x());
                    const double mabs = std::sqrt(m2);
                    for (std::size_t l = 0; l < L; ++l)
                        if (j < n_ladder[l] && mabs >= threshold[l]) lind[l] += m2;
                }
                std::fill(acc.begin(), acc.end(), 0.0);
                chi_entry = chi_ret;
            }
            while (next < checks.size()) {
                b1(i, static_cast<Eigen::Index>(checks[next].second)) = cond;
                ++next;
            }
            for (std::size_t l = 0; l < L; ++l) b2(i, static_cast<Eigen::Index>(l)) = lind[l];
        }
    }

    B1B2Report rep;
    rep.n = n_ladder;
    rep.times = times;
    rep.eps_prime = eps_prime;
    rep.sigma_trace = sec.sigma_mart.trace();
    rep.b1_iqr.resize(static_cast<Eigen::Index>(L), static_cast<Eigen::Index>(T));
    rep.b1_median.resize(static_cast<Eigen::Index>(L), static_cast<Eigen::Index>(T));
    for (std::size_t l = 0; l < L; ++l) {
        const double n = static_cast<double>(n_ladder[l]);
        for (std::size_t t = 0; t < T; ++t) {
            const Eigen::VectorXd col = b1.col(static_cast<Eigen::Index>(l * T + t)) / n;
            std::vector<double> v(col.data(), col.data() + col.size());
            rep.b1_iqr(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(t)) = stats::iqr(v);
            rep.b1_median(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(t)) = stats::quantile(v, 0.5);
        }
        rep.b2_sum.push_back(b2.col(static_cast<Eigen::Index>(l)).mean() / n);
    }
    return rep;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.precision(17);
    return out;
}

}  // namespace

void write_covariance_csv(const std::filesystem::path& path, const std::vector<CovarianceEstimate>& estimates) {
    auto out = open_csv(path);
    out << "method,entry_ij,value,std_err\n";
    for (const auto& e : estimates)
        for (Eigen::Index i = 0; i < e.sigma.rows(); ++i)
            for (Eigen::Index j = 0; j < e.sigma.cols(); ++j)
                out << to_string(e.method) << ',' << i << j << ',' << e.sigma(i, j) << ',' << e.std_err(i, j) << '\n';
}

void write_wip_csv(const std::filesystem::path& path, const WipReport& rep) {
    auto out = open_csv(path);
    out << "t,ks_stat,pvalue\n";
    for (const auto& r : rep.per_time)
        if (r.functional == 0) out << r.time << ',' << r.ks_statistic << ',' << r.pvalue << '\n';
}

void write_moments_csv(const std::filesystem::path& path, const std::vector<MomentReport>& reps) {
    auto out = open_csv(path);
    out << "n,p,value\n";
    for (const auto& r : reps)
        for (std::size_t i = 0; i < r.n.size(); ++i) out << r.n[i] << ',' << r.p << ',' << r.value[i] << '\n';
}

void write_b1b2_csv(const std::filesystem::path& path, const B1B2Report& rep) {
    auto out = open_csv(path);
    out << "n,b1_iqr,b2_sum\n";
    const Eigen::Index t = rep.b1_iqr.cols() - 1;
    for (std::size_t l = 0; l < rep.n.size(); ++l)
        out << rep.n[l] << ',' << rep.b1_iqr(static_cast<Eigen::Index>(l), t) << ',' << rep.b2_sum[l] << '\n';
}

}  // namespace ergodic_limits
