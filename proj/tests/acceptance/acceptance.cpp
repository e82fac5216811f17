// Acceptance run: one PASS/FAIL line per criterion. Criterion numbers given
// as arguments restrict the run to those.
//
// Criteria listed in kKnownRed fail for reasons recorded in the project notes;
// they are printed as FAIL but do not change the exit status.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ergodic_limits/decomposition.hpp"
#include "ergodic_limits/homogenization.hpp"
#include "ergodic_limits/limit_law_harness.hpp"
#include "ergodic_limits/stats.hpp"

using namespace ergodic_limits;

namespace {

const std::set<int> kKnownRed{5, 7};

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

McConfig mc(std::int64_t n_orbit, std::int64_t n_samples, std::uint64_t seed = 1) {
    McConfig c;
    c.n_orbit = n_orbit;
    c.n_samples = n_samples;
    c.seed = seed;
    return c;
}

Observable centered_cos(const MapDescriptor& map) {
    return map.kind() == MapKind::Doubling ? Observable::cos2pi() : center_observable(Observable::cos2pi(), map);
}

struct Setup {
    InducedSystem sys;
    TransferApproximation op;
    Decomposition dec;
};

Setup decompose(const MapDescriptor& map, const Observable& obs, int n, double tol) {
    InducedSystem sys = build_induced(map, 500);
    TransferApproximation op = build_ulam(sys, n);
    Decomposition dec = primary_decomposition(op, induced_field(sys, map, obs, op), tol);
    return {std::move(sys), std::move(op), std::move(dec)};
}

Outcome decomposition_identity() {
    const auto lsv = MapDescriptor::lsv(0.3);
    const auto lobs = centered_cos(lsv);
    const Setup a = decompose(lsv, lobs, 4096, 1e-10);
    const double e_lsv = tower_identity_error(lift_to_tower(a.dec, a.sys, lsv, lobs), 10'000, 11);
    const auto dbl = MapDescriptor::doubling(2);
    const Setup b = decompose(dbl, Observable::cos2pi(), 4096, 1e-10);
    const double e_dbl = tower_identity_error(lift_to_tower(b.dec, b.sys, dbl, Observable::cos2pi()), 10'000, 12);
    return {e_lsv < 1e-6 && e_dbl < 1e-10, fmt("LSV(0.3) %.2e < 1e-6, Doubling(2) %.2e < 1e-10", e_lsv, e_dbl)};
}

Outcome kernel_property() {
    const auto lsv = MapDescriptor::lsv(0.3);
    const auto obs = centered_cos(lsv);
    const Setup a = decompose(lsv, obs, 4096, 1e-10);
    const Setup b = decompose(lsv, obs, 8192, 0.5e-10);
    const double ra = offgrid_kernel_residual(a.op, a.sys, lift_to_tower(a.dec, a.sys, lsv, obs), 200, 21);
    const double rb = offgrid_kernel_residual(b.op, b.sys, lift_to_tower(b.dec, b.sys, lsv, obs), 200, 21);
    const double ratio = ra / rb;
    return {a.dec.kernel_residual < 1e-2 && ra < 1e-2 && ratio >= 1.5,
            fmt("|Pm'| at nodes %.2e; off-grid %.2e at N=4096, %.2e at N=8192, ratio %.2f >= 1.5",
                a.dec.kernel_residual, ra, rb, ratio)};
}

Outcome covariance_agreement() {
    const auto dbl = MapDescriptor::doubling(2);
    const McConfig cfg = mc(1000, 10'000);
    std::vector<CovarianceEstimate> d, l;
    for (auto m : {CovarianceMethod::Direct, CovarianceMethod::GreenKubo, CovarianceMethod::Martingale})
        d.push_back(covariance(dbl, Observable::cos2pi(), cfg, m));
    const auto lsv = MapDescriptor::lsv(0.3);
    const auto obs = centered_cos(lsv);
    for (auto m : {CovarianceMethod::Direct, CovarianceMethod::GreenKubo, CovarianceMethod::Martingale})
        l.push_back(covariance(lsv, obs, cfg, m));

    bool ok = true;
    for (const auto& e : d) ok = ok && std::abs(e.sigma(0, 0) - 0.5) <= 0.02;
    double worst = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = i + 1; k < 3; ++k) {
            const double joint = std::hypot(l[i].std_err(0, 0), l[k].std_err(0, 0));
            worst = std::max(worst, std::abs(l[i].sigma(0, 0) - l[k].sigma(0, 0)) / joint);
        }
    ok = ok && worst <= 2.0;
    return {ok, fmt("Doubling %.4f/%.4f/%.4f vs 0.5 +- 0.02; LSV(0.3) %.4f/%.4f/%.4f, worst pair %.2f <= 2 "
                    "combined std_err",
                    d[0].sigma(0, 0), d[1].sigma(0, 0), d[2].sigma(0, 0), l[0].sigma(0, 0), l[1].sigma(0, 0),
                    l[2].sigma(0, 0), worst)};
}

Outcome moment_scaling_check() {
    const std::vector<std::int64_t> ladder{100, 316, 1000, 3162, 10'000};
    const auto a = moment_scaling(MapDescriptor::doubling(2), Observable::cos2pi(), mc(1, 2000), 2.0, ladder);
    const auto lsv = MapDescriptor::lsv(0.6);
    const auto b = moment_scaling(lsv, centered_cos(lsv), mc(1, 2000), 1.5, ladder);
    return {std::abs(a.slope - 0.5) <= 0.05 && b.slope <= 1.0 / 1.5 + 0.07,
            fmt("Doubling p=2 slope %.3f in 0.50 +- 0.05; LSV(0.6) p=1.5 slope %.3f <= %.3f", a.slope, b.slope,
                1.0 / 1.5 + 0.07)};
}

Outcome wip_check() {
    std::string detail;
    bool ok = true;
    for (const auto& map : {MapDescriptor::doubling(2), MapDescriptor::lsv(0.3)}) {
        const auto obs = centered_cos(map);
        const auto sigma = covariance(map, obs, mc(1000, 1000), CovarianceMethod::Martingale);
        const auto w = wip_test(map, obs, mc(10'000, 100'000), sigma, {0.25, 0.5, 1.0});
        const double rel = std::abs(w.variance_slope / w.sigma2 - 1.0);
        ok = ok && w.ks_pvalue > 0.01 && rel <= 0.05;
        detail += map.name() + " p=";
        for (const auto& r : w.per_time) detail += fmt("%.2g,", r.pvalue);
        detail.back() = ' ';
        detail += fmt("slope/sigma2-1=%.3f; ", rel);
    }
    detail += "need p > 0.01 and <= 5%";
    return {ok, detail};
}

Outcome p1_wip() {
    const auto map = MapDescriptor::lsv(0.8);
    const auto bump = center_observable(Observable::bump_on_y(0.75, 0.2, 1.0), map);
    const auto sigma = covariance(map, bump, mc(100'000, 2000, 7), CovarianceMethod::Direct);
    const McConfig cfg = mc(100'000, 10'000);
    const auto w = wip_test(map, bump, cfg, sigma, {0.25, 0.5, 1.0});
    const Eigen::MatrixXd s = birkhoff_samples(map, centered_cos(map), cfg);
    const std::vector<double> c(s.col(0).data(), s.col(0).data() + s.rows());
    const double kurt = stats::kurtosis(c);
    return {w.ks_pvalue > 0.01 && kurt > 3.5,
            fmt("bump min KS p %.3f > 0.01; cos control kurtosis %.2f > 3.5", w.ks_pvalue, kurt)};
}

Outcome martingale_array() {
    std::string detail;
    bool ok = true;
    for (const auto& map : {MapDescriptor::doubling(2), MapDescriptor::lsv(0.3)}) {
        const auto obs = centered_cos(map);
        const Setup s = decompose(map, obs, 4096, 1e-10);
        const auto sec = secondary_decomposition(s.op, s.dec, 1e-9);
        const auto tf = lift_to_tower(s.dec, s.sys, map, obs);
        const auto r = martingale_array_check(tf, sec, mc(1, 1000), {1000, 10'000, 100'000}, {0.5, 1.0});
        const Eigen::Index t = r.b1_iqr.cols() - 1;
        const double shrink = r.b1_iqr(0, t) / r.b1_iqr(2, t);
        const bool b2 = map.kind() == MapKind::Doubling ? r.b2_sum.back() == 0.0 : r.b2_sum.back() < 0.01;
        ok = ok && shrink >= 2.0 && b2;
        detail += fmt("%s B1 IQR shrink %.1fx, B2 %.4g; ", map.name().c_str(), shrink, r.b2_sum.back());
    }
    detail += "need >= 2x, B2 < 0.01 (LSV) and 0 (doubling)";
    return {ok, detail};
}

Outcome secondary_check() {
    const int n = 4096;
    const auto map = MapDescriptor::doubling(2);
    const Setup s = decompose(map, Observable::cos2pi(), n, 1e-10);
    const auto sec = secondary_decomposition(s.op, s.dec, 1e-10);
    double dev = 0.0;
    for (int i = 0; i < n; ++i)
        dev = std::max(dev, std::abs(sec.m_breve_prime(i, 0) - 0.5 * std::cos(2 * M_PI * s.op.grid.midpoint(i))));

    // Birkhoff sums of phi-breve along doubling orbits.
    const std::vector<std::int64_t> ladder{100, 316, 1000, 3162, 10'000};
    const int samples = 2000;
    std::vector<double> sumsq(ladder.size(), 0.0);
    const Eigen::VectorXd phi = sec.phi_breve_prime.col(0);
    for (int k = 0; k < samples; ++k) {
        FastOrbit orbit(map, CounterStream(5, static_cast<std::uint64_t>(k), StreamDomain::Orbit));
        double sum = 0.0;
        std::size_t next = 0;
        for (std::int64_t j = 1; j <= ladder.back(); ++j) {
            sum += interpolate(s.op.grid, phi, orbit.x());
            orbit.step();
            if (j == ladder[next]) sumsq[next++] += sum * sum;
        }
    }
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < ladder.size(); ++i) {
        lx.push_back(std::log(static_cast<double>(ladder[i])));
        ly.push_back(0.5 * std::log(sumsq[i] / samples));
    }
    const double slope = stats::linear_regression(lx, ly).slope;
    return {dev <= 2.0 / n && sec.kernel_residual < 1e-2 && std::abs(slope - 0.5) <= 0.07,
            fmt("|m_breve - cos/2| %.2e <= 2/N, |P m_breve| %.2e < 1e-2, Birkhoff slope %.3f in 0.5 +- 0.07", dev,
                sec.kernel_residual, slope)};
}

FastSlowSpec ou_spec() {
    FastSlowSpec s;
    s.a = SlowDrift::linear(Eigen::MatrixXd::Constant(1, 1, -1.0));
    return s;
}

Outcome ou_benchmark() {
    const double target = 0.25 * (1.0 - std::exp(-2.0));
    const auto small = homogenization_study(ou_spec(), {0.05, 0.02, 0.01}, 1.0, mc(1, 10'000), {1.0});
    const double var = small.rows.back().var_fastslow;
    const auto big = homogenization_study(ou_spec(), {0.05, 0.02, 0.01}, 1.0, mc(1, 100'000), {1.0});
    const bool ok = std::abs(var / target - 1.0) <= 0.10 && big.ks_decreasing;
    return {ok, fmt("Var x(1) at eps=0.01 %.4f vs %.4f (10%%); KS %.4f > %.4f > %.4f (1e5 samples)", var, target,
                    big.ks_by_eps[0], big.ks_by_eps[1], big.ks_by_eps[2])};
}

Outcome drift_correction() {
    FastSlowSpec spec;
    spec.h = Diffeo::cubic(1);
    spec.xi = Eigen::VectorXd::Constant(1, 1.0);
    const auto sigma = covariance(spec.fast_map, spec.v, mc(1000, 1000), CovarianceMethod::Martingale);
    const double s = sigma.sigma(0, 0);
    const CorrectedDrift P = drift_P(spec);
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
        const double x = -2.0 + 4.0 * (k + 0.5) / 20.0;
        const double oracle = s * x * std::pow(1.0 + x * x, -3);
        double corr = 0.0;
        P.correction_term(&x, &corr);
        worst = std::max(worst, std::abs(corr - oracle) / std::abs(oracle));
    }

    const McConfig cfg = mc(1, 10'000);
    const auto fs = simulate_fast_slow(spec, 0.01, 1.0, cfg, {1.0});
    const auto sde = solve_sde(limit_sde(spec, P.without_correction(), sigma.sigma), 1.0, cfg, 1e-4,
                               SdeScheme::StratonovichHeun, {1.0});
    const Eigen::VectorXd a = fs.marginal(0, 0), b = sde.marginal(0, 0);
    const std::vector<double> va(a.data(), a.data() + a.size()), vb(b.data(), b.data() + b.size());
    const double se = std::sqrt(stats::variance(va) / va.size() + stats::variance(vb) / vb.size());
    const double z = std::abs(stats::mean(va) - stats::mean(vb)) / se;
    return {worst <= 0.02 && z > 3.0,
            fmt("worst relative drift error %.2e <= 2%%; uncorrected mean gap %.1f std_err > 3", worst, z)};
}

Outcome family_check() {
    std::vector<FamilyMember> lsv;
    for (double g : {0.4, 0.35, 0.32, 0.31}) {
        const auto map = MapDescriptor::lsv(g);
        lsv.push_back({map, centered_cos(map)});
    }
    const auto a = family_sweep(lsv, mc(1000, 10'000), CovarianceMethod::Direct);

    const auto two = Observable::closed_form(
        {{Term{BasisFunction::Cos, 1.0, 1.0}, Term{BasisFunction::Cos, 2.0, 1.0}}});
    std::vector<FamilyMember> alt;
    for (int i = 0; i < 8; ++i) alt.push_back({MapDescriptor::doubling(i % 2 == 0 ? 2 : 3), two});
    const auto b = family_sweep(alt, mc(1000, 1000), CovarianceMethod::Martingale);

    bool match = b.accumulation_points.size() == 2;
    double err = 0.0;
    if (match) {
        const double oracle[2] = {2.0, 1.0};
        for (int c = 0; c < 2; ++c) {
            double se = 0.0;
            for (std::size_t i = 0; i < alt.size(); ++i)
                if (b.cluster_of[i] == c) se = std::max(se, b.estimates[i].std_err(0, 0));
            const double gap = std::abs(b.accumulation_points[static_cast<std::size_t>(c)](0, 0) - oracle[c]);
            err = std::max(err, gap);
            match = match && gap <= se + 1e-9;
        }
    }
    const bool cauchy = a.last_consecutive_diff <= 2.0 * a.last_joint_std_err;
    return {cauchy && match, fmt("LSV ladder last step %.4f <= 2 x %.4f; alternating doubling: %zu accumulation "
                                 "points, max oracle gap %.1e",
                                 a.last_consecutive_diff, a.last_joint_std_err, b.accumulation_points.size(), err)};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"decomposition identity", decomposition_identity},
        {"kernel property", kernel_property},
        {"covariance agreement", covariance_agreement},
        {"moment scaling", moment_scaling_check},
        {"weak invariance principle", wip_check},
        {"p=1 invariance principle", p1_wip},
        {"martingale array conditions", martingale_array},
        {"secondary decomposition", secondary_check},
        {"OU homogenization", ou_benchmark},
        {"drift correction", drift_correction},
        {"family sweep", family_check},
    };

    int unexpected = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.count(id)) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool known = !o.pass && kKnownRed.count(id);
        if (!o.pass && !known) ++unexpected;
        std::printf("%s criterion %d (%s): %s [%.1fs]%s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first,
                    o.detail.c_str(), secs, known ? " (known)" : "");
        std::fflush(stdout);
    }
    return unexpected == 0 ? 0 : 1;
}
