#include "doctest.h"

#include <cmath>
#include <numbers>

#include "ergodic_limits/decomposition.hpp"
#include "ergodic_limits/errors.hpp"

using namespace ergodic_limits;
using doctest::Approx;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

namespace {

double sup(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

Eigen::MatrixXd on_grid(const GridY& g, double (*f)(double)) {
    Eigen::MatrixXd out(g.size(), 1);
    for (int i = 0; i < g.size(); ++i) out(i, 0) = f(g.midpoint(i));
    return out;
}

}  // namespace

TEST_CASE("induced observable") {
    const auto dmap = MapDescriptor::doubling(2);
    const auto dsys = build_induced(dmap);
    const GridY dg(dsys.Y(), 64);
    const auto phi = induced_observable(dsys, dmap, Observable::cos2pi(), dg);
    for (int i = 0; i < 64; ++i) CHECK(phi(i, 0) == Approx(std::cos(kTwoPi * dg.midpoint(i))));

    const auto map = MapDescriptor::lsv(0.3);
    const auto sys = build_induced(map, 500);
    const auto op = build_ulam(sys, 1024);
    const auto one = Observable::closed_form({{Term{BasisFunction::Power, 0.0, 1.0}}});
    const auto tau = induced_observable(sys, map, one, op.grid);
    CHECK((tau.col(0) - op.cell_tau_mean).cwiseAbs().maxCoeff() < 1e-9);

    // Hand oracle on the tau = 2 branch: v(y) + v(2y - 1).
    const Branch* b2 = nullptr;
    for (const auto& b : sys.branches())
        if (b.return_time == 2) b2 = &b;
    REQUIRE(b2);
    const double y = 0.5 * (b2->interval.lo + b2->interval.hi);
    double out = 0.0;
    int t = 0;
    induced_value(map, Observable::cos2pi(), sys.Y(), y, &out, &t);
    CHECK(t == 2);
    CHECK(out == Approx(std::cos(kTwoPi * y) + std::cos(kTwoPi * (2 * y - 1))).epsilon(1e-14));
}

TEST_CASE("zero observable decomposes to zero") {
    const auto map = MapDescriptor::lsv(0.3);
    const auto sys = build_induced(map, 500);
    const auto op = build_ulam(sys, 256);
    const auto zero = Observable::closed_form({{Term{BasisFunction::Cos, 1.0, 0.0}}, {Term{BasisFunction::Power, 1.0, 0.0}}});
    const auto dec = primary_decomposition(op, induced_field(sys, map, zero, op), 1e-10);
    CHECK(sup(dec.chi_prime) == 0.0);
    CHECK(sup(dec.m_prime) == 0.0);
    CHECK(dec.kernel_residual == 0.0);
    const auto sec = secondary_decomposition(op, dec, 1e-10);
    CHECK(sup(sec.sigma_mart) == 0.0);
    CHECK(sup(sec.m_breve_prime) == 0.0);
    CHECK(sup(sec.chi_breve_prime) == 0.0);
}

TEST_CASE("doubling with cos(2 pi x) is already a martingale") {
    const int n = 1024;
    const auto map = MapDescriptor::doubling(2);
    const auto sys = build_induced(map);
    const auto op = build_ulam(sys, n);
    const auto phi = on_grid(op.grid, [](double x) { return std::cos(kTwoPi * x); });
    const auto dec = primary_decomposition(op, induced_field(sys, map, Observable::cos2pi(), op), 1e-10);
    CHECK(sup(dec.chi_prime) < 2.0 / n);
    CHECK(sup(dec.m_prime - phi) < 1e-2);
    CHECK(dec.kernel_residual < 2.0 / n);
    CHECK(martingale_covariance(op, dec)(0, 0) == Approx(0.5).epsilon(1e-3));
}

TEST_CASE("doubling with cos(4 pi x) has a two-term series") {
    const int n = 2048;
    const auto map = MapDescriptor::doubling(2);
    const auto sys = build_induced(map);
    const auto op = build_ulam(sys, n);
    const auto dec = primary_decomposition(op, induced_field(sys, map, Observable::cos2pi(2.0), op), 1e-10);
    const auto c1 = on_grid(op.grid, [](double x) { return std::cos(kTwoPi * x); });
    CHECK(sup(dec.chi_prime - c1) < 1e-2);
    CHECK(sup(dec.m_prime - c1) < 2e-2);
    CHECK(sup(dec.m_prime - (dec.phi_prime - compose_with_F(op, dec.chi_prime) + dec.chi_prime)) < 1e-12);
}

TEST_CASE("secondary decomposition oracle for doubling") {
    const int n = 2048;
    const auto map = MapDescriptor::doubling(2);
    const auto sys = build_induced(map);
    const auto op = build_ulam(sys, n);
    const auto dec = primary_decomposition(op, induced_field(sys, map, Observable::cos2pi(), op), 1e-10);
    const auto sec = secondary_decomposition(op, dec, 1e-10);
    CHECK(sec.sigma_mart(0, 0) == Approx(0.5).epsilon(1e-3));
    const auto half4 = on_grid(op.grid, [](double x) { return 0.5 * std::cos(2 * kTwoPi * x); });
    const auto half2 = on_grid(op.grid, [](double x) { return 0.5 * std::cos(kTwoPi * x); });
    CHECK(sup(sec.phi_breve_prime - half4) < 2e-2);
    CHECK(sup(sec.chi_breve_prime - half2) < 2e-2);
    CHECK(sup(sec.m_breve_prime - half2) < 2e-2);
    CHECK(sec.kernel_residual < sec.tail_bound + 10.0 / n);
    CHECK(sup(sec.m_breve_prime - (sec.phi_breve_prime - compose_with_F(op, sec.chi_breve_prime) +
                                   sec.chi_breve_prime)) < 1e-12);
}

TEST_CASE("LSV decomposition invariants") {
    const auto map = MapDescriptor::lsv(0.3);
    const auto sys = build_induced(map, 500);
    const int n = 4096;
    const auto op = build_ulam(sys, n);
    const auto obs = Observable::cos2pi();
    const auto dec = primary_decomposition(op, induced_field(sys, map, obs, op), 1e-8);
    CHECK(dec.K > 1);
    CHECK(dec.kernel_residual <= dec.tail_bound + 10.0 / n);
    CHECK(sup(dec.m_prime - (dec.phi_prime - compose_with_F(op, dec.chi_prime) + dec.chi_prime)) < 1e-12);

    const Eigen::MatrixXd sigma = martingale_covariance(op, dec);
    CHECK(sigma(0, 0) > 0.0);

    const auto sec = secondary_decomposition(op, dec, 1e-8);
    CHECK(sec.kernel_residual <= sec.tail_bound + 10.0 / n);
    CHECK(sup(sec.m_breve_prime - (sec.phi_breve_prime - compose_with_F(op, sec.chi_breve_prime) +
                                   sec.chi_breve_prime)) < 1e-12);

    SUBCASE("kernel residual shrinks under refinement") {
        const auto op2 = build_ulam(sys, 2 * n);
        const auto dec2 = primary_decomposition(op2, induced_field(sys, map, obs, op2), 0.5e-8);
        CHECK(dec.kernel_residual / dec2.kernel_residual >= 1.5);
    }

    SUBCASE("tower identity") {
        const auto tf = lift_to_tower(dec, sys, map, obs);
        CounterStream rng(8, 0, StreamDomain::Probe);
        double worst = 0.0;
        for (int s = 0; s < 10000; ++s) {
            double y = 0.5 + 0.5 * rng.uniform();
            const int tau = tf.return_time(y);
            const int level = std::min(tau - 1, static_cast<int>(rng.uniform() * tau));
            const TowerPoint p = tf.point(y, level);
            double ph = 0.0, mm = 0.0, c0 = 0.0, c1 = 0.0;
            tf.phi(p, &ph);
            tf.m(p, &mm);
            tf.chi(p, &c0);
            tf.chi(tf.step(p), &c1);
            worst = std::max(worst, std::abs(ph - (mm + c1 - c0)));
            if (level <= tau - 2) REQUIRE(mm == 0.0);
            if (level == 0) {
                double cp = 0.0;
                tf.chi_prime(y, &cp);
                REQUIRE(c0 == cp);
            }
        }
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("tower identity for doubling") {
    const auto map = MapDescriptor::doubling(2);
    const auto sys = build_induced(map);
    const auto op = build_ulam(sys, 1024);
    const auto obs = Observable::cos2pi(2.0);
    const auto dec = primary_decomposition(op, induced_field(sys, map, obs, op), 1e-10);
    const auto tf = lift_to_tower(dec, sys, map, obs);
    CounterStream rng(2, 0, StreamDomain::Probe);
    for (int s = 0; s < 10000; ++s) {
        const TowerPoint p = tf.point(rng.uniform(), 0);
        double ph = 0.0, mm = 0.0, c0 = 0.0, c1 = 0.0;
        tf.phi(p, &ph);
        tf.m(p, &mm);
        tf.chi(p, &c0);
        tf.chi(tf.step(p), &c1);
        REQUIRE(std::abs(ph - (mm + c1 - c0)) < 1e-10);
    }
}

TEST_CASE("linearity and quadratic scaling") {
    const auto map = MapDescriptor::lsv(0.3);
    const auto sys = build_induced(map, 500);
    const auto op = build_ulam(sys, 1024);
    const auto p1 = induced_field(sys, map, Observable::cos2pi(), op);
    const auto p2 = induced_field(sys, map, Observable::cos2pi(3.0), op);
    const auto a = primary_decomposition(op, p1, 1e-9);
    const auto b = primary_decomposition(op, p2, 1e-9);
    SeriesOptions fixed;
    fixed.fixed_terms = std::max(a.K, b.K);
    const auto a2 = primary_decomposition(op, p1, 1e-9, fixed);
    const auto b2 = primary_decomposition(op, p2, 1e-9, fixed);
    const auto ab = primary_decomposition(op, 2.0 * p1 - 0.5 * p2, 1e-9, fixed);
    CHECK(sup(ab.chi_prime - (2.0 * a2.chi_prime - 0.5 * b2.chi_prime)) < 1e-12);
    CHECK(sup(ab.m_prime - (2.0 * a2.m_prime - 0.5 * b2.m_prime)) < 1e-12);

    SeriesOptions same;
    same.fixed_terms = a.K;
    const auto s1 = martingale_covariance(op, a)(0, 0);
    const auto s3 = martingale_covariance(op, primary_decomposition(op, 3.0 * p1, 1e-9, same))(0, 0);
    CHECK(s3 == Approx(9.0 * s1).epsilon(1e-12));
}

TEST_CASE("coboundaries carry no martingale variance") {
    const auto map = MapDescriptor::doubling(2);
    const auto sys = build_induced(map);
    const auto op = build_ulam(sys, 4096);
    // sin(2 pi T x) - sin(2 pi x) = sin(4 pi x) - sin(2 pi x).
    const auto obs = Observable::closed_form({{Term{BasisFunction::Sin, 2.0, 1.0}, Term{BasisFunction::Sin, 1.0, -1.0}}});
    const auto dec = primary_decomposition(op, induced_field(sys, map, obs, op), 1e-10);
    CHECK(martingale_covariance(op, dec)(0, 0) < 1e-3);
}

TEST_CASE("martingale covariance is symmetric in two dimensions") {
    const auto map = MapDescriptor::lsv(0.4);
    const auto sys = build_induced(map, 500);
    const auto op = build_ulam(sys, 1024);
    const auto obs = Observable::closed_form({{Term{BasisFunction::Cos, 1.0, 1.0}}, {Term{BasisFunction::Power, 2.0, 1.0}}});
    const auto dec = primary_decomposition(op, induced_field(sys, map, obs, op), 1e-9);
    const Eigen::MatrixXd s = martingale_covariance(op, dec);
    CHECK(std::abs(s(0, 1) - s(1, 0)) < 1e-14);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    CHECK(es.eigenvalues().minCoeff() > -1e-12);
    const auto sec = secondary_decomposition(op, dec, 1e-9);
    CHECK(sec.phi_breve_prime.cols() == 4);
}

TEST_CASE("growth of chi") {
    SUBCASE("doubling is bounded") {
        const auto map = MapDescriptor::doubling(2);
        const auto sys = build_induced(map);
        const auto op = build_ulam(sys, 1024);
        const auto obs = Observable::cos2pi();
        const auto tf = lift_to_tower(primary_decomposition(op, induced_field(sys, map, obs, op), 1e-10),
                                      sys, map, obs);
        const auto rep = chi_growth_exponent(tf, 1000, 1000, 5);
        CHECK(rep.p == 2.0);
        CHECK(rep.slope < 0.1);
    }
    SUBCASE("LSV stays below the moment bound") {
        const auto map = MapDescriptor::lsv(0.3);
        const auto sys = build_induced(map, 500);
        const auto op = build_ulam(sys, 2048);
        const auto obs = center_observable(Observable::cos2pi(), map, {1'000'000, 1000, 1});
        const auto tf = lift_to_tower(primary_decomposition(op, induced_field(sys, map, obs, op), 1e-9),
                                      sys, map, obs);
        const auto rep = chi_growth_exponent(tf, 2000, 1000, 6);
        CHECK(rep.p == 2.0);
        CHECK(rep.slope <= 0.6);
    }
}

TEST_CASE("series options are validated") {
    const auto map = MapDescriptor::doubling(2);
    const auto sys = build_induced(map);
    const auto op = build_ulam(sys, 64);
    const auto phi = induced_field(sys, map, Observable::cos2pi(), op);
    CHECK_THROWS_AS(primary_decomposition(op, phi, 0.0), InvalidArgument);
    const auto other = build_ulam(sys, 32);
    CHECK_THROWS_AS(primary_decomposition(other, phi, 1e-6), InvalidArgument);
}
