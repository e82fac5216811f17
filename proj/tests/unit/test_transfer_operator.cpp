#include "doctest.h"

#include <cmath>
#include <numbers>

#include "ergodic_limits/errors.hpp"
#include "ergodic_limits/transfer_operator.hpp"

using namespace ergodic_limits;
using doctest::Approx;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

namespace {

Eigen::MatrixXd dense(const SparseRowMatrix& m) { return Eigen::MatrixXd(m); }

double max_row_sum_error(const TransferApproximation& op) {
    const Eigen::VectorXd rs = dense(op.matrix).rowwise().sum();
    return (rs.array() - 1.0).abs().maxCoeff();
}

}  // namespace

TEST_CASE("grid cells partition Y") {
    GridY g(Interval{0.5, 1.0}, 8);
    CHECK(g.edge(0) == 0.5);
    CHECK(g.edge(8) == 1.0);
    for (int i = 0; i < 8; ++i) CHECK(g.edge(i + 1) - g.edge(i) == Approx(1.0 / 16).epsilon(1e-15));
    CHECK(g.cell_of(0.5) == 0);
    CHECK(g.cell_of(1.0) == 7);
    CHECK(g.cell_of(0.57) == 1);
    CHECK_THROWS_AS(GridY(Interval{0, 1}, 1), InvalidArgument);
}

TEST_CASE("doubling Ulam matrix on an aligned grid is exact") {
    const auto op = build_ulam(build_induced(MapDescriptor::doubling(2)), 4);
    const Eigen::MatrixXd p = dense(op.matrix);
    // Cell [0, 1/4) has preimages in cells 0 and 2 (x/2 and (x+1)/2).
    CHECK(p(0, 0) == Approx(0.5));
    CHECK(p(0, 2) == Approx(0.5));
    CHECK(p(0, 1) == 0.0);
    CHECK(p(3, 1) == Approx(0.5));
    CHECK(p(3, 3) == Approx(0.5));
    for (int i = 0; i < 4; ++i) CHECK(op.invariant_density[i] == Approx(0.25).epsilon(1e-12));
    CHECK(max_row_sum_error(op) < 1e-12);
    CHECK((p.array() >= 0.0).all());
}

TEST_CASE("stochasticity and fixed point") {
    for (int n : {7, 64, 1000}) {
        for (const auto& map : {MapDescriptor::doubling(3), MapDescriptor::lsv(0.3), MapDescriptor::lsv(0.6)}) {
            const auto op = build_ulam(build_induced(map, 500), n);
            CHECK(max_row_sum_error(op) < 1e-12);
            CHECK(op.fixed_point_residual < 1e-10);
            CHECK(op.invariant_density.sum() == Approx(1.0).epsilon(1e-12));
            CHECK(op.invariant_density.minCoeff() >= 0.0);
        }
    }
}

TEST_CASE("apply_P basics") {
    const auto op = build_ulam(build_induced(MapDescriptor::doubling(2)), 512);
    const Eigen::VectorXd one = Eigen::VectorXd::Ones(512);
    CHECK((apply_P(op, one, 3) - one).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(apply_P(op, Eigen::VectorXd::Zero(512)).cwiseAbs().maxCoeff() == 0.0);
    Eigen::VectorXd c(512);
    for (int i = 0; i < 512; ++i) c[i] = std::cos(kTwoPi * op.grid.midpoint(i));
    CHECK(apply_P(op, c).cwiseAbs().maxCoeff() < 2.0 / 512);
    CHECK_THROWS_AS(apply_P(op, c, 0), InvalidArgument);
}

TEST_CASE("LSV invariant density is bounded and refines stably") {
    const auto sys = build_induced(MapDescriptor::lsv(0.3), 500);
    const auto a = build_ulam(sys, 2048);
    const auto b = build_ulam(sys, 4096);
    const Eigen::VectorXd rho = a.invariant_density * 2048 / 0.5;
    CHECK(rho.minCoeff() > 0.1);
    CHECK(rho.maxCoeff() < 10.0);
    Eigen::VectorXd coarse(2048);
    for (int i = 0; i < 2048; ++i) coarse[i] = b.invariant_density[2 * i] + b.invariant_density[2 * i + 1];
    CHECK((coarse - a.invariant_density).lpNorm<1>() < 10.0 * std::sqrt(1.0 / 2048));
}

TEST_CASE("LSV invariant density matches first-return Monte Carlo") {
    const auto map = MapDescriptor::lsv(0.3);
    const int n = 64;
    const auto op = build_ulam(build_induced(map, 500), n);
    FastOrbit orb(map, CounterStream(4, 0));
    orb.advance(1000);
    Eigen::VectorXd hist = Eigen::VectorXd::Zero(n);
    std::int64_t hits = 0;
    while (hits < 2'000'000) {
        orb.step();
        if (orb.x() >= 0.5) {
            hist[op.grid.cell_of(orb.x())] += 1.0;
            ++hits;
        }
    }
    hist /= static_cast<double>(hits);
    CHECK((hist - op.invariant_density).lpNorm<1>() < 0.02);
}

TEST_CASE("grid duality <P g, h> = <g, h o F>") {
    const int n = 2048;
    for (const auto& map : {MapDescriptor::doubling(2), MapDescriptor::lsv(0.3)}) {
        const auto op = build_ulam(build_induced(map, 500), n);
        const Interval y = op.grid.Y();
        auto sample = [&](auto f) {
            Eigen::VectorXd out(n);
            for (int i = 0; i < n; ++i) out[i] = f((op.grid.midpoint(i) - y.lo) / y.width());
            return out;
        };
        const auto cosv = sample([](double t) { return std::cos(kTwoPi * t); });
        const auto lin = sample([](double t) { return t; });
        const auto sq = sample([](double t) { return t * t; });
        const auto one = sample([](double) { return 1.0; });
        const auto bump = sample([](double t) { return std::max(0.0, 1.0 - std::abs(t - 0.5) / 0.2); });
        const std::pair<Eigen::VectorXd, Eigen::VectorXd> pairs[] = {{cosv, cosv}, {lin, sq}, {one, bump}};
        for (const auto& [g, h] : pairs) {
            const Eigen::VectorXd pg = apply_P(op, g);
            const Eigen::VectorXd hf = compose_with_F(op, h);
            const double lhs = op.invariant_density.dot(pg.cwiseProduct(h));
            const double rhs = op.invariant_density.dot(g.cwiseProduct(hf));
            CHECK(std::abs(lhs - rhs) < 5.0 / n);
        }
    }
}

TEST_CASE("distortion diagnostics") {
    const auto dsys = build_induced(MapDescriptor::doubling(2));
    const auto dop = build_ulam(dsys, 256);
    const auto d = check_distortion(dsys, dop, 50);
    CHECK(d.max_ratio == Approx(1.0).epsilon(1e-9));
    CHECK(d.holder_constant < 1e-9);

    const auto sys = build_induced(MapDescriptor::lsv(0.3), 500);
    const auto a = check_distortion(sys, build_ulam(sys, 4096), 100);
    const auto b = check_distortion(sys, build_ulam(sys, 8192), 100);
    CHECK(a.max_ratio < 20.0);
    CHECK(std::isfinite(a.holder_constant));
    CHECK(std::abs(a.holder_constant - b.holder_constant) < 0.2 * a.holder_constant);
    CHECK_THROWS_AS(check_distortion(sys, build_ulam(sys, 64), 1), InvalidArgument);
}
