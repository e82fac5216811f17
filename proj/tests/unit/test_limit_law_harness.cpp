#include "doctest.h"

#include <cmath>

#include "ergodic_limits/errors.hpp"
#include "ergodic_limits/limit_law_harness.hpp"

using namespace ergodic_limits;
using doctest::Approx;

namespace {

McConfig small(std::int64_t n_orbit, std::int64_t n_samples, std::uint64_t seed = 1) {
    McConfig c;
    c.n_orbit = n_orbit;
    c.n_samples = n_samples;
    c.seed = seed;
    return c;
}

Observable two_mode() {
    return Observable::closed_form({{Term{BasisFunction::Cos, 1.0, 1.0}, Term{BasisFunction::Cos, 2.0, 1.0}}});
}

}  // namespace

TEST_CASE("config validation") {
    McConfig c = small(10, 50);
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c.n_samples = 100;
    c.burn_in = -1;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("birkhoff samples are reproducible and thread independent") {
    const auto map = MapDescriptor::lsv(0.3);
    const auto obs = center_observable(Observable::cos2pi(), map, {.n_center = 100'000});
    McConfig c = small(500, 200, 9);
    c.threads = 1;
    const Eigen::MatrixXd a = birkhoff_samples(map, obs, c);
    c.threads = 3;
    const Eigen::MatrixXd b = birkhoff_samples(map, obs, c);
    CHECK(a.rows() == 200);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    c.seed = 10;
    CHECK((a - birkhoff_samples(map, obs, c)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("covariance of cos 2 pi x under doubling") {
    const auto map = MapDescriptor::doubling(2);
    const auto obs = Observable::cos2pi();
    CovarianceOptions o;
    o.gk_length = 1'000'000;
    o.grid_cells = 1024;

    const auto mart = covariance(map, obs, small(1000, 1000), CovarianceMethod::Martingale, o);
    CHECK(mart.sigma(0, 0) == Approx(0.5).epsilon(1e-6));

    const auto gk = covariance(map, obs, small(1000, 1000), CovarianceMethod::GreenKubo, o);
    CHECK(std::abs(gk.sigma(0, 0) - 0.5) < 3.0 * gk.std_err(0, 0) + 1e-3);

    const auto direct = covariance(map, obs, small(1000, 2000), CovarianceMethod::Direct, o);
    CHECK(std::abs(direct.sigma(0, 0) - 0.5) < 3.0 * direct.std_err(0, 0));
    CHECK(direct.std_err(0, 0) > 0.0);
}

TEST_CASE("two-dimensional covariance is symmetric and PSD") {
    const auto map = MapDescriptor::doubling(3);
    const auto obs = Observable::closed_form({{Term{BasisFunction::Cos, 1.0, 1.0}}, {Term{BasisFunction::Sin, 1.0, 1.0}}});
    const auto e = covariance(map, obs, small(500, 1000), CovarianceMethod::Direct);
    CHECK((e.sigma - e.sigma.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(e.sigma);
    CHECK(es.eigenvalues().minCoeff() >= 0.0);
    // Independent digits: cos and sin terms are uncorrelated with variance 1/2 each.
    CHECK(e.sigma(0, 0) == Approx(0.5).epsilon(0.1));
    CHECK(std::abs(e.sigma(0, 1)) < 0.05);
}

TEST_CASE("moment scaling for a CLT observable") {
    const auto rep = moment_scaling(MapDescriptor::doubling(2), Observable::cos2pi(), small(1000, 500), 2.0,
                                    {100, 200, 400, 800, 1600});
    CHECK(rep.value.size() == 5);
    CHECK(rep.slope == Approx(0.5).epsilon(0.15));
    CHECK_THROWS_AS(moment_scaling(MapDescriptor::doubling(2), Observable::cos2pi(), small(1000, 500), 2.0,
                                   {100, 200, 400, 800}),
                    InvalidArgument);
}

TEST_CASE("WIP on the doubling map") {
    const auto map = MapDescriptor::doubling(2);
    CovarianceEstimate s;
    s.sigma = Eigen::MatrixXd::Constant(1, 1, 0.5);
    s.std_err = Eigen::MatrixXd::Zero(1, 1);
    const auto w = wip_test(map, Observable::cos2pi(), small(2000, 4000), s, {0.25, 0.5, 1.0});
    CHECK(w.per_time.size() == 3);
    CHECK(w.ks_pvalue > 1e-3);
    CHECK(w.variance_slope == Approx(0.5).epsilon(0.1));
    CHECK(w.kurtosis == Approx(3.0).epsilon(0.2));

    s.sigma(0, 0) = 1e-8;
    CHECK_THROWS_AS(wip_test(map, Observable::cos2pi(), small(100, 200), s, {1.0}), DegenerateVariance);
    s.sigma(0, 0) = 0.5;
    CHECK_THROWS_AS(wip_test(map, Observable::cos2pi(), small(100, 200), s, {1.5}), InvalidArgument);
}

TEST_CASE("coboundary has vanishing martingale covariance") {
    // cos 4 pi x - cos 2 pi x = u o T - u under doubling.
    const auto obs = Observable::closed_form({{Term{BasisFunction::Cos, 2.0, 1.0}, Term{BasisFunction::Cos, 1.0, -1.0}}});
    CovarianceOptions o;
    o.grid_cells = 1024;
    const auto e = covariance(MapDescriptor::doubling(2), obs, small(1000, 1000), CovarianceMethod::Martingale, o);
    CHECK(std::abs(e.sigma(0, 0)) < 1e-8);
}

TEST_CASE("family sweep finds the two accumulation points") {
    std::vector<FamilyMember> fam;
    for (int i = 0; i < 6; ++i) fam.push_back({MapDescriptor::doubling(i % 2 == 0 ? 2 : 3), two_mode()});
    CovarianceOptions o;
    o.grid_cells = 1024;
    const auto rep = family_sweep(fam, small(1000, 1000), CovarianceMethod::Martingale, o);
    REQUIRE(rep.accumulation_points.size() == 2);
    CHECK(rep.accumulation_points[0](0, 0) == Approx(2.0).epsilon(1e-5));
    CHECK(rep.accumulation_points[1](0, 0) == Approx(1.0).epsilon(1e-5));
    CHECK(rep.cluster_of == std::vector<int>{0, 1, 0, 1, 0, 1});
    CHECK(rep.max_consecutive_diff == Approx(1.0).epsilon(1e-5));
}

TEST_CASE("martingale array sums on the doubling map") {
    const auto map = MapDescriptor::doubling(2);
    const auto obs = Observable::cos2pi();
    const auto sys = build_induced(map);
    const auto op = build_ulam(sys, 1024);
    const auto dec = primary_decomposition(op, induced_field(sys, map, obs, op), 1e-10);
    const auto sec = secondary_decomposition(op, dec, 1e-9);
    const auto tf = lift_to_tower(dec, sys, map, obs);
    const auto rep = martingale_array_check(tf, sec, small(1, 200), {100, 1000, 10000}, {0.5, 1.0});
    CHECK(rep.b1_iqr.rows() == 3);
    CHECK(rep.b1_iqr(2, 1) < rep.b1_iqr(0, 1));
    CHECK(rep.b1_median(2, 1) == Approx(rep.sigma_trace).epsilon(0.05));
    CHECK(rep.b1_median(2, 0) == Approx(0.5 * rep.sigma_trace).epsilon(0.05));
    for (double b : rep.b2_sum) CHECK(b == 0.0);
}
