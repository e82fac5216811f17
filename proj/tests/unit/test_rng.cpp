#include "doctest.h"

#include <cmath>
#include <set>

#include "ergodic_limits/rng.hpp"

using namespace ergodic_limits;

TEST_CASE("philox known-answer vectors") {
    using C = Philox4x32::Counter;
    CHECK(Philox4x32::block({0, 0, 0, 0}, {0, 0}) == C{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    CHECK(Philox4x32::block({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
          C{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    CHECK(Philox4x32::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
          C{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("streams are reproducible and separated by index and domain") {
    CounterStream a(42, 7), b(42, 7), c(42, 8), d(42, 7, StreamDomain::SdeNoise);
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        CHECK(x != c.next_u64());
        CHECK(x != d.next_u64());
    }
}

TEST_CASE("uniform lies in the open unit interval with the right moments") {
    CounterStream s(1, 0);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = s.uniform();
        REQUIRE(u > 0.0);
        REQUIRE(u < 1.0);
        sum += u;
        sq += u * u;
    }
    CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(sq / n - (sum / n) * (sum / n) == doctest::Approx(1.0 / 12).epsilon(0.02));
}

TEST_CASE("normal variates have unit variance") {
    CounterStream s(9, 3, StreamDomain::SdeNoise);
    double sum = 0.0, sq = 0.0, q = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = s.normal();
        sum += z;
        sq += z * z;
        q += z * z * z * z;
    }
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(sq / n == doctest::Approx(1.0).epsilon(0.02));
    CHECK(q / n == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("digits cover the full base") {
    CounterStream s(5, 1);
    std::set<std::uint32_t> seen;
    for (int i = 0; i < 1000; ++i) {
        const auto dgt = s.digit(7);
        REQUIRE(dgt < 7u);
        seen.insert(dgt);
    }
    CHECK(seen.size() == 7);
}
