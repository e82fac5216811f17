#pragma once

// Counter-based random streams. Every Monte Carlo sample owns the stream
// keyed by (seed, domain, sample index), so results never depend on which
// worker thread produced them.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace ergodic_limits {

/// Philox4x32-10 block function (Salmon et al., SC'11).
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter block(Counter ctr, Key key) noexcept {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
            const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

/// Stream domains keep independent purposes (fast orbits, SDE noise, ...)
/// from ever sharing counters under the same seed.
enum class StreamDomain : std::uint32_t {
    Orbit = 1,
    LongOrbit = 2,
    SdeNoise = 3,
    Tower = 4,
    Projection = 5,
    Probe = 6,
};

class CounterStream {
public:
    CounterStream(std::uint64_t seed, std::uint64_t index, StreamDomain domain = StreamDomain::Orbit) noexcept
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          domain_(static_cast<std::uint32_t>(domain)),
          index_(index) {}

    std::uint32_t next_u32() noexcept {
        if (pos_ == 4) refill();
        return buf_[pos_++];
    }

    std::uint64_t next_u64() noexcept {
        const std::uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    /// Uniform on the open interval (0,1) with 53 random bits.
    double uniform() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Uniform digit in {0, ..., base-1}.
    std::uint32_t digit(std::uint32_t base) noexcept {
        return static_cast<std::uint32_t>((static_cast<std::uint64_t>(next_u32()) * base) >> 32);
    }

    /// Standard normal via Box-Muller; the second variate of each pair is cached.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(angle);
        has_spare_ = true;
        return r * std::cos(angle);
    }

private:
    void refill() noexcept {
        const Philox4x32::Counter ctr{block_, domain_, static_cast<std::uint32_t>(index_),
                                      static_cast<std::uint32_t>(index_ >> 32)};
        buf_ = Philox4x32::block(ctr, key_);
        ++block_;
        pos_ = 0;
    }

    Philox4x32::Key key_;
    std::uint32_t domain_;
    std::uint64_t index_;
    std::uint32_t block_ = 0;
    Philox4x32::Counter buf_{};
    int pos_ = 4;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace ergodic_limits
