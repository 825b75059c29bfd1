#pragma once

// Counter-based random numbers (Philox4x32-10). Every draw is a pure function of
// (key, stream, position), so sub-streams for scenes, noise, dropout masks and
// probes can be derived independently and reproduced bit-exactly.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace bpinn {

inline constexpr std::string_view kRngAlgorithm = "philox4x32-10";

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

constexpr PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key) {
    constexpr std::uint32_t kMul0 = 0xD2511F53u;
    constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
        const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    return ctr;
}

// SplitMix64 finalizer, used to derive child seeds from (parent, tag).
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) {
    return mix64(parent ^ mix64(tag + 0x632BE59BD9B4E019ull));
}

// Purposes keep sub-streams of one seed disjoint.
enum class Purpose : std::uint32_t {
    Scene = 1,
    ObservationNoise = 2,
    ReferenceNoise = 3,
    Dropout = 4,
    Shuffle = 5,
    Init = 6,
    Probe = 7,
    Generic = 8,
};

inline double u32_pair_to_unit(std::uint32_t a, std::uint32_t b) {
    // 53 random bits -> [0, 1)
    const std::uint64_t bits = (std::uint64_t{a} << 21) ^ (std::uint64_t{b} >> 11);
    return static_cast<double>(bits & ((1ull << 53) - 1)) * 0x1.0p-53;
}

// Stateless uniform in [0,1) at a given position of a (key, stream) sequence.
inline double uniform_at(std::uint64_t key, std::uint64_t stream, std::uint64_t index) {
    const PhiloxKey k{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)};
    const PhiloxCounter c{static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                          static_cast<std::uint32_t>(stream),
                          static_cast<std::uint32_t>(stream >> 32)};
    const auto r = philox4x32_10(c, k);
    return u32_pair_to_unit(r[0], r[1]);
}

class CounterRng {
public:
    CounterRng(std::uint64_t seed, Purpose purpose, std::uint64_t index = 0)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          stream_(derive_seed(static_cast<std::uint64_t>(purpose), index)) {}

    std::uint32_t next_u32() {
        if (lane_ == 4) {
            const PhiloxCounter c{static_cast<std::uint32_t>(block_),
                                  static_cast<std::uint32_t>(block_ >> 32),
                                  static_cast<std::uint32_t>(stream_),
                                  static_cast<std::uint32_t>(stream_ >> 32)};
            buffer_ = philox4x32_10(c, key_);
            ++block_;
            lane_ = 0;
        }
        return buffer_[lane_++];
    }

    // [0, 1)
    double uniform() {
        const std::uint32_t a = next_u32();
        const std::uint32_t b = next_u32();
        return u32_pair_to_unit(a, b);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [lo, hi], rejection sampled so every value is equally likely.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto range = static_cast<std::uint64_t>(hi - lo) + 1;
        if (range == 1) return lo;
        if (range > 0xFFFFFFFFull) {
            return lo + static_cast<std::int64_t>(uniform() * static_cast<double>(range));
        }
        const std::uint64_t limit = (1ull << 32) - ((1ull << 32) % range);
        std::uint64_t r;
        do {
            r = next_u32();
        } while (r >= limit);
        return lo + static_cast<std::int64_t>(r % range);
    }

    // Standard normal via Box-Muller; the second variate is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double rademacher() { return (next_u32() & 1u) ? 1.0 : -1.0; }

private:
    PhiloxKey key_;
    std::uint64_t stream_;
    std::uint64_t block_ = 0;
    PhiloxCounter buffer_{};
    int lane_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace bpinn
