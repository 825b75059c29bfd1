#include <gtest/gtest.h>

#include <cmath>

#include "bpinn/rng.hpp"

using namespace bpinn;

// Known-answer vectors published with the Random123 reference implementation.
TEST(Philox, KnownAnswers) {
    EXPECT_EQ(philox4x32_10({0, 0, 0, 0}, {0, 0}),
              (PhiloxCounter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
    EXPECT_EQ(philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}),
              (PhiloxCounter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
    EXPECT_EQ(philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}),
              (PhiloxCounter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(CounterRng, DeterministicAndStreamSeparated) {
    CounterRng a(42, Purpose::Scene), b(42, Purpose::Scene), c(42, Purpose::ObservationNoise), d(43, Purpose::Scene);
    bool differs_c = false, differs_d = false;
    for (int i = 0; i < 64; ++i) {
        const auto x = a.next_u32();
        EXPECT_EQ(x, b.next_u32());
        differs_c |= x != c.next_u32();
        differs_d |= x != d.next_u32();
    }
    EXPECT_TRUE(differs_c);
    EXPECT_TRUE(differs_d);
}

TEST(CounterRng, NormalMoments) {
    CounterRng r(7, Purpose::Generic);
    const int n = 200000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        s += z;
        s2 += z * z;
    }
    const double m = s / n, v = s2 / n - m * m;
    EXPECT_NEAR(m, 0.0, 4.0 / std::sqrt(n));
    EXPECT_NEAR(v, 1.0, 0.02);
}

TEST(CounterRng, UniformIntCoversRangeUniformly) {
    CounterRng r(9, Purpose::Generic);
    int counts[5] = {};
    for (int i = 0; i < 50000; ++i) ++counts[r.uniform_int(0, 4)];
    for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}
