#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bpinn/neural.hpp"
#include "fd_support.hpp"
#include "test_support.hpp"

using namespace bpinn;
using bpinn::testing::random_field;

namespace {

using bpinn::testing::randomized_params;

void check_gradient(const ArchSpec& a, std::uint64_t seed, const DropoutState& drop = {}) {
    auto p = randomized_params(a, seed, 0.5);
    const auto g = random_field(a.input.width, a.input.height, seed + 1);
    const auto r = random_field(a.output.width, a.output.height, seed + 2);
    // Single input: fd_check derives the per-input dropout seed as derive_seed(seed, 0).
    DropoutState d0 = drop;
    d0.rng_seed = derive_seed(drop.rng_seed, 0);
    const auto grad = backward(p, forward(p, g, d0).tape, r);
    ASSERT_EQ(grad.size(), p.size());
    const auto rep = bpinn::testing::fd_check(
        p, grad, [&](const NetParams<double>& q) { return dot(forward(q, g, d0).output, r); }, {g}, drop);
    EXPECT_EQ(rep.failures, 0u) << rep.first_failure;
}

}  // namespace

TEST(ArchSpec, CanonicalRoundTrip) {
    for (const auto& a : {ArchSpec::mlp({8, 8}, {8, 8}, {16, 8, 4}, 0.1),
                          ArchSpec::conv_ed({16, 16}, {16, 16}, 8, 2, 0.25),
                          ArchSpec::conv_ed({8, 8}, {16, 16}, 4, 1)}) {
        EXPECT_EQ(ArchSpec::parse(a.canonical()), a);
    }
}

TEST(ArchSpec, InvalidShapesRejected) {
    EXPECT_THROW(ArchSpec::conv_ed({6, 6}, {6, 6}, 4, 2), ContractError);
    EXPECT_THROW(ArchSpec::mlp({4, 4}, {4, 4}, {8, 0}), ContractError);
    EXPECT_THROW(ArchSpec::mlp({4, 4}, {4, 4}, {8}, 1.0), ContractError);
}

TEST(InitParams, BiasesZeroAndSeedDeterministic) {
    const auto a = ArchSpec::conv_ed({8, 8}, {8, 8}, 4, 2);
    const auto p = init_params(a, 5), q = init_params(a, 5), r = init_params(a, 6);
    EXPECT_EQ(p.values, q.values);
    EXPECT_NE(p.values, r.values);
    EXPECT_EQ(p.size(), param_count(a));
    for (std::size_t s = 0; s < p.layout.size(); ++s)
        if (p.layout[s].is_bias)
            for (float v : p.slot(s)) EXPECT_EQ(v, 0.0f);
}

TEST(InitParams, LayerVarianceMatchesGlorot) {
    const auto a = ArchSpec::mlp({16, 16}, {16, 16}, {128, 96});
    const auto p = init_params<double>(a, 9);
    std::size_t checked = 0;
    for (std::size_t s = 0; s < p.layout.size(); ++s) {
        const auto& sl = p.layout[s];
        if (sl.is_bias || sl.length < 10000) continue;
        double m = 0, m2 = 0;
        for (double v : p.slot(s)) {
            m += v;
            m2 += v * v;
        }
        m /= sl.length;
        const double var = m2 / sl.length - m * m;
        const double expect = 2.0 / static_cast<double>(sl.fan_in + sl.fan_out);
        EXPECT_NEAR(var, expect, 0.2 * expect) << sl.name;
        ++checked;
    }
    EXPECT_GE(checked, 2u);
}

TEST(Forward, ZeroRateDropoutMatchesDisabled) {
    const auto a = ArchSpec::conv_ed({8, 8}, {8, 8}, 4, 2);
    const auto p = randomized_params(a, 3);
    const auto g = random_field(8, 8, 4);
    EXPECT_EQ(forward(p, g, {true, 0.0, 123}).output, predict(p, g));
}

TEST(Forward, ZeroWeightsGiveBiasMap) {
    auto p = init_params<double>(ArchSpec::mlp({4, 4}, {4, 4}, {8, 8}), 1);
    std::fill(p.values.begin(), p.values.end(), 0.0);
    const auto out = predict(p, random_field(4, 4, 2));
    for (double v : out.values()) EXPECT_EQ(v, 0.0);
    auto c = init_params<double>(ArchSpec::conv_ed({8, 8}, {8, 8}, 2, 1), 1);
    std::fill(c.values.begin(), c.values.end(), 0.0);
    c.values.back() = 0.75;  // head bias
    const auto head = predict(c, random_field(8, 8, 2));
    for (double v : head.values()) EXPECT_EQ(v, 0.75);
}

TEST(Forward, ShapeMismatchRejected) {
    const auto p = init_params(ArchSpec::mlp({4, 4}, {4, 4}, {8}), 1);
    EXPECT_THROW(predict(p, Field(4, 5)), ShapeError);
}

TEST(Forward, ConvEDPreservesShape) {
    for (Shape s : {Shape{8, 8}, Shape{16, 8}, Shape{12, 20}}) {
        const auto p = init_params(ArchSpec::conv_ed(s, s, 2, 2), 1);
        EXPECT_EQ(predict(p, random_field(s.width, s.height, 1)).shape(), s);
    }
    const auto sr = init_params(ArchSpec::conv_ed({4, 4}, {8, 8}, 2, 2), 1);
    EXPECT_EQ(predict(sr, random_field(4, 4, 1)).shape(), (Shape{8, 8}));
}

TEST(Forward, DeterministicGivenDropoutState) {
    const auto p = randomized_params(ArchSpec::conv_ed({8, 8}, {8, 8}, 4, 2), 8);
    const auto g = random_field(8, 8, 9);
    const DropoutState d{true, 0.3, 77};
    EXPECT_EQ(forward(p, g, d).output, forward(p, g, d).output);
    EXPECT_NE(forward(p, g, d).output, forward(p, g, DropoutState{true, 0.3, 78}).output);
}

TEST(Dropout, InvertedDropoutExpectation) {
    // One hidden layer: the output is linear in the dropped activation, so its mean
    // over masks equals the deterministic output.
    const auto p = randomized_params(ArchSpec::mlp({4, 4}, {4, 4}, {32}), 10);
    const auto g = random_field(4, 4, 11);
    const auto det = predict(p, g);
    Field acc(det.shape());
    const int n = 10000;
    for (int t = 0; t < n; ++t) acc += forward(p, g, {true, 0.2, static_cast<std::uint64_t>(t)}).output;
    acc *= 1.0 / n;
    EXPECT_LE(norm(acc - det), 0.03 * norm(det));
}

TEST(Dropout, MasksFromDifferentSeedsUncorrelated) {
    const std::size_t n = 10000;
    std::vector<double> a(n), b(n);
    dropout_mask<double>({true, 0.5, 1}, 0, a);
    dropout_mask<double>({true, 0.5, 2}, 0, b);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    const double corr = cov / std::sqrt(va * vb);
    EXPECT_LE(std::abs(corr), 3.0 / std::sqrt(static_cast<double>(n)));
    EXPECT_NEAR(ma, 1.0, 0.05);  // keep probability 0.5, scaled by 2
}

TEST(Backward, ZeroSeedGivesZeroGradient) {
    const auto p = randomized_params(ArchSpec::conv_ed({8, 8}, {8, 8}, 2, 2), 1);
    const auto fw = forward(p, random_field(8, 8, 2), DropoutState{});
    for (double v : backward(p, fw.tape, Field(8, 8))) EXPECT_EQ(v, 0.0);
}

TEST(Backward, LinearLayerIsOuterProduct) {
    auto p = randomized_params(ArchSpec::mlp({2, 1}, {3, 1}, {}), 4);
    const auto x = Field::from_rows({{0.5, -2.0}});
    const auto go = Field::from_rows({{1.0, -3.0, 0.25}});
    const auto fw = forward(p, x, DropoutState{});
    const auto grad = backward(p, fw.tape, go);
    const auto& w = p.layout[0];
    const auto& b = p.layout[1];
    for (std::size_t o = 0; o < 3; ++o) {
        for (std::size_t i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(grad[w.offset + o * 2 + i], go[o] * x[i]);
        EXPECT_DOUBLE_EQ(grad[b.offset + o], go[o]);
    }
}

TEST(Backward, StaleTapeRejected) {
    const auto p = randomized_params(ArchSpec::mlp({4, 4}, {4, 4}, {8}), 1);
    const auto q = randomized_params(ArchSpec::conv_ed({4, 4}, {4, 4}, 2, 1), 1);
    const auto fw = forward(q, random_field(4, 4, 1), DropoutState{});
    EXPECT_THROW(backward(p, fw.tape, Field(4, 4)), ContractError);
    EXPECT_THROW(backward(p, Tape<double>{}, Field(4, 4)), ContractError);
}

TEST(GradientCheck, Mlp3Hidden) { check_gradient(ArchSpec::mlp({8, 8}, {8, 8}, {12, 10, 8}), 21); }

TEST(GradientCheck, ConvEDDepth1) { check_gradient(ArchSpec::conv_ed({8, 8}, {8, 8}, 3, 1), 22); }

TEST(GradientCheck, ConvEDDepth2) { check_gradient(ArchSpec::conv_ed({8, 8}, {8, 8}, 2, 2), 23); }

TEST(GradientCheck, ConvEDSuperResolution) { check_gradient(ArchSpec::conv_ed({4, 4}, {8, 8}, 2, 2), 24); }

TEST(GradientCheck, WithFixedDropoutMasks) {
    check_gradient(ArchSpec::mlp({8, 8}, {8, 8}, {12, 10, 8}), 25, {true, 0.2, 5});
    check_gradient(ArchSpec::conv_ed({8, 8}, {8, 8}, 2, 2), 26, {true, 0.2, 6});
}

TEST(ParamsCast, FloatDoubleRoundTrip) {
    const auto p = init_params(ArchSpec::conv_ed({8, 8}, {8, 8}, 2, 1), 3);
    EXPECT_EQ(params_cast<float>(params_cast<double>(p)).values, p.values);
}

TEST(FlushDenormals, ScopedAndRestored) {
    volatile float tiny = 1e-30f, scale = 1e-10f;
    const float before = tiny * scale;
    {
        const FlushDenormals ftz;
#ifdef BPINN_HAVE_MXCSR
        EXPECT_EQ(tiny * scale, 0.0f);
#endif
    }
    EXPECT_EQ(tiny * scale, before);
    EXPECT_GT(before, 0.0f);
}
