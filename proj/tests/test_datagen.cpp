#include <gtest/gtest.h>

#include <cmath>

#include "bpinn/datagen.hpp"
#include "test_support.hpp"

using namespace bpinn;

TEST(Scene, NoBlobsIsConstantBackground) {
    SceneSpec s;
    s.n_blobs_min = s.n_blobs_max = 0;
    s.background = 0.25;
    const auto f = sample_true_field(s, 3);
    for (double v : f.values()) EXPECT_EQ(v, 0.25);
}

TEST(Scene, SingleBlobMatchesGaussianBump) {
    const Shape shape{17, 17};
    const auto f = render_blobs(shape, 0.1, {{8.0, 8.0, 1.0, 2.0}});
    EXPECT_DOUBLE_EQ(f(8, 8), 1.1);
    for (std::size_t y = 0; y < 17; ++y)
        for (std::size_t x = 0; x < 17; ++x) {
            const double r2 = (x - 8.0) * (x - 8.0) + (y - 8.0) * (y - 8.0);
            EXPECT_NEAR(f(x, y), 0.1 + std::exp(-r2 / 8.0), 1e-15);
        }
    EXPECT_GT(f(8, 8), f(9, 8));
    EXPECT_GT(f(9, 8), f(10, 8));
}

TEST(Scene, DeterministicNonNegativeAndSeedSensitive) {
    SceneSpec s;
    const auto a = sample_true_field(s, 11), b = sample_true_field(s, 11), c = sample_true_field(s, 12);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    for (double v : a.values()) EXPECT_GE(v, 0.0);
}

TEST(Scene, InvalidSpecRejected) {
    SceneSpec s;
    s.n_blobs_min = 5;
    s.n_blobs_max = 2;
    EXPECT_THROW(sample_true_field(s, 1), ContractError);
}

TEST(Observation, NoiselessIsForwardOperator) {
    const auto A = ForwardOperator::restoration({8, 8}, PsfKernel::gaussian(1.0, 3));
    const auto f = bpinn::testing::random_field(8, 8, 4);
    EXPECT_EQ(gen_observation(f, A, 0.0, 9), op_apply(A, f));
    EXPECT_EQ(gen_reference(f, 0.0, 9), f);
}

TEST(Observation, NoiseVarianceMatches) {
    const Shape shape{400, 300};  // 1.2e5 pixels
    const Field f(shape, 0.5);
    const auto A = ForwardOperator::identity(shape);
    for (double v : {0.01, 0.3}) {
        const auto g = gen_observation(f, A, v, 77);
        const auto r = gen_reference(f, v, 78);
        double sg = 0, sr = 0;
        for (std::size_t i = 0; i < f.size(); ++i) {
            sg += (g[i] - f[i]) * (g[i] - f[i]);
            sr += (r[i] - f[i]) * (r[i] - f[i]);
        }
        EXPECT_NEAR(sg / f.size(), v, 0.05 * v);
        EXPECT_NEAR(sr / f.size(), v, 0.05 * v);
    }
}

TEST(Observation, SeedReproducible) {
    const auto f = bpinn::testing::random_field(6, 6, 1);
    const auto A = ForwardOperator::identity({6, 6});
    EXPECT_EQ(gen_observation(f, A, 0.1, 5), gen_observation(f, A, 0.1, 5));
    EXPECT_NE(gen_observation(f, A, 0.1, 5), gen_observation(f, A, 0.1, 6));
    EXPECT_EQ(gen_reference(f, 0.1, 5), gen_reference(f, 0.1, 5));
}

TEST(Dataset, SplitSizes) {
    SceneSpec s;
    s.width = s.height = 8;
    const auto A = ForwardOperator::identity({8, 8});
    for (auto [a, b, c] : {std::tuple{512u, 128u, 128u}, {128u, 32u, 32u}, {1u, 0u, 0u}}) {
        const auto d = make_dataset(s, A, a, b, c, 0.01, 0.01, 1);
        EXPECT_EQ(d.train.size(), a);
        EXPECT_EQ(d.val.size(), b);
        EXPECT_EQ(d.test.size(), c);
    }
}

TEST(Dataset, SupervisedIffVfPresent) {
    SceneSpec s;
    s.width = s.height = 8;
    const auto A = ForwardOperator::identity({8, 8});
    const auto sup = make_dataset(s, A, 4, 2, 2, 0.01, 0.02, 1);
    const auto uns = make_dataset(s, A, 4, 2, 2, 0.01, std::nullopt, 1);
    EXPECT_TRUE(sup.train.supervised());
    EXPECT_FALSE(uns.train.supervised());
    for (const auto& smp : sup.test.samples) EXPECT_TRUE(smp.label.has_value());
    for (const auto& smp : uns.train.samples) EXPECT_FALSE(smp.label.has_value());
}

TEST(Dataset, SplitsAreIndependentStreams) {
    SceneSpec s;
    s.width = s.height = 8;
    const auto A = ForwardOperator::restoration({8, 8}, PsfKernel::gaussian(1.0, 3));
    const auto a = make_dataset(s, A, 5, 3, 2, 0.01, 0.01, 42);
    const auto b = make_dataset(s, A, 5, 3, 17, 0.01, 0.01, 42);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(a.train.samples[i].g, b.train.samples[i].g);
        EXPECT_EQ(*a.train.samples[i].label, *b.train.samples[i].label);
    }
    EXPECT_NE(a.train.samples[0].g, a.val.samples[0].g);
    EXPECT_NE(a.val.samples[0].g, a.test.samples[0].g);
}

TEST(Dataset, NoiseIsZeroMeanWithinThreeStandardErrors) {
    SceneSpec s;
    s.width = s.height = 16;
    const auto A = ForwardOperator::restoration({16, 16}, PsfKernel::gaussian(1.5, 5));
    const double v_eps = 0.02, v_f = 0.05;
    const auto d = make_dataset(s, A, 64, 0, 0, v_eps, v_f, 7);
    double se = 0, sf = 0;
    std::size_t n = 0;
    for (const auto& smp : d.train.samples) {
        const auto clean = op_apply(A, *smp.truth);
        for (std::size_t i = 0; i < clean.size(); ++i) {
            se += smp.g[i] - clean[i];
            sf += (*smp.label)[i] - (*smp.truth)[i];
            ++n;
        }
    }
    EXPECT_LE(std::abs(se / n), 3.0 * std::sqrt(v_eps / n));
    EXPECT_LE(std::abs(sf / n), 3.0 * std::sqrt(v_f / n));
}

TEST(Dataset, ShapeMismatchRejected) {
    SceneSpec s;
    EXPECT_THROW(make_dataset(s, ForwardOperator::identity({8, 8}), 1, 0, 0, 0.1, {}, 1), ShapeError);
}
