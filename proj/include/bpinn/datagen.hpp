#pragma once

// Synthetic scenes and observations: g = A f + noise(v_eps), f_T = f + noise(v_f).

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bpinn/field.hpp"
#include "bpinn/operators.hpp"
#include "bpinn/rng.hpp"

namespace bpinn {

struct SceneSpec {
    std::size_t width = 32;
    std::size_t height = 32;
    std::size_t n_blobs_min = 2;
    std::size_t n_blobs_max = 6;
    double amplitude_min = 0.5;
    double amplitude_max = 1.5;
    double sigma_min = 1.0;
    double sigma_max = 3.0;
    double background = 0.1;

    [[nodiscard]] Shape shape() const { return {width, height}; }

    void validate() const {
        if (width == 0 || height == 0) throw ContractError("scene dimensions must be positive");
        if (n_blobs_min > n_blobs_max) throw ContractError("scene blob count range is empty");
        if (amplitude_min > amplitude_max || amplitude_min < 0.0)
            throw ContractError("scene amplitude range must be non-empty and non-negative");
        if (sigma_min > sigma_max || !(sigma_min > 0.0))
            throw ContractError("scene blob sigma range must be non-empty and positive");
        if (background < 0.0) throw ContractError("scene background must be non-negative");
    }
};

struct Blob {
    double cx, cy, amplitude, sigma;
};

inline Field render_blobs(Shape shape, double background, const std::vector<Blob>& blobs) {
    Field f(shape, background);
    for (const auto& b : blobs) {
        const double inv = 1.0 / (2.0 * b.sigma * b.sigma);
        for (std::size_t y = 0; y < shape.height; ++y)
            for (std::size_t x = 0; x < shape.width; ++x) {
                const double dx = static_cast<double>(x) - b.cx;
                const double dy = static_cast<double>(y) - b.cy;
                f(x, y) += b.amplitude * std::exp(-(dx * dx + dy * dy) * inv);
            }
    }
    for (auto& v : f.values()) v = std::max(v, 0.0);
    return f;
}

inline Field sample_true_field(const SceneSpec& spec, std::uint64_t rng_seed) {
    spec.validate();
    CounterRng rng(rng_seed, Purpose::Scene);
    const auto n = static_cast<std::size_t>(rng.uniform_int(
        static_cast<std::int64_t>(spec.n_blobs_min), static_cast<std::int64_t>(spec.n_blobs_max)));
    std::vector<Blob> blobs;
    blobs.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        Blob b{};
        b.cx = rng.uniform(0.0, static_cast<double>(spec.width));
        b.cy = rng.uniform(0.0, static_cast<double>(spec.height));
        b.amplitude = rng.uniform(spec.amplitude_min, spec.amplitude_max);
        b.sigma = rng.uniform(spec.sigma_min, spec.sigma_max);
        blobs.push_back(b);
    }
    return render_blobs(spec.shape(), spec.background, blobs);
}

inline Field add_gaussian_noise(Field f, double variance, CounterRng& rng) {
    if (variance < 0.0) throw ContractError("noise variance must be non-negative");
    if (variance == 0.0) return f;
    const double sd = std::sqrt(variance);
    for (auto& v : f.values()) v += sd * rng.normal();
    return f;
}

inline Field gen_observation(const Field& f, const ForwardOperator& A, double v_eps,
                             std::uint64_t rng_seed) {
    CounterRng rng(rng_seed, Purpose::ObservationNoise);
    return add_gaussian_noise(op_apply(A, f), v_eps, rng);
}

inline Field gen_reference(const Field& f, double v_f, std::uint64_t rng_seed) {
    CounterRng rng(rng_seed, Purpose::ReferenceNoise);
    return add_gaussian_noise(f, v_f, rng);
}

struct Sample {
    Field g;                      // observation g_T
    std::optional<Field> label;   // noisy reference f_T, supervised only
    std::optional<Field> truth;   // clean scene, kept for evaluation; training never reads it
};

struct Dataset {
    std::string split;
    std::vector<Sample> samples;
    double v_eps = 0.0;
    std::optional<double> v_f;
    ForwardOperator op;
    std::uint64_t seed = 0;

    [[nodiscard]] bool supervised() const { return v_f.has_value(); }
    [[nodiscard]] std::size_t size() const { return samples.size(); }
};

struct DatasetSplits {
    Dataset train, val, test;
};

enum class Split : std::uint64_t { Train = 1, Val = 2, Test = 3 };

inline std::uint64_t sample_seed(std::uint64_t seed, Split split, std::size_t index) {
    return derive_seed(derive_seed(seed, static_cast<std::uint64_t>(split)), index);
}

inline Dataset make_split(const SceneSpec& spec, const ForwardOperator& A, Split split,
                          std::size_t count, double v_eps, std::optional<double> v_f,
                          std::uint64_t seed) {
    if (spec.shape() != A.input_shape())
        throw ShapeError("scene shape " + to_string(spec.shape()) + " does not match operator input " +
                         to_string(A.input_shape()));
    Dataset d;
    d.split = split == Split::Train ? "train" : split == Split::Val ? "val" : "test";
    d.v_eps = v_eps;
    d.v_f = v_f;
    d.op = A;
    d.seed = seed;
    d.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t s = sample_seed(seed, split, i);
        Sample smp;
        Field f = sample_true_field(spec, s);
        smp.g = gen_observation(f, A, v_eps, s);
        if (v_f) smp.label = gen_reference(f, *v_f, s);
        smp.truth = std::move(f);
        d.samples.push_back(std::move(smp));
    }
    return d;
}

inline DatasetSplits make_dataset(const SceneSpec& spec, const ForwardOperator& A, std::size_t n_train,
                                  std::size_t n_val, std::size_t n_test, double v_eps,
                                  std::optional<double> v_f, std::uint64_t seed) {
    if (v_eps < 0.0) throw ContractError("v_eps must be non-negative");
    if (v_f && *v_f < 0.0) throw ContractError("v_f must be non-negative");
    return {make_split(spec, A, Split::Train, n_train, v_eps, v_f, seed),
            make_split(spec, A, Split::Val, n_val, v_eps, v_f, seed),
            make_split(spec, A, Split::Test, n_test, v_eps, v_f, seed)};
}

}  // namespace bpinn
