#pragma once

// Monte-Carlo dropout inference: T stochastic forward passes give a pixelwise
// posterior mean and (1/(T-1)) sample variance, plus the data-space
// consistency ||g - mean_t A f_t||^2.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "bpinn/neural.hpp"
#include "bpinn/operators.hpp"

namespace bpinn {

struct UqResult {
    Field mean;
    Field var_diag;
    std::size_t n_samples = 0;
    std::optional<double> consistency;
};

struct SampleStatistics {
    Field mean;
    Field var;  // empty when fewer than two samples
};

// Accumulates deviations from the first sample, so identical samples give that
// sample back as the mean and an exactly zero variance.
inline SampleStatistics sample_statistics(std::span<const Field> samples) {
    if (samples.empty()) throw ContractError("sample_statistics: no samples");
    const Field& ref = samples.front();
    const double n = static_cast<double>(samples.size());
    Field sum(ref.shape()), sum_sq(ref.shape());
    for (const auto& s : samples) {
        require_same_shape(s, ref, "sample_statistics");
        for (std::size_t i = 0; i < s.size(); ++i) {
            const double d = s[i] - ref[i];
            sum[i] += d;
            sum_sq[i] += d * d;
        }
    }
    SampleStatistics st{ref, {}};
    for (std::size_t i = 0; i < ref.size(); ++i) st.mean[i] += sum[i] / n;
    if (samples.size() < 2) return st;
    st.var = Field(ref.shape());
    for (std::size_t i = 0; i < ref.size(); ++i)
        st.var[i] = std::max(0.0, (sum_sq[i] - sum[i] * sum[i] / n) / (n - 1.0));
    return st;
}

// Pass t uses dropout seed derive_seed(seed, t), so raising T never changes earlier passes.
template <class S>
UqResult mc_dropout_infer(const NetParams<S>& params, const Field& g, std::size_t T, double rate,
                          std::uint64_t seed, const ForwardOperator* A = nullptr, bool with_variance = true) {
    if (T < 1) throw ContractError("mc_dropout_infer: T must be >= 1");
    if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("mc_dropout_infer: rate must be in [0,1)");
    if (with_variance && T < 2)
        throw ContractError("mc_dropout_infer: variance requires T >= 2 samples");
    if (A && A->input_shape() != params.arch.output)
        throw ShapeError("mc_dropout_infer: operator input does not match network output");

    std::vector<Field> samples;
    samples.reserve(T);
    std::vector<Field> predicted;
    {
        const FlushDenormals ftz;
        for (std::size_t t = 0; t < T; ++t) {
            const DropoutState drop{true, rate, derive_seed(seed, t)};
            samples.push_back(forward(params, g, drop).output);
            if (A) predicted.push_back(op_apply(*A, samples.back()));
        }
    }
    auto st = sample_statistics(samples);
    UqResult out;
    out.mean = std::move(st.mean);
    out.var_diag = with_variance ? std::move(st.var) : Field(out.mean.shape());
    out.n_samples = T;
    if (A) {
        const Field g_hat = sample_statistics(predicted).mean;
        require_same_shape(g_hat, g, "consistency check");
        out.consistency = squared_norm(g - g_hat);
    }
    return out;
}

}  // namespace bpinn
