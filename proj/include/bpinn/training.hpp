#pragma once

// Bayesian training objective
//
//   J(w) = sum_i [ 1/(2 v_f) ||f_T,i - f_NN(g_i; w)||^2     (J_NN, supervised only)
//                + 1/(2 v_eps) ||g_i - A f_NN(g_i; w)||^2 ] (J_PI)
//        + gamma_w sum_j (w_j^2 + delta^2)^(beta_w/2)       (J_PR, once per mini-batch)
//
// minimized with Adam over shuffled mini-batches, with early stopping on the
// validation total.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bpinn/datagen.hpp"
#include "bpinn/metrics.hpp"
#include "bpinn/neural.hpp"
#include "bpinn/operators.hpp"

namespace bpinn {

enum class TrainMode { Supervised, Unsupervised };

struct TrainConfig {
    TrainMode mode = TrainMode::Supervised;
    double v_eps = 1e-3;
    std::optional<double> v_f;
    double gamma_w = 0.0;
    double beta_w = 2.0;
    double smooth_delta = 1e-6;
    double learning_rate = 1e-3;
    std::size_t batch_size = 8;
    std::size_t max_epochs = 100;
    double dropout_rate = 0.0;
    std::uint64_t seed = 0;
    std::size_t early_stop_patience = 20;
    // Optional image-domain penalty gamma_f * sum ((D f)^2 + delta^2)^(beta_f/2) on
    // forward differences of f_NN. Off when gamma_f == 0.
    double image_prior_gamma = 0.0;
    double image_prior_beta = 1.0;

    void validate() const {
        std::vector<std::string> errs;
        if (!(v_eps > 0.0)) errs.emplace_back("v_eps must be positive");
        if (mode == TrainMode::Supervised && !(v_f && *v_f > 0.0))
            errs.emplace_back("supervised mode requires v_f > 0");
        if (!(gamma_w >= 0.0)) errs.emplace_back("gamma_w must be non-negative");
        if (!(beta_w > 0.0 && beta_w <= 2.0)) errs.emplace_back("beta_w must be in (0,2]");
        if (!(smooth_delta > 0.0)) errs.emplace_back("smooth_delta must be positive");
        if (!(learning_rate > 0.0)) errs.emplace_back("learning_rate must be positive");
        if (batch_size == 0) errs.emplace_back("batch_size must be positive");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) errs.emplace_back("dropout_rate must be in [0,1)");
        if (!(image_prior_gamma >= 0.0)) errs.emplace_back("image_prior_gamma must be non-negative");
        if (!(image_prior_beta > 0.0 && image_prior_beta <= 2.0))
            errs.emplace_back("image_prior_beta must be in (0,2]");
        if (!errs.empty()) {
            std::string msg = "invalid training configuration:";
            for (const auto& e : errs) msg += "\n  - " + e;
            throw ContractError(msg);
        }
    }
};

struct LossBreakdown {
    double j_nn = 0.0;
    double j_pi = 0.0;
    double j_pr = 0.0;
    double j_img = 0.0;  // zero unless the image-domain penalty is enabled
    double total = 0.0;
};

inline double loss_jnn(const Field& f_nn, const Field& f_T, double v_f) {
    require_same_shape(f_nn, f_T, "loss_jnn");
    if (!(v_f > 0.0)) throw ContractError("loss_jnn: v_f must be positive");
    return squared_norm(f_T - f_nn) / (2.0 * v_f);
}

inline double loss_jpi(const Field& f_nn, const Field& g_T, const ForwardOperator& A, double v_eps) {
    if (!(v_eps > 0.0)) throw ContractError("loss_jpi: v_eps must be positive");
    const Field pred = op_apply(A, f_nn);
    require_same_shape(pred, g_T, "loss_jpi");
    return squared_norm(g_T - pred) / (2.0 * v_eps);
}

template <class S>
double loss_jpr(std::span<const S> w, double gamma_w, double beta_w, double delta) {
    if (gamma_w == 0.0) return 0.0;
    double s = 0.0;
    if (beta_w == 2.0) {
        for (S v : w) s += static_cast<double>(v) * static_cast<double>(v);
    } else {
        const double d2 = delta * delta;
        for (S v : w) {
            const double x = static_cast<double>(v);
            s += std::pow(x * x + d2, beta_w / 2.0);
        }
    }
    return gamma_w * s;
}

template <class S>
void add_jpr_gradient(std::span<const S> w, double gamma_w, double beta_w, double delta, std::span<S> grad) {
    if (gamma_w == 0.0) return;
    const double d2 = delta * delta;
    for (std::size_t j = 0; j < w.size(); ++j) {
        const double x = static_cast<double>(w[j]);
        const double g = beta_w == 2.0 ? 2.0 * gamma_w * x
                                       : gamma_w * beta_w * x * std::pow(x * x + d2, beta_w / 2.0 - 1.0);
        grad[j] += static_cast<S>(g);
    }
}

// Circular forward-difference penalty; optionally accumulates d/df into grad_f.
inline double image_prior(const Field& f, double gamma, double beta, double delta, Field* grad_f) {
    if (gamma == 0.0) return 0.0;
    const std::size_t w = f.width(), h = f.height();
    const double d2 = delta * delta;
    double s = 0.0;
    auto term = [&](std::size_t a, std::size_t b) {
        const double d = f[b] - f[a];
        double v, dv;
        if (beta == 2.0) {
            v = d * d;
            dv = 2.0 * d;
        } else {
            const double q = d * d + d2;
            v = std::pow(q, beta / 2.0);
            dv = beta * d * std::pow(q, beta / 2.0 - 1.0);
        }
        s += v;
        if (grad_f) {
            (*grad_f)[b] += gamma * dv;
            (*grad_f)[a] -= gamma * dv;
        }
    };
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t i = y * w + x;
            term(i, y * w + (x + 1) % w);
            term(i, ((y + 1) % h) * w + x);
        }
    return gamma * s;
}

using Batch = std::vector<const Sample*>;

inline Batch as_batch(const Dataset& d) {
    Batch b;
    b.reserve(d.size());
    for (const auto& s : d.samples) b.push_back(&s);
    return b;
}

// Loss of one mini-batch; when grad is non-null its gradient is accumulated too.
// Sample k of the batch draws dropout masks from derive_seed(drop.rng_seed, k).
template <class S>
LossBreakdown evaluate_batch(const NetParams<S>& params, std::span<const Sample* const> batch,
                             const ForwardOperator& A, const TrainConfig& cfg, const DropoutState& drop,
                             std::vector<S>* grad) {
    if (batch.empty()) throw ContractError("loss_total: batch is empty");
    const bool supervised = cfg.mode == TrainMode::Supervised;
    if (supervised && !(cfg.v_f && *cfg.v_f > 0.0))
        throw ContractError("supervised loss requires v_f > 0");
    if (grad) grad->assign(params.size(), S(0));

    LossBreakdown lb;
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const Sample& smp = *batch[k];
        DropoutState d = drop;
        d.rng_seed = derive_seed(drop.rng_seed, k);
        auto fw = forward(params, smp.g, d);
        const Field& f_nn = fw.output;

        const Field pred = op_apply(A, f_nn);
        require_same_shape(pred, smp.g, "physics residual");
        const Field resid = smp.g - pred;
        lb.j_pi += squared_norm(resid) / (2.0 * cfg.v_eps);
        Field gout;
        if (grad) {
            gout = op_vjp(A, f_nn, resid);
            gout *= -1.0 / cfg.v_eps;
        }
        if (supervised) {
            if (!smp.label) throw ContractError("supervised loss requires labelled samples");
            const Field diff = f_nn - *smp.label;
            lb.j_nn += squared_norm(diff) / (2.0 * *cfg.v_f);
            if (grad) axpy(1.0 / *cfg.v_f, diff, gout);
        }
        if (cfg.image_prior_gamma > 0.0)
            lb.j_img += image_prior(f_nn, cfg.image_prior_gamma, cfg.image_prior_beta, cfg.smooth_delta,
                                    grad ? &gout : nullptr);
        if (grad) backward_accumulate<S>(params, fw.tape, gout, *grad);
    }
    lb.j_pr = loss_jpr<S>(params.values, cfg.gamma_w, cfg.beta_w, cfg.smooth_delta);
    if (grad) add_jpr_gradient<S>(params.values, cfg.gamma_w, cfg.beta_w, cfg.smooth_delta, *grad);
    lb.total = lb.j_nn + lb.j_pi + lb.j_pr + lb.j_img;
    return lb;
}

template <class S>
LossBreakdown loss_total(std::span<const Sample* const> batch, const NetParams<S>& w, const ForwardOperator& A,
                         const TrainConfig& cfg, const DropoutState& drop = {}) {
    return evaluate_batch<S>(w, batch, A, cfg, drop, nullptr);
}

template <class S>
std::vector<S> grad_total(std::span<const Sample* const> batch, const NetParams<S>& w, const ForwardOperator& A,
                          const TrainConfig& cfg, const DropoutState& drop = {}) {
    std::vector<S> g;
    evaluate_batch<S>(w, batch, A, cfg, drop, &g);
    return g;
}

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// One bias-corrected Adam update at step t (t >= 1).
template <class S>
void adam_step(std::span<S> w, std::span<const S> grad, AdamState& state, double lr, std::size_t t) {
    if (t < 1) throw ContractError("adam_step: t must be >= 1");
    if (grad.size() != w.size()) throw ShapeError("adam_step: gradient length mismatch");
    if (state.m.empty()) {
        state.m.assign(w.size(), 0.0);
        state.v.assign(w.size(), 0.0);
    }
    if (state.m.size() != w.size() || state.v.size() != w.size())
        throw ShapeError("adam_step: optimizer state length mismatch");
    const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
    for (std::size_t j = 0; j < w.size(); ++j) {
        const double g = static_cast<double>(grad[j]);
        state.m[j] = kAdamBeta1 * state.m[j] + (1.0 - kAdamBeta1) * g;
        state.v[j] = kAdamBeta2 * state.v[j] + (1.0 - kAdamBeta2) * g * g;
        const double mh = state.m[j] / c1;
        const double vh = state.v[j] / c2;
        w[j] = static_cast<S>(static_cast<double>(w[j]) - lr * mh / (std::sqrt(vh) + kAdamEps));
    }
}

struct TrainLogRow {
    std::size_t epoch = 0;
    LossBreakdown train;
    LossBreakdown val;
    double val_psnr = std::numeric_limits<double>::quiet_NaN();
    double val_ssim = std::numeric_limits<double>::quiet_NaN();
    double wall_ms = 0.0;
};

struct TrainLog {
    std::vector<TrainLogRow> rows;
    std::size_t best_epoch = 0;  // 0 -> initial parameters
};

template <class S>
struct TrainResult {
    NetParams<S> params;
    TrainLog log;
};

struct QualityScores {
    double psnr = std::numeric_limits<double>::quiet_NaN();
    double ssim = std::numeric_limits<double>::quiet_NaN();
};

// Mean PSNR/SSIM of deterministic predictions against each sample's clean scene
// (or its label when the scene is unavailable).
template <class S>
QualityScores evaluate_quality(const NetParams<S>& params, const Dataset& d) {
    double ps = 0.0, ss = 0.0;
    std::size_t n = 0;
    for (const auto& smp : d.samples) {
        const Field* ref = smp.truth ? &*smp.truth : smp.label ? &*smp.label : nullptr;
        if (!ref) continue;
        const Field pred = predict(params, smp.g);
        ps += psnr(pred, *ref);
        ss += ref->width() >= kSsimWindow && ref->height() >= kSsimWindow
                  ? ssim(pred, *ref)
                  : std::numeric_limits<double>::quiet_NaN();
        ++n;
    }
    if (n == 0) return {};
    return {ps / static_cast<double>(n), ss / static_cast<double>(n)};
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    CounterRng rng(seed, Purpose::Shuffle, epoch);
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

using EpochCallback = std::function<void(const TrainLogRow&)>;

template <class S = float>
TrainResult<S> train(const Dataset& train_set, const Dataset& val_set, const ArchSpec& arch,
                     const ForwardOperator& A, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
    cfg.validate();
    arch.validate();
    if (train_set.samples.empty()) throw ContractError("train: training set is empty");
    if (cfg.mode == TrainMode::Supervised)
        for (const auto& s : train_set.samples)
            if (!s.label) throw ContractError("train: supervised mode requires labels on every training sample");
    if (arch.input != A.output_shape())
        throw ShapeError("network input " + to_string(arch.input) + " must match operator output " +
                         to_string(A.output_shape()));
    if (arch.output != A.input_shape())
        throw ShapeError("network output " + to_string(arch.output) + " must match operator input " +
                         to_string(A.input_shape()));

    TrainResult<S> res{init_params<S>(arch, cfg.seed), {}};
    if (cfg.max_epochs == 0) return res;
    const FlushDenormals ftz;

    NetParams<S> w = res.params;
    AdamState adam;
    std::size_t step = 0;
    double best = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    const Batch all_val = as_batch(val_set);
    const DropoutState train_drop{cfg.dropout_rate > 0.0, cfg.dropout_rate, 0};

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto order = shuffled_indices(train_set.size(), cfg.seed, epoch);
        TrainLogRow row;
        row.epoch = epoch;
        std::vector<S> grad;
        for (std::size_t start = 0, b = 0; start < order.size(); start += cfg.batch_size, ++b) {
            Batch batch;
            for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k)
                batch.push_back(&train_set.samples[order[k]]);
            DropoutState drop = train_drop;
            drop.rng_seed = derive_seed(derive_seed(cfg.seed ^ 0xD50Full, epoch), b);
            const LossBreakdown lb = evaluate_batch<S>(w, batch, A, cfg, drop, &grad);
            if (!std::isfinite(lb.total)) {
                std::ostringstream os;
                os << "training diverged: non-finite loss at epoch " << epoch << ", batch " << b
                   << " (j_nn=" << lb.j_nn << ", j_pi=" << lb.j_pi << ", j_pr=" << lb.j_pr << ")";
                throw NumericalError(os.str());
            }
            row.train.j_nn += lb.j_nn;
            row.train.j_pi += lb.j_pi;
            row.train.j_pr += lb.j_pr;
            row.train.j_img += lb.j_img;
            row.train.total += lb.total;
            adam_step<S>(w.values, grad, adam, cfg.learning_rate, ++step);
        }

        double score = row.train.total;
        if (!all_val.empty()) {
            row.val = loss_total<S>(all_val, w, A, cfg);
            const auto q = evaluate_quality(w, val_set);
            row.val_psnr = q.psnr;
            row.val_ssim = q.ssim;
            score = row.val.total;
        }
        if (!std::isfinite(score))
            throw NumericalError("training diverged: non-finite validation loss at epoch " + std::to_string(epoch));
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        res.log.rows.push_back(row);
        if (on_epoch) on_epoch(row);

        if (score < best) {
            best = score;
            res.params = w;
            res.log.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.early_stop_patience && cfg.early_stop_patience > 0) {
            break;
        }
    }
    return res;
}

}  // namespace bpinn
