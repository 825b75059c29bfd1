#pragma once

// Closed-form linear-Gaussian posteriors, solved matrix-free with conjugate
// gradients on the normal equations.
//
//   reference prior only:  (A^T A + lambda I) f = A^T g + lambda f_bar
//   reference + prior:     (A^T A + (lambda + mu) I) f = A^T g + lambda f_T + mu f_bar
//
// with lambda = v_eps / v_f and mu = v_eps / v_prior. The posterior covariance
// is v_eps times the inverse of the same normal matrix; only its diagonal is
// computed.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "bpinn/field.hpp"
#include "bpinn/operators.hpp"
#include "bpinn/rng.hpp"

namespace bpinn {

using LinearMap = std::function<Field(const Field&)>;

struct CgOptions {
    double tol = 1e-8;
    std::size_t max_iter = 0;  // 0 -> 10 x pixel count
};

struct CgResult {
    Field x;
    double residual = 0.0;  // ||M x - b|| / ||b||
    std::size_t iterations = 0;
    bool converged = false;
};

inline CgResult cg_solve(const LinearMap& apply_normal, const Field& rhs, CgOptions opt = {}) {
    if (!(opt.tol > 0.0)) throw ContractError("cg_solve: tolerance must be positive");
    require_finite(rhs, "cg_solve rhs");
    const std::size_t max_iter = opt.max_iter ? opt.max_iter : 10 * rhs.size();

    CgResult res{Field(rhs.shape()), 0.0, 0, false};
    const double bnorm = norm(rhs);
    if (bnorm == 0.0) {
        res.converged = true;
        return res;
    }
    Field r = rhs;  // x0 = 0
    Field p = r;
    double rr = squared_norm(r);
    while (res.iterations < max_iter) {
        const Field q = apply_normal(p);
        require_same_shape(q, p, "cg_solve operator output");
        const double pq = dot(p, q);
        if (!std::isfinite(pq)) throw NumericalError("cg_solve: non-finite value during iteration");
        if (pq <= 0.0) throw NumericalError("cg_solve: operator is not positive definite");
        const double alpha = rr / pq;
        axpy(alpha, p, res.x);
        axpy(-alpha, q, r);
        ++res.iterations;
        const double rr_new = squared_norm(r);
        if (!std::isfinite(rr_new)) throw NumericalError("cg_solve: non-finite residual");
        if (std::sqrt(rr_new) <= opt.tol * bnorm) {
            rr = rr_new;
            break;
        }
        const double beta = rr_new / rr;
        rr = rr_new;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
    }
    // Report the true residual rather than the recursively updated one.
    Field mx = apply_normal(res.x);
    mx -= rhs;
    res.residual = norm(mx) / bnorm;
    res.converged = res.residual <= opt.tol;
    return res;
}

struct GaussParams {
    double v_eps = 1.0;
    std::optional<double> v_f;
    std::optional<double> v_prior;
    Field f_bar;  // empty -> zero prior mean
};

struct GaussianPosterior {
    Field mean;
    Field var_diag;
    double solver_residual = 0.0;
    bool converged = false;
};

enum class VarianceMode { Auto, Exact, Probe };

struct VarianceOptions {
    VarianceMode mode = VarianceMode::Auto;
    std::size_t n_probe = 64;
    std::uint64_t seed = 0;
    std::size_t exact_max_pixels = 64;
};

// diag(scale * M^-1). Exact mode solves against every basis field; probe mode
// is the Hutchinson estimator (1/n) sum_k z_k .* M^-1 z_k with Rademacher z_k.
inline Field variance_diag(const LinearMap& apply_normal, Shape shape, double scale,
                           VarianceOptions vopt = {}, CgOptions cg = {}) {
    if (vopt.n_probe < 1) throw ContractError("variance_diag: n_probe must be >= 1");
    const std::size_t n = shape.size();
    const bool exact = vopt.mode == VarianceMode::Exact ||
                       (vopt.mode == VarianceMode::Auto && n <= vopt.exact_max_pixels);
    Field diag(shape);
    if (exact) {
        for (std::size_t k = 0; k < n; ++k) {
            Field e(shape);
            e[k] = 1.0;
            const auto sol = cg_solve(apply_normal, e, cg);
            diag[k] = sol.x[k];
        }
    } else {
        for (std::size_t p = 0; p < vopt.n_probe; ++p) {
            CounterRng rng(vopt.seed, Purpose::Probe, p);
            Field z(shape);
            for (std::size_t i = 0; i < n; ++i) z[i] = rng.rademacher();
            const auto sol = cg_solve(apply_normal, z, cg);
            for (std::size_t i = 0; i < n; ++i) diag[i] += z[i] * sol.x[i];
        }
        diag *= 1.0 / static_cast<double>(vopt.n_probe);
    }
    for (auto& v : diag.values()) v = std::max(0.0, scale * v);
    return diag;
}

namespace detail {
inline void check_gauss(const ForwardOperator& A, const Field& g, const GaussParams& p) {
    if (!A.is_linear())
        throw ContractError("analytic posterior requires a linear forward operator");
    if (g.shape() != A.output_shape())
        throw ShapeError("observation shape " + to_string(g.shape()) + " does not match operator output " +
                         to_string(A.output_shape()));
    if (!(p.v_eps > 0.0)) throw ContractError("v_eps must be positive");
    if (!p.f_bar.empty() && p.f_bar.shape() != A.input_shape())
        throw ShapeError("prior mean shape does not match operator input");
}

inline LinearMap normal_map(const ForwardOperator& A, double shift) {
    return [&A, shift](const Field& f) {
        Field out = op_adjoint_linear(A, op_apply(A, f));
        axpy(shift, f, out);
        return out;
    };
}
}  // namespace detail

inline GaussianPosterior posterior_eq5(const ForwardOperator& A, const Field& g, const GaussParams& p,
                                       CgOptions cg = {}, VarianceOptions vopt = {}) {
    detail::check_gauss(A, g, p);
    if (!p.v_f || !(*p.v_f > 0.0)) throw ContractError("posterior_eq5 requires v_f > 0");
    const double lambda = p.v_eps / *p.v_f;
    Field rhs = op_adjoint_linear(A, g);
    if (!p.f_bar.empty()) axpy(lambda, p.f_bar, rhs);
    const auto M = detail::normal_map(A, lambda);
    auto sol = cg_solve(M, rhs, cg);
    GaussianPosterior post;
    post.mean = std::move(sol.x);
    post.solver_residual = sol.residual;
    post.converged = sol.converged;
    post.var_diag = variance_diag(M, A.input_shape(), p.v_eps, vopt, cg);
    return post;
}

inline GaussianPosterior posterior_eq17(const ForwardOperator& A, const Field& g_T, const Field& f_T,
                                        const GaussParams& p, CgOptions cg = {},
                                        VarianceOptions vopt = {}) {
    detail::check_gauss(A, g_T, p);
    if (!p.v_f || !(*p.v_f > 0.0)) throw ContractError("posterior_eq17 requires v_f > 0");
    if (!p.v_prior || !(*p.v_prior > 0.0)) throw ContractError("posterior_eq17 requires v_prior > 0");
    if (f_T.shape() != A.input_shape()) throw ShapeError("reference field shape does not match operator input");
    const double lambda = p.v_eps / *p.v_f;
    const double mu = p.v_eps / *p.v_prior;
    Field rhs = op_adjoint_linear(A, g_T);
    axpy(lambda, f_T, rhs);
    if (!p.f_bar.empty()) axpy(mu, p.f_bar, rhs);
    const auto M = detail::normal_map(A, lambda + mu);
    auto sol = cg_solve(M, rhs, cg);
    GaussianPosterior post;
    post.mean = std::move(sol.x);
    post.solver_residual = sol.residual;
    post.converged = sol.converged;
    post.var_diag = variance_diag(M, A.input_shape(), p.v_eps, vopt, cg);
    return post;
}

}  // namespace bpinn
