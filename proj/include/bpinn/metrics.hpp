#pragma once

#include <cmath>
#include <limits>
#include <optional>

#include "bpinn/field.hpp"

namespace bpinn {

inline double mse(const Field& f_hat, const Field& f_ref) {
    require_same_shape(f_hat, f_ref, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < f_hat.size(); ++i) {
        const double d = f_hat[i] - f_ref[i];
        s += d * d;
    }
    return s / static_cast<double>(f_hat.size());
}

// Default dynamic range: max - min of the reference.
inline double data_range_of(const Field& f_ref) {
    const auto [lo, hi] = min_max(f_ref);
    return hi - lo;
}

// Decibels; +infinity when the fields are identical.
inline double psnr(const Field& f_hat, const Field& f_ref, std::optional<double> data_range = {}) {
    require_same_shape(f_hat, f_ref, "psnr");
    const double range = data_range ? *data_range : data_range_of(f_ref);
    if (!(range > 0.0)) throw ContractError("psnr: data range must be positive");
    const double m = mse(f_hat, f_ref);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(range * range / m);
}

inline constexpr std::size_t kSsimWindow = 8;

// Mean SSIM over all 8x8 windows (stride 1, uniform weights, population moments).
inline double ssim(const Field& f_hat, const Field& f_ref, std::optional<double> data_range = {}) {
    require_same_shape(f_hat, f_ref, "ssim");
    if (f_hat.width() < kSsimWindow || f_hat.height() < kSsimWindow)
        throw ShapeError("ssim: field " + to_string(f_hat.shape()) + " smaller than the 8x8 window");
    double range = data_range ? *data_range : data_range_of(f_ref);
    if (!(range > 0.0)) {
        if (data_range) throw ContractError("ssim: data range must be positive");
        range = 1.0;  // constant reference
    }
    const double c1 = (0.01 * range) * (0.01 * range);
    const double c2 = (0.03 * range) * (0.03 * range);
    const double n = static_cast<double>(kSsimWindow * kSsimWindow);
    const std::size_t nx = f_hat.width() - kSsimWindow + 1;
    const std::size_t ny = f_hat.height() - kSsimWindow + 1;

    double total = 0.0;
    for (std::size_t y0 = 0; y0 < ny; ++y0)
        for (std::size_t x0 = 0; x0 < nx; ++x0) {
            double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
            for (std::size_t j = 0; j < kSsimWindow; ++j)
                for (std::size_t i = 0; i < kSsimWindow; ++i) {
                    const double a = f_hat(x0 + i, y0 + j);
                    const double b = f_ref(x0 + i, y0 + j);
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            const double mx = sx / n, my = sy / n;
            const double vx = sxx / n - mx * mx;
            const double vy = syy / n - my * my;
            const double cxy = sxy / n - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
                     ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    return total / static_cast<double>(nx * ny);
}

}  // namespace bpinn
