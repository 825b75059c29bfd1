#pragma once

// Matrix-free physics operators: PSF convolution (H), block-average
// downsampling (D), pointwise emissivity (Phi), and their compositions.
// Convolution is circular so the adjoint is exactly the flipped-kernel
// convolution.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "bpinn/field.hpp"

namespace bpinn {

class PsfKernel {
public:
    PsfKernel() : PsfKernel(1, {1.0}) {}

    // Weights are row-major k*k; they must already sum to one.
    PsfKernel(std::size_t size, std::vector<double> weights, double sigma = 0.0)
        : size_(size), weights_(std::move(weights)), sigma_(sigma) {
        if (size_ == 0 || size_ % 2 == 0) throw ContractError("PSF size must be odd and positive");
        if (weights_.size() != size_ * size_) throw ShapeError("PSF weight count != size*size");
        double s = 0.0;
        for (double w : weights_) {
            if (!std::isfinite(w)) throw NumericalError("PSF weight is not finite");
            s += w;
        }
        if (std::abs(s - 1.0) > 1e-12)
            throw ContractError("PSF weights must sum to 1 (got " + std::to_string(s) + ")");
    }

    static PsfKernel delta(std::size_t size = 1) {
        std::vector<double> w(size * size, 0.0);
        w[(size / 2) * size + size / 2] = 1.0;
        return PsfKernel(size, std::move(w));
    }

    // Unit weight at offset (dx, dy) from the centre: convolution shifts by (dx, dy).
    static PsfKernel shifted_delta(std::size_t size, int dx, int dy) {
        std::vector<double> w(size * size, 0.0);
        const int c = static_cast<int>(size / 2);
        if (std::abs(dx) > c || std::abs(dy) > c) throw ContractError("shift exceeds kernel radius");
        w[static_cast<std::size_t>(c + dy) * size + static_cast<std::size_t>(c + dx)] = 1.0;
        return PsfKernel(size, std::move(w));
    }

    static PsfKernel box(std::size_t size) {
        const double v = 1.0 / static_cast<double>(size * size);
        std::vector<double> w(size * size, v);
        // Absorb the rounding residue so the sum is 1 to the last bit we can get.
        double s = 0.0;
        for (double x : w) s += x;
        w[(size / 2) * size + size / 2] += 1.0 - s;
        return PsfKernel(size, std::move(w));
    }

    static PsfKernel gaussian(double sigma, std::size_t size) {
        if (!(sigma > 0.0)) throw ContractError("PSF sigma must be positive");
        if (size == 0 || size % 2 == 0) throw ContractError("PSF size must be odd and positive");
        const int c = static_cast<int>(size / 2);
        std::vector<double> w(size * size);
        double s = 0.0;
        for (int j = -c; j <= c; ++j)
            for (int i = -c; i <= c; ++i) {
                const double v = std::exp(-(i * i + j * j) / (2.0 * sigma * sigma));
                w[static_cast<std::size_t>(j + c) * size + static_cast<std::size_t>(i + c)] = v;
                s += v;
            }
        for (auto& v : w) v /= s;
        return PsfKernel(size, std::move(w), sigma);
    }

    [[nodiscard]] std::size_t size() const { return size_; }
    [[nodiscard]] double sigma() const { return sigma_; }
    [[nodiscard]] const std::vector<double>& weights() const { return weights_; }
    // Weight at offset (dx, dy) from the centre.
    [[nodiscard]] double at(int dx, int dy) const {
        const int c = static_cast<int>(size_ / 2);
        return weights_[static_cast<std::size_t>(dy + c) * size_ + static_cast<std::size_t>(dx + c)];
    }

    [[nodiscard]] PsfKernel flipped() const {
        std::vector<double> w(weights_.rbegin(), weights_.rend());
        PsfKernel k;
        k.size_ = size_;
        k.weights_ = std::move(w);
        k.sigma_ = sigma_;
        return k;
    }

private:
    std::size_t size_;
    std::vector<double> weights_;
    double sigma_;
};

namespace detail {
inline void check_kernel_fits(const Shape& s, const PsfKernel& h) {
    if (h.size() > std::min(s.width, s.height))
        throw ShapeError("PSF of size " + std::to_string(h.size()) + " larger than field " +
                         to_string(s));
}

inline std::size_t wrap(std::ptrdiff_t i, std::size_t n) {
    const auto m = static_cast<std::ptrdiff_t>(n);
    return static_cast<std::size_t>(((i % m) + m) % m);
}
}  // namespace detail

// out(x, y) = sum_{dx,dy} h(dx, dy) * f(x - dx, y - dy), indices taken modulo the field size.
inline Field conv_apply(const Field& f, const PsfKernel& h) {
    detail::check_kernel_fits(f.shape(), h);
    const std::size_t w = f.width(), ht = f.height();
    const int c = static_cast<int>(h.size() / 2);
    Field out(f.shape());
    for (std::size_t y = 0; y < ht; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dy = -c; dy <= c; ++dy) {
                const std::size_t sy = detail::wrap(static_cast<std::ptrdiff_t>(y) - dy, ht);
                for (int dx = -c; dx <= c; ++dx) {
                    const std::size_t sx = detail::wrap(static_cast<std::ptrdiff_t>(x) - dx, w);
                    acc += h.at(dx, dy) * f(sx, sy);
                }
            }
            out(x, y) = acc;
        }
    }
    return out;
}

inline Field conv_adjoint(const Field& g, const PsfKernel& h) { return conv_apply(g, h.flipped()); }

inline Field down_apply(const Field& f, std::size_t factor) {
    if (factor == 0) throw ContractError("downsampling factor must be positive");
    if (f.width() % factor != 0 || f.height() % factor != 0)
        throw ShapeError("field " + to_string(f.shape()) + " not divisible by factor " +
                         std::to_string(factor));
    if (factor == 1) return f;
    const std::size_t ow = f.width() / factor, oh = f.height() / factor;
    const double inv = 1.0 / static_cast<double>(factor * factor);
    Field out(ow, oh);
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t j = 0; j < factor; ++j)
                for (std::size_t i = 0; i < factor; ++i) acc += f(x * factor + i, y * factor + j);
            out(x, y) = acc * inv;
        }
    return out;
}

inline Field down_adjoint(const Field& g, std::size_t factor) {
    if (factor == 0) throw ContractError("downsampling factor must be positive");
    if (factor == 1) return g;
    const double inv = 1.0 / static_cast<double>(factor * factor);
    Field out(g.width() * factor, g.height() * factor);
    for (std::size_t y = 0; y < out.height(); ++y)
        for (std::size_t x = 0; x < out.width(); ++x) out(x, y) = g(x / factor, y / factor) * inv;
    return out;
}

class EmissivityMap {
public:
    enum class Kind { Identity, Scale, SmoothSaturate };

    EmissivityMap() = default;

    static EmissivityMap identity() { return {}; }
    static EmissivityMap scale(double a) {
        if (!(a > 0.0 && a <= 1.0)) throw ContractError("Scale emissivity requires a in (0,1]");
        return EmissivityMap(Kind::Scale, a, 0.0);
    }
    // a * x / sqrt(1 + x^2 / c^2), saturating at a * c.
    static EmissivityMap smooth_saturate(double a, double c) {
        if (!(a > 0.0) || !(c > 0.0))
            throw ContractError("SmoothSaturate emissivity requires a > 0 and c > 0");
        return EmissivityMap(Kind::SmoothSaturate, a, c);
    }

    [[nodiscard]] Kind kind() const { return kind_; }
    [[nodiscard]] double a() const { return a_; }
    [[nodiscard]] double c() const { return c_; }
    [[nodiscard]] bool is_linear() const { return kind_ != Kind::SmoothSaturate; }

    [[nodiscard]] double value(double x) const {
        switch (kind_) {
            case Kind::Identity: return x;
            case Kind::Scale: return a_ * x;
            case Kind::SmoothSaturate: return a_ * x / std::sqrt(1.0 + x * x / (c_ * c_));
        }
        return x;
    }

    [[nodiscard]] double derivative(double x) const {
        switch (kind_) {
            case Kind::Identity: return 1.0;
            case Kind::Scale: return a_;
            case Kind::SmoothSaturate: {
                const double u = 1.0 + x * x / (c_ * c_);
                return a_ / (u * std::sqrt(u));
            }
        }
        return 1.0;
    }

    [[nodiscard]] std::string describe() const {
        std::ostringstream os;
        os.precision(17);
        switch (kind_) {
            case Kind::Identity: os << "identity"; break;
            case Kind::Scale: os << "scale(" << a_ << ")"; break;
            case Kind::SmoothSaturate: os << "smooth_saturate(" << a_ << "," << c_ << ")"; break;
        }
        return os.str();
    }

private:
    EmissivityMap(Kind k, double a, double c) : kind_(k), a_(a), c_(c) {}

    Kind kind_ = Kind::Identity;
    double a_ = 1.0;
    double c_ = 0.0;
};

inline Field emiss_apply(const Field& f, const EmissivityMap& phi) {
    if (phi.kind() == EmissivityMap::Kind::Identity) return f;
    Field out(f.shape());
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = phi.value(f[i]);
    return out;
}

inline Field emiss_jacobian_diag(const Field& f, const EmissivityMap& phi) {
    Field out(f.shape());
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = phi.derivative(f[i]);
    return out;
}

struct ConvStage {
    PsfKernel kernel;
};
struct DownStage {
    std::size_t factor;
};
struct EmissStage {
    EmissivityMap map;
};
using Stage = std::variant<ConvStage, DownStage, EmissStage>;

// Stages run in the order listed. The canonical restoration operator is
// [Emiss, Conv] (g = H Phi f); super-resolution is [Emiss, Down, Conv] (g = H D Phi f).
class ForwardOperator {
public:
    ForwardOperator() = default;

    ForwardOperator(Shape input, std::vector<Stage> stages)
        : input_(input), stages_(std::move(stages)) {
        if (input.width == 0 || input.height == 0) throw ShapeError("operator input shape is empty");
        Shape s = input;
        for (const auto& st : stages_) {
            if (const auto* c = std::get_if<ConvStage>(&st)) {
                detail::check_kernel_fits(s, c->kernel);
            } else if (const auto* d = std::get_if<DownStage>(&st)) {
                if (d->factor == 0) throw ContractError("downsampling factor must be positive");
                if (s.width % d->factor != 0 || s.height % d->factor != 0)
                    throw ShapeError("shape " + to_string(s) + " not divisible by factor " +
                                     std::to_string(d->factor));
                s = {s.width / d->factor, s.height / d->factor};
            }
        }
        output_ = s;
    }

    static ForwardOperator identity(Shape s) { return ForwardOperator(s, {}); }

    static ForwardOperator restoration(Shape s, PsfKernel psf,
                                       EmissivityMap phi = EmissivityMap::identity()) {
        return ForwardOperator(s, {EmissStage{phi}, ConvStage{std::move(psf)}});
    }

    static ForwardOperator super_resolution(Shape hr, std::size_t factor, PsfKernel psf,
                                            EmissivityMap phi = EmissivityMap::identity()) {
        return ForwardOperator(hr, {EmissStage{phi}, DownStage{factor}, ConvStage{std::move(psf)}});
    }

    [[nodiscard]] Shape input_shape() const { return input_; }
    [[nodiscard]] Shape output_shape() const { return output_; }
    [[nodiscard]] const std::vector<Stage>& stages() const { return stages_; }

    [[nodiscard]] bool is_linear() const {
        for (const auto& st : stages_)
            if (const auto* e = std::get_if<EmissStage>(&st); e && !e->map.is_linear()) return false;
        return true;
    }

    [[nodiscard]] std::string describe() const {
        std::ostringstream os;
        os.precision(17);
        os << "in=" << to_string(input_) << ";out=" << to_string(output_);
        for (const auto& st : stages_) {
            if (const auto* c = std::get_if<ConvStage>(&st))
                os << ";conv(size=" << c->kernel.size() << ",sigma=" << c->kernel.sigma() << ")";
            else if (const auto* d = std::get_if<DownStage>(&st))
                os << ";down(" << d->factor << ")";
            else
                os << ";emiss(" << std::get<EmissStage>(st).map.describe() << ")";
        }
        return os.str();
    }

private:
    Shape input_{};
    Shape output_{};
    std::vector<Stage> stages_;
};

namespace detail {
inline Field apply_stage(const Stage& st, const Field& f) {
    if (const auto* c = std::get_if<ConvStage>(&st)) return conv_apply(f, c->kernel);
    if (const auto* d = std::get_if<DownStage>(&st)) return down_apply(f, d->factor);
    return emiss_apply(f, std::get<EmissStage>(st).map);
}
}  // namespace detail

inline Field op_apply(const ForwardOperator& A, const Field& f) {
    if (f.shape() != A.input_shape())
        throw ShapeError("operator expects input " + to_string(A.input_shape()) + ", got " +
                         to_string(f.shape()));
    Field cur = f;
    for (const auto& st : A.stages()) cur = detail::apply_stage(st, cur);
    return cur;
}

inline Field op_adjoint_linear(const ForwardOperator& A, const Field& g) {
    if (!A.is_linear())
        throw ContractError(
            "op_adjoint_linear requires a linear emissivity stage; linearize with "
            "emiss_jacobian_diag (see op_vjp)");
    if (g.shape() != A.output_shape())
        throw ShapeError("adjoint expects input " + to_string(A.output_shape()) + ", got " +
                         to_string(g.shape()));
    Field cur = g;
    for (auto it = A.stages().rbegin(); it != A.stages().rend(); ++it) {
        if (const auto* c = std::get_if<ConvStage>(&*it))
            cur = conv_adjoint(cur, c->kernel);
        else if (const auto* d = std::get_if<DownStage>(&*it))
            cur = down_adjoint(cur, d->factor);
        else {
            const auto& m = std::get<EmissStage>(*it).map;
            if (m.kind() == EmissivityMap::Kind::Scale) cur *= m.a();
        }
    }
    return cur;
}

// Jacobian-transpose product J_A(f)^T r. Nonlinear emissivity stages are
// linearized at their input via emiss_jacobian_diag.
inline Field op_vjp(const ForwardOperator& A, const Field& f, const Field& r) {
    if (f.shape() != A.input_shape()) throw ShapeError("op_vjp: input shape mismatch");
    if (r.shape() != A.output_shape()) throw ShapeError("op_vjp: cotangent shape mismatch");
    std::vector<Field> inputs;
    inputs.reserve(A.stages().size());
    Field cur = f;
    for (const auto& st : A.stages()) {
        inputs.push_back(cur);
        cur = detail::apply_stage(st, cur);
    }
    Field back = r;
    for (std::size_t k = A.stages().size(); k-- > 0;) {
        const auto& st = A.stages()[k];
        if (const auto* c = std::get_if<ConvStage>(&st))
            back = conv_adjoint(back, c->kernel);
        else if (const auto* d = std::get_if<DownStage>(&st))
            back = down_adjoint(back, d->factor);
        else
            back = hadamard(back, emiss_jacobian_diag(inputs[k], std::get<EmissStage>(st).map));
    }
    return back;
}

}  // namespace bpinn
