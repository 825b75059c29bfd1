#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bpinn/error.hpp"

namespace bpinn {

struct Shape {
    std::size_t width = 0;
    std::size_t height = 0;

    [[nodiscard]] std::size_t size() const { return width * height; }
    friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(Shape s) {
    return std::to_string(s.width) + "x" + std::to_string(s.height);
}

// Real-valued 2-D grid stored row-major: values[y * width + x].
class Field {
public:
    Field() = default;

    Field(std::size_t width, std::size_t height, double fill = 0.0)
        : width_(width), height_(height), values_(width * height, fill) {
        if (width == 0 || height == 0) throw ShapeError("field dimensions must be positive");
    }

    Field(std::size_t width, std::size_t height, std::vector<double> values)
        : width_(width), height_(height), values_(std::move(values)) {
        if (width == 0 || height == 0) throw ShapeError("field dimensions must be positive");
        if (values_.size() != width * height)
            throw ShapeError("field value count " + std::to_string(values_.size()) +
                             " does not match " + std::to_string(width) + "x" +
                             std::to_string(height));
    }

    explicit Field(Shape s, double fill = 0.0) : Field(s.width, s.height, fill) {}

    // Rows listed top to bottom; every row must have the same length.
    static Field from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t h = rows.size();
        const std::size_t w = h ? rows.begin()->size() : 0;
        std::vector<double> v;
        v.reserve(w * h);
        for (const auto& r : rows) {
            if (r.size() != w) throw ShapeError("ragged rows in field literal");
            v.insert(v.end(), r.begin(), r.end());
        }
        return Field(w, h, std::move(v));
    }

    [[nodiscard]] std::size_t width() const { return width_; }
    [[nodiscard]] std::size_t height() const { return height_; }
    [[nodiscard]] Shape shape() const { return {width_, height_}; }
    [[nodiscard]] std::size_t size() const { return values_.size(); }
    [[nodiscard]] bool empty() const { return values_.empty(); }

    double& operator()(std::size_t x, std::size_t y) { return values_[y * width_ + x]; }
    double operator()(std::size_t x, std::size_t y) const { return values_[y * width_ + x]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    [[nodiscard]] std::span<double> values() & { return values_; }
    [[nodiscard]] std::span<const double> values() const& { return values_; }
    std::span<const double> values() && = delete;  // would dangle
    [[nodiscard]] const std::vector<double>& vector() const { return values_; }

    [[nodiscard]] bool all_finite() const {
        return std::all_of(values_.begin(), values_.end(),
                           [](double v) { return std::isfinite(v); });
    }

    Field& operator+=(const Field& o);
    Field& operator-=(const Field& o);
    Field& operator*=(double a) {
        for (auto& v : values_) v *= a;
        return *this;
    }

    friend bool operator==(const Field&, const Field&) = default;

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<double> values_;
};

inline void require_same_shape(const Field& a, const Field& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

inline void require_finite(const Field& f, const char* what) {
    if (!f.all_finite()) throw NumericalError(std::string(what) + ": field contains NaN/Inf");
}

inline Field& Field::operator+=(const Field& o) {
    require_same_shape(*this, o, "field +=");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
    return *this;
}

inline Field& Field::operator-=(const Field& o) {
    require_same_shape(*this, o, "field -=");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
    return *this;
}

inline Field operator+(Field a, const Field& b) { return a += b; }
inline Field operator-(Field a, const Field& b) { return a -= b; }
inline Field operator*(double s, Field a) { return a *= s; }
inline Field operator*(Field a, double s) { return a *= s; }

inline double dot(const Field& a, const Field& b) {
    require_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_norm(const Field& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    return s;
}

inline double norm(const Field& a) { return std::sqrt(squared_norm(a)); }

// y += alpha * x
inline void axpy(double alpha, const Field& x, Field& y) {
    require_same_shape(x, y, "axpy");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Field hadamard(const Field& a, const Field& b) {
    require_same_shape(a, b, "hadamard");
    Field out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

inline double mean(const Field& a) {
    return std::accumulate(a.values().begin(), a.values().end(), 0.0) /
           static_cast<double>(a.size());
}

inline std::pair<double, double> min_max(const Field& a) {
    auto [lo, hi] = std::minmax_element(a.values().begin(), a.values().end());
    return {*lo, *hi};
}

}  // namespace bpinn
