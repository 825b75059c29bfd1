#pragma once

// Compact networks used as the surrogate inverse map f_NN(g; w):
//
//   Mlp     dense -> relu -> dropout (per hidden layer) -> dense (linear output)
//   ConvED  a U-Net-lite: 3x3 stem, `depth` stride-2 3x3 encoder convs doubling
//           channels, mirrored decoder (nearest x2 upsampling, skip concat,
//           3x3 conv), final 1x1 conv to one channel.
//
// Parameters live in one flat vector described by a layout. Gradients come
// from explicit per-layer backward rules replayed from a tape recorded during
// forward. Scalar is float for training and double for gradient checks.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#if defined(__SSE__) || defined(_M_X64)
#include <xmmintrin.h>
#define BPINN_HAVE_MXCSR 1
#endif

#include "bpinn/field.hpp"
#include "bpinn/rng.hpp"

namespace bpinn {

// Scoped flush-to-zero / denormals-are-zero for SSE arithmetic on this thread.
// Restores the previous mode on exit; a no-op on targets without MXCSR.
class FlushDenormals {
public:
#ifdef BPINN_HAVE_MXCSR
    FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
    ~FlushDenormals() { _mm_setcsr(saved_); }
#else
    FlushDenormals() = default;
#endif
    FlushDenormals(const FlushDenormals&) = delete;
    FlushDenormals& operator=(const FlushDenormals&) = delete;

private:
#ifdef BPINN_HAVE_MXCSR
    unsigned saved_;
#endif
};

enum class ArchKind { Mlp, ConvED };

struct ArchSpec {
    ArchKind kind = ArchKind::Mlp;
    std::vector<std::size_t> hidden{256, 256, 256};  // Mlp only
    std::size_t base_channels = 8;                   // ConvED only
    std::size_t depth = 2;                           // ConvED only
    Shape input{32, 32};
    Shape output{32, 32};
    double dropout_rate = 0.0;

    static ArchSpec mlp(Shape in, Shape out, std::vector<std::size_t> hidden, double dropout = 0.0) {
        ArchSpec a;
        a.kind = ArchKind::Mlp;
        a.hidden = std::move(hidden);
        a.input = in;
        a.output = out;
        a.dropout_rate = dropout;
        a.validate();
        return a;
    }

    static ArchSpec conv_ed(Shape in, Shape out, std::size_t base, std::size_t depth,
                            double dropout = 0.0) {
        ArchSpec a;
        a.kind = ArchKind::ConvED;
        a.hidden.clear();
        a.base_channels = base;
        a.depth = depth;
        a.input = in;
        a.output = out;
        a.dropout_rate = dropout;
        a.validate();
        return a;
    }

    // Integer factor by which ConvED replicates its input before the stem.
    [[nodiscard]] std::size_t upsample_factor() const {
        return input.width ? output.width / input.width : 1;
    }

    void validate() const {
        if (input.size() == 0 || output.size() == 0) throw ContractError("network shapes must be non-empty");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
            throw ContractError("dropout rate must be in [0,1)");
        if (kind == ArchKind::Mlp) {
            for (auto h : hidden)
                if (h == 0) throw ContractError("Mlp hidden sizes must be positive");
        } else {
            if (depth < 1) throw ContractError("ConvED depth must be >= 1");
            if (base_channels < 1) throw ContractError("ConvED base_channels must be >= 1");
            const std::size_t m = std::size_t{1} << depth;
            if (output.width % m != 0 || output.height % m != 0)
                throw ContractError("ConvED requires output dimensions divisible by 2^depth = " +
                                    std::to_string(m));
            if (output.width % input.width != 0 || output.height % input.height != 0 ||
                output.width / input.width != output.height / input.height)
                throw ContractError("ConvED output must be an integer multiple of its input shape");
        }
    }

    // Canonical text stored in checkpoints; parse(canonical()) == *this.
    [[nodiscard]] std::string canonical() const {
        std::ostringstream os;
        char rate[32];
        std::snprintf(rate, sizeof rate, "%.17g", dropout_rate);
        os << "kind=" << (kind == ArchKind::Mlp ? "mlp" : "conv_ed") << ";in=" << to_string(input)
           << ";out=" << to_string(output);
        if (kind == ArchKind::Mlp) {
            os << ";hidden=";
            for (std::size_t i = 0; i < hidden.size(); ++i) os << (i ? "," : "") << hidden[i];
        } else {
            os << ";base=" << base_channels << ";depth=" << depth;
        }
        os << ";dropout=" << rate << ";activation=relu";
        return os.str();
    }

    static ArchSpec parse(std::string_view text);

    friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

namespace detail {
inline std::size_t parse_size(std::string_view s) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw ContractError("bad integer '" + std::string(s) + "' in architecture text");
    return v;
}

inline Shape parse_shape(std::string_view s) {
    const auto x = s.find('x');
    if (x == std::string_view::npos) throw ContractError("bad shape '" + std::string(s) + "'");
    return {parse_size(s.substr(0, x)), parse_size(s.substr(x + 1))};
}
}  // namespace detail

inline ArchSpec ArchSpec::parse(std::string_view text) {
    ArchSpec a;
    a.hidden.clear();
    bool have_kind = false;
    while (!text.empty()) {
        const auto semi = text.find(';');
        const auto item = text.substr(0, semi);
        text = semi == std::string_view::npos ? std::string_view{} : text.substr(semi + 1);
        const auto eq = item.find('=');
        if (eq == std::string_view::npos) throw ContractError("bad architecture item '" + std::string(item) + "'");
        const auto key = item.substr(0, eq);
        const auto val = item.substr(eq + 1);
        if (key == "kind") {
            if (val == "mlp") a.kind = ArchKind::Mlp;
            else if (val == "conv_ed") a.kind = ArchKind::ConvED;
            else throw ContractError("unknown architecture kind '" + std::string(val) + "'");
            have_kind = true;
        } else if (key == "in") {
            a.input = detail::parse_shape(val);
        } else if (key == "out") {
            a.output = detail::parse_shape(val);
        } else if (key == "hidden") {
            std::string_view rest = val;
            while (!rest.empty()) {
                const auto comma = rest.find(',');
                a.hidden.push_back(detail::parse_size(rest.substr(0, comma)));
                rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
            }
        } else if (key == "base") {
            a.base_channels = detail::parse_size(val);
        } else if (key == "depth") {
            a.depth = detail::parse_size(val);
        } else if (key == "dropout") {
            a.dropout_rate = std::stod(std::string(val));
        } else if (key == "activation") {
            if (val != "relu") throw ContractError("unsupported activation '" + std::string(val) + "'");
        } else {
            throw ContractError("unknown architecture key '" + std::string(key) + "'");
        }
    }
    if (!have_kind) throw ContractError("architecture text lacks kind");
    a.validate();
    return a;
}

struct LayerSlot {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
    bool is_bias = false;
};

namespace detail {

struct ConvSpec {
    std::string name;
    std::size_t k, cin, cout, stride;
};

// Parameterized conv layers of ConvED in forward order: stem, enc1..encD, decD..dec1, head.
inline std::vector<ConvSpec> conv_ed_layers(const ArchSpec& a) {
    std::vector<ConvSpec> out;
    auto ch = [&](std::size_t level) { return a.base_channels << level; };
    out.push_back({"stem", 3, 1, ch(0), 1});
    for (std::size_t l = 1; l <= a.depth; ++l) out.push_back({"enc" + std::to_string(l), 3, ch(l - 1), ch(l), 2});
    for (std::size_t l = a.depth; l >= 1; --l)
        out.push_back({"dec" + std::to_string(l), 3, ch(l) + ch(l - 1), ch(l - 1), 1});
    out.push_back({"head", 1, ch(0), 1, 1});
    return out;
}

}  // namespace detail

inline std::vector<LayerSlot> build_layout(const ArchSpec& a) {
    std::vector<LayerSlot> slots;
    std::size_t off = 0;
    auto add = [&](std::string name, std::size_t len, std::size_t fi, std::size_t fo, bool bias) {
        slots.push_back({std::move(name), off, len, fi, fo, bias});
        off += len;
    };
    if (a.kind == ArchKind::Mlp) {
        std::vector<std::size_t> sizes{a.input.size()};
        sizes.insert(sizes.end(), a.hidden.begin(), a.hidden.end());
        sizes.push_back(a.output.size());
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            const std::string n = "dense" + std::to_string(l);
            add(n + ".weight", sizes[l + 1] * sizes[l], sizes[l], sizes[l + 1], false);
            add(n + ".bias", sizes[l + 1], sizes[l], sizes[l + 1], true);
        }
    } else {
        for (const auto& c : detail::conv_ed_layers(a)) {
            add(c.name + ".weight", c.k * c.k * c.cin * c.cout, c.k * c.k * c.cin, c.k * c.k * c.cout, false);
            add(c.name + ".bias", c.cout, c.k * c.k * c.cin, c.k * c.k * c.cout, true);
        }
    }
    return slots;
}

template <class Scalar>
struct NetParams {
    ArchSpec arch;
    std::vector<LayerSlot> layout;
    std::vector<Scalar> values;

    [[nodiscard]] std::size_t size() const { return values.size(); }
    [[nodiscard]] std::span<const Scalar> slot(std::size_t i) const {
        return std::span<const Scalar>(values).subspan(layout[i].offset, layout[i].length);
    }
};

inline std::size_t param_count(const ArchSpec& a) {
    const auto slots = build_layout(a);
    return slots.empty() ? 0 : slots.back().offset + slots.back().length;
}

template <class To, class From>
NetParams<To> params_cast(const NetParams<From>& p) {
    NetParams<To> out{p.arch, p.layout, {}};
    out.values.assign(p.values.begin(), p.values.end());
    return out;
}

// Glorot-uniform weights, zero biases.
template <class Scalar = float>
NetParams<Scalar> init_params(const ArchSpec& arch, std::uint64_t seed) {
    arch.validate();
    NetParams<Scalar> p{arch, build_layout(arch), {}};
    p.values.assign(param_count(arch), Scalar(0));
    for (std::size_t s = 0; s < p.layout.size(); ++s) {
        const auto& slot = p.layout[s];
        if (slot.is_bias) continue;
        const double bound = std::sqrt(6.0 / static_cast<double>(slot.fan_in + slot.fan_out));
        CounterRng rng(seed, Purpose::Init, s);
        for (std::size_t i = 0; i < slot.length; ++i)
            p.values[slot.offset + i] = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
    return p;
}

struct DropoutState {
    bool enabled = false;
    double rate = 0.0;
    std::uint64_t rng_seed = 0;

    [[nodiscard]] bool active() const { return enabled && rate > 0.0; }
};

// Inverted-dropout multiplier (0 or 1/(1-rate)) for element `index` of dropout site `site`.
template <class Scalar>
void dropout_mask(const DropoutState& d, std::size_t site, std::span<Scalar> mask) {
    const auto keep = static_cast<Scalar>(1.0 / (1.0 - d.rate));
    const std::uint64_t stream = derive_seed(static_cast<std::uint64_t>(Purpose::Dropout), site);
    for (std::size_t j = 0; j < mask.size(); ++j)
        mask[j] = uniform_at(d.rng_seed, stream, j) >= d.rate ? keep : Scalar(0);
}

template <class Scalar>
struct Tape {
    ArchKind kind = ArchKind::Mlp;
    std::size_t param_count = 0;
    Shape input{};
    std::vector<std::vector<Scalar>> layer_inputs;  // input of each parameterized layer
    std::vector<std::vector<Scalar>> pre;           // pre-activation of each relu site
    std::vector<std::vector<Scalar>> masks;         // dropout multipliers, empty when inactive
};

template <class Scalar>
struct ForwardResult {
    Field output;
    Tape<Scalar> tape;
};

namespace detail {

template <class S>
void relu_dropout(std::vector<S>& x, std::vector<S>& pre_out, std::vector<S>& mask_out,
                  const DropoutState& drop, std::size_t site) {
    pre_out = x;
    for (auto& v : x) v = v > S(0) ? v : S(0);
    if (drop.active()) {
        mask_out.assign(x.size(), S(0));
        dropout_mask<S>(drop, site, mask_out);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] *= mask_out[i];
    } else {
        mask_out.clear();
    }
}

template <class S>
void relu_dropout_backward(std::vector<S>& g, const std::vector<S>& pre, const std::vector<S>& mask) {
    if (!mask.empty())
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i];
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!(pre[i] > S(0))) g[i] = S(0);
}

// y = W x + b, W row-major [out][in].
template <class S>
std::vector<S> dense_forward(std::span<const S> w, std::span<const S> b, const std::vector<S>& x) {
    const std::size_t n_out = b.size(), n_in = x.size();
    std::vector<S> y(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
        const S* row = w.data() + o * n_in;
        S acc = S(0);
        for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * x[i];
        y[o] = acc + b[o];
    }
    return y;
}

template <class S>
void dense_backward(std::span<const S> w, const std::vector<S>& x, const std::vector<S>& gy,
                    S* gw, S* gb, std::vector<S>* gx) {
    const std::size_t n_out = gy.size(), n_in = x.size();
    if (gx) gx->assign(n_in, S(0));
    for (std::size_t o = 0; o < n_out; ++o) {
        const S go = gy[o];
        gb[o] += go;
        if (go == S(0)) continue;
        S* grow = gw + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) grow[i] += go * x[i];
        if (gx) {
            const S* row = w.data() + o * n_in;
            S* gxp = gx->data();
            for (std::size_t i = 0; i < n_in; ++i) gxp[i] += go * row[i];
        }
    }
}

struct ConvGeom {
    std::size_t h, w, cin, cout, k, stride;
    [[nodiscard]] std::size_t pad() const { return k / 2; }
    [[nodiscard]] std::size_t out_h() const { return (h + 2 * pad() - k) / stride + 1; }
    [[nodiscard]] std::size_t out_w() const { return (w + 2 * pad() - k) / stride + 1; }
};

// Channels-last tensors; weights laid out [ky][kx][cin][cout]; zero padding.
template <class S>
std::vector<S> conv_forward(const ConvGeom& g, std::span<const S> wt, std::span<const S> bias,
                            const std::vector<S>& in) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), p = g.pad();
    std::vector<S> out(oh * ow * g.cout);
    for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
            S* o = out.data() + (oy * ow + ox) * g.cout;
            for (std::size_t co = 0; co < g.cout; ++co) o[co] = bias[co];
            for (std::size_t ky = 0; ky < g.k; ++ky) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(p);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                for (std::size_t kx = 0; kx < g.k; ++kx) {
                    const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(p);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                    const S* xi = in.data() + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
                    const S* wk = wt.data() + (ky * g.k + kx) * g.cin * g.cout;
                    for (std::size_t ci = 0; ci < g.cin; ++ci) {
                        const S xv = xi[ci];
                        if (xv == S(0)) continue;
                        const S* wr = wk + ci * g.cout;
                        for (std::size_t co = 0; co < g.cout; ++co) o[co] += xv * wr[co];
                    }
                }
            }
        }
    return out;
}

template <class S>
void conv_backward(const ConvGeom& g, std::span<const S> wt, const std::vector<S>& in,
                   const std::vector<S>& gout, S* gw, S* gb, std::vector<S>* gin) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), p = g.pad();
    if (gin) gin->assign(g.h * g.w * g.cin, S(0));
    for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
            const S* go = gout.data() + (oy * ow + ox) * g.cout;
            for (std::size_t co = 0; co < g.cout; ++co) gb[co] += go[co];
            for (std::size_t ky = 0; ky < g.k; ++ky) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(p);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                for (std::size_t kx = 0; kx < g.k; ++kx) {
                    const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(p);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                    const std::size_t pix = static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix);
                    const S* xi = in.data() + pix * g.cin;
                    const std::size_t wo = (ky * g.k + kx) * g.cin * g.cout;
                    for (std::size_t ci = 0; ci < g.cin; ++ci) {
                        const S xv = xi[ci];
                        S* gwr = gw + wo + ci * g.cout;
                        if (xv != S(0))
                            for (std::size_t co = 0; co < g.cout; ++co) gwr[co] += xv * go[co];
                        if (gin) {
                            const S* wr = wt.data() + wo + ci * g.cout;
                            S acc = S(0);
                            for (std::size_t co = 0; co < g.cout; ++co) acc += wr[co] * go[co];
                            (*gin)[pix * g.cin + ci] += acc;
                        }
                    }
                }
            }
        }
}

template <class S>
std::vector<S> upsample2(const std::vector<S>& in, std::size_t h, std::size_t w, std::size_t c,
                         std::size_t f = 2) {
    std::vector<S> out(h * f * w * f * c);
    for (std::size_t y = 0; y < h * f; ++y)
        for (std::size_t x = 0; x < w * f; ++x) {
            const S* src = in.data() + ((y / f) * w + x / f) * c;
            std::copy(src, src + c, out.data() + (y * w * f + x) * c);
        }
    return out;
}

template <class S>
std::vector<S> upsample2_backward(const std::vector<S>& gout, std::size_t h, std::size_t w, std::size_t c) {
    std::vector<S> gin(h * w * c, S(0));
    for (std::size_t y = 0; y < h * 2; ++y)
        for (std::size_t x = 0; x < w * 2; ++x) {
            const S* src = gout.data() + (y * w * 2 + x) * c;
            S* dst = gin.data() + ((y / 2) * w + x / 2) * c;
            for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
        }
    return gin;
}

template <class S>
std::vector<S> concat_channels(const std::vector<S>& a, std::size_t ca, const std::vector<S>& b,
                               std::size_t cb, std::size_t pixels) {
    std::vector<S> out(pixels * (ca + cb));
    for (std::size_t p = 0; p < pixels; ++p) {
        std::copy_n(a.data() + p * ca, ca, out.data() + p * (ca + cb));
        std::copy_n(b.data() + p * cb, cb, out.data() + p * (ca + cb) + ca);
    }
    return out;
}

template <class S>
void split_channels(const std::vector<S>& g, std::size_t ca, std::size_t cb, std::size_t pixels,
                    std::vector<S>& ga, std::vector<S>& gb_accum) {
    ga.assign(pixels * ca, S(0));
    for (std::size_t p = 0; p < pixels; ++p) {
        std::copy_n(g.data() + p * (ca + cb), ca, ga.data() + p * ca);
        for (std::size_t k = 0; k < cb; ++k) gb_accum[p * cb + k] += g[p * (ca + cb) + ca + k];
    }
}

template <class S>
std::vector<S> to_scalar(const Field& f) {
    std::vector<S> v(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) v[i] = static_cast<S>(f[i]);
    return v;
}

template <class S>
Field to_field(Shape s, const std::vector<S>& v) {
    std::vector<double> d(v.begin(), v.end());
    return Field(s.width, s.height, std::move(d));
}

}  // namespace detail

template <class Scalar>
ForwardResult<Scalar> forward(const NetParams<Scalar>& params, const Field& g, const DropoutState& drop) {
    using S = Scalar;
    const ArchSpec& a = params.arch;
    if (g.shape() != a.input)
        throw ShapeError("network expects input " + to_string(a.input) + ", got " + to_string(g.shape()));
    if (drop.enabled && !(drop.rate >= 0.0 && drop.rate < 1.0))
        throw ContractError("dropout rate must be in [0,1)");

    ForwardResult<S> res;
    Tape<S>& t = res.tape;
    t.kind = a.kind;
    t.param_count = params.size();
    t.input = a.input;

    if (a.kind == ArchKind::Mlp) {
        std::vector<S> x = detail::to_scalar<S>(g);
        const std::size_t n_layers = a.hidden.size() + 1;
        t.pre.resize(a.hidden.size());
        t.masks.resize(a.hidden.size());
        for (std::size_t l = 0; l < n_layers; ++l) {
            t.layer_inputs.push_back(x);
            x = detail::dense_forward<S>(params.slot(2 * l), params.slot(2 * l + 1), x);
            if (l + 1 < n_layers) detail::relu_dropout(x, t.pre[l], t.masks[l], drop, l);
        }
        res.output = detail::to_field(a.output, x);
        return res;
    }

    const auto layers = detail::conv_ed_layers(a);
    const std::size_t d = a.depth;
    const std::size_t f = a.upsample_factor();
    std::vector<S> x = detail::to_scalar<S>(g);
    if (f > 1) x = detail::upsample2(x, a.input.height, a.input.width, 1, f);
    std::size_t H = a.output.height, W = a.output.width;

    t.pre.resize(2 * d + 1);
    t.masks.resize(2 * d + 1);
    std::size_t li = 0, site = 0;
    auto conv = [&](const std::vector<S>& in, std::size_t h, std::size_t w) {
        const auto& c = layers[li];
        detail::ConvGeom geom{h, w, c.cin, c.cout, c.k, c.stride};
        t.layer_inputs.push_back(in);
        auto out = detail::conv_forward<S>(geom, params.slot(2 * li), params.slot(2 * li + 1), in);
        ++li;
        return out;
    };

    std::vector<std::vector<S>> enc(d + 1);
    enc[0] = conv(x, H, W);
    detail::relu_dropout(enc[0], t.pre[site], t.masks[site], drop, site);
    ++site;
    for (std::size_t l = 1; l <= d; ++l) {
        enc[l] = conv(enc[l - 1], H >> (l - 1), W >> (l - 1));
        detail::relu_dropout(enc[l], t.pre[site], t.masks[site], drop, site);
        ++site;
    }
    std::vector<S> u = enc[d];
    for (std::size_t l = d; l >= 1; --l) {
        const std::size_t h = H >> l, w = W >> l;
        const std::size_t cl = a.base_channels << l, cprev = a.base_channels << (l - 1);
        auto up = detail::upsample2(u, h, w, cl);
        auto cat = detail::concat_channels(up, cl, enc[l - 1], cprev, 4 * h * w);
        u = conv(cat, 2 * h, 2 * w);
        detail::relu_dropout(u, t.pre[site], t.masks[site], drop, site);
        ++site;
    }
    auto y = conv(u, H, W);
    res.output = detail::to_field(a.output, y);
    return res;
}

// Vector-Jacobian product: grad += d<f_nn, grad_out>/dw.
template <class Scalar>
void backward_accumulate(const NetParams<Scalar>& params, const Tape<Scalar>& tape, const Field& grad_out,
                         std::span<Scalar> grad) {
    using S = Scalar;
    const ArchSpec& a = params.arch;
    if (tape.kind != a.kind || tape.param_count != params.size() || tape.input != a.input ||
        tape.layer_inputs.empty())
        throw ContractError("backward: tape does not match these parameters (stale tape)");
    if (grad_out.shape() != a.output)
        throw ShapeError("backward: output gradient shape " + to_string(grad_out.shape()) +
                         " does not match network output " + to_string(a.output));
    if (grad.size() != params.size()) throw ShapeError("backward: gradient buffer has wrong length");

    std::vector<S> gy = detail::to_scalar<S>(grad_out);
    S* gbase = grad.data();

    if (a.kind == ArchKind::Mlp) {
        const std::size_t n_layers = a.hidden.size() + 1;
        if (tape.layer_inputs.size() != n_layers) throw ContractError("backward: stale tape");
        for (std::size_t l = n_layers; l-- > 0;) {
            const auto& ws = params.layout[2 * l];
            const auto& bs = params.layout[2 * l + 1];
            std::vector<S> gx;
            detail::dense_backward<S>(params.slot(2 * l), tape.layer_inputs[l], gy, gbase + ws.offset,
                                      gbase + bs.offset, l > 0 ? &gx : nullptr);
            if (l == 0) break;
            detail::relu_dropout_backward(gx, tape.pre[l - 1], tape.masks[l - 1]);
            gy = std::move(gx);
        }
        return;
    }

    const auto layers = detail::conv_ed_layers(a);
    const std::size_t d = a.depth;
    const std::size_t H = a.output.height, W = a.output.width;
    if (tape.layer_inputs.size() != layers.size()) throw ContractError("backward: stale tape");

    auto conv_back = [&](std::size_t li, const std::vector<S>& gout, std::size_t h, std::size_t w,
                         std::vector<S>* gin) {
        const auto& c = layers[li];
        detail::ConvGeom geom{h, w, c.cin, c.cout, c.k, c.stride};
        detail::conv_backward<S>(geom, params.slot(2 * li), tape.layer_inputs[li], gout,
                                 gbase + params.layout[2 * li].offset,
                                 gbase + params.layout[2 * li + 1].offset, gin);
    };

    // Layer indices: 0 stem, 1..d encoders, d+1..2d decoders (levels d..1), 2d+1 head.
    std::vector<S> gu;
    conv_back(2 * d + 1, gy, H, W, &gu);

    std::vector<std::vector<S>> genc(d + 1);
    for (std::size_t l = 0; l <= d; ++l)
        genc[l].assign((H >> l) * (W >> l) * (a.base_channels << l), S(0));

    for (std::size_t l = 1; l <= d; ++l) {
        const std::size_t li = 2 * d + 1 - l;  // decoder for level l
        const std::size_t site = li;
        detail::relu_dropout_backward(gu, tape.pre[site], tape.masks[site]);
        const std::size_t h = H >> l, w = W >> l;
        const std::size_t cl = a.base_channels << l, cprev = a.base_channels << (l - 1);
        std::vector<S> gcat;
        conv_back(li, gu, 2 * h, 2 * w, &gcat);
        std::vector<S> gup;
        detail::split_channels(gcat, cl, cprev, 4 * h * w, gup, genc[l - 1]);
        auto gprev = detail::upsample2_backward(gup, h, w, cl);
        if (l == d) {
            for (std::size_t i = 0; i < gprev.size(); ++i) genc[d][i] += gprev[i];
        } else {
            gu = std::move(gprev);
        }
    }

    for (std::size_t l = d; l >= 1; --l) {
        detail::relu_dropout_backward(genc[l], tape.pre[l], tape.masks[l]);
        std::vector<S> gin;
        conv_back(l, genc[l], H >> (l - 1), W >> (l - 1), &gin);
        for (std::size_t i = 0; i < gin.size(); ++i) genc[l - 1][i] += gin[i];
    }
    detail::relu_dropout_backward(genc[0], tape.pre[0], tape.masks[0]);
    conv_back(0, genc[0], H, W, nullptr);
}

template <class Scalar>
std::vector<Scalar> backward(const NetParams<Scalar>& params, const Tape<Scalar>& tape, const Field& grad_out) {
    std::vector<Scalar> grad(params.size(), Scalar(0));
    backward_accumulate<Scalar>(params, tape, grad_out, grad);
    return grad;
}

// Deterministic forward pass (dropout off).
template <class Scalar>
Field predict(const NetParams<Scalar>& params, const Field& g) {
    return forward(params, g, DropoutState{}).output;
}

}  // namespace bpinn
