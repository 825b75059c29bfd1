#pragma once

// On-disk formats. All multi-byte values are little-endian.
//
//   BPIF field       "BPIF" | u32 width | u32 height | f32[width*height] row-major
//   BPNN checkpoint  "BPNN" | u16 version | u32 arch_len | arch text (UTF-8)
//                    | u64 param_count | f32[param_count] | u32 CRC-32 of all preceding bytes
//   PGM              binary P5, 8-bit, min-max scaled (constant fields map to 0)
//   CSV train log    epoch,j_nn,j_pi,j_pr,total,val_total,val_psnr,val_ssim,wall_ms

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bpinn/field.hpp"
#include "bpinn/neural.hpp"
#include "bpinn/training.hpp"

namespace bpinn {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

inline void put_u16(Bytes& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(Bytes& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(Bytes& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_f32(Bytes& b, float f) { put_u32(b, std::bit_cast<std::uint32_t>(f)); }

class Reader {
public:
    Reader(const Bytes& b, std::string what) : b_(b), what_(std::move(what)) {}

    [[nodiscard]] std::size_t remaining() const { return b_.size() - pos_; }
    [[nodiscard]] std::size_t position() const { return pos_; }

    void need(std::size_t n) const {
        if (remaining() < n) throw FormatError(what_ + ": truncated data");
    }
    std::uint16_t u16() {
        need(2);
        const auto v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{b_[pos_ + i]} << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{b_[pos_ + i]} << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string text(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }

private:
    const Bytes& b_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
    uLong c = crc32(0L, Z_NULL, 0);
    c = crc32(c, data, static_cast<uInt>(n));
    return static_cast<std::uint32_t>(c);
}

inline Bytes read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "' for reading");
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Write to a sibling temporary, then rename over the destination.
inline void write_bytes_atomic(const std::filesystem::path& path, std::string_view data) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot open '" + tmp.string() + "' for writing");
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!out) throw FormatError("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

inline void write_bytes_atomic(const std::filesystem::path& path, const Bytes& data) {
    write_bytes_atomic(path, std::string_view(reinterpret_cast<const char*>(data.data()), data.size()));
}

// ---- BPIF fields ----------------------------------------------------------

inline Bytes encode_field(const Field& f) {
    require_finite(f, "field_write");
    Bytes b;
    b.reserve(12 + 4 * f.size());
    for (char c : std::string_view("BPIF")) b.push_back(static_cast<std::uint8_t>(c));
    detail::put_u32(b, static_cast<std::uint32_t>(f.width()));
    detail::put_u32(b, static_cast<std::uint32_t>(f.height()));
    for (double v : f.values()) detail::put_f32(b, static_cast<float>(v));
    return b;
}

inline Field decode_field(const Bytes& b) {
    detail::Reader r(b, "BPIF field");
    if (r.text(4) != "BPIF") throw FormatError("BPIF field: bad magic");
    const std::uint64_t w = r.u32();
    const std::uint64_t h = r.u32();
    if (w == 0 || h == 0) throw FormatError("BPIF field: zero dimension");
    if (w * h > (std::uint64_t{1} << 31)) throw FormatError("BPIF field: dimensions overflow");
    if (r.remaining() != 4 * w * h)
        throw FormatError("BPIF field: expected " + std::to_string(4 * w * h) + " payload bytes, found " +
                          std::to_string(r.remaining()) + " (truncated or oversized)");
    std::vector<double> v(static_cast<std::size_t>(w * h));
    for (auto& x : v) {
        x = r.f32();
        if (!std::isfinite(x)) throw FormatError("BPIF field: non-finite value");
    }
    return Field(static_cast<std::size_t>(w), static_cast<std::size_t>(h), std::move(v));
}

inline void field_write(const std::filesystem::path& path, const Field& f) {
    write_bytes_atomic(path, encode_field(f));
}

inline Field field_read(const std::filesystem::path& path) { return decode_field(read_bytes(path)); }

inline Bytes encode_pgm(const Field& f) {
    const auto [lo, hi] = min_max(f);
    std::string header = "P5\n" + std::to_string(f.width()) + " " + std::to_string(f.height()) + "\n255\n";
    Bytes b(header.begin(), header.end());
    for (double v : f.values()) {
        const double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
        b.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0)));
    }
    return b;
}

inline void pgm_write(const std::filesystem::path& path, const Field& f) {
    write_bytes_atomic(path, encode_pgm(f));
}

// ---- BPNN checkpoints -----------------------------------------------------

template <class S>
Bytes encode_checkpoint(const NetParams<S>& p) {
    Bytes b;
    for (char c : std::string_view("BPNN")) b.push_back(static_cast<std::uint8_t>(c));
    detail::put_u16(b, kCheckpointVersion);
    const std::string arch = p.arch.canonical();
    detail::put_u32(b, static_cast<std::uint32_t>(arch.size()));
    b.insert(b.end(), arch.begin(), arch.end());
    detail::put_u64(b, p.values.size());
    for (S v : p.values) detail::put_f32(b, static_cast<float>(v));
    detail::put_u32(b, crc32_of(b.data(), b.size()));
    return b;
}

inline NetParams<float> decode_checkpoint(const Bytes& b) {
    detail::Reader r(b, "BPNN checkpoint");
    if (b.size() < 4 || r.text(4) != "BPNN") throw FormatError("checkpoint: bad magic");
    const auto version = r.u16();
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: version mismatch (file " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion) + ")");
    const auto arch_len = r.u32();
    if (arch_len > r.remaining()) throw FormatError("checkpoint: corrupt header (architecture length)");
    const std::string arch_text = r.text(arch_len);
    const auto count = r.u64();
    if (r.remaining() < 4 || (r.remaining() - 4) / 4 != count || (r.remaining() - 4) % 4 != 0)
        throw FormatError("checkpoint: parameter count mismatch (header declares " + std::to_string(count) +
                          ", file holds " + std::to_string(r.remaining() >= 4 ? (r.remaining() - 4) / 4 : 0) + ")");
    const std::size_t body = b.size() - 4;
    const std::uint32_t stored = static_cast<std::uint32_t>(b[body]) | (static_cast<std::uint32_t>(b[body + 1]) << 8) |
                                 (static_cast<std::uint32_t>(b[body + 2]) << 16) |
                                 (static_cast<std::uint32_t>(b[body + 3]) << 24);
    if (stored != crc32_of(b.data(), body)) throw FormatError("checkpoint: integrity check failed (CRC-32 mismatch)");

    ArchSpec arch;
    try {
        arch = ArchSpec::parse(arch_text);
    } catch (const ContractError& e) {
        throw FormatError(std::string("checkpoint: corrupt architecture block: ") + e.what());
    }
    NetParams<float> p{arch, build_layout(arch), {}};
    if (param_count(arch) != count)
        throw FormatError("checkpoint: parameter count mismatch (architecture implies " +
                          std::to_string(param_count(arch)) + ", header declares " + std::to_string(count) + ")");
    p.values.resize(count);
    for (auto& v : p.values) {
        v = r.f32();
        if (!std::isfinite(v)) throw FormatError("checkpoint: non-finite parameter");
    }
    return p;
}

template <class S>
void checkpoint_write(const std::filesystem::path& path, const NetParams<S>& p) {
    write_bytes_atomic(path, encode_checkpoint(p));
}

inline NetParams<float> checkpoint_read(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw FormatError("checkpoint not found: '" + path.string() + "'");
    return decode_checkpoint(read_bytes(path));
}

// ---- CSV train log --------------------------------------------------------

inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string train_log_csv(const TrainLog& log) {
    std::ostringstream os;
    os << "epoch,j_nn,j_pi,j_pr,total,val_total,val_psnr,val_ssim,wall_ms\n";
    for (const auto& r : log.rows) {
        os << r.epoch << ',' << format_number(r.train.j_nn) << ',' << format_number(r.train.j_pi) << ','
           << format_number(r.train.j_pr) << ',' << format_number(r.train.total) << ','
           << format_number(r.val.total) << ',' << format_number(r.val_psnr) << ','
           << format_number(r.val_ssim) << ',' << format_number(r.wall_ms) << '\n';
    }
    return os.str();
}

inline void train_log_write(const std::filesystem::path& path, const TrainLog& log) {
    write_bytes_atomic(path, train_log_csv(log));
}

}  // namespace bpinn
