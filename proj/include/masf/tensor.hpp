#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "masf/errors.hpp"
#include "masf/rng.hpp"

namespace masf {

// Dense 4-D array in row-major (N, C, H, W) order. Copies share the
// underlying buffer; kernels always allocate fresh outputs, so shared
// buffers are never written through two handles.
template <class T>
class Tensor4 {
public:
    Tensor4() : dims_{0, 0, 0, 0} {}

    Tensor4(int n, int c, int h, int w) : dims_{n, c, h, w} {
        if (n < 1 || c < 1 || h < 1 || w < 1) {
            throw ConfigError("tensor dimensions must all be >= 1, got " + shape_str());
        }
        buf_ = std::make_shared<std::vector<T>>(static_cast<size_t>(numel()), T(0));
    }

    static Tensor4 scalar(T v) {
        Tensor4 t(1, 1, 1, 1);
        t.data()[0] = v;
        return t;
    }

    static Tensor4 full(int n, int c, int h, int w, T v) {
        Tensor4 t(n, c, h, w);
        std::fill(t.data(), t.data() + t.numel(), v);
        return t;
    }

    static Tensor4 uniform(int n, int c, int h, int w, SplitMix64& rng, T lo = T(-1), T hi = T(1)) {
        Tensor4 t(n, c, h, w);
        T* p = t.data();
        for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    int n() const { return dims_[0]; }
    int c() const { return dims_[1]; }
    int h() const { return dims_[2]; }
    int w() const { return dims_[3]; }
    const std::array<int, 4>& dims() const { return dims_; }

    int64_t numel() const {
        return static_cast<int64_t>(dims_[0]) * dims_[1] * dims_[2] * dims_[3];
    }

    bool empty() const { return !buf_; }

    T* data() { return buf_->data(); }
    const T* data() const { return buf_->data(); }

    T& at(int n, int c, int h, int w) { return (*buf_)[index(n, c, h, w)]; }
    const T& at(int n, int c, int h, int w) const { return (*buf_)[index(n, c, h, w)]; }

    int64_t index(int n, int c, int h, int w) const {
        return ((static_cast<int64_t>(n) * dims_[1] + c) * dims_[2] + h) * dims_[3] + w;
    }

    bool same_shape(const Tensor4& o) const { return dims_ == o.dims_; }

    // Shares the buffer; element count must be unchanged.
    Tensor4 reshaped(int n, int c, int h, int w) const {
        Tensor4 r;
        r.dims_ = {n, c, h, w};
        if (r.numel() != numel()) {
            throw ConfigError("reshape " + shape_str() + " -> " + r.shape_str() +
                              " changes element count");
        }
        r.buf_ = buf_;
        return r;
    }

    Tensor4 clone() const {
        Tensor4 r;
        r.dims_ = dims_;
        r.buf_ = std::make_shared<std::vector<T>>(*buf_);
        return r;
    }

    void fill(T v) { std::fill(data(), data() + numel(), v); }

    template <class U>
    Tensor4<U> cast() const {
        Tensor4<U> r(dims_[0], dims_[1], dims_[2], dims_[3]);
        const T* s = data();
        U* d = r.data();
        for (int64_t i = 0; i < numel(); ++i) d[i] = static_cast<U>(s[i]);
        return r;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(" << dims_[0] << "," << dims_[1] << "," << dims_[2] << "," << dims_[3] << ")";
        return os.str();
    }

private:
    template <class U>
    friend class Tensor4;

    std::array<int, 4> dims_;
    std::shared_ptr<std::vector<T>> buf_;
};

using Tensor = Tensor4<float>;

// --- flat binary tensor format -------------------------------------------
// 16-byte header: magic "MSFT", version u32, dtype u32 (1 = f32), reserved
// u32 (zero); then four little-endian u64 dims; then the raw little-endian
// f32 payload. Used by golden files and checkpoints.

namespace detail {
inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}
inline uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return v;
}
inline uint32_t f32_bits(float f) {
    uint32_t u;
    std::memcpy(&u, &f, 4);
    return u;
}
inline float bits_f32(uint32_t u) {
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}
}  // namespace detail

constexpr uint32_t kTensorFormatVersion = 1;
constexpr uint32_t kDtypeF32 = 1;

inline void write_tensor(std::ostream& os, const Tensor& t) {
    os.write("MSFT", 4);
    detail::put_u32(os, kTensorFormatVersion);
    detail::put_u32(os, kDtypeF32);
    detail::put_u32(os, 0);
    for (int d : t.dims()) detail::put_u64(os, static_cast<uint64_t>(d));
    const float* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) detail::put_u32(os, detail::f32_bits(p[i]));
}

inline Tensor read_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MSFT", 4) != 0) {
        throw DataError("tensor stream: bad magic (expected MSFT)");
    }
    uint32_t version = detail::get_u32(is);
    if (version != kTensorFormatVersion) {
        throw DataError("tensor stream: unsupported version " + std::to_string(version));
    }
    uint32_t dtype = detail::get_u32(is);
    if (dtype != kDtypeF32) {
        throw DataError("tensor stream: unsupported dtype " + std::to_string(dtype));
    }
    detail::get_u32(is);  // reserved
    uint64_t d[4];
    for (auto& v : d) v = detail::get_u64(is);
    for (auto v : d) {
        if (v < 1 || v > (1u << 30)) throw DataError("tensor stream: implausible dim");
    }
    Tensor t(static_cast<int>(d[0]), static_cast<int>(d[1]), static_cast<int>(d[2]),
             static_cast<int>(d[3]));
    float* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = detail::bits_f32(detail::get_u32(is));
    if (!is) throw DataError("tensor stream: truncated payload");
    return t;
}

// Serialized byte size of a tensor record.
inline uint64_t tensor_record_size(const Tensor& t) {
    return 16 + 32 + 4 * static_cast<uint64_t>(t.numel());
}

// --- convolution geometry --------------------------------------------------

struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel_h = 1;
    int kernel_w = 1;
    int stride = 1;
    int pad_h = 0;
    int pad_w = 0;
    int groups = 1;
    bool has_bias = true;

    static ConvSpec make(int cin, int cout, int kh, int kw, int stride, int pad_h, int pad_w,
                         int groups = 1, bool bias = true) {
        ConvSpec s{cin, cout, kh, kw, stride, pad_h, pad_w, groups, bias};
        s.validate();
        return s;
    }

    // Square kernel, "same" padding at stride 1.
    static ConvSpec same(int cin, int cout, int k, int stride = 1, int groups = 1,
                         bool bias = true) {
        return make(cin, cout, k, k, stride, k / 2, k / 2, groups, bias);
    }

    static ConvSpec depthwise(int channels, int kh, int kw, bool bias = true) {
        return make(channels, channels, kh, kw, 1, kh / 2, kw / 2, channels, bias);
    }

    void validate() const {
        if (in_channels < 1 || out_channels < 1 || kernel_h < 1 || kernel_w < 1 || stride < 1 ||
            pad_h < 0 || pad_w < 0 || groups < 1) {
            throw ConfigError("conv spec has non-positive geometry");
        }
        if (in_channels % groups != 0 || out_channels % groups != 0) {
            throw ConfigError("conv groups=" + std::to_string(groups) +
                              " must divide in_channels=" + std::to_string(in_channels) +
                              " and out_channels=" + std::to_string(out_channels));
        }
    }

    int out_h(int in_h) const { return (in_h + 2 * pad_h - kernel_h) / stride + 1; }
    int out_w(int in_w) const { return (in_w + 2 * pad_w - kernel_w) / stride + 1; }

    int64_t weight_count() const {
        return static_cast<int64_t>(out_channels) * (in_channels / groups) * kernel_h * kernel_w;
    }
};

}  // namespace masf
