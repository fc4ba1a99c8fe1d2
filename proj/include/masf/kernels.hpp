#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "masf/tensor.hpp"
#include "masf/threadpool.hpp"

// Forward kernels and their reverse-mode companions. Every kernel is a pure
// function over its inputs; backward kernels accumulate (+=) into the
// destination gradients so one buffer can collect from several consumers.

namespace masf {

constexpr double kNormEpsilon = 1e-5;

namespace detail {

// Row-blocked kernels: four output rows share each pass over B, which keeps
// B in cache and gives the vectorizer independent accumulator streams.

template <class T>
void gemm_nn_rows(int64_t m0, int64_t m1, int K, int N, const T* __restrict A,
                  const T* __restrict B, T* __restrict C, bool accumulate) {
    int64_t m = m0;
    for (; m + 4 <= m1; m += 4) {
        T* __restrict c0 = C + m * N;
        T* __restrict c1 = c0 + N;
        T* __restrict c2 = c1 + N;
        T* __restrict c3 = c2 + N;
        if (!accumulate) std::fill(c0, c0 + 4 * static_cast<int64_t>(N), T(0));
        const T* a0 = A + m * K;
        const T* a1 = a0 + K;
        const T* a2 = a1 + K;
        const T* a3 = a2 + K;
        for (int k = 0; k < K; ++k) {
            const T v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
            const T* __restrict b = B + static_cast<int64_t>(k) * N;
            for (int n = 0; n < N; ++n) {
                const T bv = b[n];
                c0[n] += v0 * bv;
                c1[n] += v1 * bv;
                c2[n] += v2 * bv;
                c3[n] += v3 * bv;
            }
        }
    }
    for (; m < m1; ++m) {
        T* __restrict crow = C + m * N;
        if (!accumulate) std::fill(crow, crow + N, T(0));
        const T* arow = A + m * K;
        for (int k = 0; k < K; ++k) {
            const T a = arow[k];
            const T* __restrict b = B + static_cast<int64_t>(k) * N;
            for (int n = 0; n < N; ++n) crow[n] += a * b[n];
        }
    }
}

// C(M x N) (+)= A(M x K) * B(K x N)
template <class T>
void gemm_nn(int M, int K, int N, const T* A, const T* B, T* C, bool accumulate,
             bool parallel = true) {
    if (!parallel) {
        gemm_nn_rows(0, M, K, N, A, B, C, accumulate);
        return;
    }
    parallel_chunks(
        M, [&](int64_t m0, int64_t m1) { gemm_nn_rows(m0, m1, K, N, A, B, C, accumulate); },
        2ll * K * N);
}

// Eight independent partial sums so the reduction vectorizes without
// reassociation flags; the summation order is fixed, hence deterministic.
template <class T>
T dot8(const T* __restrict a, const T* __restrict b, int K) {
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
    int k = 0;
    for (; k + 8 <= K; k += 8) {
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
        s4 += a[k + 4] * b[k + 4];
        s5 += a[k + 5] * b[k + 5];
        s6 += a[k + 6] * b[k + 6];
        s7 += a[k + 7] * b[k + 7];
    }
    T acc = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
    for (; k < K; ++k) acc += a[k] * b[k];
    return acc;
}

template <class T>
void gemm_nt_rows(int64_t m0, int64_t m1, int K, int N, const T* __restrict A,
                  const T* __restrict B, T* __restrict C, bool accumulate) {
    for (int64_t m = m0; m < m1; ++m) {
        const T* arow = A + m * K;
        T* crow = C + m * N;
        for (int n = 0; n < N; ++n) {
            const T acc = dot8(arow, B + static_cast<int64_t>(n) * K, K);
            crow[n] = accumulate ? crow[n] + acc : acc;
        }
    }
}

// C(M x N) (+)= A(M x K) * B(N x K)^T
template <class T>
void gemm_nt(int M, int K, int N, const T* A, const T* B, T* C, bool accumulate,
             bool parallel = true) {
    if (!parallel) {
        gemm_nt_rows(0, M, K, N, A, B, C, accumulate);
        return;
    }
    parallel_chunks(
        M, [&](int64_t m0, int64_t m1) { gemm_nt_rows(m0, m1, K, N, A, B, C, accumulate); },
        2ll * K * N);
}

template <class T>
void gemm_tn_rows(int64_t m0, int64_t m1, int M, int K, int N, const T* __restrict A,
                  const T* __restrict B, T* __restrict C, bool accumulate) {
    int64_t m = m0;
    for (; m + 4 <= m1; m += 4) {
        T* __restrict c0 = C + m * N;
        T* __restrict c1 = c0 + N;
        T* __restrict c2 = c1 + N;
        T* __restrict c3 = c2 + N;
        if (!accumulate) std::fill(c0, c0 + 4 * static_cast<int64_t>(N), T(0));
        for (int k = 0; k < K; ++k) {
            const T* acol = A + static_cast<int64_t>(k) * M + m;
            const T v0 = acol[0], v1 = acol[1], v2 = acol[2], v3 = acol[3];
            const T* __restrict b = B + static_cast<int64_t>(k) * N;
            for (int n = 0; n < N; ++n) {
                const T bv = b[n];
                c0[n] += v0 * bv;
                c1[n] += v1 * bv;
                c2[n] += v2 * bv;
                c3[n] += v3 * bv;
            }
        }
    }
    for (; m < m1; ++m) {
        T* __restrict crow = C + m * N;
        if (!accumulate) std::fill(crow, crow + N, T(0));
        for (int k = 0; k < K; ++k) {
            const T a = A[static_cast<int64_t>(k) * M + m];
            const T* __restrict b = B + static_cast<int64_t>(k) * N;
            for (int n = 0; n < N; ++n) crow[n] += a * b[n];
        }
    }
}

// C(M x N) (+)= A(K x M)^T * B(K x N)
template <class T>
void gemm_tn(int M, int K, int N, const T* A, const T* B, T* C, bool accumulate,
             bool parallel = true) {
    if (!parallel) {
        gemm_tn_rows(0, M, M, K, N, A, B, C, accumulate);
        return;
    }
    parallel_chunks(
        M, [&](int64_t m0, int64_t m1) { gemm_tn_rows(m0, m1, M, K, N, A, B, C, accumulate); },
        2ll * K * N);
}

// Output index range [o_begin, o_end) for which a kernel tap stays inside
// the input: 0 <= o*stride - pad + k < in_extent.
inline void tap_range(int k, int pad, int stride, int in_extent, int out_extent, int& o_begin,
                      int& o_end) {
    const int lo = pad - k;
    o_begin = lo <= 0 ? 0 : (lo + stride - 1) / stride;
    const int hi = in_extent - 1 + pad - k;
    o_end = hi < 0 ? 0 : std::min(out_extent, hi / stride + 1);
    if (o_begin > o_end) o_end = o_begin;
}

// Unpacks one group of one image into a (Cg*KH*KW) x (OH*OW) matrix.
template <class T>
void im2col(const T* x, int C, int H, int W, const ConvSpec& s, int out_h, int out_w, T* col) {
    const int P = out_h * out_w;
    for (int ci = 0; ci < C; ++ci) {
        for (int kh = 0; kh < s.kernel_h; ++kh) {
            int oh0, oh1;
            tap_range(kh, s.pad_h, s.stride, H, out_h, oh0, oh1);
            for (int kw = 0; kw < s.kernel_w; ++kw) {
                int ow0, ow1;
                tap_range(kw, s.pad_w, s.stride, W, out_w, ow0, ow1);
                T* __restrict dst = col + (static_cast<int64_t>(ci) * s.kernel_h * s.kernel_w +
                                           kh * s.kernel_w + kw) *
                                              P;
                std::fill(dst, dst + static_cast<int64_t>(oh0) * out_w, T(0));
                for (int oh = oh0; oh < oh1; ++oh) {
                    const int ih = oh * s.stride - s.pad_h + kh;
                    const T* __restrict src = x + (static_cast<int64_t>(ci) * H + ih) * W +
                                              (ow0 * s.stride - s.pad_w + kw);
                    T* __restrict row = dst + static_cast<int64_t>(oh) * out_w;
                    std::fill(row, row + ow0, T(0));
                    if (s.stride == 1) {
                        std::memcpy(row + ow0, src, sizeof(T) * (ow1 - ow0));
                    } else {
                        for (int i = 0; i < ow1 - ow0; ++i) row[ow0 + i] = src[i * s.stride];
                    }
                    std::fill(row + ow1, row + out_w, T(0));
                }
                std::fill(dst + static_cast<int64_t>(oh1) * out_w, dst + P, T(0));
            }
        }
    }
}

// Scatter-adds a column matrix back into the input gradient.
template <class T>
void col2im_add(const T* col, int C, int H, int W, const ConvSpec& s, int out_h, int out_w,
                T* dx) {
    const int P = out_h * out_w;
    for (int ci = 0; ci < C; ++ci) {
        for (int kh = 0; kh < s.kernel_h; ++kh) {
            int oh0, oh1;
            tap_range(kh, s.pad_h, s.stride, H, out_h, oh0, oh1);
            for (int kw = 0; kw < s.kernel_w; ++kw) {
                int ow0, ow1;
                tap_range(kw, s.pad_w, s.stride, W, out_w, ow0, ow1);
                const T* src = col + (static_cast<int64_t>(ci) * s.kernel_h * s.kernel_w +
                                      kh * s.kernel_w + kw) *
                                         P;
                for (int oh = oh0; oh < oh1; ++oh) {
                    const int ih = oh * s.stride - s.pad_h + kh;
                    T* __restrict dst = dx + (static_cast<int64_t>(ci) * H + ih) * W +
                                        (ow0 * s.stride - s.pad_w + kw);
                    const T* __restrict row = src + static_cast<int64_t>(oh) * out_w + ow0;
                    if (s.stride == 1) {
                        for (int i = 0; i < ow1 - ow0; ++i) dst[i] += row[i];
                    } else {
                        for (int i = 0; i < ow1 - ow0; ++i) dst[i * s.stride] += row[i];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// --- conv2d -----------------------------------------------------------------

template <class T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>& bias,
                  const ConvSpec& s) {
    s.validate();
    if (x.c() != s.in_channels) {
        throw ConfigError("conv2d: input " + x.shape_str() + " has C=" + std::to_string(x.c()) +
                          " but spec expects in_channels=" + std::to_string(s.in_channels));
    }
    if (w.n() != s.out_channels || w.c() != s.in_channels / s.groups || w.h() != s.kernel_h ||
        w.w() != s.kernel_w) {
        throw ConfigError("conv2d: weight shape " + w.shape_str() + " does not match spec (" +
                          std::to_string(s.out_channels) + "," +
                          std::to_string(s.in_channels / s.groups) + "," +
                          std::to_string(s.kernel_h) + "," + std::to_string(s.kernel_w) + ")");
    }
    const int OH = s.out_h(x.h()), OW = s.out_w(x.w());
    if (OH < 1 || OW < 1) {
        throw ConfigError("conv2d: kernel does not fit input " + x.shape_str());
    }
    const int G = s.groups, Cg = s.in_channels / G, Og = s.out_channels / G;
    const int K = Cg * s.kernel_h * s.kernel_w, P = OH * OW;
    const bool depthwise = (G == s.in_channels && G == s.out_channels);
    const bool pointwise = (s.kernel_h == 1 && s.kernel_w == 1 && s.stride == 1 && s.pad_h == 0 &&
                            s.pad_w == 0);

    Tensor4<T> y(x.n(), s.out_channels, OH, OW);

    if (depthwise) {
        // One channel per group; per-tap stencil with branch-free rows.
        parallel_for(static_cast<int64_t>(x.n()) * G, [&](int64_t job) {
            const int n = static_cast<int>(job / G), c = static_cast<int>(job % G);
            const T* __restrict xs = x.data() + x.index(n, c, 0, 0);
            const T* ws = w.data() + w.index(c, 0, 0, 0);
            T* __restrict ys = y.data() + y.index(n, c, 0, 0);
            const T b = bias.empty() ? T(0) : bias.data()[c];
            std::fill(ys, ys + static_cast<int64_t>(OH) * OW, b);
            for (int kh = 0; kh < s.kernel_h; ++kh) {
                int oh0, oh1;
                detail::tap_range(kh, s.pad_h, s.stride, x.h(), OH, oh0, oh1);
                for (int kw = 0; kw < s.kernel_w; ++kw) {
                    int ow0, ow1;
                    detail::tap_range(kw, s.pad_w, s.stride, x.w(), OW, ow0, ow1);
                    const T wv = ws[kh * s.kernel_w + kw];
                    const int len = ow1 - ow0;
                    for (int oh = oh0; oh < oh1; ++oh) {
                        const int ih = oh * s.stride - s.pad_h + kh;
                        const T* __restrict xrow =
                            xs + static_cast<int64_t>(ih) * x.w() + (ow0 * s.stride - s.pad_w + kw);
                        T* __restrict yrow = ys + static_cast<int64_t>(oh) * OW + ow0;
                        if (s.stride == 1) {
                            for (int i = 0; i < len; ++i) yrow[i] += wv * xrow[i];
                        } else {
                            for (int i = 0; i < len; ++i) yrow[i] += wv * xrow[i * s.stride];
                        }
                    }
                }
            }
        }, 2ll * s.kernel_h * s.kernel_w * OH * OW);
    } else if (x.n() > 1) {
        // Batch: one job per image, serial math inside each.
        parallel_for(x.n(), [&](int64_t n) {
            std::vector<T> col;
            if (!pointwise) col.resize(static_cast<size_t>(K) * P);
            for (int g = 0; g < G; ++g) {
                const T* xg = x.data() + x.index(static_cast<int>(n), g * Cg, 0, 0);
                const T* colp = xg;
                if (!pointwise) {
                    detail::im2col(xg, Cg, x.h(), x.w(), s, OH, OW, col.data());
                    colp = col.data();
                }
                T* yg = y.data() + y.index(static_cast<int>(n), g * Og, 0, 0);
                detail::gemm_nn(Og, K, P, w.data() + w.index(g * Og, 0, 0, 0), colp, yg, false,
                                /*parallel=*/false);
            }
            if (!bias.empty()) {
                T* ys = y.data() + y.index(static_cast<int>(n), 0, 0, 0);
                for (int c = 0; c < s.out_channels; ++c) {
                    const T b = bias.data()[c];
                    for (int p = 0; p < P; ++p) ys[static_cast<int64_t>(c) * P + p] += b;
                }
            }
        }, 2ll * s.out_channels * K * P);
    } else {
        std::vector<T> col;
        if (!pointwise) col.resize(static_cast<size_t>(K) * P);
        for (int g = 0; g < G; ++g) {
            const T* xg = x.data() + x.index(0, g * Cg, 0, 0);
            const T* colp = xg;
            if (!pointwise) {
                detail::im2col(xg, Cg, x.h(), x.w(), s, OH, OW, col.data());
                colp = col.data();
            }
            detail::gemm_nn(Og, K, P, w.data() + w.index(g * Og, 0, 0, 0), colp,
                            y.data() + y.index(0, g * Og, 0, 0), false);
        }
        if (!bias.empty()) {
            T* ys = y.data();
            for (int c = 0; c < s.out_channels; ++c) {
                const T b = bias.data()[c];
                for (int p = 0; p < P; ++p) ys[static_cast<int64_t>(c) * P + p] += b;
            }
        }
    }
    return y;
}

template <class T>
void conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& w, const ConvSpec& s,
                     const Tensor4<T>& dy, Tensor4<T>* dx, Tensor4<T>* dw, Tensor4<T>* db) {
    const int OH = s.out_h(x.h()), OW = s.out_w(x.w());
    const int G = s.groups, Cg = s.in_channels / G, Og = s.out_channels / G;
    const int K = Cg * s.kernel_h * s.kernel_w, P = OH * OW;
    const bool depthwise = (G == s.in_channels && G == s.out_channels);
    const bool pointwise = (s.kernel_h == 1 && s.kernel_w == 1 && s.stride == 1 && s.pad_h == 0 &&
                            s.pad_w == 0);

    if (db) {
        for (int c = 0; c < s.out_channels; ++c) {
            T acc = 0;
            for (int n = 0; n < x.n(); ++n) {
                const T* dys = dy.data() + dy.index(n, c, 0, 0);
                for (int p = 0; p < P; ++p) acc += dys[p];
            }
            db->data()[c] += acc;
        }
    }

    if (depthwise) {
        if (dw) {
            // Weight grads sum over the batch in index order.
            parallel_for(G, [&](int64_t c) {
                T* dws = dw->data() + dw->index(static_cast<int>(c), 0, 0, 0);
                for (int n = 0; n < x.n(); ++n) {
                    const T* __restrict xs = x.data() + x.index(n, static_cast<int>(c), 0, 0);
                    const T* __restrict dys = dy.data() + dy.index(n, static_cast<int>(c), 0, 0);
                    for (int kh = 0; kh < s.kernel_h; ++kh) {
                        int oh0, oh1;
                        detail::tap_range(kh, s.pad_h, s.stride, x.h(), OH, oh0, oh1);
                        for (int kw = 0; kw < s.kernel_w; ++kw) {
                            int ow0, ow1;
                            detail::tap_range(kw, s.pad_w, s.stride, x.w(), OW, ow0, ow1);
                            const int len = ow1 - ow0;
                            T acc = 0;
                            for (int oh = oh0; oh < oh1; ++oh) {
                                const int ih = oh * s.stride - s.pad_h + kh;
                                const T* xrow = xs + static_cast<int64_t>(ih) * x.w() +
                                                (ow0 * s.stride - s.pad_w + kw);
                                const T* dyrow = dys + static_cast<int64_t>(oh) * OW + ow0;
                                if (s.stride == 1) {
                                    acc += detail::dot8(dyrow, xrow, len);
                                } else {
                                    for (int i = 0; i < len; ++i) {
                                        acc += dyrow[i] * xrow[i * s.stride];
                                    }
                                }
                            }
                            dws[kh * s.kernel_w + kw] += acc;
                        }
                    }
                }
            }, 2ll * s.kernel_h * s.kernel_w * OH * OW * x.n());
        }
        if (dx) {
            parallel_for(static_cast<int64_t>(x.n()) * G, [&](int64_t job) {
                const int n = static_cast<int>(job / G), c = static_cast<int>(job % G);
                const T* ws = w.data() + w.index(c, 0, 0, 0);
                const T* __restrict dys = dy.data() + dy.index(n, c, 0, 0);
                T* __restrict dxs = dx->data() + dx->index(n, c, 0, 0);
                for (int kh = 0; kh < s.kernel_h; ++kh) {
                    int oh0, oh1;
                    detail::tap_range(kh, s.pad_h, s.stride, x.h(), OH, oh0, oh1);
                    for (int kw = 0; kw < s.kernel_w; ++kw) {
                        int ow0, ow1;
                        detail::tap_range(kw, s.pad_w, s.stride, x.w(), OW, ow0, ow1);
                        const T wv = ws[kh * s.kernel_w + kw];
                        const int len = ow1 - ow0;
                        for (int oh = oh0; oh < oh1; ++oh) {
                            const int ih = oh * s.stride - s.pad_h + kh;
                            T* __restrict dxrow = dxs + static_cast<int64_t>(ih) * x.w() +
                                                  (ow0 * s.stride - s.pad_w + kw);
                            const T* __restrict dyrow = dys + static_cast<int64_t>(oh) * OW + ow0;
                            if (s.stride == 1) {
                                for (int i = 0; i < len; ++i) dxrow[i] += wv * dyrow[i];
                            } else {
                                for (int i = 0; i < len; ++i) dxrow[i * s.stride] += wv * dyrow[i];
                            }
                        }
                    }
                }
            }, 2ll * s.kernel_h * s.kernel_w * OH * OW);
        }
        return;
    }

    if (dw) {
        // Weight gradients accumulate over the batch in index order so the
        // result does not depend on scheduling.
        std::vector<T> col;
        if (!pointwise) col.resize(static_cast<size_t>(K) * P);
        for (int n = 0; n < x.n(); ++n) {
            for (int g = 0; g < G; ++g) {
                const T* xg = x.data() + x.index(n, g * Cg, 0, 0);
                const T* dyg = dy.data() + dy.index(n, g * Og, 0, 0);
                const T* colp = xg;
                if (!pointwise) {
                    detail::im2col(xg, Cg, x.h(), x.w(), s, OH, OW, col.data());
                    colp = col.data();
                }
                detail::gemm_nt(Og, P, K, dyg, colp, dw->data() + dw->index(g * Og, 0, 0, 0),
                                true);
            }
        }
    }
    if (dx) {
        // Input gradients are independent per image.
        parallel_for(x.n(), [&](int64_t ni) {
            const int n = static_cast<int>(ni);
            std::vector<T> dcol;
            if (!pointwise) dcol.resize(static_cast<size_t>(K) * P);
            for (int g = 0; g < G; ++g) {
                const T* dyg = dy.data() + dy.index(n, g * Og, 0, 0);
                T* dxg = dx->data() + dx->index(n, g * Cg, 0, 0);
                if (pointwise) {
                    detail::gemm_tn(K, Og, P, w.data() + w.index(g * Og, 0, 0, 0), dyg, dxg, true,
                                    /*parallel=*/x.n() == 1);
                } else {
                    detail::gemm_tn(K, Og, P, w.data() + w.index(g * Og, 0, 0, 0), dyg,
                                    dcol.data(), false, /*parallel=*/x.n() == 1);
                    detail::col2im_add(dcol.data(), Cg, x.h(), x.w(), s, OH, OW, dxg);
                }
            }
        }, 2ll * s.out_channels * K * P);
    }
}

// --- pooling ----------------------------------------------------------------

enum class PoolKind { GlobalAvg, AvgAlongH, AvgAlongW, Stride2Max };

template <class T>
Tensor4<T> pool(const Tensor4<T>& x, PoolKind kind) {
    const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
    switch (kind) {
        case PoolKind::GlobalAvg: {
            Tensor4<T> y(N, C, 1, 1);
            parallel_for(static_cast<int64_t>(N) * C, [&](int64_t job) {
                const T* xs = x.data() + job * H * W;
                T acc = 0;
                for (int p = 0; p < H * W; ++p) acc += xs[p];
                y.data()[job] = acc / static_cast<T>(H * W);
            }, static_cast<int64_t>(H) * W);
            return y;
        }
        case PoolKind::AvgAlongH: {
            Tensor4<T> y(N, C, 1, W);
            parallel_for(static_cast<int64_t>(N) * C, [&](int64_t job) {
                const T* xs = x.data() + job * H * W;
                T* ys = y.data() + job * W;
                for (int w = 0; w < W; ++w) {
                    T acc = 0;
                    for (int h = 0; h < H; ++h) acc += xs[h * W + w];
                    ys[w] = acc / static_cast<T>(H);
                }
            }, static_cast<int64_t>(H) * W);
            return y;
        }
        case PoolKind::AvgAlongW: {
            Tensor4<T> y(N, C, H, 1);
            parallel_for(static_cast<int64_t>(N) * C, [&](int64_t job) {
                const T* xs = x.data() + job * H * W;
                T* ys = y.data() + job * H;
                for (int h = 0; h < H; ++h) {
                    T acc = 0;
                    for (int w = 0; w < W; ++w) acc += xs[h * W + w];
                    ys[h] = acc / static_cast<T>(W);
                }
            }, static_cast<int64_t>(H) * W);
            return y;
        }
        case PoolKind::Stride2Max: {
            if (H < 2 || W < 2) {
                throw ConfigError("stride2_max requires H and W >= 2, got " + x.shape_str());
            }
            const int OH = H / 2, OW = W / 2;
            Tensor4<T> y(N, C, OH, OW);
            parallel_for(static_cast<int64_t>(N) * C, [&](int64_t job) {
                const T* xs = x.data() + job * H * W;
                T* ys = y.data() + job * OH * OW;
                for (int oh = 0; oh < OH; ++oh) {
                    for (int ow = 0; ow < OW; ++ow) {
                        T m = xs[(2 * oh) * W + 2 * ow];
                        m = std::max(m, xs[(2 * oh) * W + 2 * ow + 1]);
                        m = std::max(m, xs[(2 * oh + 1) * W + 2 * ow]);
                        m = std::max(m, xs[(2 * oh + 1) * W + 2 * ow + 1]);
                        ys[oh * OW + ow] = m;
                    }
                }
            }, static_cast<int64_t>(H) * W);
            return y;
        }
    }
    throw ConfigError("pool: unknown kind");
}

template <class T>
void pool_backward(const Tensor4<T>& x, PoolKind kind, const Tensor4<T>& dy, Tensor4<T>& dx) {
    const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
    switch (kind) {
        case PoolKind::GlobalAvg: {
            parallel_for(static_cast<int64_t>(N) * C, [&](int64_t job) {
                const T g = dy.data()[job] / static_cast<T>(H * W);
                T* dxs = dx.data() + job * H * W;
                for (int p = 0; p < H * W; ++p) dxs[p] += g;
            }, static_cast<int64_t>(H) * W);
            return;
        }
        case PoolKind::AvgAlongH: {
            parallel_for(static_cast<int64_t>(N) * C, [&](int64_t job) {
                const T* dys = dy.data() + job * W;
                T* dxs = dx.data() + job * H * W;
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) dxs[h * W + w] += dys[w] / static_cast<T>(H);
            }, static_cast<int64_t>(H) * W);
            return;
        }
        case PoolKind::AvgAlongW: {
            parallel_for(static_cast<int64_t>(N) * C, [&](int64_t job) {
                const T* dys = dy.data() + job * H;
                T* dxs = dx.data() + job * H * W;
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) dxs[h * W + w] += dys[h] / static_cast<T>(W);
            }, static_cast<int64_t>(H) * W);
            return;
        }
        case PoolKind::Stride2Max: {
            const int OH = H / 2, OW = W / 2;
            // Ties route to the first maximal element in scan order.
            parallel_for(static_cast<int64_t>(N) * C, [&](int64_t job) {
                const T* xs = x.data() + job * H * W;
                const T* dys = dy.data() + job * OH * OW;
                T* dxs = dx.data() + job * H * W;
                for (int oh = 0; oh < OH; ++oh) {
                    for (int ow = 0; ow < OW; ++ow) {
                        int bh = 2 * oh, bw = 2 * ow;
                        T m = xs[bh * W + bw];
                        const int hs[4] = {2 * oh, 2 * oh, 2 * oh + 1, 2 * oh + 1};
                        const int ws[4] = {2 * ow, 2 * ow + 1, 2 * ow, 2 * ow + 1};
                        for (int i = 1; i < 4; ++i) {
                            if (xs[hs[i] * W + ws[i]] > m) {
                                m = xs[hs[i] * W + ws[i]];
                                bh = hs[i];
                                bw = ws[i];
                            }
                        }
                        dxs[bh * W + bw] += dys[oh * OW + ow];
                    }
                }
            }, static_cast<int64_t>(H) * W);
            return;
        }
    }
}

// --- nearest-neighbour resize ------------------------------------------------

template <class T>
Tensor4<T> resize_nearest(const Tensor4<T>& x, int scale) {
    if (scale < 1) throw ConfigError("resize_nearest: scale must be >= 1");
    if (scale == 1) return x.clone();
    const int H = x.h(), W = x.w();
    Tensor4<T> y(x.n(), x.c(), H * scale, W * scale);
    parallel_for(static_cast<int64_t>(x.n()) * x.c(), [&](int64_t job) {
        const T* xs = x.data() + job * H * W;
        T* ys = y.data() + job * H * W * scale * scale;
        for (int oh = 0; oh < H * scale; ++oh) {
            const T* row = xs + (oh / scale) * W;
            for (int ow = 0; ow < W * scale; ++ow) ys[oh * W * scale + ow] = row[ow / scale];
        }
    }, static_cast<int64_t>(H) * W * scale * scale);
    return y;
}

template <class T>
void resize_nearest_backward(const Tensor4<T>& x, int scale, const Tensor4<T>& dy,
                             Tensor4<T>& dx) {
    const int H = x.h(), W = x.w();
    parallel_for(static_cast<int64_t>(x.n()) * x.c(), [&](int64_t job) {
        const T* dys = dy.data() + job * H * W * scale * scale;
        T* dxs = dx.data() + job * H * W;
        for (int oh = 0; oh < H * scale; ++oh) {
            for (int ow = 0; ow < W * scale; ++ow) {
                dxs[(oh / scale) * W + ow / scale] += dys[oh * W * scale + ow];
            }
        }
    }, static_cast<int64_t>(H) * W * scale * scale);
}

// --- activations --------------------------------------------------------------

template <class T>
T stable_sigmoid(T x) {
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

enum class ActKind { Sigmoid, Silu, SoftmaxChannels };

template <class T>
Tensor4<T> activation(const Tensor4<T>& x, ActKind kind) {
    Tensor4<T> y(x.n(), x.c(), x.h(), x.w());
    if (kind == ActKind::SoftmaxChannels) {
        const int C = x.c(), HW = x.h() * x.w();
        parallel_for(static_cast<int64_t>(x.n()) * HW, [&](int64_t job) {
            const int n = static_cast<int>(job / HW);
            const int p = static_cast<int>(job % HW);
            const int64_t base = static_cast<int64_t>(n) * C * HW + p;
            T mx = x.data()[base];
            for (int c = 1; c < C; ++c) mx = std::max(mx, x.data()[base + c * HW]);
            T sum = 0;
            for (int c = 0; c < C; ++c) {
                const T e = std::exp(x.data()[base + c * HW] - mx);
                y.data()[base + c * HW] = e;
                sum += e;
            }
            for (int c = 0; c < C; ++c) y.data()[base + c * HW] /= sum;
        }, 4ll * C);
        return y;
    }
    const T* xs = x.data();
    T* ys = y.data();
    parallel_chunks(x.numel(), [&](int64_t b, int64_t e) {
        if (kind == ActKind::Sigmoid) {
            for (int64_t i = b; i < e; ++i) ys[i] = stable_sigmoid(xs[i]);
        } else {
            for (int64_t i = b; i < e; ++i) ys[i] = xs[i] * stable_sigmoid(xs[i]);
        }
    });
    return y;
}

template <class T>
void activation_backward(const Tensor4<T>& x, const Tensor4<T>& y, ActKind kind,
                         const Tensor4<T>& dy, Tensor4<T>& dx) {
    if (kind == ActKind::SoftmaxChannels) {
        const int C = x.c(), HW = x.h() * x.w();
        parallel_for(static_cast<int64_t>(x.n()) * HW, [&](int64_t job) {
            const int n = static_cast<int>(job / HW);
            const int p = static_cast<int>(job % HW);
            const int64_t base = static_cast<int64_t>(n) * C * HW + p;
            T dot = 0;
            for (int c = 0; c < C; ++c) dot += dy.data()[base + c * HW] * y.data()[base + c * HW];
            for (int c = 0; c < C; ++c) {
                dx.data()[base + c * HW] +=
                    y.data()[base + c * HW] * (dy.data()[base + c * HW] - dot);
            }
        }, 4ll * C);
        return;
    }
    const T* xs = x.data();
    const T* ys = y.data();
    const T* dys = dy.data();
    T* dxs = dx.data();
    parallel_chunks(x.numel(), [&](int64_t b, int64_t e) {
        if (kind == ActKind::Sigmoid) {
            for (int64_t i = b; i < e; ++i) dxs[i] += dys[i] * ys[i] * (T(1) - ys[i]);
        } else {
            for (int64_t i = b; i < e; ++i) {
                const T s = stable_sigmoid(xs[i]);
                dxs[i] += dys[i] * (s + xs[i] * s * (T(1) - s));
            }
        }
    });
}

// --- normalization -------------------------------------------------------------

// Inference-mode batch normalization with fixed per-channel statistics.
template <class T>
Tensor4<T> batchnorm_infer(const Tensor4<T>& x, const Tensor4<T>& mean, const Tensor4<T>& var,
                           const Tensor4<T>& gamma, const Tensor4<T>& beta) {
    const int C = x.c(), HW = x.h() * x.w();
    Tensor4<T> y(x.n(), x.c(), x.h(), x.w());
    parallel_for(static_cast<int64_t>(x.n()) * C, [&](int64_t job) {
        const int c = static_cast<int>(job % C);
        const T inv = T(1) / std::sqrt(std::max(var.data()[c], T(0)) + static_cast<T>(kNormEpsilon));
        const T g = gamma.data()[c] * inv;
        const T b = beta.data()[c] - mean.data()[c] * g;
        const T* xs = x.data() + job * HW;
        T* ys = y.data() + job * HW;
        for (int p = 0; p < HW; ++p) ys[p] = g * xs[p] + b;
    }, 2ll * HW);
    return y;
}

template <class T>
void batchnorm_infer_backward(const Tensor4<T>& x, const Tensor4<T>& mean, const Tensor4<T>& var,
                              const Tensor4<T>& gamma, const Tensor4<T>& dy, Tensor4<T>* dx,
                              Tensor4<T>* dgamma, Tensor4<T>* dbeta) {
    const int N = x.n(), C = x.c(), HW = x.h() * x.w();
    for (int c = 0; c < C; ++c) {
        const T inv = T(1) / std::sqrt(std::max(var.data()[c], T(0)) + static_cast<T>(kNormEpsilon));
        T dg = 0, db = 0;
        for (int n = 0; n < N; ++n) {
            const T* xs = x.data() + (static_cast<int64_t>(n) * C + c) * HW;
            const T* dys = dy.data() + (static_cast<int64_t>(n) * C + c) * HW;
            for (int p = 0; p < HW; ++p) {
                db += dys[p];
                dg += dys[p] * (xs[p] - mean.data()[c]) * inv;
            }
            if (dx) {
                T* dxs = dx->data() + (static_cast<int64_t>(n) * C + c) * HW;
                const T k = gamma.data()[c] * inv;
                for (int p = 0; p < HW; ++p) dxs[p] += dys[p] * k;
            }
        }
        if (dgamma) dgamma->data()[c] += dg;
        if (dbeta) dbeta->data()[c] += db;
    }
}

template <class T>
struct BatchStats {
    Tensor4<T> mean;  // (1,C,1,1)
    Tensor4<T> var;   // biased estimator (divide by count)
};

template <class T>
BatchStats<T> batch_statistics(const Tensor4<T>& x) {
    const int N = x.n(), C = x.c(), HW = x.h() * x.w();
    BatchStats<T> st{Tensor4<T>(1, C, 1, 1), Tensor4<T>(1, C, 1, 1)};
    const T count = static_cast<T>(N) * HW;
    parallel_for(C, [&](int64_t c) {
        T sum = 0, sq = 0;
        for (int n = 0; n < N; ++n) {
            const T* xs = x.data() + (static_cast<int64_t>(n) * C + c) * HW;
            for (int p = 0; p < HW; ++p) {
                sum += xs[p];
                sq += xs[p] * xs[p];
            }
        }
        const T m = sum / count;
        st.mean.data()[c] = m;
        st.var.data()[c] = std::max(sq / count - m * m, T(0));
    }, 2ll * N * HW);
    return st;
}

// Training-mode batch normalization: normalizes with the batch statistics.
template <class T>
Tensor4<T> batchnorm_train(const Tensor4<T>& x, const BatchStats<T>& st, const Tensor4<T>& gamma,
                           const Tensor4<T>& beta) {
    return batchnorm_infer(x, st.mean, st.var, gamma, beta);
}

// Backward through the batch statistics.
template <class T>
void batchnorm_train_backward(const Tensor4<T>& x, const BatchStats<T>& st,
                              const Tensor4<T>& gamma, const Tensor4<T>& dy, Tensor4<T>* dx,
                              Tensor4<T>* dgamma, Tensor4<T>* dbeta) {
    const int N = x.n(), C = x.c(), HW = x.h() * x.w();
    const T count = static_cast<T>(N) * HW;
    parallel_for(C, [&](int64_t ci) {
        const int c = static_cast<int>(ci);
        const T m = st.mean.data()[c];
        const T inv = T(1) / std::sqrt(st.var.data()[c] + static_cast<T>(kNormEpsilon));
        T db = 0, dg = 0;
        for (int n = 0; n < N; ++n) {
            const T* xs = x.data() + (static_cast<int64_t>(n) * C + c) * HW;
            const T* dys = dy.data() + (static_cast<int64_t>(n) * C + c) * HW;
            for (int p = 0; p < HW; ++p) {
                db += dys[p];
                dg += dys[p] * (xs[p] - m) * inv;
            }
        }
        if (dgamma) dgamma->data()[c] += dg;
        if (dbeta) dbeta->data()[c] += db;
        if (dx) {
            const T k = gamma.data()[c] * inv;
            for (int n = 0; n < N; ++n) {
                const T* xs = x.data() + (static_cast<int64_t>(n) * C + c) * HW;
                const T* dys = dy.data() + (static_cast<int64_t>(n) * C + c) * HW;
                T* dxs = dx->data() + (static_cast<int64_t>(n) * C + c) * HW;
                for (int p = 0; p < HW; ++p) {
                    const T xhat = (xs[p] - m) * inv;
                    dxs[p] += k * (dys[p] - db / count - xhat * dg / count);
                }
            }
        }
    }, 8ll * N * HW);
}

// Group normalization; per-(sample, group) moments, per-channel affine.
template <class T>
Tensor4<T> groupnorm(const Tensor4<T>& x, int num_groups, const Tensor4<T>& gamma,
                     const Tensor4<T>& beta) {
    const int N = x.n(), C = x.c(), HW = x.h() * x.w();
    if (num_groups < 1 || C % num_groups != 0) {
        throw ConfigError("groupnorm: groups=" + std::to_string(num_groups) +
                          " must divide C=" + std::to_string(C));
    }
    const int Cg = C / num_groups;
    const T count = static_cast<T>(Cg) * HW;
    Tensor4<T> y(N, C, x.h(), x.w());
    parallel_for(static_cast<int64_t>(N) * num_groups, [&](int64_t job) {
        const int n = static_cast<int>(job / num_groups);
        const int g = static_cast<int>(job % num_groups);
        const int64_t base = (static_cast<int64_t>(n) * C + g * Cg) * HW;
        const T* xs = x.data() + base;
        T sum = 0, sq = 0;
        for (int64_t i = 0; i < static_cast<int64_t>(Cg) * HW; ++i) {
            sum += xs[i];
            sq += xs[i] * xs[i];
        }
        const T m = sum / count;
        const T v = std::max(sq / count - m * m, T(0));
        const T inv = T(1) / std::sqrt(v + static_cast<T>(kNormEpsilon));
        T* ys = y.data() + base;
        for (int lc = 0; lc < Cg; ++lc) {
            const T ga = gamma.data()[g * Cg + lc], be = beta.data()[g * Cg + lc];
            for (int p = 0; p < HW; ++p) {
                ys[lc * HW + p] = (xs[lc * HW + p] - m) * inv * ga + be;
            }
        }
    }, 4ll * Cg * HW);
    return y;
}

template <class T>
void groupnorm_backward(const Tensor4<T>& x, int num_groups, const Tensor4<T>& gamma,
                        const Tensor4<T>& dy, Tensor4<T>* dx, Tensor4<T>* dgamma,
                        Tensor4<T>* dbeta) {
    const int N = x.n(), C = x.c(), HW = x.h() * x.w();
    const int Cg = C / num_groups;
    const T count = static_cast<T>(Cg) * HW;
    // dgamma/dbeta accumulate over samples; keep that loop serial per channel.
    for (int n = 0; n < N; ++n) {
        for (int g = 0; g < num_groups; ++g) {
            const int64_t base = (static_cast<int64_t>(n) * C + g * Cg) * HW;
            const T* xs = x.data() + base;
            const T* dys = dy.data() + base;
            T sum = 0, sq = 0;
            for (int64_t i = 0; i < static_cast<int64_t>(Cg) * HW; ++i) {
                sum += xs[i];
                sq += xs[i] * xs[i];
            }
            const T m = sum / count;
            const T v = std::max(sq / count - m * m, T(0));
            const T inv = T(1) / std::sqrt(v + static_cast<T>(kNormEpsilon));
            // s = dy * gamma; need mean(s) and mean(s * xhat) over the group.
            T smean = 0, sxmean = 0;
            for (int lc = 0; lc < Cg; ++lc) {
                const T ga = gamma.data()[g * Cg + lc];
                for (int p = 0; p < HW; ++p) {
                    const T sv = dys[lc * HW + p] * ga;
                    smean += sv;
                    sxmean += sv * (xs[lc * HW + p] - m) * inv;
                }
            }
            smean /= count;
            sxmean /= count;
            for (int lc = 0; lc < Cg; ++lc) {
                const T ga = gamma.data()[g * Cg + lc];
                T dg = 0, db = 0;
                for (int p = 0; p < HW; ++p) {
                    const T xhat = (xs[lc * HW + p] - m) * inv;
                    const T d = dys[lc * HW + p];
                    db += d;
                    dg += d * xhat;
                    if (dx) {
                        dx->data()[base + lc * HW + p] +=
                            inv * (d * ga - smean - xhat * sxmean);
                    }
                }
                if (dgamma) dgamma->data()[g * Cg + lc] += dg;
                if (dbeta) dbeta->data()[g * Cg + lc] += db;
            }
        }
    }
}

// --- concat / split -------------------------------------------------------------

enum class Axis { Channel = 1, Height = 2 };

template <class T>
Tensor4<T> concat(const std::vector<Tensor4<T>>& xs, Axis axis = Axis::Channel) {
    if (xs.empty()) throw ConfigError("concat: no inputs");
    int total = 0;
    for (const auto& x : xs) {
        for (int d = 0; d < 4; ++d) {
            if (d == static_cast<int>(axis)) continue;
            if (x.dims()[d] != xs[0].dims()[d]) {
                throw ConfigError("concat: shape " + x.shape_str() + " incompatible with " +
                                  xs[0].shape_str());
            }
        }
        total += x.dims()[static_cast<int>(axis)];
    }
    auto d = xs[0].dims();
    d[static_cast<int>(axis)] = total;
    Tensor4<T> y(d[0], d[1], d[2], d[3]);
    if (axis == Axis::Channel) {
        for (int n = 0; n < d[0]; ++n) {
            int co = 0;
            for (const auto& x : xs) {
                std::memcpy(y.data() + y.index(n, co, 0, 0), x.data() + x.index(n, 0, 0, 0),
                            sizeof(T) * x.c() * x.h() * x.w());
                co += x.c();
            }
        }
    } else {
        for (int n = 0; n < d[0]; ++n) {
            for (int c = 0; c < d[1]; ++c) {
                int ho = 0;
                for (const auto& x : xs) {
                    std::memcpy(y.data() + y.index(n, c, ho, 0), x.data() + x.index(n, c, 0, 0),
                                sizeof(T) * x.h() * x.w());
                    ho += x.h();
                }
            }
        }
    }
    return y;
}

template <class T>
std::vector<Tensor4<T>> split_sizes(const Tensor4<T>& x, const std::vector<int>& sizes,
                                    Axis axis = Axis::Channel) {
    int total = 0;
    for (int s : sizes) total += s;
    if (total != x.dims()[static_cast<int>(axis)]) {
        throw ConfigError("split: sizes do not sum to axis extent of " + x.shape_str());
    }
    std::vector<Tensor4<T>> out;
    int off = 0;
    for (int s : sizes) {
        auto d = x.dims();
        d[static_cast<int>(axis)] = s;
        Tensor4<T> y(d[0], d[1], d[2], d[3]);
        if (axis == Axis::Channel) {
            for (int n = 0; n < d[0]; ++n) {
                std::memcpy(y.data() + y.index(n, 0, 0, 0), x.data() + x.index(n, off, 0, 0),
                            sizeof(T) * s * x.h() * x.w());
            }
        } else {
            for (int n = 0; n < d[0]; ++n) {
                for (int c = 0; c < d[1]; ++c) {
                    std::memcpy(y.data() + y.index(n, c, 0, 0), x.data() + x.index(n, c, off, 0),
                                sizeof(T) * s * x.w());
                }
            }
        }
        out.push_back(std::move(y));
        off += s;
    }
    return out;
}

// Splits into `parts` equal slices along the axis.
template <class T>
std::vector<Tensor4<T>> split(const Tensor4<T>& x, int parts, Axis axis = Axis::Channel) {
    const int extent = x.dims()[static_cast<int>(axis)];
    if (parts < 1 || extent % parts != 0) {
        throw ConfigError("split: axis extent " + std::to_string(extent) +
                          " not divisible into " + std::to_string(parts) + " parts");
    }
    std::vector<int> sizes(parts, extent / parts);
    return split_sizes(x, sizes, axis);
}

// --- batched matrix multiply ------------------------------------------------------

// Treats (N,C,H,W) as an N*C batch of H x W matrices.
template <class T>
Tensor4<T> matmul_batched(const Tensor4<T>& a, const Tensor4<T>& b) {
    if (a.n() != b.n() || a.c() != b.c() || a.w() != b.h()) {
        throw ConfigError("matmul_batched: " + a.shape_str() + " x " + b.shape_str() +
                          " have mismatched dimensions");
    }
    const int B = a.n() * a.c(), M = a.h(), K = a.w(), P = b.w();
    Tensor4<T> y(a.n(), a.c(), M, P);
    for (int i = 0; i < B; ++i) {
        detail::gemm_nn(M, K, P, a.data() + static_cast<int64_t>(i) * M * K,
                        b.data() + static_cast<int64_t>(i) * K * P,
                        y.data() + static_cast<int64_t>(i) * M * P, false);
    }
    return y;
}

template <class T>
void matmul_batched_backward(const Tensor4<T>& a, const Tensor4<T>& b, const Tensor4<T>& dy,
                             Tensor4<T>* da, Tensor4<T>* db) {
    const int B = a.n() * a.c(), M = a.h(), K = a.w(), P = b.w();
    for (int i = 0; i < B; ++i) {
        const T* ab = a.data() + static_cast<int64_t>(i) * M * K;
        const T* bb = b.data() + static_cast<int64_t>(i) * K * P;
        const T* dyb = dy.data() + static_cast<int64_t>(i) * M * P;
        if (da) detail::gemm_nt(M, P, K, dyb, bb, da->data() + static_cast<int64_t>(i) * M * K, true);
        if (db) detail::gemm_tn(K, M, P, ab, dyb, db->data() + static_cast<int64_t>(i) * K * P, true);
    }
}

// --- shape & elementwise helpers -----------------------------------------------------

template <class T>
Tensor4<T> transpose_hw(const Tensor4<T>& x) {
    Tensor4<T> y(x.n(), x.c(), x.w(), x.h());
    parallel_for(static_cast<int64_t>(x.n()) * x.c(), [&](int64_t job) {
        const T* xs = x.data() + job * x.h() * x.w();
        T* ys = y.data() + job * x.h() * x.w();
        for (int h = 0; h < x.h(); ++h)
            for (int w = 0; w < x.w(); ++w) ys[w * x.h() + h] = xs[h * x.w() + w];
    }, static_cast<int64_t>(x.h()) * x.w());
    return y;
}

template <class T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
    if (!a.same_shape(b)) {
        throw ConfigError("add: shapes " + a.shape_str() + " and " + b.shape_str() + " differ");
    }
    Tensor4<T> y(a.n(), a.c(), a.h(), a.w());
    const T* as = a.data();
    const T* bs = b.data();
    T* ys = y.data();
    parallel_chunks(a.numel(), [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) ys[i] = as[i] + bs[i];
    });
    return y;
}

// y = k * x + c elementwise.
template <class T>
Tensor4<T> affine(const Tensor4<T>& x, T k, T c) {
    Tensor4<T> y(x.n(), x.c(), x.h(), x.w());
    const T* xs = x.data();
    T* ys = y.data();
    parallel_chunks(x.numel(), [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) ys[i] = k * xs[i] + c;
    });
    return y;
}

// Hadamard product; each dim of b must equal a's or be 1 (broadcast).
template <class T>
Tensor4<T> mul_broadcast(const Tensor4<T>& a, const Tensor4<T>& b) {
    for (int d = 0; d < 4; ++d) {
        if (b.dims()[d] != a.dims()[d] && b.dims()[d] != 1) {
            throw ConfigError("mul: " + b.shape_str() + " does not broadcast onto " +
                              a.shape_str());
        }
    }
    Tensor4<T> y(a.n(), a.c(), a.h(), a.w());
    const bool same = a.same_shape(b);
    if (same) {
        const T* as = a.data();
        const T* bs = b.data();
        T* ys = y.data();
        parallel_chunks(a.numel(), [&](int64_t i0, int64_t i1) {
            for (int64_t i = i0; i < i1; ++i) ys[i] = as[i] * bs[i];
        });
        return y;
    }
    parallel_for(static_cast<int64_t>(a.n()) * a.c(), [&](int64_t job) {
        const int n = static_cast<int>(job / a.c());
        const int c = static_cast<int>(job % a.c());
        const int bn = b.n() == 1 ? 0 : n, bc = b.c() == 1 ? 0 : c;
        for (int h = 0; h < a.h(); ++h) {
            const int bh = b.h() == 1 ? 0 : h;
            for (int w = 0; w < a.w(); ++w) {
                const int bw = b.w() == 1 ? 0 : w;
                y.at(n, c, h, w) = a.at(n, c, h, w) * b.at(bn, bc, bh, bw);
            }
        }
    }, static_cast<int64_t>(a.h()) * a.w());
    return y;
}

template <class T>
void mul_broadcast_backward(const Tensor4<T>& a, const Tensor4<T>& b, const Tensor4<T>& dy,
                            Tensor4<T>* da, Tensor4<T>* db) {
    if (a.same_shape(b)) {
        const T* as = a.data();
        const T* bs = b.data();
        const T* dys = dy.data();
        if (da) {
            T* p = da->data();
            for (int64_t i = 0; i < a.numel(); ++i) p[i] += dys[i] * bs[i];
        }
        if (db) {
            T* p = db->data();
            for (int64_t i = 0; i < a.numel(); ++i) p[i] += dys[i] * as[i];
        }
        return;
    }
    for (int n = 0; n < a.n(); ++n) {
        const int bn = b.n() == 1 ? 0 : n;
        for (int c = 0; c < a.c(); ++c) {
            const int bc = b.c() == 1 ? 0 : c;
            for (int h = 0; h < a.h(); ++h) {
                const int bh = b.h() == 1 ? 0 : h;
                for (int w = 0; w < a.w(); ++w) {
                    const int bw = b.w() == 1 ? 0 : w;
                    const T g = dy.at(n, c, h, w);
                    if (da) da->at(n, c, h, w) += g * b.at(bn, bc, bh, bw);
                    if (db) db->at(bn, bc, bh, bw) += g * a.at(n, c, h, w);
                }
            }
        }
    }
}

template <class T>
T sum_all(const Tensor4<T>& x) {
    const T* xs = x.data();
    T acc = 0;
    for (int64_t i = 0; i < x.numel(); ++i) acc += xs[i];
    return acc;
}

}  // namespace masf
