#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "masf/autograd.hpp"

namespace masf {

// A named learnable tensor (or non-learnable buffer, e.g. running batch-norm
// statistics). `node` is the tape leaf id for the current forward pass.
template <class T>
struct Param {
    std::string name;
    Tensor4<T> value;
    bool trainable = true;
    int node = -1;

    void bind(Tape<T>& t) { node = t.leaf(value); }
};

template <class T>
class ParamStore {
public:
    Param<T>* add(const std::string& name, Tensor4<T> v, bool trainable = true) {
        for (const auto& p : items_) {
            if (p->name == name) throw ConfigError("duplicate parameter name: " + name);
        }
        items_.push_back(std::make_unique<Param<T>>(Param<T>{name, std::move(v), trainable, -1}));
        return items_.back().get();
    }

    Param<T>* find(const std::string& name) const {
        for (const auto& p : items_) {
            if (p->name == name) return p.get();
        }
        return nullptr;
    }

    const std::vector<std::unique_ptr<Param<T>>>& all() const { return items_; }

    int64_t trainable_count() const {
        int64_t n = 0;
        for (const auto& p : items_) {
            if (p->trainable) n += p->value.numel();
        }
        return n;
    }

    void bind_all(Tape<T>& t) {
        for (auto& p : items_) p->bind(t);
    }

private:
    std::vector<std::unique_ptr<Param<T>>> items_;
};

// Kaiming-uniform fan-in init with the gain used for SiLU-family networks.
template <class T>
void kaiming_init(Tensor4<T>& w, int fan_in, SplitMix64& rng, double gain = 1.4142135623730951) {
    const double bound = gain * std::sqrt(3.0 / fan_in);
    T* p = w.data();
    for (int64_t i = 0; i < w.numel(); ++i) p[i] = static_cast<T>(rng.uniform(-bound, bound));
}

// --- Conv + BatchNorm + SiLU -------------------------------------------------

template <class T>
struct ConvBnSilu {
    ConvSpec spec;
    Param<T>* w = nullptr;
    Param<T>* bias = nullptr;   // only when BN is disabled
    Param<T>* gamma = nullptr;
    Param<T>* beta = nullptr;
    Param<T>* run_mean = nullptr;
    Param<T>* run_var = nullptr;
    bool use_bn = true;
    bool use_act = true;
    T bn_momentum = T(0.1);

    static ConvBnSilu create(ParamStore<T>& ps, const std::string& prefix, ConvSpec spec,
                             SplitMix64& rng, bool use_bn = true, bool use_act = true) {
        ConvBnSilu b;
        b.spec = spec;
        b.spec.has_bias = !use_bn;
        b.use_bn = use_bn;
        b.use_act = use_act;
        Tensor4<T> w(spec.out_channels, spec.in_channels / spec.groups, spec.kernel_h,
                     spec.kernel_w);
        kaiming_init(w, (spec.in_channels / spec.groups) * spec.kernel_h * spec.kernel_w, rng);
        b.w = ps.add(prefix + ".w", std::move(w));
        if (use_bn) {
            b.gamma = ps.add(prefix + ".bn.gamma",
                             Tensor4<T>::full(1, spec.out_channels, 1, 1, T(1)));
            b.beta = ps.add(prefix + ".bn.beta", Tensor4<T>(1, spec.out_channels, 1, 1));
            b.run_mean = ps.add(prefix + ".bn.mean", Tensor4<T>(1, spec.out_channels, 1, 1),
                                /*trainable=*/false);
            b.run_var = ps.add(prefix + ".bn.var",
                               Tensor4<T>::full(1, spec.out_channels, 1, 1, T(1)),
                               /*trainable=*/false);
        } else {
            b.bias = ps.add(prefix + ".b", Tensor4<T>(1, spec.out_channels, 1, 1));
        }
        return b;
    }

    int forward(Tape<T>& t, int x, bool training) const {
        int y = ops::conv2d(t, x, w->node, bias ? bias->node : -1, spec);
        if (use_bn) {
            if (training) {
                BatchStats<T> st;
                y = ops::batchnorm_train(t, y, gamma->node, beta->node, &st);
                // Exponential running average for inference.
                for (int c = 0; c < spec.out_channels; ++c) {
                    run_mean->value.data()[c] = (T(1) - bn_momentum) * run_mean->value.data()[c] +
                                                bn_momentum * st.mean.data()[c];
                    run_var->value.data()[c] = (T(1) - bn_momentum) * run_var->value.data()[c] +
                                               bn_momentum * st.var.data()[c];
                }
            } else {
                y = ops::batchnorm_infer(t, y, run_mean->value, run_var->value, gamma->node,
                                         beta->node);
            }
        }
        if (use_act) y = ops::activation(t, y, ActKind::Silu);
        return y;
    }
};

// --- multi-scale feature aggregation ------------------------------------------
// 1x1 pre-projection, parallel depthwise convolutions at several odd kernel
// sizes plus an identity branch, branch sum, 1x1 fusion, residual input add.
// With zeroed parameters the block is exactly the identity map.

struct MfamSpec {
    int channels = 0;
    std::vector<int> kernel_sizes = {3, 5, 7};
    bool include_identity_branch = true;

    void validate() const {
        if (channels < 1) throw ConfigError("mfam: channels must be positive");
        if (kernel_sizes.empty()) throw ConfigError("mfam: need at least one kernel size");
        for (int k : kernel_sizes) {
            if (k < 1 || k % 2 == 0) {
                throw ConfigError("mfam: kernel sizes must be odd, got " + std::to_string(k));
            }
        }
    }
    int branch_count() const {
        return static_cast<int>(kernel_sizes.size()) + (include_identity_branch ? 1 : 0);
    }
};

template <class T>
struct Mfam {
    MfamSpec spec;
    Param<T>* pre_w = nullptr;
    Param<T>* pre_b = nullptr;
    std::vector<Param<T>*> dw_w;
    std::vector<Param<T>*> dw_b;
    Param<T>* fuse_w = nullptr;
    Param<T>* fuse_b = nullptr;

    static Mfam create(ParamStore<T>& ps, const std::string& prefix, MfamSpec spec,
                       SplitMix64& rng) {
        spec.validate();
        Mfam m;
        m.spec = spec;
        const int C = spec.channels;
        Tensor4<T> pw(C, C, 1, 1);
        kaiming_init(pw, C, rng);
        m.pre_w = ps.add(prefix + ".pre.w", std::move(pw));
        m.pre_b = ps.add(prefix + ".pre.b", Tensor4<T>(1, C, 1, 1));
        for (size_t i = 0; i < spec.kernel_sizes.size(); ++i) {
            const int k = spec.kernel_sizes[i];
            Tensor4<T> dw(C, 1, k, k);
            kaiming_init(dw, k * k, rng);
            const std::string tag = prefix + ".dw" + std::to_string(k);
            m.dw_w.push_back(ps.add(tag + ".w", std::move(dw)));
            m.dw_b.push_back(ps.add(tag + ".b", Tensor4<T>(1, C, 1, 1)));
        }
        Tensor4<T> fw(C, C, 1, 1);
        kaiming_init(fw, C, rng);
        m.fuse_w = ps.add(prefix + ".fuse.w", std::move(fw));
        m.fuse_b = ps.add(prefix + ".fuse.b", Tensor4<T>(1, C, 1, 1));
        return m;
    }

    int forward(Tape<T>& t, int x) const {
        const int C = spec.channels;
        const ConvSpec one = ConvSpec::make(C, C, 1, 1, 1, 0, 0);
        int p = ops::conv2d(t, x, pre_w->node, pre_b->node, one);
        int acc = -1;
        for (size_t i = 0; i < spec.kernel_sizes.size(); ++i) {
            const int k = spec.kernel_sizes[i];
            int br = ops::conv2d(t, p, dw_w[i]->node, dw_b[i]->node, ConvSpec::depthwise(C, k, k));
            acc = (acc < 0) ? br : ops::add(t, acc, br);
        }
        if (spec.include_identity_branch) acc = ops::add(t, acc, p);
        int fused = ops::conv2d(t, acc, fuse_w->node, fuse_b->node, one);
        return ops::add(t, fused, x);
    }

    void zero_parameters() {
        pre_w->value.fill(T(0));
        pre_b->value.fill(T(0));
        for (auto* p : dw_w) p->value.fill(T(0));
        for (auto* p : dw_b) p->value.fill(T(0));
        fuse_w->value.fill(T(0));
        fuse_b->value.fill(T(0));
    }
};

// --- grouped multi-scale attention ----------------------------------------------
// Channel groups fold into the batch axis. A directional 1x1 branch gates the
// group; a local multi-branch pathway (square 3x3, 1xK and Kx1 bands,
// identity) runs in parallel; softmaxed global descriptors of each branch
// cross-multiply with the other branch's map, and the summed result gates
// the group again.

struct IemaSpec {
    int channels = 0;
    int groups = 8;
    int band_kernel = 11;

    void validate() const {
        if (channels < 1 || groups < 1) throw ConfigError("iema: bad channels/groups");
        if (channels % groups != 0) {
            throw ConfigError("iema: channels=" + std::to_string(channels) +
                              " not divisible by groups=" + std::to_string(groups));
        }
        if (channels / groups < 4) {
            throw ConfigError("iema: per-group channel count " +
                              std::to_string(channels / groups) + " below the minimum of 4");
        }
        if (band_kernel < 1 || band_kernel % 2 == 0) {
            throw ConfigError("iema: band kernel must be odd");
        }
    }
};

template <class T>
struct Iema {
    IemaSpec spec;
    Param<T>* dir_w = nullptr;  // shared 1x1 over the grouped channels
    Param<T>* dir_b = nullptr;
    Param<T>* sq_w = nullptr;
    Param<T>* sq_b = nullptr;
    Param<T>* bh_w = nullptr;  // 1 x band
    Param<T>* bh_b = nullptr;
    Param<T>* bv_w = nullptr;  // band x 1
    Param<T>* bv_b = nullptr;
    Param<T>* gn_gamma = nullptr;
    Param<T>* gn_beta = nullptr;

    static Iema create(ParamStore<T>& ps, const std::string& prefix, IemaSpec spec,
                       SplitMix64& rng) {
        spec.validate();
        Iema m;
        m.spec = spec;
        const int Cg = spec.channels / spec.groups;
        Tensor4<T> dw(Cg, Cg, 1, 1);
        kaiming_init(dw, Cg, rng);
        m.dir_w = ps.add(prefix + ".dir.w", std::move(dw));
        m.dir_b = ps.add(prefix + ".dir.b", Tensor4<T>(1, Cg, 1, 1));
        Tensor4<T> sq(Cg, 1, 3, 3);
        kaiming_init(sq, 9, rng);
        m.sq_w = ps.add(prefix + ".sq.w", std::move(sq));
        m.sq_b = ps.add(prefix + ".sq.b", Tensor4<T>(1, Cg, 1, 1));
        const int K = spec.band_kernel;
        Tensor4<T> bh(Cg, 1, 1, K);
        kaiming_init(bh, K, rng);
        m.bh_w = ps.add(prefix + ".band_h.w", std::move(bh));
        m.bh_b = ps.add(prefix + ".band_h.b", Tensor4<T>(1, Cg, 1, 1));
        Tensor4<T> bv(Cg, 1, K, 1);
        kaiming_init(bv, K, rng);
        m.bv_w = ps.add(prefix + ".band_v.w", std::move(bv));
        m.bv_b = ps.add(prefix + ".band_v.b", Tensor4<T>(1, Cg, 1, 1));
        m.gn_gamma = ps.add(prefix + ".gn.gamma", Tensor4<T>::full(1, Cg, 1, 1, T(1)));
        m.gn_beta = ps.add(prefix + ".gn.beta", Tensor4<T>(1, Cg, 1, 1));
        return m;
    }

    int forward(Tape<T>& t, int x) const {
        const auto& xd = t.val(x);
        const int N = xd.n(), C = xd.c(), H = xd.h(), W = xd.w();
        if (C != spec.channels) {
            throw ConfigError("iema: input C=" + std::to_string(C) + " but block expects " +
                              std::to_string(spec.channels));
        }
        const int G = spec.groups, Cg = C / G;
        const int B = N * G;
        const int xg = ops::reshape(t, x, B, Cg, H, W);

        // Directional branch: pooled profiles through a shared 1x1, gates the group.
        const int xh = ops::pool(t, xg, PoolKind::AvgAlongW);                // (B,Cg,H,1)
        const int xw = ops::transpose_hw(t, ops::pool(t, xg, PoolKind::AvgAlongH));  // (B,Cg,W,1)
        const ConvSpec one = ConvSpec::make(Cg, Cg, 1, 1, 1, 0, 0);
        const int hw = ops::conv2d(t, ops::concat(t, {xh, xw}, Axis::Height), dir_w->node,
                                   dir_b->node, one);
        auto back = ops::split_hw(t, hw, H, W);
        const int gate_h = ops::activation(t, back.first, ActKind::Sigmoid);   // (B,Cg,H,1)
        const int gate_w = ops::activation(t, ops::transpose_hw(t, back.second),
                                           ActKind::Sigmoid);                 // (B,Cg,1,W)
        const int gated = ops::mul(t, ops::mul(t, xg, gate_h), gate_w);

        // Local branch: parallel depthwise square + bands + identity path.
        const int K = spec.band_kernel;
        int local = ops::conv2d(t, xg, sq_w->node, sq_b->node, ConvSpec::depthwise(Cg, 3, 3));
        local = ops::add(t, local, ops::conv2d(t, xg, bh_w->node, bh_b->node,
                                               ConvSpec::depthwise(Cg, 1, K)));
        local = ops::add(t, local, ops::conv2d(t, xg, bv_w->node, bv_b->node,
                                               ConvSpec::depthwise(Cg, K, 1)));
        local = ops::add(t, local, xg);

        // Cross-spatial step: each branch's softmaxed descriptor weights the
        // other branch's map; summed, squashed, and multiplied onto the group.
        const int a_gn = ops::groupnorm(t, gated, 1, gn_gamma->node, gn_beta->node);
        const int da = ops::activation(t, ops::pool(t, a_gn, PoolKind::GlobalAvg),
                                       ActKind::SoftmaxChannels);
        const int db = ops::activation(t, ops::pool(t, local, PoolKind::GlobalAvg),
                                       ActKind::SoftmaxChannels);
        const int da_row = ops::reshape(t, da, B, 1, 1, Cg);
        const int db_row = ops::reshape(t, db, B, 1, 1, Cg);
        const int a_flat = ops::reshape(t, a_gn, B, 1, Cg, H * W);
        const int b_flat = ops::reshape(t, local, B, 1, Cg, H * W);
        const int cross = ops::add(t, ops::matmul(t, da_row, b_flat),
                                   ops::matmul(t, db_row, a_flat));
        const int attn = ops::activation(t, ops::reshape(t, cross, B, 1, H, W),
                                         ActKind::Sigmoid);
        const int out_g = ops::mul(t, xg, attn);
        return ops::reshape(t, out_g, N, C, H, W);
    }
};

// --- dimension-aware selective integration ---------------------------------------
// Aligns a finer (low) and coarser (high) feature map with the current
// level, splits all three into four channel partitions, and blends low/high
// with a sigmoid gate driven by the current features; 1x1 fuse + norm +
// residual on the aligned current features.

struct DasiSpec {
    int channels = 0;       // partition target; must be divisible by 4
    int cur_channels = 0;
    int low_channels = 0;   // finer input (larger spatial extent)
    int high_channels = 0;  // coarser input
    int low_ratio = 2;      // low spatial size / current spatial size
    int high_ratio = 2;     // current spatial size / high spatial size

    void validate() const {
        if (channels < 4 || channels % 4 != 0) {
            throw ConfigError("dasi: channels=" + std::to_string(channels) +
                              " must be a positive multiple of 4");
        }
        for (int r : {low_ratio, high_ratio}) {
            if (r < 1 || (r & (r - 1)) != 0) {
                throw ConfigError("dasi: spatial ratio " + std::to_string(r) +
                                  " is not a power of two; features cannot be aligned");
            }
        }
        if (cur_channels < 1 || low_channels < 1 || high_channels < 1) {
            throw ConfigError("dasi: input channel counts must be positive");
        }
    }
};

// The partition gate on already-aligned tensors; exposed for direct testing.
template <class T>
Tensor4<T> dasi_gate(const Tensor4<T>& cur, const Tensor4<T>& low, const Tensor4<T>& high) {
    if (!cur.same_shape(low) || !cur.same_shape(high)) {
        throw ConfigError("dasi_gate: inputs must share a shape, got " + cur.shape_str() + ", " +
                          low.shape_str() + ", " + high.shape_str());
    }
    if (cur.c() % 4 != 0) throw ConfigError("dasi_gate: channels must be divisible by 4");
    auto cs = split(cur, 4);
    auto ls = split(low, 4);
    auto hs = split(high, 4);
    std::vector<Tensor4<T>> fused;
    for (int i = 0; i < 4; ++i) {
        Tensor4<T> alpha = activation(cs[i], ActKind::Sigmoid);
        fused.push_back(add(mul_broadcast(alpha, ls[i]),
                            mul_broadcast(affine(alpha, T(-1), T(1)), hs[i])));
    }
    return concat(fused);
}

template <class T>
struct Dasi {
    DasiSpec spec;
    Param<T>* cur_w = nullptr;
    Param<T>* cur_b = nullptr;
    Param<T>* low_w = nullptr;
    Param<T>* low_b = nullptr;
    Param<T>* high_w = nullptr;
    Param<T>* high_b = nullptr;
    std::vector<ConvBnSilu<T>> down;  // stride-2 convs for the finer input
    Param<T>* fuse_w = nullptr;
    Param<T>* fuse_b = nullptr;
    Param<T>* bn_gamma = nullptr;
    Param<T>* bn_beta = nullptr;
    Param<T>* bn_mean = nullptr;
    Param<T>* bn_var = nullptr;
    T bn_momentum = T(0.1);

    static Dasi create(ParamStore<T>& ps, const std::string& prefix, DasiSpec spec,
                       SplitMix64& rng) {
        spec.validate();
        Dasi d;
        d.spec = spec;
        const int C = spec.channels;
        auto add_1x1 = [&](const std::string& tag, int cin, Param<T>*& wp, Param<T>*& bp) {
            Tensor4<T> w(C, cin, 1, 1);
            kaiming_init(w, cin, rng);
            wp = ps.add(prefix + "." + tag + ".w", std::move(w));
            bp = ps.add(prefix + "." + tag + ".b", Tensor4<T>(1, C, 1, 1));
        };
        add_1x1("cur", spec.cur_channels, d.cur_w, d.cur_b);
        add_1x1("low", spec.low_channels, d.low_w, d.low_b);
        add_1x1("high", spec.high_channels, d.high_w, d.high_b);
        for (int r = spec.low_ratio; r > 1; r /= 2) {
            d.down.push_back(ConvBnSilu<T>::create(
                ps, prefix + ".down" + std::to_string(d.down.size()),
                ConvSpec::make(C, C, 3, 3, 2, 1, 1), rng, /*use_bn=*/false, /*use_act=*/false));
        }
        Tensor4<T> fw(C, C, 1, 1);
        kaiming_init(fw, C, rng);
        d.fuse_w = ps.add(prefix + ".fuse.w", std::move(fw));
        d.fuse_b = ps.add(prefix + ".fuse.b", Tensor4<T>(1, C, 1, 1));
        d.bn_gamma = ps.add(prefix + ".bn.gamma", Tensor4<T>::full(1, C, 1, 1, T(1)));
        d.bn_beta = ps.add(prefix + ".bn.beta", Tensor4<T>(1, C, 1, 1));
        d.bn_mean = ps.add(prefix + ".bn.mean", Tensor4<T>(1, C, 1, 1), false);
        d.bn_var = ps.add(prefix + ".bn.var", Tensor4<T>::full(1, C, 1, 1, T(1)), false);
        return d;
    }

    int forward(Tape<T>& t, int cur, int low, int high, bool training) const {
        const int C = spec.channels;
        // Channel projection first, then spatial resampling.
        int ca = ops::conv2d(t, cur, cur_w->node, cur_b->node,
                             ConvSpec::make(spec.cur_channels, C, 1, 1, 1, 0, 0));
        int la = ops::conv2d(t, low, low_w->node, low_b->node,
                             ConvSpec::make(spec.low_channels, C, 1, 1, 1, 0, 0));
        for (const auto& dc : down) la = dc.forward(t, la, training);
        int ha = ops::conv2d(t, high, high_w->node, high_b->node,
                             ConvSpec::make(spec.high_channels, C, 1, 1, 1, 0, 0));
        if (spec.high_ratio > 1) ha = ops::resize_nearest(t, ha, spec.high_ratio);
        if (!t.val(ca).same_shape(t.val(la)) || !t.val(ca).same_shape(t.val(ha))) {
            throw ConfigError("dasi: aligned inputs disagree: " + t.val(ca).shape_str() + ", " +
                              t.val(la).shape_str() + ", " + t.val(ha).shape_str());
        }
        auto cs = ops::split(t, ca, 4);
        auto ls = ops::split(t, la, 4);
        auto hs = ops::split(t, ha, 4);
        std::vector<int> fused;
        for (int i = 0; i < 4; ++i) {
            int alpha = ops::activation(t, cs[i], ActKind::Sigmoid);
            int lo = ops::mul(t, alpha, ls[i]);
            int hi = ops::mul(t, ops::affine(t, alpha, T(-1), T(1)), hs[i]);
            fused.push_back(ops::add(t, lo, hi));
        }
        int f = ops::conv2d(t, ops::concat(t, fused), fuse_w->node, fuse_b->node,
                            ConvSpec::make(C, C, 1, 1, 1, 0, 0));
        if (training) {
            BatchStats<T> st;
            f = ops::batchnorm_train(t, f, bn_gamma->node, bn_beta->node, &st);
            for (int c = 0; c < C; ++c) {
                bn_mean->value.data()[c] = (T(1) - bn_momentum) * bn_mean->value.data()[c] +
                                           bn_momentum * st.mean.data()[c];
                bn_var->value.data()[c] = (T(1) - bn_momentum) * bn_var->value.data()[c] +
                                          bn_momentum * st.var.data()[c];
            }
        } else {
            f = ops::batchnorm_infer(t, f, bn_mean->value, bn_var->value, bn_gamma->node,
                                     bn_beta->node);
        }
        return ops::add(t, f, ca);
    }
};

}  // namespace masf
