#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "masf/kernels.hpp"
#include "masf/rng.hpp"

// Reverse-mode differentiation over the kernel set: a flat tape of nodes,
// walked in reverse creation order. Nodes hold the forward value and a
// closure that routes the node's gradient to its inputs.

namespace masf {

template <class T>
class Tape {
public:
    using BackFn = std::function<void(Tape&, int self)>;

    int leaf(Tensor4<T> v) { return push(std::move(v), nullptr); }

    int push(Tensor4<T> v, BackFn back) {
        nodes_.push_back(Node{std::move(v), Tensor4<T>(), std::move(back)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Tensor4<T>& val(int id) const { return nodes_[id].value; }

    bool has_grad(int id) const { return !nodes_[id].grad.empty(); }

    // Gradient buffer, allocated (zeroed) on first access.
    Tensor4<T>& grad(int id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) {
            n.grad = Tensor4<T>(n.value.n(), n.value.c(), n.value.h(), n.value.w());
        }
        return n.grad;
    }

    // Seeds d(root)/d(root) = 1 and propagates. Root must be a scalar node.
    void backward(int root) {
        if (val(root).numel() != 1) {
            throw ConfigError("backward: root must be scalar, got " + val(root).shape_str());
        }
        grad(root).data()[0] += T(1);
        for (int id = root; id >= 0; --id) {
            Node& n = nodes_[id];
            if (n.back && !n.grad.empty()) n.back(*this, id);
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor4<T> value;
        Tensor4<T> grad;
        BackFn back;
    };
    std::vector<Node> nodes_;
};

namespace ops {

template <class T>
int conv2d(Tape<T>& t, int x, int w, int b, ConvSpec spec) {
    Tensor4<T> bias = (b >= 0) ? t.val(b) : Tensor4<T>();
    Tensor4<T> y = masf::conv2d(t.val(x), t.val(w), bias, spec);
    return t.push(std::move(y), [x, w, b, spec](Tape<T>& tp, int self) {
        conv2d_backward(tp.val(x), tp.val(w), spec, tp.grad(self), &tp.grad(x), &tp.grad(w),
                        b >= 0 ? &tp.grad(b) : nullptr);
    });
}

template <class T>
int pool(Tape<T>& t, int x, PoolKind kind) {
    Tensor4<T> y = masf::pool(t.val(x), kind);
    return t.push(std::move(y), [x, kind](Tape<T>& tp, int self) {
        pool_backward(tp.val(x), kind, tp.grad(self), tp.grad(x));
    });
}

template <class T>
int resize_nearest(Tape<T>& t, int x, int scale) {
    Tensor4<T> y = masf::resize_nearest(t.val(x), scale);
    return t.push(std::move(y), [x, scale](Tape<T>& tp, int self) {
        resize_nearest_backward(tp.val(x), scale, tp.grad(self), tp.grad(x));
    });
}

template <class T>
int activation(Tape<T>& t, int x, ActKind kind) {
    if (kind == ActKind::Silu) {
        // Cache the sigmoid so the backward pass needs no exp calls.
        Tensor4<T> sig = masf::activation(t.val(x), ActKind::Sigmoid);
        Tensor4<T> y = mul_broadcast(t.val(x), sig);
        return t.push(std::move(y), [x, sig](Tape<T>& tp, int self) {
            const Tensor4<T>& xv = tp.val(x);
            const Tensor4<T>& g = tp.grad(self);
            Tensor4<T>& dx = tp.grad(x);
            const T* xs = xv.data();
            const T* ss = sig.data();
            const T* gs = g.data();
            T* d = dx.data();
            parallel_chunks(xv.numel(), [&](int64_t i0, int64_t i1) {
                for (int64_t i = i0; i < i1; ++i) {
                    const T s = ss[i];
                    d[i] += gs[i] * (s + xs[i] * s * (T(1) - s));
                }
            });
        });
    }
    Tensor4<T> y = masf::activation(t.val(x), kind);
    return t.push(std::move(y), [x, kind](Tape<T>& tp, int self) {
        activation_backward(tp.val(x), tp.val(self), kind, tp.grad(self), tp.grad(x));
    });
}

// Inference-mode batch norm; mean/var are fixed buffers, not tape nodes.
template <class T>
int batchnorm_infer(Tape<T>& t, int x, Tensor4<T> mean, Tensor4<T> var, int gamma, int beta) {
    Tensor4<T> y = masf::batchnorm_infer(t.val(x), mean, var, t.val(gamma), t.val(beta));
    return t.push(std::move(y), [x, mean, var, gamma, beta](Tape<T>& tp, int self) {
        batchnorm_infer_backward(tp.val(x), mean, var, tp.val(gamma), tp.grad(self), &tp.grad(x),
                                 &tp.grad(gamma), &tp.grad(beta));
    });
}

// Training-mode batch norm; differentiates through the batch statistics.
// The computed statistics are reported through *stats_out for the running
// average update.
template <class T>
int batchnorm_train(Tape<T>& t, int x, int gamma, int beta, BatchStats<T>* stats_out = nullptr) {
    BatchStats<T> st = batch_statistics(t.val(x));
    if (stats_out) *stats_out = st;
    Tensor4<T> y = masf::batchnorm_train(t.val(x), st, t.val(gamma), t.val(beta));
    return t.push(std::move(y), [x, st, gamma, beta](Tape<T>& tp, int self) {
        batchnorm_train_backward(tp.val(x), st, tp.val(gamma), tp.grad(self), &tp.grad(x),
                                 &tp.grad(gamma), &tp.grad(beta));
    });
}

template <class T>
int groupnorm(Tape<T>& t, int x, int num_groups, int gamma, int beta) {
    Tensor4<T> y = masf::groupnorm(t.val(x), num_groups, t.val(gamma), t.val(beta));
    return t.push(std::move(y), [x, num_groups, gamma, beta](Tape<T>& tp, int self) {
        groupnorm_backward(tp.val(x), num_groups, tp.val(gamma), tp.grad(self), &tp.grad(x),
                           &tp.grad(gamma), &tp.grad(beta));
    });
}

template <class T>
int concat(Tape<T>& t, const std::vector<int>& xs, Axis axis = Axis::Channel) {
    std::vector<Tensor4<T>> vals;
    vals.reserve(xs.size());
    for (int id : xs) vals.push_back(t.val(id));
    Tensor4<T> y = masf::concat(vals, axis);
    return t.push(std::move(y), [xs, axis](Tape<T>& tp, int self) {
        std::vector<int> sizes;
        for (int id : xs) sizes.push_back(tp.val(id).dims()[static_cast<int>(axis)]);
        auto slices = split_sizes(tp.grad(self), sizes, axis);
        for (size_t i = 0; i < xs.size(); ++i) {
            Tensor4<T>& g = tp.grad(xs[i]);
            const T* s = slices[i].data();
            T* d = g.data();
            for (int64_t k = 0; k < g.numel(); ++k) d[k] += s[k];
        }
    });
}

template <class T>
std::vector<int> split_sizes(Tape<T>& t, int x, const std::vector<int>& sizes,
                             Axis axis = Axis::Channel) {
    auto pieces = masf::split_sizes(t.val(x), sizes, axis);
    std::vector<int> out;
    int offset = 0;
    for (size_t i = 0; i < sizes.size(); ++i) {
        out.push_back(t.push(std::move(pieces[i]), [x, axis, offset](Tape<T>& tp, int self) {
            // Scatter this slice's gradient back at its channel/height offset.
            Tensor4<T>& dx = tp.grad(x);
            const Tensor4<T>& g = tp.grad(self);
            if (axis == Axis::Channel) {
                for (int n = 0; n < g.n(); ++n)
                    for (int c = 0; c < g.c(); ++c)
                        for (int h = 0; h < g.h(); ++h)
                            for (int w = 0; w < g.w(); ++w)
                                dx.at(n, offset + c, h, w) += g.at(n, c, h, w);
            } else {
                for (int n = 0; n < g.n(); ++n)
                    for (int c = 0; c < g.c(); ++c)
                        for (int h = 0; h < g.h(); ++h)
                            for (int w = 0; w < g.w(); ++w)
                                dx.at(n, c, offset + h, w) += g.at(n, c, h, w);
            }
        }));
        offset += sizes[i];
    }
    return out;
}

template <class T>
std::vector<int> split(Tape<T>& t, int x, int parts, Axis axis = Axis::Channel) {
    const int extent = t.val(x).dims()[static_cast<int>(axis)];
    if (parts < 1 || extent % parts != 0) {
        throw ConfigError("split: axis extent " + std::to_string(extent) +
                          " not divisible into " + std::to_string(parts) + " parts");
    }
    return split_sizes(t, x, std::vector<int>(parts, extent / parts), axis);
}

// Height-axis split into two runs; used by the directional attention branch.
template <class T>
std::pair<int, int> split_hw(Tape<T>& t, int x, int h, int w) {
    auto v = split_sizes(t, x, {h, w}, Axis::Height);
    return {v[0], v[1]};
}

template <class T>
int matmul(Tape<T>& t, int a, int b) {
    Tensor4<T> y = matmul_batched(t.val(a), t.val(b));
    return t.push(std::move(y), [a, b](Tape<T>& tp, int self) {
        matmul_batched_backward(tp.val(a), tp.val(b), tp.grad(self), &tp.grad(a), &tp.grad(b));
    });
}

// Values are immutable once on the tape, so the view may share the buffer.
template <class T>
int reshape(Tape<T>& t, int x, int n, int c, int h, int w) {
    Tensor4<T> y = t.val(x).reshaped(n, c, h, w);
    return t.push(std::move(y), [x](Tape<T>& tp, int self) {
        Tensor4<T>& dx = tp.grad(x);
        const Tensor4<T>& g = tp.grad(self);
        T* d = dx.data();
        const T* s = g.data();
        for (int64_t i = 0; i < dx.numel(); ++i) d[i] += s[i];
    });
}

template <class T>
int transpose_hw(Tape<T>& t, int x) {
    Tensor4<T> y = masf::transpose_hw(t.val(x));
    return t.push(std::move(y), [x](Tape<T>& tp, int self) {
        Tensor4<T> gt = masf::transpose_hw(tp.grad(self));
        Tensor4<T>& dx = tp.grad(x);
        T* d = dx.data();
        const T* s = gt.data();
        for (int64_t i = 0; i < dx.numel(); ++i) d[i] += s[i];
    });
}

template <class T>
int add(Tape<T>& t, int a, int b) {
    Tensor4<T> y = masf::add(t.val(a), t.val(b));
    return t.push(std::move(y), [a, b](Tape<T>& tp, int self) {
        const Tensor4<T>& g = tp.grad(self);
        Tensor4<T>& da = tp.grad(a);
        Tensor4<T>& db = tp.grad(b);
        const T* s = g.data();
        T* pa = da.data();
        T* pb = db.data();
        for (int64_t i = 0; i < g.numel(); ++i) {
            pa[i] += s[i];
            pb[i] += s[i];
        }
    });
}

template <class T>
int affine(Tape<T>& t, int x, T k, T c) {
    Tensor4<T> y = masf::affine(t.val(x), k, c);
    return t.push(std::move(y), [x, k](Tape<T>& tp, int self) {
        const Tensor4<T>& g = tp.grad(self);
        Tensor4<T>& dx = tp.grad(x);
        const T* s = g.data();
        T* d = dx.data();
        for (int64_t i = 0; i < g.numel(); ++i) d[i] += k * s[i];
    });
}

template <class T>
int mul(Tape<T>& t, int a, int b) {
    Tensor4<T> y = mul_broadcast(t.val(a), t.val(b));
    return t.push(std::move(y), [a, b](Tape<T>& tp, int self) {
        mul_broadcast_backward(tp.val(a), tp.val(b), tp.grad(self), &tp.grad(a), &tp.grad(b));
    });
}

template <class T>
int sum_all(Tape<T>& t, int x) {
    Tensor4<T> y = Tensor4<T>::scalar(masf::sum_all(t.val(x)));
    return t.push(std::move(y), [x](Tape<T>& tp, int self) {
        const T g = tp.grad(self).data()[0];
        Tensor4<T>& dx = tp.grad(x);
        T* d = dx.data();
        for (int64_t i = 0; i < dx.numel(); ++i) d[i] += g;
    });
}

}  // namespace ops

// --- finite-difference verification ------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    int worst_tensor = -1;
    int64_t worst_index = -1;
    bool finite = true;       // false if an analytic gradient is NaN/inf
    int64_t bad_index = -1;   // offending parameter on non-finite failure
    int64_t checked = 0;

    bool passed(double tol) const { return finite && max_rel_error < tol; }
};

// Central differences against precomputed analytic gradients.
//   loss_fn       recomputes the scalar loss from the tensors' current values
//   params        tensors perturbed in place
//   analytic      matching gradients (same shapes)
//   max_per_tensor  when >= 0, check at most this many entries per tensor,
//                   sampled reproducibly
template <class T>
GradCheckReport grad_check(const std::function<T()>& loss_fn,
                           const std::vector<Tensor4<T>*>& params,
                           const std::vector<const Tensor4<T>*>& analytic, T eps = T(1e-4),
                           int64_t max_per_tensor = -1, uint64_t sample_seed = 7) {
    GradCheckReport rep;
    for (size_t ti = 0; ti < params.size(); ++ti) {
        Tensor4<T>& p = *params[ti];
        const Tensor4<T>& a = *analytic[ti];
        std::vector<int64_t> idx;
        if (max_per_tensor >= 0 && p.numel() > max_per_tensor) {
            SplitMix64 rng(sample_seed + ti);
            for (int64_t k = 0; k < max_per_tensor; ++k) {
                idx.push_back(static_cast<int64_t>(rng.next_below(p.numel())));
            }
        } else {
            idx.resize(p.numel());
            for (int64_t k = 0; k < p.numel(); ++k) idx[k] = k;
        }
        for (int64_t i : idx) {
            const T ag = a.data()[i];
            if (!std::isfinite(static_cast<double>(ag))) {
                rep.finite = false;
                rep.worst_tensor = static_cast<int>(ti);
                rep.bad_index = i;
                return rep;
            }
            const T saved = p.data()[i];
            p.data()[i] = saved + eps;
            const T lp = loss_fn();
            p.data()[i] = saved - eps;
            const T lm = loss_fn();
            p.data()[i] = saved;
            const double num = static_cast<double>(lp - lm) / (2.0 * static_cast<double>(eps));
            const double rel =
                std::abs(static_cast<double>(ag) - num) / std::max(1.0, std::abs(num));
            ++rep.checked;
            if (rel > rep.max_rel_error) {
                rep.max_rel_error = rel;
                rep.worst_tensor = static_cast<int>(ti);
                rep.worst_index = i;
            }
        }
    }
    return rep;
}

}  // namespace masf
