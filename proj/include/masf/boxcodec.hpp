#pragma once

#include <cmath>

// Box parametrization shared by the loss and the inference decoder:
//   center = (cell + sigmoid(t)) * stride
//   size   = stride * exp(ln 8 - softplus(ln 8 - t))
// The size map behaves like e^t for small t and saturates at 8 * stride.
// Everything is templated on the scalar type so a dual number can ride
// through for derivatives.

namespace masf {

constexpr double kSizeCapLog = 2.0794415416798357;  // ln 8

template <class S>
S softplus_s(S x) {
    using std::exp;
    using std::log1p;
    if (x > S(20)) return x;
    if (x < S(-20)) return exp(x);
    return log1p(exp(x));
}

template <class S>
S sigmoid_s(S x) {
    using std::exp;
    if (x >= S(0)) return S(1) / (S(1) + exp(-x));
    const S e = exp(x);
    return e / (S(1) + e);
}

template <class S>
S size_multiplier_s(S t) {
    using std::exp;
    return exp(S(kSizeCapLog) - softplus_s(S(kSizeCapLog) - t));
}

}  // namespace masf
