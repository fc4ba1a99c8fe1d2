#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "masf/autograd.hpp"

using namespace masf;
using DTensor = Tensor4<double>;
using DTape = Tape<double>;

namespace {

// Builds the graph, runs backward once, then verifies every parameter
// against central finite differences.
GradCheckReport check_graph(std::vector<DTensor*> params,
                            const std::function<int(DTape&, const std::vector<int>&)>& build,
                            double eps = 1e-4) {
    auto forward = [&]() -> double {
        DTape t;
        std::vector<int> ids;
        ids.reserve(params.size());
        for (auto* p : params) ids.push_back(t.leaf(*p));
        return t.val(build(t, ids)).data()[0];
    };
    DTape t;
    std::vector<int> ids;
    for (auto* p : params) ids.push_back(t.leaf(*p));
    const int root = build(t, ids);
    t.backward(root);
    std::vector<DTensor> grads;
    grads.reserve(params.size());
    for (int id : ids) grads.push_back(t.grad(id));
    std::vector<const DTensor*> gptrs;
    for (auto& g : grads) gptrs.push_back(&g);
    return grad_check<double>(forward, params, gptrs, eps);
}

}  // namespace

TEST_CASE("linear map gradient is exact") {
    // y = sum(w * x): d/dw = x
    SplitMix64 rng(1);
    DTensor x = DTensor::uniform(1, 1, 3, 3, rng);
    DTensor w = DTensor::uniform(1, 1, 3, 3, rng);
    DTape t;
    const int xi = t.leaf(x), wi = t.leaf(w);
    const int root = ops::sum_all(t, ops::mul(t, xi, wi));
    t.backward(root);
    const DTensor& dw = t.grad(wi);
    for (int64_t i = 0; i < x.numel(); ++i) {
        CHECK(std::abs(dw.data()[i] - x.data()[i]) < 1e-10);
    }
    // the checker itself reports a vanishing error on a linear function
    auto rep = check_graph({&w}, [&](DTape& tp, const std::vector<int>& ids) {
        return ops::sum_all(tp, ops::mul(tp, tp.leaf(x), ids[0]));
    });
    CHECK(rep.max_rel_error < 1e-10);
}

TEST_CASE("conv2d gradients (weights, bias, input)") {
    SplitMix64 rng(2);
    DTensor x = DTensor::uniform(1, 2, 5, 5, rng);
    DTensor w = DTensor::uniform(3, 2, 3, 3, rng, -0.5, 0.5);
    DTensor b = DTensor::uniform(1, 3, 1, 1, rng, -0.1, 0.1);
    ConvSpec s = ConvSpec::same(2, 3, 3);
    auto rep = check_graph({&x, &w, &b}, [&](DTape& t, const std::vector<int>& ids) {
        int y = ops::conv2d(t, ids[0], ids[1], ids[2], s);
        return ops::sum_all(t, ops::activation(t, y, ActKind::Sigmoid));
    });
    CHECK(rep.max_rel_error < 1e-4);
    CHECK(rep.finite);
}

TEST_CASE("strided and grouped conv gradients") {
    SplitMix64 rng(3);
    DTensor x = DTensor::uniform(2, 4, 6, 6, rng);
    DTensor w = DTensor::uniform(4, 2, 3, 3, rng, -0.5, 0.5);
    ConvSpec s = ConvSpec::make(4, 4, 3, 3, 2, 1, 1, 2);
    auto rep = check_graph({&x, &w}, [&](DTape& t, const std::vector<int>& ids) {
        int y = ops::conv2d(t, ids[0], ids[1], -1, s);
        return ops::sum_all(t, ops::activation(t, y, ActKind::Silu));
    });
    CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("depthwise conv gradients, square and band kernels") {
    SplitMix64 rng(4);
    DTensor x = DTensor::uniform(1, 3, 6, 6, rng);
    for (auto [kh, kw] : {std::pair{3, 3}, std::pair{1, 5}, std::pair{5, 1}}) {
        DTensor w = DTensor::uniform(3, 1, kh, kw, rng, -0.5, 0.5);
        ConvSpec s = ConvSpec::depthwise(3, kh, kw);
        auto rep = check_graph({&x, &w}, [&](DTape& t, const std::vector<int>& ids) {
            int y = ops::conv2d(t, ids[0], ids[1], -1, s);
            return ops::sum_all(t, ops::activation(t, y, ActKind::Sigmoid));
        });
        CHECK(rep.max_rel_error < 1e-4);
    }
}

TEST_CASE("pooling gradients") {
    SplitMix64 rng(5);
    for (PoolKind k : {PoolKind::GlobalAvg, PoolKind::AvgAlongH, PoolKind::AvgAlongW,
                       PoolKind::Stride2Max}) {
        DTensor x = DTensor::uniform(2, 3, 4, 4, rng);
        auto rep = check_graph({&x}, [&](DTape& t, const std::vector<int>& ids) {
            int y = ops::pool(t, ids[0], k);
            return ops::sum_all(t, ops::activation(t, y, ActKind::Sigmoid));
        });
        CHECK(rep.max_rel_error < 1e-4);
    }
}

TEST_CASE("resize_nearest gradient") {
    SplitMix64 rng(6);
    DTensor x = DTensor::uniform(1, 2, 3, 3, rng);
    auto rep = check_graph({&x}, [&](DTape& t, const std::vector<int>& ids) {
        int y = ops::resize_nearest(t, ids[0], 2);
        return ops::sum_all(t, ops::activation(t, y, ActKind::Silu));
    });
    CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("activation gradients") {
    SplitMix64 rng(7);
    for (ActKind k : {ActKind::Sigmoid, ActKind::Silu, ActKind::SoftmaxChannels}) {
        DTensor x = DTensor::uniform(1, 4, 3, 3, rng, -2.0, 2.0);
        DTensor m = DTensor::uniform(1, 4, 3, 3, rng);  // mix so softmax grads are nonzero
        auto rep = check_graph({&x, &m}, [&](DTape& t, const std::vector<int>& ids) {
            int y = ops::activation(t, ids[0], k);
            return ops::sum_all(t, ops::mul(t, y, ids[1]));
        });
        CHECK(rep.max_rel_error < 1e-4);
    }
}

TEST_CASE("batchnorm gradients, train and infer") {
    SplitMix64 rng(8);
    DTensor x = DTensor::uniform(2, 3, 4, 4, rng);
    DTensor gamma = DTensor::uniform(1, 3, 1, 1, rng, 0.5, 1.5);
    DTensor beta = DTensor::uniform(1, 3, 1, 1, rng, -0.2, 0.2);

    auto rep_train = check_graph({&x, &gamma, &beta},
                                 [&](DTape& t, const std::vector<int>& ids) {
                                     int y = ops::batchnorm_train(t, ids[0], ids[1], ids[2]);
                                     return ops::sum_all(
                                         t, ops::activation(t, y, ActKind::Sigmoid));
                                 });
    CHECK(rep_train.max_rel_error < 1e-4);

    DTensor mean = DTensor::uniform(1, 3, 1, 1, rng, -0.3, 0.3);
    DTensor var = DTensor::uniform(1, 3, 1, 1, rng, 0.5, 1.5);
    auto rep_inf = check_graph({&x, &gamma, &beta}, [&](DTape& t, const std::vector<int>& ids) {
        int y = ops::batchnorm_infer(t, ids[0], mean, var, ids[1], ids[2]);
        return ops::sum_all(t, ops::activation(t, y, ActKind::Sigmoid));
    });
    CHECK(rep_inf.max_rel_error < 1e-4);
}

TEST_CASE("groupnorm gradient") {
    SplitMix64 rng(9);
    DTensor x = DTensor::uniform(2, 8, 3, 3, rng);
    DTensor gamma = DTensor::uniform(1, 8, 1, 1, rng, 0.5, 1.5);
    DTensor beta = DTensor::uniform(1, 8, 1, 1, rng, -0.2, 0.2);
    auto rep = check_graph({&x, &gamma, &beta}, [&](DTape& t, const std::vector<int>& ids) {
        int y = ops::groupnorm(t, ids[0], 2, ids[1], ids[2]);
        return ops::sum_all(t, ops::activation(t, y, ActKind::Sigmoid));
    });
    CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("concat/split gradients on both axes") {
    SplitMix64 rng(10);
    DTensor a = DTensor::uniform(1, 2, 3, 3, rng);
    DTensor b = DTensor::uniform(1, 4, 3, 3, rng);
    auto rep = check_graph({&a, &b}, [&](DTape& t, const std::vector<int>& ids) {
        int y = ops::concat(t, {ids[0], ids[1]});
        auto parts = ops::split(t, y, 3);
        int z = ops::mul(t, parts[0], parts[2]);
        return ops::sum_all(t, ops::activation(t, z, ActKind::Sigmoid));
    });
    CHECK(rep.max_rel_error < 1e-4);

    DTensor c = DTensor::uniform(1, 2, 4, 1, rng);
    DTensor d = DTensor::uniform(1, 2, 2, 1, rng);
    auto rep_h = check_graph({&c, &d}, [&](DTape& t, const std::vector<int>& ids) {
        int y = ops::concat(t, {ids[0], ids[1]}, Axis::Height);
        auto parts = ops::split(t, y, 2, Axis::Height);
        int z = ops::add(t, parts[0], parts[1]);
        return ops::sum_all(t, ops::activation(t, z, ActKind::Silu));
    });
    CHECK(rep_h.max_rel_error < 1e-4);
}

TEST_CASE("matmul, transpose, reshape gradients") {
    SplitMix64 rng(11);
    DTensor a = DTensor::uniform(2, 2, 3, 4, rng);
    DTensor b = DTensor::uniform(2, 2, 4, 2, rng);
    auto rep = check_graph({&a, &b}, [&](DTape& t, const std::vector<int>& ids) {
        int y = ops::matmul(t, ids[0], ids[1]);
        int z = ops::transpose_hw(t, y);
        int r = ops::reshape(t, z, 2, 1, 2, 2 * 3);
        return ops::sum_all(t, ops::activation(t, r, ActKind::Sigmoid));
    });
    CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("broadcast multiply and affine gradients") {
    SplitMix64 rng(12);
    DTensor x = DTensor::uniform(1, 3, 4, 4, rng);
    DTensor mh = DTensor::uniform(1, 3, 4, 1, rng);
    DTensor mw = DTensor::uniform(1, 3, 1, 4, rng);
    auto rep = check_graph({&x, &mh, &mw}, [&](DTape& t, const std::vector<int>& ids) {
        int g1 = ops::mul(t, ids[0], ids[1]);
        int g2 = ops::mul(t, g1, ids[2]);
        int a = ops::affine(t, g2, -1.0, 1.0);
        return ops::sum_all(t, ops::activation(t, a, ActKind::Sigmoid));
    });
    CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("fan-out accumulates gradients from every consumer") {
    SplitMix64 rng(13);
    DTensor x = DTensor::uniform(1, 2, 3, 3, rng);
    auto rep = check_graph({&x}, [&](DTape& t, const std::vector<int>& ids) {
        int s1 = ops::activation(t, ids[0], ActKind::Sigmoid);
        int s2 = ops::activation(t, ids[0], ActKind::Silu);
        int y = ops::add(t, s1, s2);
        int z = ops::mul(t, y, ids[0]);  // third use of x
        return ops::sum_all(t, z);
    });
    CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("non-finite gradients are reported with the parameter index") {
    DTensor x = DTensor::full(1, 1, 1, 3, 1.0);
    x.data()[1] = std::nan("");
    auto rep = check_graph({&x}, [&](DTape& t, const std::vector<int>& ids) {
        int y = ops::mul(t, ids[0], ids[0]);
        return ops::sum_all(t, y);
    });
    CHECK_FALSE(rep.finite);
    CHECK(rep.bad_index == 1);
}

TEST_CASE("grad_check sampling is reproducible") {
    SplitMix64 rng(14);
    DTensor x = DTensor::uniform(1, 4, 6, 6, rng);
    DTensor w = DTensor::uniform(4, 4, 3, 3, rng, -0.3, 0.3);
    ConvSpec s = ConvSpec::same(4, 4, 3);
    auto build = [&](DTape& t, const std::vector<int>& ids) {
        int y = ops::conv2d(t, ids[0], ids[1], -1, s);
        return ops::sum_all(t, ops::activation(t, y, ActKind::Sigmoid));
    };
    auto forward = [&]() -> double {
        DTape t;
        std::vector<int> ids{t.leaf(x), t.leaf(w)};
        return t.val(build(t, ids)).data()[0];
    };
    DTape t;
    std::vector<int> ids{t.leaf(x), t.leaf(w)};
    const int root = build(t, ids);
    t.backward(root);
    std::vector<const DTensor*> grads{&t.grad(ids[0]), &t.grad(ids[1])};
    auto r1 = grad_check<double>(forward, {&x, &w}, grads, 1e-4, 20);
    auto r2 = grad_check<double>(forward, {&x, &w}, grads, 1e-4, 20);
    CHECK(r1.checked == 40);
    CHECK(r1.max_rel_error == r2.max_rel_error);
    CHECK(r1.max_rel_error < 1e-4);
}
