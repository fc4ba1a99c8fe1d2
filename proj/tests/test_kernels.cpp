#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "masf/kernels.hpp"
#include "oracle_ref.hpp"

using namespace masf;

TEST_CASE("conv2d identity kernel") {
    Tensor x = Tensor::full(1, 1, 3, 3, 1.f);
    Tensor w = Tensor::full(1, 1, 1, 1, 1.f);
    Tensor y = conv2d(x, w, Tensor(), ConvSpec::make(1, 1, 1, 1, 1, 0, 0, 1, false));
    REQUIRE(y.same_shape(x));
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 1.f);
}

TEST_CASE("conv2d all-ones 3x3 on all-ones input") {
    Tensor x = Tensor::full(1, 1, 3, 3, 1.f);
    Tensor w = Tensor::full(1, 1, 3, 3, 1.f);
    Tensor y = conv2d(x, w, Tensor(), ConvSpec::make(1, 1, 3, 3, 1, 1, 1, 1, false));
    CHECK(y.at(0, 0, 1, 1) == 9.f);   // center
    CHECK(y.at(0, 0, 0, 0) == 4.f);   // corner
    CHECK(y.at(0, 0, 0, 1) == 6.f);   // edge center
    CHECK(y.at(0, 0, 2, 1) == 6.f);
}

TEST_CASE("conv2d vs naive oracle, 100 seeds") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        SplitMix64 rng(seed);
        Tensor x = Tensor::uniform(2, 4, 8, 8, rng);
        Tensor w = Tensor::uniform(8, 4, 3, 3, rng);
        Tensor b = Tensor::uniform(1, 8, 1, 1, rng);
        ConvSpec s = ConvSpec::make(4, 8, 3, 3, 1, 1, 1);
        CHECK(oracle::max_rel_diff(conv2d(x, w, b, s), oracle::conv2d_naive(x, w, b, s)) < 1e-6);
    }
}

TEST_CASE("conv2d strided, grouped, asymmetric vs oracle") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        SplitMix64 rng(900 + seed);
        // stride 2
        {
            Tensor x = Tensor::uniform(1, 3, 9, 11, rng);
            Tensor w = Tensor::uniform(6, 3, 3, 3, rng);
            ConvSpec s = ConvSpec::make(3, 6, 3, 3, 2, 1, 1, 1, false);
            CHECK(oracle::max_rel_diff(conv2d(x, w, Tensor(), s),
                                       oracle::conv2d_naive(x, w, Tensor(), s)) < 1e-6);
        }
        // grouped (2 groups)
        {
            Tensor x = Tensor::uniform(2, 4, 6, 6, rng);
            Tensor w = Tensor::uniform(8, 2, 3, 3, rng);
            ConvSpec s = ConvSpec::make(4, 8, 3, 3, 1, 1, 1, 2);
            Tensor b = Tensor::uniform(1, 8, 1, 1, rng);
            CHECK(oracle::max_rel_diff(conv2d(x, w, b, s), oracle::conv2d_naive(x, w, b, s)) <
                  1e-6);
        }
        // depthwise band kernels 1x5 and 5x1
        {
            Tensor x = Tensor::uniform(1, 4, 7, 7, rng);
            Tensor w1 = Tensor::uniform(4, 1, 1, 5, rng);
            ConvSpec s1 = ConvSpec::depthwise(4, 1, 5);
            CHECK(oracle::max_rel_diff(conv2d(x, w1, Tensor4<float>(), s1),
                                       oracle::conv2d_naive(x, w1, Tensor4<float>(), s1)) < 1e-6);
            Tensor w2 = Tensor::uniform(4, 1, 5, 1, rng);
            ConvSpec s2 = ConvSpec::depthwise(4, 5, 1);
            CHECK(oracle::max_rel_diff(conv2d(x, w2, Tensor4<float>(), s2),
                                       oracle::conv2d_naive(x, w2, Tensor4<float>(), s2)) < 1e-6);
        }
        // pointwise fast path
        {
            Tensor x = Tensor::uniform(2, 5, 4, 4, rng);
            Tensor w = Tensor::uniform(7, 5, 1, 1, rng);
            ConvSpec s = ConvSpec::make(5, 7, 1, 1, 1, 0, 0);
            Tensor b = Tensor::uniform(1, 7, 1, 1, rng);
            CHECK(oracle::max_rel_diff(conv2d(x, w, b, s), oracle::conv2d_naive(x, w, b, s)) <
                  1e-6);
        }
    }
}

TEST_CASE("conv2d shape errors carry both shapes") {
    Tensor x(1, 3, 8, 8);
    Tensor w(8, 4, 3, 3);
    ConvSpec s = ConvSpec::same(4, 8, 3);
    CHECK_THROWS_WITH_AS(conv2d(x, w, Tensor(), s),
                         doctest::Contains("in_channels"), ConfigError);
    Tensor w_bad(8, 3, 5, 3);
    ConvSpec s2 = ConvSpec::same(3, 8, 3);
    CHECK_THROWS_AS(conv2d(x, w_bad, Tensor(), s2), ConfigError);
}

TEST_CASE("pooling: constants and arithmetic") {
    Tensor c = Tensor::full(2, 3, 4, 5, 2.5f);
    for (PoolKind k : {PoolKind::GlobalAvg, PoolKind::AvgAlongH, PoolKind::AvgAlongW}) {
        Tensor y = pool(c, k);
        for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(2.5f));
    }
    Tensor t(1, 1, 2, 2);
    t.at(0, 0, 0, 0) = 1;
    t.at(0, 0, 0, 1) = 2;
    t.at(0, 0, 1, 0) = 3;
    t.at(0, 0, 1, 1) = 4;
    Tensor ah = pool(t, PoolKind::AvgAlongH);
    CHECK(ah.at(0, 0, 0, 0) == 2.f);
    CHECK(ah.at(0, 0, 0, 1) == 3.f);
    Tensor aw = pool(t, PoolKind::AvgAlongW);
    CHECK(aw.at(0, 0, 0, 0) == 1.5f);
    CHECK(aw.at(0, 0, 1, 0) == 3.5f);
    Tensor mx = pool(t, PoolKind::Stride2Max);
    CHECK(mx.at(0, 0, 0, 0) == 4.f);
}

TEST_CASE("pooling vs scalar oracles, 100 seeds") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        SplitMix64 rng(3000 + seed);
        Tensor x = Tensor::uniform(2, 3, 6, 6, rng);
        CHECK(oracle::max_rel_diff(pool(x, PoolKind::GlobalAvg), oracle::global_avg_naive(x)) <
              1e-7);
        CHECK(oracle::max_rel_diff(pool(x, PoolKind::AvgAlongH), oracle::avg_along_h_naive(x)) <
              1e-6);
        CHECK(oracle::max_rel_diff(pool(x, PoolKind::AvgAlongW), oracle::avg_along_w_naive(x)) <
              1e-6);
        CHECK(oracle::max_abs_diff(pool(x, PoolKind::Stride2Max), oracle::stride2_max_naive(x)) ==
              0.0);
    }
}

TEST_CASE("stride2_max dimension error") {
    Tensor tiny(1, 1, 1, 4);
    CHECK_THROWS_AS(pool(tiny, PoolKind::Stride2Max), ConfigError);
}

TEST_CASE("resize_nearest identity and duplication") {
    SplitMix64 rng(5);
    Tensor x = Tensor::uniform(1, 2, 3, 3, rng);
    Tensor same = resize_nearest(x, 1);
    CHECK(oracle::max_abs_diff(same, x) == 0.0);

    Tensor ab(1, 1, 1, 2);
    ab.at(0, 0, 0, 0) = 3.f;
    ab.at(0, 0, 0, 1) = 7.f;
    Tensor up = resize_nearest(ab, 2);
    REQUIRE(up.h() == 2);
    REQUIRE(up.w() == 4);
    for (int h = 0; h < 2; ++h) {
        CHECK(up.at(0, 0, h, 0) == 3.f);
        CHECK(up.at(0, 0, h, 1) == 3.f);
        CHECK(up.at(0, 0, h, 2) == 7.f);
        CHECK(up.at(0, 0, h, 3) == 7.f);
    }
}

TEST_CASE("resize_nearest round trip recovers input") {
    SplitMix64 rng(6);
    Tensor x = Tensor::uniform(1, 2, 3, 3, rng);
    Tensor up = resize_nearest(x, 3);
    for (int c = 0; c < 2; ++c)
        for (int h = 0; h < 3; ++h)
            for (int w = 0; w < 3; ++w) CHECK(up.at(0, c, 3 * h, 3 * w) == x.at(0, c, h, w));
}

TEST_CASE("activations: fixed points and oracles") {
    Tensor z = Tensor::scalar(0.f);
    CHECK(activation(z, ActKind::Sigmoid).data()[0] == 0.5f);

    Tensor eq = Tensor::full(1, 5, 1, 1, 3.25f);
    Tensor sm = activation(eq, ActKind::SoftmaxChannels);
    for (int c = 0; c < 5; ++c) CHECK(sm.at(0, c, 0, 0) == doctest::Approx(0.2f).epsilon(1e-6));

    // silu vs the elementwise double-precision formula
    SplitMix64 rng(77);
    Tensor4<double> x = Tensor4<double>::uniform(2, 3, 4, 4, rng, -6.0, 6.0);
    Tensor4<double> si = activation(x, ActKind::Silu);
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double xv = x.data()[i];
        const double want = xv / (1.0 + std::exp(-xv));
        CHECK(std::abs(si.data()[i] - want) < 1e-7);
    }
    Tensor4<double> sg = activation(x, ActKind::Sigmoid);
    for (int64_t i = 0; i < x.numel(); ++i) {
        CHECK(sg.data()[i] > 0.0);
        CHECK(sg.data()[i] < 1.0);
    }
    // extreme inputs stay finite and in range
    Tensor4<double> hot(1, 1, 1, 2);
    hot.data()[0] = 500.0;
    hot.data()[1] = -500.0;
    Tensor4<double> hs = activation(hot, ActKind::Sigmoid);
    CHECK(hs.data()[0] == 1.0);
    CHECK(hs.data()[1] > 0.0);
    CHECK(std::isfinite(activation(hot, ActKind::Silu).data()[1]));
}

TEST_CASE("softmax columns sum to one") {
    SplitMix64 rng(78);
    Tensor x = Tensor::uniform(2, 7, 3, 3, rng, -30.f, 30.f);
    Tensor y = activation(x, ActKind::SoftmaxChannels);
    for (int n = 0; n < 2; ++n)
        for (int h = 0; h < 3; ++h)
            for (int w = 0; w < 3; ++w) {
                double s = 0;
                for (int c = 0; c < 7; ++c) s += y.at(n, c, h, w);
                CHECK(std::abs(s - 1.0) < 1e-6);
            }
}

TEST_CASE("groupnorm: constant groups collapse to beta") {
    Tensor x(2, 8, 4, 4);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 8; ++c)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 4; ++w) x.at(n, c, h, w) = static_cast<float>(c / 4 + 1);
    Tensor gamma = Tensor::full(1, 8, 1, 1, 1.f);
    Tensor beta(1, 8, 1, 1);
    Tensor y = groupnorm(x, 2, gamma, beta);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y.data()[i]) < 1e-6f);
}

TEST_CASE("groupnorm moments are 0/1 before affine") {
    SplitMix64 rng(91);
    Tensor4<double> x = Tensor4<double>::uniform(2, 12, 5, 5, rng, -3.0, 3.0);
    Tensor4<double> gamma = Tensor4<double>::full(1, 12, 1, 1, 1.0);
    Tensor4<double> beta(1, 12, 1, 1);
    const int groups = 3, Cg = 4;
    Tensor4<double> y = groupnorm(x, groups, gamma, beta);
    for (int n = 0; n < 2; ++n) {
        for (int g = 0; g < groups; ++g) {
            double sum = 0, sq = 0;
            for (int lc = 0; lc < Cg; ++lc)
                for (int h = 0; h < 5; ++h)
                    for (int w = 0; w < 5; ++w) {
                        const double v = y.at(n, g * Cg + lc, h, w);
                        sum += v;
                        sq += v * v;
                    }
            const double count = Cg * 25;
            const double mean = sum / count;
            const double var = sq / count - mean * mean;
            CHECK(std::abs(mean) < 1e-5);
            CHECK(std::abs(var - 1.0) < 1e-3);  // epsilon shifts variance slightly below 1
        }
    }
}

TEST_CASE("batchnorm_infer identity parameters") {
    SplitMix64 rng(92);
    Tensor x = Tensor::uniform(2, 4, 3, 3, rng);
    Tensor mean(1, 4, 1, 1);
    Tensor var = Tensor::full(1, 4, 1, 1, 1.f);
    Tensor gamma = Tensor::full(1, 4, 1, 1, 1.f);
    Tensor beta(1, 4, 1, 1);
    Tensor y = batchnorm_infer(x, mean, var, gamma, beta);
    // variance 1 + epsilon keeps this a near-identity
    CHECK(oracle::max_rel_diff(y, x) < 1e-4);
}

TEST_CASE("batchnorm_train uses biased variance") {
    Tensor x(1, 1, 1, 2);
    x.data()[0] = 0.f;
    x.data()[1] = 2.f;
    BatchStats<float> st = batch_statistics(x);
    CHECK(st.mean.data()[0] == 1.f);
    CHECK(st.var.data()[0] == 1.f);  // ((0-1)^2 + (2-1)^2) / 2
}

TEST_CASE("split/concat round trip is bit exact") {
    SplitMix64 rng(13);
    Tensor x = Tensor::uniform(2, 8, 3, 3, rng);
    auto parts = split(x, 4);
    REQUIRE(parts.size() == 4);
    for (auto& p : parts) CHECK(p.c() == 2);
    Tensor back = concat(parts);
    CHECK(oracle::max_abs_diff(back, x) == 0.0);

    // concat of one tensor is the identity
    Tensor one = concat(std::vector<Tensor>{x});
    CHECK(oracle::max_abs_diff(one, x) == 0.0);
}

TEST_CASE("concat of three then indexed reads match sources") {
    SplitMix64 rng(14);
    Tensor a = Tensor::uniform(1, 2, 3, 3, rng);
    Tensor b = Tensor::uniform(1, 3, 3, 3, rng);
    Tensor c = Tensor::uniform(1, 1, 3, 3, rng);
    Tensor y = concat(std::vector<Tensor>{a, b, c});
    REQUIRE(y.c() == 6);
    for (int h = 0; h < 3; ++h)
        for (int w = 0; w < 3; ++w) {
            CHECK(y.at(0, 0, h, w) == a.at(0, 0, h, w));
            CHECK(y.at(0, 2, h, w) == b.at(0, 0, h, w));
            CHECK(y.at(0, 5, h, w) == c.at(0, 0, h, w));
        }
}

TEST_CASE("split error names C and parts") {
    Tensor x(1, 7, 2, 2);
    CHECK_THROWS_WITH_AS(split(x, 4), doctest::Contains("7"), ConfigError);
}

TEST_CASE("concat along H supports the attention pathway") {
    SplitMix64 rng(15);
    Tensor xh = Tensor::uniform(1, 2, 4, 1, rng);
    Tensor xw = Tensor::uniform(1, 2, 3, 1, rng);
    Tensor y = concat(std::vector<Tensor>{xh, xw}, Axis::Height);
    REQUIRE(y.h() == 7);
    auto back = split_sizes(y, {4, 3}, Axis::Height);
    CHECK(oracle::max_abs_diff(back[0], xh) == 0.0);
    CHECK(oracle::max_abs_diff(back[1], xw) == 0.0);
}

TEST_CASE("matmul: identity and all-ones") {
    Tensor eye(1, 1, 2, 2);
    eye.at(0, 0, 0, 0) = 1;
    eye.at(0, 0, 1, 1) = 1;
    Tensor m(1, 1, 2, 2);
    m.at(0, 0, 0, 0) = 1;
    m.at(0, 0, 0, 1) = 2;
    m.at(0, 0, 1, 0) = 3;
    m.at(0, 0, 1, 1) = 4;
    Tensor y = matmul_batched(m, eye);
    CHECK(oracle::max_abs_diff(y, m) == 0.0);

    Tensor ones = Tensor::full(1, 1, 2, 2, 1.f);
    Tensor z = matmul_batched(m, ones);
    CHECK(z.at(0, 0, 0, 0) == 3.f);
    CHECK(z.at(0, 0, 0, 1) == 3.f);
    CHECK(z.at(0, 0, 1, 0) == 7.f);
    CHECK(z.at(0, 0, 1, 1) == 7.f);
}

TEST_CASE("matmul vs triple-loop oracle") {
    for (uint64_t seed = 0; seed < 50; ++seed) {
        SplitMix64 rng(4000 + seed);
        Tensor a = Tensor::uniform(2, 3, 4, 6, rng);
        Tensor b = Tensor::uniform(2, 3, 6, 5, rng);
        CHECK(oracle::max_rel_diff(matmul_batched(a, b), oracle::matmul_naive(a, b)) < 1e-6);
    }
    Tensor a(1, 1, 2, 3), b(1, 1, 4, 2);
    CHECK_THROWS_AS(matmul_batched(a, b), ConfigError);
}

TEST_CASE("kernels are deterministic across repeated runs") {
    SplitMix64 rng(222);
    Tensor x = Tensor::uniform(2, 4, 8, 8, rng);
    Tensor w = Tensor::uniform(8, 4, 3, 3, rng);
    ConvSpec s = ConvSpec::same(4, 8, 3);
    Tensor y1 = conv2d(x, w, Tensor(), s);
    Tensor y2 = conv2d(x, w, Tensor(), s);
    CHECK(oracle::max_abs_diff(y1, y2) == 0.0);
    Tensor g1 = groupnorm(x, 2, Tensor::full(1, 4, 1, 1, 1.f), Tensor(1, 4, 1, 1));
    Tensor g2 = groupnorm(x, 2, Tensor::full(1, 4, 1, 1, 1.f), Tensor(1, 4, 1, 1));
    CHECK(oracle::max_abs_diff(g1, g2) == 0.0);
}

TEST_CASE("broadcast multiply") {
    SplitMix64 rng(33);
    Tensor x = Tensor::uniform(2, 3, 4, 5, rng);
    Tensor mh = Tensor::uniform(2, 3, 4, 1, rng);
    Tensor y = mul_broadcast(x, mh);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 5; ++w)
                    CHECK(y.at(n, c, h, w) == x.at(n, c, h, w) * mh.at(n, c, h, 0));
    Tensor bad(2, 3, 2, 5);
    CHECK_THROWS_AS(mul_broadcast(x, bad), ConfigError);
}
