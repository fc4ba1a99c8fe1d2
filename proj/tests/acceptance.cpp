// Acceptance suite: one pass/fail line per criterion. Slow end-to-end
// checks (overfit, directional ablation) run last; use --only <substring>
// to run a subset, --list to enumerate.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdarg>
#include <cstring>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "masf/checkpoint.hpp"
#include "masf/train.hpp"
#include "oracle_ref.hpp"

using namespace masf;

namespace {

struct Criterion {
    std::string name;
    std::function<bool(std::string&)> run;
};

std::vector<Criterion>& registry() {
    static std::vector<Criterion> r;
    return r;
}

#define CRITERION(ident, title)                                       \
    bool ident(std::string& detail);                                  \
    const bool ident##_reg = [] {                                     \
        registry().push_back({title, ident});                         \
        return true;                                                  \
    }();                                                              \
    bool ident(std::string& detail)

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

// ---------------------------------------------------------------- kernels

CRITERION(kernel_oracles, "kernel-oracle-suite") {
    double worst = 0;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        SplitMix64 rng(seed);
        // conv: plain, strided, grouped, depthwise square and band, pointwise
        {
            Tensor x = Tensor::uniform(2, 4, 8, 8, rng);
            Tensor w = Tensor::uniform(8, 4, 3, 3, rng);
            Tensor b = Tensor::uniform(1, 8, 1, 1, rng);
            ConvSpec s = ConvSpec::make(4, 8, 3, 3, 1, 1, 1);
            worst = std::max(worst,
                             oracle::max_rel_diff(conv2d(x, w, b, s),
                                                  oracle::conv2d_naive(x, w, b, s)));
        }
        {
            Tensor x = Tensor::uniform(1, 4, 9, 9, rng);
            Tensor w = Tensor::uniform(8, 2, 3, 3, rng);
            ConvSpec s = ConvSpec::make(4, 8, 3, 3, 2, 1, 1, 2, false);
            worst = std::max(worst,
                             oracle::max_rel_diff(conv2d(x, w, Tensor(), s),
                                                  oracle::conv2d_naive(x, w, Tensor(), s)));
        }
        {
            Tensor x = Tensor::uniform(1, 6, 7, 7, rng);
            for (auto [kh, kw] : {std::pair{3, 3}, std::pair{1, 5}, std::pair{5, 1},
                                  std::pair{1, 1}}) {
                Tensor w = Tensor::uniform(6, 1, kh, kw, rng);
                ConvSpec s = ConvSpec::depthwise(6, kh, kw);
                worst = std::max(worst,
                                 oracle::max_rel_diff(conv2d(x, w, Tensor(), s),
                                                      oracle::conv2d_naive(x, w, Tensor(), s)));
            }
        }
        // pooling
        {
            Tensor x = Tensor::uniform(2, 3, 6, 6, rng);
            worst = std::max(worst, oracle::max_rel_diff(pool(x, PoolKind::GlobalAvg),
                                                         oracle::global_avg_naive(x)));
            worst = std::max(worst, oracle::max_rel_diff(pool(x, PoolKind::AvgAlongH),
                                                         oracle::avg_along_h_naive(x)));
            worst = std::max(worst, oracle::max_rel_diff(pool(x, PoolKind::AvgAlongW),
                                                         oracle::avg_along_w_naive(x)));
            worst = std::max(worst, oracle::max_abs_diff(pool(x, PoolKind::Stride2Max),
                                                         oracle::stride2_max_naive(x)));
        }
        // resize round trip
        {
            Tensor x = Tensor::uniform(1, 2, 3, 3, rng);
            Tensor up = resize_nearest(x, 3);
            double d = 0;
            for (int c = 0; c < 2; ++c)
                for (int h = 0; h < 3; ++h)
                    for (int w = 0; w < 3; ++w)
                        d = std::max(d, std::abs(static_cast<double>(up.at(0, c, 3 * h, 3 * w)) -
                                                 x.at(0, c, h, w)));
            worst = std::max(worst, d);
        }
        // activations vs elementwise formulas
        {
            Tensor x = Tensor::uniform(1, 5, 4, 4, rng, -5.f, 5.f);
            Tensor sg = activation(x, ActKind::Sigmoid);
            Tensor si = activation(x, ActKind::Silu);
            for (int64_t i = 0; i < x.numel(); ++i) {
                const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(x.data()[i])));
                worst = std::max(worst, std::abs(sg.data()[i] - s) /
                                            std::max(1.0, std::abs(s)));
                worst = std::max(worst, std::abs(si.data()[i] - x.data()[i] * s) /
                                            std::max(1.0, std::abs(x.data()[i] * s)));
            }
            Tensor sm = activation(x, ActKind::SoftmaxChannels);
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 4; ++w) {
                    double sum = 0;
                    for (int c = 0; c < 5; ++c) sum += sm.at(0, c, h, w);
                    worst = std::max(worst, std::abs(sum - 1.0));
                }
        }
        // matmul
        {
            Tensor a = Tensor::uniform(2, 2, 4, 6, rng);
            Tensor b = Tensor::uniform(2, 2, 6, 5, rng);
            worst = std::max(worst,
                             oracle::max_rel_diff(matmul_batched(a, b), oracle::matmul_naive(a, b)));
        }
        // split/concat identity
        {
            Tensor x = Tensor::uniform(1, 8, 4, 4, rng);
            worst = std::max(worst, oracle::max_abs_diff(concat(split(x, 4)), x));
        }
        // groupnorm moments (double precision)
        {
            Tensor4<double> x = Tensor4<double>::uniform(1, 8, 4, 4, rng, -2.0, 2.0);
            Tensor4<double> y = groupnorm(x, 2, Tensor4<double>::full(1, 8, 1, 1, 1.0),
                                          Tensor4<double>(1, 8, 1, 1));
            for (int g = 0; g < 2; ++g) {
                double sum = 0, sq = 0;
                for (int lc = 0; lc < 4; ++lc)
                    for (int h = 0; h < 4; ++h)
                        for (int w = 0; w < 4; ++w) {
                            sum += y.at(0, g * 4 + lc, h, w);
                            sq += y.at(0, g * 4 + lc, h, w) * y.at(0, g * 4 + lc, h, w);
                        }
                worst = std::max(worst, std::abs(sum / 64.0));
            }
        }
    }
    detail = fmt("max deviation %.3g over 100 seeds (tolerance 1e-6)", worst);
    return worst < 1e-6;
}

// ---------------------------------------------------------------- gradients

using DTensor = Tensor4<double>;
using DTape = Tape<double>;

GradCheckReport check_store(ParamStore<double>& ps, std::vector<DTensor*> extra,
                            const std::function<double(bool, std::vector<int>*)>& runner,
                            int64_t cap = -1) {
    // runner(record, ids): when record, fills ids with extra-leaf node ids
    // and runs on a persistent tape (handled internally via statics is ugly;
    // instead the runner closes over everything and we only need forward).
    (void)ps;
    (void)extra;
    (void)runner;
    (void)cap;
    return {};
}

bool gradient_block_pass(std::string& out, const std::string& label, ParamStore<double>& ps,
                         std::vector<std::pair<DTensor*, int>>& inputs,
                         const std::function<int(DTape&, const std::vector<int>&)>& fwd,
                         double tol, int64_t cap = -1) {
    auto forward = [&]() -> double {
        DTape t;
        ps.bind_all(t);
        std::vector<int> ids;
        for (auto& [ten, id] : inputs) ids.push_back(t.leaf(*ten));
        return t.val(fwd(t, ids)).data()[0];
    };
    DTape t;
    ps.bind_all(t);
    std::vector<int> ids;
    for (auto& [ten, id] : inputs) ids.push_back(t.leaf(*ten));
    const int root = fwd(t, ids);
    t.backward(root);
    std::vector<DTensor*> params;
    std::vector<DTensor> grads;
    for (const auto& p : ps.all()) {
        if (!p->trainable) continue;
        params.push_back(&p->value);
        grads.push_back(t.grad(p->node));
    }
    for (size_t i = 0; i < inputs.size(); ++i) {
        params.push_back(inputs[i].first);
        grads.push_back(t.grad(ids[i]));
    }
    std::vector<const DTensor*> gp;
    for (auto& g : grads) gp.push_back(&g);
    auto rep = grad_check<double>(forward, params, gp, 1e-4, cap);
    out += fmt("%s %.2e (tol %.0e, %lld checks); ", label.c_str(), rep.max_rel_error, tol,
               static_cast<long long>(rep.checked));
    return rep.finite && rep.max_rel_error < tol;
}

CRITERION(gradient_suite, "gradient-suite") {
    bool ok = true;
    SplitMix64 rng(21);
    // elementary kernels at 1e-4
    {
        ParamStore<double> ps;
        DTensor x = DTensor::uniform(1, 2, 5, 5, rng);
        DTensor w = DTensor::uniform(3, 2, 3, 3, rng, -0.5, 0.5);
        DTensor b = DTensor::uniform(1, 3, 1, 1, rng, -0.1, 0.1);
        ConvSpec spec = ConvSpec::same(2, 3, 3);
        std::vector<std::pair<DTensor*, int>> ins{{&x, -1}, {&w, -1}, {&b, -1}};
        ok &= gradient_block_pass(detail, "conv", ps, ins,
                                  [&](DTape& t, const std::vector<int>& ids) {
                                      int y = ops::conv2d(t, ids[0], ids[1], ids[2], spec);
                                      return ops::sum_all(
                                          t, ops::activation(t, y, ActKind::Sigmoid));
                                  },
                                  1e-4);
    }
    // Conv-BN-SiLU block
    {
        ParamStore<double> ps;
        auto blk = ConvBnSilu<double>::create(ps, "b", ConvSpec::same(2, 4, 3), rng);
        DTensor x = DTensor::uniform(2, 2, 5, 5, rng);
        std::vector<std::pair<DTensor*, int>> ins{{&x, -1}};
        ok &= gradient_block_pass(detail, "conv_bn_silu", ps, ins,
                                  [&](DTape& t, const std::vector<int>& ids) {
                                      int y = blk.forward(t, ids[0], true);
                                      return ops::sum_all(
                                          t, ops::activation(t, y, ActKind::Sigmoid));
                                  },
                                  1e-3);
    }
    // MFAM
    {
        ParamStore<double> ps;
        auto m = Mfam<double>::create(ps, "m", MfamSpec{8, {3, 5, 7}, true}, rng);
        DTensor x = DTensor::uniform(1, 8, 8, 8, rng);
        std::vector<std::pair<DTensor*, int>> ins{{&x, -1}};
        ok &= gradient_block_pass(detail, "mfam", ps, ins,
                                  [&](DTape& t, const std::vector<int>& ids) {
                                      int y = m.forward(t, ids[0]);
                                      return ops::sum_all(
                                          t, ops::activation(t, y, ActKind::Sigmoid));
                                  },
                                  1e-3);
    }
    // IEMA
    {
        ParamStore<double> ps;
        auto m = Iema<double>::create(ps, "i", IemaSpec{8, 2, 5}, rng);
        DTensor x = DTensor::uniform(1, 8, 6, 6, rng);
        std::vector<std::pair<DTensor*, int>> ins{{&x, -1}};
        ok &= gradient_block_pass(detail, "iema", ps, ins,
                                  [&](DTape& t, const std::vector<int>& ids) {
                                      int y = m.forward(t, ids[0]);
                                      return ops::sum_all(
                                          t, ops::activation(t, y, ActKind::Sigmoid));
                                  },
                                  1e-3);
    }
    // DASI
    {
        ParamStore<double> ps;
        auto d = Dasi<double>::create(ps, "d", DasiSpec{8, 8, 4, 8, 2, 2}, rng);
        DTensor cur = DTensor::uniform(1, 8, 4, 4, rng);
        DTensor low = DTensor::uniform(1, 4, 8, 8, rng);
        DTensor high = DTensor::uniform(1, 8, 2, 2, rng);
        std::vector<std::pair<DTensor*, int>> ins{{&cur, -1}, {&low, -1}, {&high, -1}};
        ok &= gradient_block_pass(detail, "dasi", ps, ins,
                                  [&](DTape& t, const std::vector<int>& ids) {
                                      int y = d.forward(t, ids[0], ids[1], ids[2], true);
                                      return ops::sum_all(
                                          t, ops::activation(t, y, ActKind::Sigmoid));
                                  },
                                  1e-3);
    }
    // full tiny model on a 64 x 64 input, sampled parameters
    {
        ModelConfig cfg = ModelConfig::full_tiny();
        cfg.image_size = 64;
        cfg.seed = 9;
        Model<double> model(cfg);
        DTensor img = DTensor::uniform(1, 3, 64, 64, rng, 0.0, 1.0);
        auto loss_of = [&](DTape& t) {
            auto heads = model.forward(t, t.leaf(img), true);
            int acc = -1;
            for (auto& [k, id] : heads) {
                int s = ops::sum_all(t, ops::activation(t, id, ActKind::Sigmoid));
                acc = acc < 0 ? s : ops::add(t, acc, s);
            }
            return acc;
        };
        auto forward = [&]() -> double {
            DTape t;
            return t.val(loss_of(t)).data()[0];
        };
        DTape t;
        const int root = loss_of(t);
        t.backward(root);
        std::vector<DTensor*> params;
        std::vector<DTensor> grads;
        for (const auto& p : model.store().all()) {
            if (!p->trainable) continue;
            params.push_back(&p->value);
            grads.push_back(t.grad(p->node));
        }
        std::vector<const DTensor*> gp;
        for (auto& g : grads) gp.push_back(&g);
        auto rep = grad_check<double>(forward, params, gp, 1e-4, 3);
        detail += fmt("full-model %.2e (tol 5e-3, %lld checks)", rep.max_rel_error,
                      static_cast<long long>(rep.checked));
        ok &= rep.finite && rep.max_rel_error < 5e-3;
    }
    return ok;
}

// ---------------------------------------------------------------- residuals

CRITERION(residual_identities, "residual-identities") {
    SplitMix64 rng(31);
    // MFAM zeroed = identity
    ParamStore<float> ps;
    auto m = Mfam<float>::create(ps, "m", MfamSpec{8, {3, 5, 7}, true}, rng);
    m.zero_parameters();
    Tensor x = Tensor::uniform(2, 8, 12, 12, rng, -3.f, 3.f);
    Tape<float> t;
    ps.bind_all(t);
    const double mfam_dev = oracle::max_abs_diff(t.val(m.forward(t, t.leaf(x))), x);

    // DASI gate with zero current = (low + high) / 2
    double gate_dev = 0;
    double convex_violation = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Tensor low = Tensor::uniform(1, 8, 5, 5, rng);
        Tensor high = Tensor::uniform(1, 8, 5, 5, rng);
        Tensor zero(1, 8, 5, 5);
        Tensor fused = dasi_gate(zero, low, high);
        for (int64_t i = 0; i < fused.numel(); ++i) {
            gate_dev = std::max(gate_dev,
                                std::abs(fused.data()[i] -
                                         (static_cast<double>(low.data()[i]) + high.data()[i]) / 2));
        }
        Tensor cur = Tensor::uniform(1, 8, 5, 5, rng, -4.f, 4.f);
        Tensor f2 = dasi_gate(cur, low, high);
        for (int64_t i = 0; i < f2.numel(); ++i) {
            const float lo = std::min(low.data()[i], high.data()[i]);
            const float hi = std::max(low.data()[i], high.data()[i]);
            convex_violation = std::max(convex_violation,
                                        std::max<double>(lo - f2.data()[i], f2.data()[i] - hi));
        }
    }
    detail = fmt("mfam-identity %.2e, zero-gate %.2e (tol 1e-7), convexity slack %.2e",
                 mfam_dev, gate_dev, convex_violation);
    return mfam_dev < 1e-7 && gate_dev < 1e-7 && convex_violation <= 1e-6;
}

// ---------------------------------------------------------------- metrics

CRITERION(metric_fidelity, "metric-fidelity") {
    SplitMix64 rng(41);
    // precision/recall: exact counting on random flag vectors
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<uint8_t> f;
        int tp = 0;
        const int n = 1 + static_cast<int>(rng.next_below(40));
        for (int i = 0; i < n; ++i) {
            f.push_back(static_cast<uint8_t>(rng.next_below(2)));
            tp += f.back();
        }
        const int n_gt = tp + static_cast<int>(rng.next_below(8));
        auto [p, r] = precision_recall(f, n_gt);
        if (p != static_cast<double>(tp) / n) {
            detail = "precision mismatch";
            return false;
        }
        if (r != (n_gt ? static_cast<double>(tp) / n_gt : 0.0)) {
            detail = "recall mismatch";
            return false;
        }
    }
    // AP vs the discrete-summation oracle, 1000 random instances
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 1 + static_cast<int>(rng.next_below(40));
        std::vector<uint8_t> flags;
        int tp = 0;
        for (int i = 0; i < n; ++i) {
            flags.push_back(static_cast<uint8_t>(rng.next_below(2)));
            tp += flags.back();
        }
        const int n_gt = std::max(1, tp + static_cast<int>(rng.next_below(6)));
        worst = std::max(worst, std::abs(average_precision(flags, n_gt) -
                                         oracle::ap_discrete(flags, n_gt)));
    }
    // the hand-computed envelope case
    const double hand = average_precision({1, 0, 1}, 2);
    // threshold grid
    auto grid = map5095_thresholds();
    const bool grid_ok = grid.size() == 10 && std::abs(grid.front() - 0.50) < 1e-12 &&
                         std::abs(grid.back() - 0.95) < 1e-12;
    // map5095 <= map50 on random evaluation instances
    bool order_ok = true;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<std::vector<GroundTruth>> gts(3);
        std::vector<std::vector<Detection>> dets(3);
        for (int img = 0; img < 3; ++img) {
            for (int i = 0; i < 6; ++i) {
                const float x1 = static_cast<float>(rng.uniform(0, 80));
                const float y1 = static_cast<float>(rng.uniform(0, 80));
                Box b{x1, y1, x1 + static_cast<float>(rng.uniform(4, 14)),
                      y1 + static_cast<float>(rng.uniform(4, 14))};
                gts[img].push_back({b, static_cast<int>(rng.next_below(2))});
                Box j{b.x1 + static_cast<float>(rng.uniform(-3, 3)),
                      b.y1 + static_cast<float>(rng.uniform(-3, 3)), b.x2, b.y2};
                dets[img].push_back({j, static_cast<int>(rng.next_below(2)),
                                     static_cast<float>(rng.next_double())});
            }
        }
        EvalReport rep = evaluate_detections(dets, gts);
        order_ok &= rep.map5095 <= rep.map50 + 1e-12;
    }
    detail = fmt("ap-oracle max dev %.2e (tol 1e-9); hand case %.12f (want 5/6); grid %s; "
                 "map50:95<=map50 %s",
                 worst, hand, grid_ok ? "ok" : "BAD", order_ok ? "ok" : "BAD");
    return worst < 1e-9 && std::abs(hand - 5.0 / 6.0) < 1e-12 && grid_ok && order_ok;
}

// ---------------------------------------------------------------- nms

CRITERION(nms_equivalence, "nms-equivalence") {
    SplitMix64 rng(51);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<Detection> dets;
        for (int i = 0; i < 50; ++i) {
            const float x1 = static_cast<float>(rng.uniform(0, 110));
            const float y1 = static_cast<float>(rng.uniform(0, 110));
            dets.push_back({{x1, y1, x1 + static_cast<float>(rng.uniform(4, 22)),
                             y1 + static_cast<float>(rng.uniform(4, 22))},
                            static_cast<int>(rng.next_below(3)),
                            static_cast<float>(rng.next_double())});
        }
        auto got = nms(dets, 0.5);
        auto want = oracle::nms_bruteforce(dets, 0.5);
        if (got.size() != want.size()) {
            detail = fmt("trial %d: size %zu vs %zu", trial, got.size(), want.size());
            return false;
        }
        for (size_t i = 0; i < got.size(); ++i) {
            if (std::memcmp(&got[i].box, &want[i].box, sizeof(Box)) != 0 ||
                got[i].class_id != want[i].class_id || got[i].score != want[i].score) {
                detail = fmt("trial %d: element %zu differs", trial, i);
                return false;
            }
        }
    }
    detail = "1000 random 50-box instances identical";
    return true;
}

// ---------------------------------------------------------------- schedule

CRITERION(schedule_fidelity, "schedule-fidelity") {
    TrainConfig cfg;
    const double a = std::abs(cosine_lr(0, 1000, cfg) - 0.01);
    const double b = std::abs(cosine_lr(1000, 1000, cfg) - 1e-4);
    const double c = std::abs(cosine_lr(500, 1000, cfg) - 0.00505);
    detail = fmt("start dev %.1e, end dev %.1e, midpoint dev %.1e (tol 1e-12)", a, b, c);
    return a < 1e-12 && b < 1e-12 && c < 1e-12;
}

// ---------------------------------------------------------------- accounting

CRITERION(accounting, "accounting") {
    SplitMix64 rng(61);
    ParamStore<float> ps;
    (void)ConvBnSilu<float>::create(ps, "c", ConvSpec::same(4, 8, 3), rng, /*bn=*/false,
                                    /*act=*/false);
    const bool closed_form = ps.trainable_count() == 3 * 3 * 4 * 8 + 8;

    Model<float> base(ModelConfig::baseline_tiny());
    const uint64_t f128 = base.estimate_flops_exact(128);
    const uint64_t f256 = base.estimate_flops_exact(256);
    ModelConfig no_iema = ModelConfig::full_tiny();
    no_iema.use_iema = false;
    Model<float> most(no_iema);
    const bool exact4 = (f256 == 4 * f128) &&
                        (most.estimate_flops_exact(256) == 4 * most.estimate_flops_exact(128));
    detail = fmt("conv params %lld (want 296); flops(256)/flops(128) = %llu/%llu%s",
                 static_cast<long long>(ps.trainable_count()),
                 static_cast<unsigned long long>(f256), static_cast<unsigned long long>(f128),
                 exact4 ? " = exactly 4" : " NOT 4x");
    return closed_form && exact4;
}

// ---------------------------------------------------------------- determinism

CRITERION(determinism, "determinism") {
    auto run_once = [&]() {
        ModelConfig mc = ModelConfig::full_tiny();
        mc.seed = 5;
        Model<float> model(mc);
        TrainConfig tc;
        tc.epochs = 2;
        tc.batch_size = 8;
        tc.seed = 5;
        Dataset d = load_dataset("synthetic:train=24,val=8,seed=5", 128, 3);
        std::ostringstream log;
        run_training(model, tc, d, "acceptance_det_run", &log);
        return log.str();
    };
    const std::string a = run_once();
    const std::string b = run_once();
    std::filesystem::remove_all("acceptance_det_run");
    detail = fmt("%zu log bytes, %s", a.size(), a == b ? "bit-identical" : "DIFFER");
    return !a.empty() && a == b;
}

// ---------------------------------------------------------------- overfit

CRITERION(overfit_memorization, "overfit-check") {
    // Eight scenes with every target assignable (no two centers share a
    // cell); sizes 3-8% of the side keep all objects in the P2/P3 brackets.
    GenConfig gc;
    gc.image_size = 128;
    gc.num_classes = 3;
    gc.min_objects = 5;
    gc.max_objects = 12;
    gc.min_size_frac = 0.03;
    gc.max_size_frac = 0.08;
    gc.occlusion_prob = 0.0;
    AssignConfig ac;
    ac.image_size = 128;
    ac.num_classes = 3;
    Dataset d;
    uint64_t seed = 100;
    while (d.train.size() < 8) {
        Scene s = generate_scene(gc, seed++);
        AssignStats st;
        assign_targets(s.gts, ac, &st);
        if (st.skipped_occupied + st.skipped_small == 0) d.train.push_back(std::move(s));
    }
    d.val = d.train;

    ModelConfig mc = ModelConfig::full_tiny();
    mc.seed = 7;
    Model<float> model(mc);
    TrainConfig tc;
    tc.epochs = 200;
    tc.batch_size = 1;
    tc.seed = 7;
    TrainResult res = run_training(model, tc, d, "acceptance_overfit_run", nullptr);
    std::filesystem::remove_all("acceptance_overfit_run");
    int first_hit = -1;
    for (const auto& r : res.history) {
        if (r.map50 >= 0.95) {
            first_hit = r.epoch;
            break;
        }
    }
    detail = fmt("best map50 %.4f within %d epochs (threshold 0.95%s)", res.best_map50,
                 tc.epochs,
                 first_hit >= 0 ? fmt(", first reached at epoch %d", first_hit).c_str() : "");
    return res.best_map50 >= 0.95;
}

// ---------------------------------------------------------------- ablation

CRITERION(directional_ablation, "directional-ablation") {
    const std::vector<uint64_t> seeds = {11, 12, 13};
    double mean_base = 0, mean_full = 0;
    int64_t params_base = 0, params_full = 0;
    std::string per_seed;
    for (uint64_t seed : seeds) {
        char spec[96];
        std::snprintf(spec, sizeof spec, "synthetic:train=2000,val=500,seed=%llu",
                      static_cast<unsigned long long>(seed));
        Dataset d = load_dataset(spec, 128, 3);
        double pair_scores[2] = {0, 0};
        int which = 0;
        for (bool full : {false, true}) {
            ModelConfig mc = full ? ModelConfig::full_tiny() : ModelConfig::baseline_tiny();
            mc.seed = seed;
            Model<float> model(mc);
            TrainConfig tc;
            tc.epochs = 30;
            tc.batch_size = 8;
            tc.seed = seed;
            TrainResult res =
                run_training(model, tc, d, "acceptance_ablation_run", nullptr);
            pair_scores[which++] = res.best_map50;
            if (full) {
                mean_full += res.best_map50 / seeds.size();
                params_full = model.count_params();
            } else {
                mean_base += res.best_map50 / seeds.size();
                params_base = model.count_params();
            }
            std::printf("    [ablation] seed %llu %s: best map50 %.4f\n",
                        static_cast<unsigned long long>(seed), full ? "full" : "base",
                        res.best_map50);
            std::fflush(stdout);
        }
        per_seed += fmt("seed%llu %.3f/%.3f ", static_cast<unsigned long long>(seed),
                        pair_scores[0], pair_scores[1]);
    }
    std::filesystem::remove_all("acceptance_ablation_run");
    detail = fmt("mean map50 base %.4f vs full %.4f (%s); params %lld -> %lld", mean_base,
                 mean_full, per_seed.c_str(), static_cast<long long>(params_base),
                 static_cast<long long>(params_full));
    return mean_full >= mean_base && params_full > params_base;
}

}  // namespace

int main(int argc, char** argv) {
    std::string only;
    for (int i = 1; i < argc; ++i) {
        if (std::string(argv[i]) == "--only" && i + 1 < argc) only = argv[++i];
        if (std::string(argv[i]) == "--list") {
            for (const auto& c : registry()) std::printf("%s\n", c.name.c_str());
            return 0;
        }
    }
    int failures = 0, ran = 0;
    for (const auto& c : registry()) {
        if (!only.empty() && c.name.find(only) == std::string::npos) continue;
        ++ran;
        std::string detail;
        const auto t0 = std::chrono::steady_clock::now();
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
        std::printf("[%s] %-22s (%.1fs) %s\n", ok ? "PASS" : "FAIL", c.name.c_str(), secs,
                    detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
    if (ran == 0) {
        std::printf("no criteria matched \"%s\"\n", only.c_str());
        return 1;
    }
    std::printf("%d/%d criteria passed\n", ran - failures, ran);
    return failures == 0 ? 0 : 1;
}
