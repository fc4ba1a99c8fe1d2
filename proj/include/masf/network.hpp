#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "masf/blocks.hpp"

namespace masf {

// Declarative model description. The JSON file schema carries exactly the
// keys {num_classes, image_size, width_mult, depth_mult, levels, use_mfam,
// use_iema, use_dasi, use_skips, use_p2, iema_groups, mfam_kernels}.
struct ModelConfig {
    int num_classes = 3;
    int image_size = 128;
    double width_mult = 0.25;
    double depth_mult = 0.33;
    std::vector<int> levels = {2, 3, 4, 5};  // pyramid levels Pk, stride 2^k
    bool use_p2 = true;
    bool use_mfam = true;
    bool use_iema = true;
    bool use_dasi = true;
    bool use_skips = true;
    int iema_groups = 8;
    std::vector<int> mfam_kernels = {3, 5, 7};

    // Fixed reference widths per level P1..P5 before width_mult; not part of
    // the file schema.
    std::array<int, 5> base_channels = {32, 64, 128, 256, 256};
    uint64_t seed = 0;

    static ModelConfig baseline_tiny();  // P3-P5, every added module off
    static ModelConfig full_tiny();

    void validate() const;

    // Channel count at level Pk: base * width_mult rounded to the nearest
    // multiple of 4 (the four-way partition requirement).
    int channels_at(int level) const;
};

ModelConfig config_from_json(const std::string& json_text);
ModelConfig load_model_config(const std::string& path);
std::string config_to_json(const ModelConfig& cfg);

struct LayerInfo {
    std::string name;
    std::string kind;
    int out_c = 0, out_h = 0, out_w = 0;
    int64_t params = 0;
    uint64_t flops = 0;  // per forward image
};

namespace graph_detail {

enum class NodeKind { Input, Conv, Mfam, Iema, Dasi, Upsample, Concat, Add };

struct GraphNode {
    NodeKind kind;
    std::string name;
    std::vector<int> inputs;
    int block = -1;  // index into the per-kind block vector
    int scale = 1;   // Upsample only
};

}  // namespace graph_detail

// Elementwise FLOP conventions used by the meter (documented constants; the
// estimate counts 2 * MAC for every convolution/matmul plus these).
constexpr uint64_t kFlopsSigmoid = 4;
constexpr uint64_t kFlopsSilu = 5;
constexpr uint64_t kFlopsBatchNorm = 2;
constexpr uint64_t kFlopsGroupNorm = 5;

template <class T>
class Model {
    using Node = graph_detail::GraphNode;
    using NodeKind = graph_detail::NodeKind;

public:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        rng_ = SplitMix64(cfg_.seed ^ 0x6D61736679ULL);
        build();
        // Shape-checks every concat and records per-node geometry.
        walk(cfg_.image_size, nullptr);
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& store() { return store_; }
    const ParamStore<T>& store() const { return store_; }

    // Head node ids by level, in the given tape.
    std::map<int, int> forward(Tape<T>& t, int images, bool training) {
        const auto& img = t.val(images);
        if (img.c() != 3 || img.h() != cfg_.image_size || img.w() != cfg_.image_size) {
            throw ConfigError("model_forward: expected images (N,3," +
                              std::to_string(cfg_.image_size) + "," +
                              std::to_string(cfg_.image_size) + "), got " + img.shape_str());
        }
        store_.bind_all(t);
        std::vector<int> out(nodes_.size(), -1);
        for (size_t i = 0; i < nodes_.size(); ++i) {
            const Node& n = nodes_[i];
            switch (n.kind) {
                case NodeKind::Input:
                    out[i] = images;
                    break;
                case NodeKind::Conv:
                    out[i] = convs_[n.block].forward(t, out[n.inputs[0]], training);
                    break;
                case NodeKind::Mfam:
                    out[i] = mfams_[n.block].forward(t, out[n.inputs[0]]);
                    break;
                case NodeKind::Iema:
                    out[i] = iemas_[n.block].forward(t, out[n.inputs[0]]);
                    break;
                case NodeKind::Dasi:
                    out[i] = dasis_[n.block].forward(t, out[n.inputs[0]], out[n.inputs[1]],
                                                     out[n.inputs[2]], training);
                    break;
                case NodeKind::Upsample:
                    out[i] = ops::resize_nearest(t, out[n.inputs[0]], n.scale);
                    break;
                case NodeKind::Concat: {
                    std::vector<int> xs;
                    for (int in : n.inputs) xs.push_back(out[in]);
                    out[i] = ops::concat(t, xs);
                    break;
                }
                case NodeKind::Add:
                    out[i] = ops::add(t, out[n.inputs[0]], out[n.inputs[1]]);
                    break;
            }
        }
        std::map<int, int> heads;
        for (const auto& [level, node] : head_nodes_) heads[level] = out[node];
        return heads;
    }

    std::map<int, Tensor4<T>> predict(const Tensor4<T>& images, bool training = false) {
        Tape<T> t;
        auto heads = forward(t, t.leaf(images), training);
        std::map<int, Tensor4<T>> res;
        for (const auto& [level, id] : heads) res[level] = t.val(id);
        return res;
    }

    int64_t count_params() const { return store_.trainable_count(); }

    uint64_t estimate_flops_exact(int image_size) const {
        uint64_t total = 0;
        walk(image_size, [&](const LayerInfo& li) { total += li.flops; });
        return total;
    }

    double estimate_gflops(int image_size) const {
        return static_cast<double>(estimate_flops_exact(image_size)) / 1e9;
    }

    std::vector<LayerInfo> describe(int image_size) const {
        std::vector<LayerInfo> rows;
        walk(image_size, [&](const LayerInfo& li) { rows.push_back(li); });
        return rows;
    }

    std::vector<int> detection_levels() const { return cfg_.levels; }

private:
    struct Shape {
        int c, h, w;
    };

    // --- construction -----------------------------------------------------

    int add_node(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int add_conv(const std::string& name, int input, ConvSpec spec, bool bn = true,
                 bool act = true) {
        convs_.push_back(ConvBnSilu<T>::create(store_, name, spec, rng_, bn, act));
        return add_node({NodeKind::Conv, name, {input}, static_cast<int>(convs_.size()) - 1, 1});
    }

    // Two 3x3 convs with a residual.
    int add_bottleneck(const std::string& name, int input, int channels) {
        int a = add_conv(name + ".cv1", input, ConvSpec::same(channels, channels, 3));
        int b = add_conv(name + ".cv2", a, ConvSpec::same(channels, channels, 3));
        return add_node({NodeKind::Add, name + ".residual", {input, b}, -1, 1});
    }

    int repeats(int base) const {
        const int r = static_cast<int>(std::lround(base * cfg_.depth_mult));
        return std::max(1, r);
    }

    int iema_groups_for(int channels) const {
        for (int g = std::min(cfg_.iema_groups, channels / 4); g >= 1; --g) {
            if (channels % g == 0) return g;
        }
        return 1;
    }

    // Concat + 1x1 reduce + 3x3 mix.
    int add_fuse(const std::string& name, std::vector<int> inputs, int in_ch, int out_ch) {
        int cat = inputs.size() > 1
                      ? add_node({NodeKind::Concat, name + ".cat", std::move(inputs), -1, 1})
                      : inputs[0];
        int red = add_conv(name + ".reduce", cat, ConvSpec::make(in_ch, out_ch, 1, 1, 1, 0, 0));
        return add_conv(name + ".mix", red, ConvSpec::same(out_ch, out_ch, 3));
    }

    void build() {
        const int input = add_node({NodeKind::Input, "input", {}, -1, 1});
        const int c1 = cfg_.channels_at(1);
        std::map<int, int> ch;  // level -> channels
        for (int k : {2, 3, 4, 5}) ch[k] = cfg_.channels_at(k);

        // Backbone: stride-2 stem, then one downsampling stage per level with
        // depth-scaled bottlenecks; each emitted level optionally passes
        // through multi-kernel aggregation.
        int x = add_conv("backbone.stem", input, ConvSpec::make(3, c1, 3, 3, 2, 1, 1));
        std::map<int, int> backbone;  // level -> node
        int prev_ch = c1;
        const std::array<int, 4> stage_repeats = {1, 2, 2, 1};
        for (int k = 2; k <= 5; ++k) {
            const std::string sname = "backbone.s" + std::to_string(k);
            x = add_conv(sname + ".down", x, ConvSpec::make(prev_ch, ch[k], 3, 3, 2, 1, 1));
            for (int r = 0; r < repeats(stage_repeats[k - 2]); ++r) {
                x = add_bottleneck(sname + ".b" + std::to_string(r), x, ch[k]);
            }
            if (cfg_.use_mfam) {
                MfamSpec ms{ch[k], cfg_.mfam_kernels, true};
                mfams_.push_back(Mfam<T>::create(store_, sname + ".mfam", ms, rng_));
                x = add_node({NodeKind::Mfam, sname + ".mfam", {x},
                              static_cast<int>(mfams_.size()) - 1, 1});
            }
            backbone[k] = x;
            prev_ch = ch[k];
        }

        const int lowest = *std::min_element(cfg_.levels.begin(), cfg_.levels.end());

        // Top-down pathway with nearest upsampling and concatenation.
        std::map<int, int> td;
        td[5] = backbone[5];
        for (int k = 4; k >= lowest; --k) {
            const std::string nname = "neck.td" + std::to_string(k);
            int up = add_node({NodeKind::Upsample, nname + ".up", {td[k + 1]}, -1, 2});
            td[k] = add_fuse(nname, {up, backbone[k]}, ch[k + 1] + ch[k], ch[k]);
        }

        // Bottom-up pathway; skip connections re-inject raw backbone features
        // into the same-level neck node.
        std::map<int, int> bu;
        if (cfg_.use_skips) {
            bu[lowest] = add_fuse("neck.bu" + std::to_string(lowest),
                                  {td[lowest], backbone[lowest]}, 2 * ch[lowest], ch[lowest]);
        } else {
            bu[lowest] = td[lowest];
        }
        for (int k = lowest + 1; k <= 5; ++k) {
            const std::string nname = "neck.bu" + std::to_string(k);
            int down = add_conv(nname + ".down", bu[k - 1],
                                ConvSpec::make(ch[k - 1], ch[k - 1], 3, 3, 2, 1, 1));
            std::vector<int> ins = {down, td[k]};
            int in_ch = ch[k - 1] + ch[k];
            if (cfg_.use_skips) {
                ins.push_back(backbone[k]);
                in_ch += ch[k];
            }
            bu[k] = add_fuse(nname, std::move(ins), in_ch, ch[k]);
        }

        // Attention on neck outputs.
        std::map<int, int> neck;
        for (int k : cfg_.levels) {
            if (cfg_.use_iema) {
                IemaSpec is{ch[k], iema_groups_for(ch[k]), 11};
                iemas_.push_back(Iema<T>::create(store_, "neck.iema" + std::to_string(k), is,
                                                 rng_));
                neck[k] = add_node({NodeKind::Iema, "neck.iema" + std::to_string(k), {bu[k]},
                                    static_cast<int>(iemas_.size()) - 1, 1});
            } else {
                neck[k] = bu[k];
            }
        }

        // Gated fusion of (finer, current, coarser) before each head; a
        // missing neighbour is substituted by the current features.
        std::map<int, int> head_in;
        for (int k : cfg_.levels) {
            if (!cfg_.use_dasi) {
                head_in[k] = neck[k];
                continue;
            }
            const bool has_low = neck.count(k - 1) > 0;
            const bool has_high = neck.count(k + 1) > 0;
            DasiSpec ds;
            ds.channels = ch[k];
            ds.cur_channels = ch[k];
            ds.low_channels = has_low ? ch[k - 1] : ch[k];
            ds.high_channels = has_high ? ch[k + 1] : ch[k];
            ds.low_ratio = has_low ? 2 : 1;
            ds.high_ratio = has_high ? 2 : 1;
            dasis_.push_back(Dasi<T>::create(store_, "head.dasi" + std::to_string(k), ds, rng_));
            head_in[k] = add_node({NodeKind::Dasi, "head.dasi" + std::to_string(k),
                                   {neck[k], has_low ? neck[k - 1] : neck[k],
                                    has_high ? neck[k + 1] : neck[k]},
                                   static_cast<int>(dasis_.size()) - 1, 1});
        }

        // Anchor-free heads: 3x3 mix then a 1x1 projection to 4 box
        // regressors + class logits per cell.
        for (int k : cfg_.levels) {
            const std::string hname = "head.p" + std::to_string(k);
            int h = add_conv(hname + ".mix", head_in[k], ConvSpec::same(ch[k], ch[k], 3));
            int out = add_conv(hname + ".out", h,
                               ConvSpec::make(ch[k], 4 + cfg_.num_classes, 1, 1, 1, 0, 0),
                               /*bn=*/false, /*act=*/false);
            head_nodes_[k] = out;
        }
    }

    // --- metering ----------------------------------------------------------

    static uint64_t conv_flops(const ConvSpec& s, int oh, int ow) {
        return 2ull * s.kernel_h * s.kernel_w * (s.in_channels / s.groups) * s.out_channels * oh *
               ow;
    }

    // Walks the graph at the given input size, calling visit per layer.
    // Throws if any concat joins mismatched spatial sizes.
    template <class Visit>
    void walk_impl(int image_size, Visit&& visit) const {
        std::vector<Shape> shp(nodes_.size());
        for (size_t i = 0; i < nodes_.size(); ++i) {
            const Node& n = nodes_[i];
            LayerInfo li;
            li.name = n.name;
            switch (n.kind) {
                case NodeKind::Input:
                    shp[i] = {3, image_size, image_size};
                    li.kind = "input";
                    break;
                case NodeKind::Conv: {
                    const auto& b = convs_[n.block];
                    const Shape in = shp[n.inputs[0]];
                    const Shape o{b.spec.out_channels, b.spec.out_h(in.h), b.spec.out_w(in.w)};
                    shp[i] = o;
                    li.kind = "conv";
                    const uint64_t numel = static_cast<uint64_t>(o.c) * o.h * o.w;
                    li.flops = conv_flops(b.spec, o.h, o.w);
                    li.params = b.w->value.numel();
                    if (b.use_bn) {
                        li.flops += kFlopsBatchNorm * numel;
                        li.params += 2ll * o.c;
                    } else if (b.bias) {
                        li.flops += numel;
                        li.params += o.c;
                    }
                    if (b.use_act) li.flops += kFlopsSilu * numel;
                    break;
                }
                case NodeKind::Mfam: {
                    const auto& m = mfams_[n.block];
                    const Shape in = shp[n.inputs[0]];
                    shp[i] = in;
                    li.kind = "mfam";
                    const uint64_t numel = static_cast<uint64_t>(in.c) * in.h * in.w;
                    const int C = m.spec.channels;
                    uint64_t f = 0;
                    f += 2ull * C * C * in.h * in.w + numel;  // pre 1x1 + bias
                    for (int k : m.spec.kernel_sizes) {
                        f += 2ull * k * k * C * in.h * in.w + numel;  // depthwise + bias
                    }
                    f += numel * (m.spec.branch_count() - 1);     // branch sum
                    f += 2ull * C * C * in.h * in.w + numel;       // fuse 1x1 + bias
                    f += numel;                                    // residual add
                    li.flops = f;
                    li.params = 0;
                    for (auto* p : {m.pre_w, m.pre_b, m.fuse_w, m.fuse_b}) {
                        li.params += p->value.numel();
                    }
                    for (auto* p : m.dw_w) li.params += p->value.numel();
                    for (auto* p : m.dw_b) li.params += p->value.numel();
                    break;
                }
                case NodeKind::Iema: {
                    const auto& q = iemas_[n.block];
                    const Shape in = shp[n.inputs[0]];
                    shp[i] = in;
                    li.kind = "iema";
                    const int Cg = q.spec.channels / q.spec.groups;
                    const uint64_t B = q.spec.groups;  // per image
                    const uint64_t HW = static_cast<uint64_t>(in.h) * in.w;
                    const uint64_t numel = static_cast<uint64_t>(in.c) * HW;
                    const int K = q.spec.band_kernel;
                    uint64_t f = 0;
                    f += 2 * numel;                                     // directional pools
                    f += B * (2ull * Cg * Cg * (in.h + in.w) + Cg * (in.h + in.w));  // dir 1x1
                    f += kFlopsSigmoid * B * Cg * (in.h + in.w);        // profile gates
                    f += 2 * numel;                                     // two broadcast muls
                    f += (2ull * 9 + 2ull * K + 2ull * K) * numel;        // dw convs
                    f += 3 * numel;                                     // dw biases
                    f += 3 * numel;                                     // branch adds
                    f += kFlopsGroupNorm * numel;                       // group norm
                    f += 2 * numel;                                     // global pools
                    f += 2 * kFlopsSigmoid * B * Cg;                    // descriptor softmaxes
                    f += 2 * (2ull * numel);                            // two cross matmuls
                    f += HW * B;                                        // cross sum
                    f += kFlopsSigmoid * HW * B;                        // attention sigmoid
                    f += numel;                                         // final gate
                    li.flops = f;
                    for (auto* p : {q.dir_w, q.dir_b, q.sq_w, q.sq_b, q.bh_w, q.bh_b, q.bv_w,
                                    q.bv_b, q.gn_gamma, q.gn_beta}) {
                        li.params += p->value.numel();
                    }
                    break;
                }
                case NodeKind::Dasi: {
                    const auto& d = dasis_[n.block];
                    const Shape cur = shp[n.inputs[0]];
                    const Shape lo = shp[n.inputs[1]];
                    const Shape hi = shp[n.inputs[2]];
                    if (lo.h != cur.h * d.spec.low_ratio || hi.h * d.spec.high_ratio != cur.h) {
                        throw ConfigError("dasi " + n.name + ": spatial sizes do not align");
                    }
                    const int C = d.spec.channels;
                    shp[i] = {C, cur.h, cur.w};
                    li.kind = "dasi";
                    const uint64_t numel = static_cast<uint64_t>(C) * cur.h * cur.w;
                    uint64_t f = 0;
                    f += 2ull * d.spec.cur_channels * C * cur.h * cur.w + numel;
                    f += 2ull * d.spec.low_channels * C * lo.h * lo.w +
                         static_cast<uint64_t>(C) * lo.h * lo.w;
                    f += 2ull * d.spec.high_channels * C * hi.h * hi.w +
                         static_cast<uint64_t>(C) * hi.h * hi.w;
                    for (size_t dcv = 0; dcv < d.down.size(); ++dcv) {
                        const int oh = cur.h << (d.down.size() - 1 - dcv);
                        f += 2ull * 9 * C * C * oh * oh + static_cast<uint64_t>(C) * oh * oh;
                    }
                    f += (kFlopsSigmoid + 2 + 1 + 1) * numel;  // gate per element
                    f += 2ull * C * C * cur.h * cur.w + numel;  // fuse 1x1
                    f += kFlopsBatchNorm * numel;
                    f += numel;  // residual
                    li.flops = f;
                    for (auto* p : {d.cur_w, d.cur_b, d.low_w, d.low_b, d.high_w, d.high_b,
                                    d.fuse_w, d.fuse_b, d.bn_gamma, d.bn_beta}) {
                        li.params += p->value.numel();
                    }
                    for (const auto& dc : d.down) {
                        li.params += dc.w->value.numel();
                        if (dc.bias) li.params += dc.bias->value.numel();
                    }
                    break;
                }
                case NodeKind::Upsample: {
                    const Shape in = shp[n.inputs[0]];
                    shp[i] = {in.c, in.h * n.scale, in.w * n.scale};
                    li.kind = "upsample";
                    break;
                }
                case NodeKind::Concat: {
                    int c = 0;
                    const Shape first = shp[n.inputs[0]];
                    for (int in : n.inputs) {
                        if (shp[in].h != first.h || shp[in].w != first.w) {
                            throw ConfigError("concat " + n.name +
                                              " joins mismatched spatial sizes");
                        }
                        c += shp[in].c;
                    }
                    shp[i] = {c, first.h, first.w};
                    li.kind = "concat";
                    break;
                }
                case NodeKind::Add: {
                    const Shape in = shp[n.inputs[0]];
                    shp[i] = in;
                    li.kind = "add";
                    li.flops = static_cast<uint64_t>(in.c) * in.h * in.w;
                    break;
                }
            }
            li.out_c = shp[i].c;
            li.out_h = shp[i].h;
            li.out_w = shp[i].w;
            visit(li);
        }
    }

    void walk(int image_size, const std::function<void(const LayerInfo&)>& visit) const {
        walk_impl(image_size, [&](const LayerInfo& li) {
            if (visit) visit(li);
        });
    }

    ModelConfig cfg_;
    SplitMix64 rng_;
    ParamStore<T> store_;
    std::vector<Node> nodes_;
    std::vector<ConvBnSilu<T>> convs_;
    std::vector<Mfam<T>> mfams_;
    std::vector<Iema<T>> iemas_;
    std::vector<Dasi<T>> dasis_;
    std::map<int, int> head_nodes_;
};

}  // namespace masf
