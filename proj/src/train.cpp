#include "masf/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "masf/checkpoint.hpp"
#include "masf/threadpool.hpp"

namespace masf {

void TrainConfig::validate() const {
    if (lr0 <= 0) throw ConfigError("train config: lr0 must be positive");
    if (momentum < 0 || momentum >= 1) throw ConfigError("train config: momentum must be in [0,1)");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
    if (image_size < 32 || image_size % 32 != 0) {
        throw ConfigError("train config: image_size must be a positive multiple of 32");
    }
    if (lr_final_fraction <= 0 || lr_final_fraction > 1) {
        throw ConfigError("train config: lr_final_fraction must be in (0,1]");
    }
}

TrainConfig train_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config is not valid JSON: ") + e.what());
    }
    TrainConfig c;
    c.lr0 = j.value("lr0", c.lr0);
    c.momentum = j.value("momentum", c.momentum);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.image_size = j.value("image_size", c.image_size);
    c.lr_final_fraction = j.value("lr_final_fraction", c.lr_final_fraction);
    c.seed = j.value("seed", c.seed);
    c.nesterov = j.value("nesterov", c.nesterov);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.lambda_box = j.value("lambda_box", c.lambda_box);
    c.lambda_cls = j.value("lambda_cls", c.lambda_cls);
    c.eval_score_threshold = j.value("eval_score_threshold", c.eval_score_threshold);
    c.nms_iou_threshold = j.value("nms_iou_threshold", c.nms_iou_threshold);
    c.validate();
    return c;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("train config not found: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return train_config_from_json(ss.str());
}

std::string train_config_to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["lr0"] = c.lr0;
    j["momentum"] = c.momentum;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["image_size"] = c.image_size;
    j["lr_final_fraction"] = c.lr_final_fraction;
    j["seed"] = c.seed;
    j["nesterov"] = c.nesterov;
    j["weight_decay"] = c.weight_decay;
    j["lambda_box"] = c.lambda_box;
    j["lambda_cls"] = c.lambda_cls;
    j["eval_score_threshold"] = c.eval_score_threshold;
    j["nms_iou_threshold"] = c.nms_iou_threshold;
    return j.dump(2);
}

double cosine_lr(int64_t step, int64_t total_steps, const TrainConfig& cfg) {
    if (total_steps < 1) throw ConfigError("cosine_lr: total_steps must be >= 1");
    const double lr_f = cfg.lr0 * cfg.lr_final_fraction;
    if (step < 0) step = 0;
    if (step > total_steps) return lr_f;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_f + 0.5 * (cfg.lr0 - lr_f) * (1.0 + std::cos(M_PI * t));
}

SgdStepStats sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr,
                      double momentum, bool nesterov, double weight_decay) {
    SgdStepStats stats;
    if (!param.same_shape(grad) || !param.same_shape(velocity)) {
        throw ConfigError("sgd_step: parameter " + param.shape_str() + ", gradient " +
                          grad.shape_str() + ", velocity " + velocity.shape_str() +
                          " shapes must agree");
    }
    float* p = param.data();
    const float* g = grad.data();
    float* v = velocity.data();
    bool any_bad = false;
    for (int64_t i = 0; i < param.numel(); ++i) {
        if (!std::isfinite(g[i])) {
            any_bad = true;
            continue;
        }
        float gi = g[i];
        if (weight_decay != 0.0) gi += static_cast<float>(weight_decay) * p[i];
        v[i] = static_cast<float>(momentum) * v[i] + gi;
        const float step_v = nesterov ? static_cast<float>(momentum) * v[i] + gi : v[i];
        p[i] -= static_cast<float>(lr) * step_v;
    }
    if (any_bad) stats.skipped_params = 1;
    return stats;
}

// --- datasets -----------------------------------------------------------------

namespace {

std::map<std::string, std::string> parse_kv(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("bad dataset option \"" + item + "\"");
        kv[item.substr(0, eq)] = item.substr(eq + 1);
    }
    return kv;
}

std::vector<Scene> load_split(const Manifest& m, const std::string& split, int image_size) {
    std::vector<Scene> scenes;
    auto it = m.splits.find(split);
    if (it == m.splits.end()) return scenes;
    for (const auto& e : it->second) {
        Scene s;
        Tensor raw = load_image(e.image_path);
        auto gts = parse_annotations(e.annotation_path, m.format, raw.w(), raw.h());
        auto [img, tf] = letterbox(raw, image_size);
        s.image = img;
        for (auto g : gts) {
            g.box = tf.apply(g.box);
            s.gts.push_back(g);
        }
        scenes.push_back(std::move(s));
    }
    return scenes;
}

}  // namespace

Dataset load_dataset(const std::string& spec, int image_size, int num_classes) {
    Dataset d;
    if (spec.rfind("synthetic", 0) == 0) {
        GenConfig gc;
        gc.image_size = image_size;
        gc.num_classes = num_classes;
        int n_train = 2000, n_val = 500;
        uint64_t seed = 0;
        if (spec.size() > 9 && spec[9] == ':') {
            for (const auto& [k, v] : parse_kv(spec.substr(10))) {
                if (k == "train") n_train = std::stoi(v);
                else if (k == "val") n_val = std::stoi(v);
                else if (k == "seed") seed = std::stoull(v);
                else if (k == "classes") gc.num_classes = std::stoi(v);
                else if (k == "min_objects") gc.min_objects = std::stoi(v);
                else if (k == "max_objects") gc.max_objects = std::stoi(v);
                else if (k == "min_size") gc.min_size_frac = std::stod(v);
                else if (k == "max_size") gc.max_size_frac = std::stod(v);
                else if (k == "occlusion") gc.occlusion_prob = std::stod(v);
                else if (k == "noise") gc.noise_amplitude = std::stod(v);
                else throw ConfigError("unknown synthetic dataset option \"" + k + "\"");
            }
        }
        d.train.resize(n_train);
        d.val.resize(n_val);
        // Scene seeds derive from (seed, index); validation scenes live in a
        // disjoint index range. Generation parallelizes per scene.
        parallel_for(n_train, [&](int64_t i) {
            d.train[i] = generate_scene(gc, seed * 1000003ull + static_cast<uint64_t>(i));
        }, 200000);
        parallel_for(n_val, [&](int64_t i) {
            d.val[i] = generate_scene(
                gc, seed * 1000003ull + 500009ull + static_cast<uint64_t>(n_train + i));
        }, 200000);
        return d;
    }
    Manifest m = load_manifest(spec);
    d.train = load_split(m, "train", image_size);
    d.val = load_split(m, "val", image_size);
    if (d.train.empty() && d.val.empty()) {
        throw DataError("manifest " + spec + " has no train or val entries");
    }
    return d;
}

// --- inference & evaluation -----------------------------------------------------

std::vector<std::vector<Detection>> run_inference(Model<float>& model,
                                                  const std::vector<Scene>& scenes,
                                                  double score_threshold, double nms_iou,
                                                  int batch_size) {
    const int S = model.config().image_size;
    DecodeConfig dc;
    dc.num_classes = model.config().num_classes;
    dc.image_size = S;
    dc.score_threshold = static_cast<float>(score_threshold);
    std::vector<std::vector<Detection>> out(scenes.size());
    for (size_t base = 0; base < scenes.size(); base += batch_size) {
        const int nb = static_cast<int>(std::min<size_t>(batch_size, scenes.size() - base));
        Tensor batch(nb, 3, S, S);
        for (int i = 0; i < nb; ++i) {
            const Tensor& img = scenes[base + i].image;
            if (img.h() != S || img.w() != S) {
                throw DataError("scene " + std::to_string(base + i) + " is " + img.shape_str() +
                                ", expected " + std::to_string(S) + " square");
            }
            std::memcpy(batch.data() + batch.index(i, 0, 0, 0), img.data(),
                        sizeof(float) * img.numel());
        }
        auto preds = model.predict(batch, /*training=*/false);
        for (int i = 0; i < nb; ++i) {
            DecodeResult dr = decode(preds, dc, i);
            out[base + i] = nms(dr.detections, nms_iou);
        }
    }
    return out;
}

EvalReport evaluate_model(Model<float>& model, const std::vector<Scene>& scenes,
                          const TrainConfig& cfg) {
    auto dets = run_inference(model, scenes, cfg.eval_score_threshold, cfg.nms_iou_threshold,
                              cfg.batch_size);
    std::vector<std::vector<GroundTruth>> gts;
    gts.reserve(scenes.size());
    for (const auto& s : scenes) gts.push_back(s.gts);
    EvalReport rep = evaluate_detections(dets, gts);
    rep.params_m = static_cast<double>(model.count_params()) / 1e6;
    rep.gflops = model.estimate_gflops(model.config().image_size);
    return rep;
}

// --- training loop ----------------------------------------------------------------

TrainResult run_training(Model<float>& model, const TrainConfig& cfg, const Dataset& data,
                         const std::string& out_dir, std::ostream* log) {
    cfg.validate();
    if (data.train.empty()) throw DataError("training split is empty");
    if (model.config().image_size != cfg.image_size) {
        throw ConfigError("train config image_size " + std::to_string(cfg.image_size) +
                          " does not match model image_size " +
                          std::to_string(model.config().image_size));
    }
    std::filesystem::create_directories(out_dir);

    AssignConfig ac;
    ac.image_size = cfg.image_size;
    ac.num_classes = model.config().num_classes;
    ac.levels = model.config().levels;
    ac.lambda_box = cfg.lambda_box;
    ac.lambda_cls = cfg.lambda_cls;

    std::vector<Param<float>*> params;
    for (const auto& p : model.store().all()) {
        if (p->trainable) params.push_back(p.get());
    }
    std::vector<Tensor> velocity;
    velocity.reserve(params.size());
    for (auto* p : params) {
        velocity.emplace_back(p->value.n(), p->value.c(), p->value.h(), p->value.w());
    }

    const int64_t steps_per_epoch =
        (static_cast<int64_t>(data.train.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = steps_per_epoch * cfg.epochs;
    const int S = cfg.image_size;

    TrainResult result;
    result.best_checkpoint = out_dir + "/best.ckpt";
    result.last_checkpoint = out_dir + "/last.ckpt";
    int64_t step = 0;
    int consecutive_nan = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Batch composition depends only on (seed, epoch).
        std::vector<int> order(data.train.size());
        std::iota(order.begin(), order.end(), 0);
        SplitMix64 shuffle_rng(cfg.seed * 2654435761ull + static_cast<uint64_t>(epoch));
        for (size_t i = order.size(); i > 1; --i) {
            const size_t j = shuffle_rng.next_below(i);
            std::swap(order[i - 1], order[j]);
        }

        double ep_loss = 0, ep_box = 0, ep_cls = 0, last_lr = cfg.lr0;
        for (int64_t b = 0; b < steps_per_epoch; ++b) {
            const size_t begin = static_cast<size_t>(b) * cfg.batch_size;
            const int nb =
                static_cast<int>(std::min<size_t>(cfg.batch_size, order.size() - begin));
            Tensor batch(nb, 3, S, S);
            std::vector<std::vector<Assignment>> targets(nb);
            for (int i = 0; i < nb; ++i) {
                const Scene& sc = data.train[order[begin + i]];
                std::memcpy(batch.data() + batch.index(i, 0, 0, 0), sc.image.data(),
                            sizeof(float) * sc.image.numel());
                targets[i] = assign_targets(sc.gts, ac);
            }

            Tape<float> tape;
            auto heads = model.forward(tape, tape.leaf(batch), /*training=*/true);
            auto [loss_id, parts] = detection_loss_node(tape, heads, targets, ac);

            if (!std::isfinite(static_cast<double>(parts.total))) {
                if (++consecutive_nan >= 3) {
                    nlohmann::json diag;
                    diag["step"] = step;
                    diag["epoch"] = epoch;
                    diag["loss_box"] = static_cast<double>(parts.box);
                    diag["loss_cls"] = static_cast<double>(parts.cls);
                    diag["lr"] = cosine_lr(step, total_steps, cfg);
                    std::ofstream dump(out_dir + "/divergence.json");
                    dump << diag.dump(2) << "\n";
                    throw NumericError("loss non-finite for 3 consecutive steps at step " +
                                       std::to_string(step) + "; diagnostics in " + out_dir +
                                       "/divergence.json");
                }
                ++step;
                continue;
            }
            consecutive_nan = 0;

            tape.backward(loss_id);
            const double lr = cosine_lr(step, total_steps, cfg);
            last_lr = lr;
            for (size_t i = 0; i < params.size(); ++i) {
                if (!tape.has_grad(params[i]->node)) continue;
                sgd_step(params[i]->value, tape.grad(params[i]->node), velocity[i], lr,
                         cfg.momentum, cfg.nesterov, cfg.weight_decay);
            }
            ep_loss += static_cast<double>(parts.total);
            ep_box += static_cast<double>(parts.box);
            ep_cls += static_cast<double>(parts.cls);
            ++step;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = ep_loss / static_cast<double>(steps_per_epoch);
        rec.box = ep_box / static_cast<double>(steps_per_epoch);
        rec.cls = ep_cls / static_cast<double>(steps_per_epoch);
        rec.lr = last_lr;
        if (!data.val.empty()) {
            EvalReport rep = evaluate_model(model, data.val, cfg);
            rec.map50 = rep.map50;
            rec.map5095 = rep.map5095;
        }
        result.history.push_back(rec);
        if (log) {
            nlohmann::json j;
            j["epoch"] = rec.epoch;
            j["loss"] = rec.loss;
            j["box"] = rec.box;
            j["cls"] = rec.cls;
            j["lr"] = rec.lr;
            j["map50"] = rec.map50;
            j["map50_95"] = rec.map5095;
            (*log) << j.dump() << "\n";
            log->flush();
        }
        if (rec.map50 >= result.best_map50) {
            // ties keep the later epoch (more training at equal accuracy)
            result.best_map50 = rec.map50;
            save_checkpoint(result.best_checkpoint, model.config(), model.store());
        }
        save_checkpoint(result.last_checkpoint, model.config(), model.store());
    }
    return result;
}

}  // namespace masf
