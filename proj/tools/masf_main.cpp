#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "masf/checkpoint.hpp"
#include "masf/render.hpp"
#include "masf/train.hpp"

using namespace masf;

namespace {

ModelConfig resolve_model_config(const std::string& path, const std::string& preset) {
    if (!path.empty()) return load_model_config(path);
    if (preset == "baseline-tiny") return ModelConfig::baseline_tiny();
    if (preset == "full-tiny" || preset.empty()) return ModelConfig::full_tiny();
    throw ConfigError("unknown preset \"" + preset + "\" (baseline-tiny | full-tiny)");
}

int cmd_train(const std::string& model_cfg_path, const std::string& preset,
              const std::string& train_cfg_path, const std::string& data_spec,
              const std::string& out_dir) {
    ModelConfig mc = resolve_model_config(model_cfg_path, preset);
    TrainConfig tc = train_cfg_path.empty() ? TrainConfig{} : load_train_config(train_cfg_path);
    mc.image_size = tc.image_size;
    mc.seed = tc.seed;
    Model<float> model(mc);
    std::cout << "model: " << model.count_params() << " params, "
              << std::fixed << std::setprecision(3) << model.estimate_gflops(mc.image_size)
              << " GFLOPs @ " << mc.image_size << "px\n";
    Dataset data = load_dataset(data_spec, tc.image_size, mc.num_classes);
    std::cout << "data: " << data.train.size() << " train / " << data.val.size()
              << " val scenes\n";
    std::filesystem::create_directories(out_dir);
    std::ofstream log(out_dir + "/metrics.jsonl");
    TrainResult res = run_training(model, tc, data, out_dir, &log);
    std::cout << "best map50 " << std::setprecision(4) << res.best_map50 << "; checkpoints in "
              << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_spec, const std::string& format,
             const std::string& dump_path, const std::string& report_path, bool voc11) {
    ModelConfig mc = load_checkpoint_config(ckpt);
    Model<float> model(mc);
    load_checkpoint_params(ckpt, model.store());
    (void)format;  // manifest files carry their own format field
    TrainConfig tc;
    tc.image_size = mc.image_size;
    Dataset data = load_dataset(data_spec, mc.image_size, mc.num_classes);
    const auto& scenes = data.val.empty() ? data.train : data.val;
    auto dets = run_inference(model, scenes, tc.eval_score_threshold, tc.nms_iou_threshold,
                              tc.batch_size);
    std::vector<std::vector<GroundTruth>> gts;
    for (const auto& s : scenes) gts.push_back(s.gts);
    EvalReport rep = evaluate_detections(dets, gts, voc11 ? ApMode::ElevenPoint
                                                          : ApMode::AllPoints);
    rep.params_m = static_cast<double>(model.count_params()) / 1e6;
    rep.gflops = model.estimate_gflops(mc.image_size);
    std::cout << report_to_table(rep, "checkpoint");
    if (!report_path.empty()) {
        std::ofstream os(report_path);
        os << report_to_json(rep) << "\n";
    }
    if (!dump_path.empty()) {
        std::ofstream os(dump_path);
        for (size_t i = 0; i < dets.size(); ++i) {
            os << detections_to_jsonl(dets[i], static_cast<int>(i));
        }
    }
    return 0;
}

int cmd_bench(const std::string& model_cfg_path, const std::string& preset, int batch,
              int iters) {
    ModelConfig mc = resolve_model_config(model_cfg_path, preset);
    Model<float> model(mc);
    std::cout << "params: " << model.count_params() << "\n";
    std::cout << "gflops @" << mc.image_size << "px: " << std::fixed << std::setprecision(3)
              << model.estimate_gflops(mc.image_size) << "\n";
    SplitMix64 rng(1);
    Tensor img = Tensor::uniform(batch, 3, mc.image_size, mc.image_size, rng, 0.f, 1.f);
    model.predict(img, false);  // warm
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < iters; ++i) model.predict(img, false);
    auto t1 = std::chrono::steady_clock::now();
    const double per_fwd =
        std::chrono::duration<double>(t1 - t0).count() / iters;
    std::cout << "forward (batch " << batch << "): " << std::setprecision(1)
              << per_fwd * 1e3 << " ms, " << per_fwd * 1e3 / batch << " ms/image\n";
    return 0;
}

int cmd_inspect(const std::string& model_cfg_path, const std::string& preset) {
    ModelConfig mc = resolve_model_config(model_cfg_path, preset);
    Model<float> model(mc);
    auto rows = model.describe(mc.image_size);
    std::cout << std::left << std::setw(26) << "layer" << std::setw(10) << "kind"
              << std::setw(18) << "output" << std::right << std::setw(10) << "params"
              << std::setw(14) << "MFLOPs" << "\n";
    int64_t params = 0;
    uint64_t flops = 0;
    for (const auto& r : rows) {
        std::ostringstream shape;
        shape << r.out_c << "x" << r.out_h << "x" << r.out_w;
        std::cout << std::left << std::setw(26) << r.name << std::setw(10) << r.kind
                  << std::setw(18) << shape.str() << std::right << std::setw(10) << r.params
                  << std::setw(14) << std::fixed << std::setprecision(3)
                  << static_cast<double>(r.flops) / 1e6 << "\n";
        params += r.params;
        flops += r.flops;
    }
    std::cout << "total: " << params << " params, " << std::setprecision(3)
              << static_cast<double>(flops) / 1e9 << " GFLOPs\n";
    return 0;
}

int cmd_render(const std::string& ckpt_a, const std::string& ckpt_b, const std::string& image,
               const std::string& annotations, const std::string& format,
               const std::string& out) {
    Tensor raw = load_image(image);
    auto run = [&](const std::string& ckpt) {
        ModelConfig mc = load_checkpoint_config(ckpt);
        Model<float> model(mc);
        load_checkpoint_params(ckpt, model.store());
        auto [img, tf] = letterbox(raw, mc.image_size);
        Scene s;
        s.image = img;
        TrainConfig tc;
        auto dets = run_inference(model, {s}, 0.25, tc.nms_iou_threshold, 1);
        for (auto& d : dets[0]) d.box = tf.invert(d.box);
        return dets[0];
    };
    auto dets_a = run(ckpt_a);
    auto dets_b = run(ckpt_b);
    std::vector<GroundTruth> gts;
    if (!annotations.empty()) {
        gts = parse_annotations(annotations,
                                format == "visdrone" ? AnnotationFormat::VisDrone
                                                     : AnnotationFormat::Internal,
                                raw.w(), raw.h());
    }
    render_comparison_to_file(out, raw, dets_a, dets_b, gts);
    std::cout << "wrote " << out << " (" << count_highlights(dets_a, dets_b, gts)
              << " highlighted targets)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"small-object detector: train, evaluate, benchmark, inspect, render"};
    app.require_subcommand(1);

    std::string model_cfg, preset, train_cfg, data_spec = "synthetic", out_dir = "runs/exp";
    std::string ckpt, ckpt_b, image, annotations, dump_path, report_path, format = "internal";
    bool voc11 = false;
    int batch = 1, iters = 10;

    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--model-config", model_cfg, "model config JSON file");
    train->add_option("--preset", preset, "baseline-tiny | full-tiny");
    train->add_option("--train-config", train_cfg, "train config JSON file");
    train->add_option("--data", data_spec, "manifest path or synthetic[:k=v,...]");
    train->add_option("--out", out_dir, "output directory");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    eval->add_option("--data", data_spec, "manifest path or synthetic[:k=v,...]");
    eval->add_option("--format", format, "visdrone | internal (manifest annotation format)");
    eval->add_option("--dump-predictions", dump_path, "write detections as JSON lines");
    eval->add_option("--report", report_path, "write the report as JSON");
    eval->add_flag("--ap-voc11", voc11, "11-point AP interpolation instead of all-points");

    auto* bench = app.add_subcommand("bench", "params, GFLOPs, wall-clock per forward");
    bench->add_option("--model-config", model_cfg, "model config JSON file");
    bench->add_option("--preset", preset, "baseline-tiny | full-tiny");
    bench->add_option("--batch", batch, "batch size");
    bench->add_option("--iters", iters, "timed iterations");

    auto* inspect = app.add_subcommand("inspect", "per-layer table with params and FLOPs");
    inspect->add_option("--model-config", model_cfg, "model config JSON file");
    inspect->add_option("--preset", preset, "baseline-tiny | full-tiny");

    auto* render = app.add_subcommand("render", "side-by-side comparison image");
    render->add_option("--checkpoint-a", ckpt, "first checkpoint")->required();
    render->add_option("--checkpoint-b", ckpt_b, "second checkpoint")->required();
    render->add_option("--image", image, "input image (.ppm or .msft)")->required();
    render->add_option("--annotations", annotations, "ground-truth file");
    render->add_option("--format", format, "visdrone | internal (annotation format)");
    render->add_option("--out", out_dir, "output image path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) return cmd_train(model_cfg, preset, train_cfg, data_spec, out_dir);
        if (*eval) return cmd_eval(ckpt, data_spec, format, dump_path, report_path, voc11);
        if (*bench) return cmd_bench(model_cfg, preset, batch, iters);
        if (*inspect) return cmd_inspect(model_cfg, preset);
        if (*render) return cmd_render(ckpt, ckpt_b, image, annotations, format, out_dir);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
