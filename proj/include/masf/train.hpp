#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "masf/data.hpp"
#include "masf/loss.hpp"
#include "masf/metrics.hpp"
#include "masf/network.hpp"

namespace masf {

struct TrainConfig {
    double lr0 = 0.01;
    double momentum = 0.937;
    int epochs = 30;
    int batch_size = 8;
    int image_size = 128;
    double lr_final_fraction = 0.01;
    uint64_t seed = 0;
    // Not part of the reference recipe; off unless asked for.
    bool nesterov = false;
    double weight_decay = 0.0;
    double lambda_box = 5.0;
    double lambda_cls = 1.0;
    // Evaluation
    double eval_score_threshold = 0.05;
    double nms_iou_threshold = 0.5;

    void validate() const;
};

TrainConfig train_config_from_json(const std::string& text);
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_json(const TrainConfig& cfg);

// lr(step) = lr_f + 0.5 * (lr0 - lr_f) * (1 + cos(pi * step / total)),
// lr_f = lr0 * lr_final_fraction; steps past the end clamp to lr_f.
double cosine_lr(int64_t step, int64_t total_steps, const TrainConfig& cfg);

// Classic momentum: v <- momentum * v + g; p <- p - lr * v. Non-finite
// gradients skip the parameter and are counted. Nesterov applies the
// velocity look-ahead instead when enabled.
struct SgdStepStats {
    int skipped_params = 0;
};
SgdStepStats sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr,
                      double momentum, bool nesterov = false, double weight_decay = 0.0);

// In-memory dataset of letterboxed scenes.
struct Dataset {
    std::vector<Scene> train;
    std::vector<Scene> val;
};

// "synthetic" or "synthetic:train=2000,val=500,seed=0,classes=3" or a
// manifest path. Scenes are generated/loaded at the given square size.
Dataset load_dataset(const std::string& spec, int image_size, int num_classes);

struct EpochRecord {
    int epoch = 0;
    double loss = 0, box = 0, cls = 0, lr = 0;
    double map50 = 0, map5095 = 0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::string best_checkpoint;
    std::string last_checkpoint;
    double best_map50 = 0;
};

// Detections for every scene, inference mode, batched.
std::vector<std::vector<Detection>> run_inference(Model<float>& model,
                                                  const std::vector<Scene>& scenes,
                                                  double score_threshold, double nms_iou,
                                                  int batch_size = 8);

EvalReport evaluate_model(Model<float>& model, const std::vector<Scene>& scenes,
                          const TrainConfig& cfg);

// Full training run; writes best/last checkpoints under out_dir and streams
// one JSON object per epoch to `log` when given.
TrainResult run_training(Model<float>& model, const TrainConfig& cfg, const Dataset& data,
                         const std::string& out_dir, std::ostream* log = nullptr);

}  // namespace masf
