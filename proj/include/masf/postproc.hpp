#pragma once

#include <map>
#include <string>
#include <vector>

#include "masf/tensor.hpp"

namespace masf {

struct Box {
    float x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    float area() const { return (x2 - x1) * (y2 - y1); }
    float width() const { return x2 - x1; }
    float height() const { return y2 - y1; }
};

struct Detection {
    Box box;
    int class_id = 0;
    float score = 0;
};

struct GroundTruth {
    Box box;
    int class_id = 0;
};

// Intersection over union of two axis-aligned boxes, in [0, 1].
double iou(const Box& a, const Box& b);

struct DecodeConfig {
    int num_classes = 3;
    int image_size = 128;
    float score_threshold = 0.25f;
    int max_detections = 300;  // kept per image before NMS, by score
};

struct DecodeResult {
    std::vector<Detection> detections;
    int dropped_cells = 0;  // cells skipped for non-finite regressors
};

// Size decode: stride * exp(ln 8 - softplus(ln 8 - t)); behaves like e^t for
// small t and saturates at 8 * stride, so untrained heads cannot emit
// infinite boxes.
float decode_size_multiplier(float t);

// Converts raw head outputs (level -> (N, 4+num_classes, H, W)) for one
// image of the batch into scored, clipped detections.
DecodeResult decode(const std::map<int, Tensor>& raw_by_level, const DecodeConfig& cfg,
                    int image_index = 0);

// Greedy class-wise non-maximum suppression. Keeps input boxes ordered by
// (score desc, original index asc); suppresses same-class boxes with
// IoU > threshold.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold = 0.5);

// One JSON object per line: {image_id, class_id, score, x1, y1, x2, y2}.
std::string detections_to_jsonl(const std::vector<Detection>& dets, int image_id);

}  // namespace masf
