#pragma once

#include <map>
#include <string>
#include <vector>

#include "masf/postproc.hpp"

namespace masf {

// Monotone-recall precision curve for one class; the object the AP integral
// is taken over.
struct PRCurve {
    std::vector<std::pair<double, double>> points;  // (recall, precision), recall ascending
    int n_gt = 0;
};

struct EvalReport {
    std::map<int, double> per_class_ap;  // AP at IoU 0.5
    double map50 = 0;
    double map5095 = 0;
    double precision = 0;  // single operating point over all emitted detections
    double recall = 0;
    double params_m = 0;
    double gflops = 0;
    std::vector<int> flagged_classes;  // detections present but no ground truth
};

enum class ApMode { AllPoints, ElevenPoint };

// Greedy matching of one image's detections of one class against its ground
// truth: highest score first, each GT usable once, ties on IoU broken by GT
// index. Returns TP flags in (score desc, original index asc) order plus
// that order.
struct MatchResult {
    std::vector<int> order;
    std::vector<uint8_t> tp;
};
MatchResult match_predictions(const std::vector<Detection>& dets,
                              const std::vector<GroundTruth>& gts, double iou_threshold);

// P = TP/(TP+FP) with 0/0 -> 0; R = TP/n_gt with n_gt = 0 -> 0.
std::pair<double, double> precision_recall(const std::vector<uint8_t>& flags, int n_gt);

// Area under the enveloped precision-recall curve; flags must be ordered by
// descending score.
double average_precision(const std::vector<uint8_t>& flags_by_score, int n_gt,
                         ApMode mode = ApMode::AllPoints);

PRCurve pr_curve(const std::vector<uint8_t>& flags_by_score, int n_gt);

// Mean over classes that have ground truth.
double mean_ap(const std::map<int, double>& per_class_ap);

// The ten IoU thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> map5095_thresholds();

// Full evaluation over a dataset: detections and ground truth are parallel
// per-image lists. Fills per_class_ap / map50 / map5095 / precision / recall.
EvalReport evaluate_detections(const std::vector<std::vector<Detection>>& dets_per_image,
                               const std::vector<std::vector<GroundTruth>>& gts_per_image,
                               ApMode mode = ApMode::AllPoints);

std::string report_to_json(const EvalReport& r);
// Aligned table with columns P, R, mAP50 (%), mAP50:95 (%), Params (M).
std::string report_to_table(const EvalReport& r, const std::string& row_label);

}  // namespace masf
