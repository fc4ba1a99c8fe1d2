#include "masf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "masf/errors.hpp"

namespace masf {

MatchResult match_predictions(const std::vector<Detection>& dets,
                              const std::vector<GroundTruth>& gts, double iou_threshold) {
    MatchResult res;
    res.order.resize(dets.size());
    std::iota(res.order.begin(), res.order.end(), 0);
    std::stable_sort(res.order.begin(), res.order.end(),
                     [&](int a, int b) { return dets[a].score > dets[b].score; });
    res.tp.assign(dets.size(), 0);
    std::vector<char> used(gts.size(), 0);
    for (size_t k = 0; k < res.order.size(); ++k) {
        const Detection& d = dets[res.order[k]];
        double best = 0.0;
        int best_gt = -1;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (used[g] || gts[g].class_id != d.class_id) continue;
            const double v = iou(d.box, gts[g].box);
            if (v > best) {  // ties keep the earlier GT index
                best = v;
                best_gt = static_cast<int>(g);
            }
        }
        if (best_gt >= 0 && best >= iou_threshold) {
            res.tp[k] = 1;
            used[best_gt] = 1;
        }
    }
    return res;
}

std::pair<double, double> precision_recall(const std::vector<uint8_t>& flags, int n_gt) {
    int64_t tp = 0;
    for (uint8_t f : flags) tp += f;
    const int64_t total = static_cast<int64_t>(flags.size());
    const double p = total > 0 ? static_cast<double>(tp) / total : 0.0;
    const double r = n_gt > 0 ? static_cast<double>(tp) / n_gt : 0.0;
    return {p, r};
}

PRCurve pr_curve(const std::vector<uint8_t>& flags_by_score, int n_gt) {
    PRCurve c;
    c.n_gt = n_gt;
    int64_t tp = 0;
    for (size_t i = 0; i < flags_by_score.size(); ++i) {
        tp += flags_by_score[i];
        const double recall = n_gt > 0 ? static_cast<double>(tp) / n_gt : 0.0;
        const double precision = static_cast<double>(tp) / static_cast<double>(i + 1);
        c.points.emplace_back(recall, precision);
    }
    return c;
}

double average_precision(const std::vector<uint8_t>& flags_by_score, int n_gt, ApMode mode) {
    if (n_gt <= 0) return 0.0;
    PRCurve c = pr_curve(flags_by_score, n_gt);
    // Monotone envelope: precision at recall r is the max precision at >= r.
    std::vector<double> env(c.points.size());
    double run = 0.0;
    for (size_t i = c.points.size(); i-- > 0;) {
        run = std::max(run, c.points[i].second);
        env[i] = run;
    }
    if (mode == ApMode::ElevenPoint) {
        double acc = 0.0;
        for (int k = 0; k <= 10; ++k) {
            const double r = k / 10.0;
            double p = 0.0;
            for (size_t i = 0; i < c.points.size(); ++i) {
                if (c.points[i].first >= r) {
                    p = env[i];
                    break;
                }
            }
            acc += p;
        }
        return acc / 11.0;
    }
    // All-points: sum of recall increments times enveloped precision.
    double ap = 0.0;
    double prev_r = 0.0;
    for (size_t i = 0; i < c.points.size(); ++i) {
        const double r = c.points[i].first;
        if (r > prev_r) {
            ap += (r - prev_r) * env[i];
            prev_r = r;
        }
    }
    return ap;
}

double mean_ap(const std::map<int, double>& per_class_ap) {
    if (per_class_ap.empty()) throw DataError("no evaluable classes");
    double s = 0.0;
    for (const auto& [cls, ap] : per_class_ap) s += ap;
    return s / static_cast<double>(per_class_ap.size());
}

std::vector<double> map5095_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back(0.50 + 0.05 * i);
    return t;
}

namespace {

// Per-class flags across the whole dataset at one IoU threshold, ordered by
// score (ties: image index, then original detection index).
struct ScoredFlag {
    float score;
    int image;
    int index;
    uint8_t tp;
};

std::map<int, double> per_class_ap_at(const std::vector<std::vector<Detection>>& dets_per_image,
                                      const std::vector<std::vector<GroundTruth>>& gts_per_image,
                                      double thr, ApMode mode, const std::set<int>& classes,
                                      const std::map<int, int>& gt_counts) {
    std::map<int, std::vector<ScoredFlag>> flags;
    for (size_t img = 0; img < dets_per_image.size(); ++img) {
        for (int cls : classes) {
            std::vector<Detection> d;
            std::vector<int> orig;
            for (size_t i = 0; i < dets_per_image[img].size(); ++i) {
                if (dets_per_image[img][i].class_id == cls) {
                    d.push_back(dets_per_image[img][i]);
                    orig.push_back(static_cast<int>(i));
                }
            }
            std::vector<GroundTruth> g;
            for (const auto& gt : gts_per_image[img])
                if (gt.class_id == cls) g.push_back(gt);
            MatchResult m = match_predictions(d, g, thr);
            for (size_t k = 0; k < m.order.size(); ++k) {
                flags[cls].push_back({d[m.order[k]].score, static_cast<int>(img),
                                      orig[m.order[k]], m.tp[k]});
            }
        }
    }
    std::map<int, double> ap;
    for (int cls : classes) {
        const int n_gt = gt_counts.count(cls) ? gt_counts.at(cls) : 0;
        if (n_gt == 0) continue;  // classes without ground truth are excluded
        auto& v = flags[cls];
        std::sort(v.begin(), v.end(), [](const ScoredFlag& a, const ScoredFlag& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.image != b.image) return a.image < b.image;
            return a.index < b.index;
        });
        std::vector<uint8_t> f;
        f.reserve(v.size());
        for (const auto& s : v) f.push_back(s.tp);
        ap[cls] = average_precision(f, n_gt, mode);
    }
    return ap;
}

}  // namespace

EvalReport evaluate_detections(const std::vector<std::vector<Detection>>& dets_per_image,
                               const std::vector<std::vector<GroundTruth>>& gts_per_image,
                               ApMode mode) {
    if (dets_per_image.size() != gts_per_image.size()) {
        throw DataError("evaluate: detection and ground-truth image counts differ");
    }
    std::set<int> classes;
    std::map<int, int> gt_counts;
    for (const auto& img : gts_per_image) {
        for (const auto& g : img) {
            classes.insert(g.class_id);
            gt_counts[g.class_id]++;
        }
    }
    EvalReport rep;
    for (const auto& img : dets_per_image) {
        for (const auto& d : img) {
            if (!gt_counts.count(d.class_id)) {
                classes.insert(d.class_id);
                if (std::find(rep.flagged_classes.begin(), rep.flagged_classes.end(),
                              d.class_id) == rep.flagged_classes.end()) {
                    rep.flagged_classes.push_back(d.class_id);
                }
            }
        }
    }
    if (gt_counts.empty()) throw DataError("no evaluable classes");

    rep.per_class_ap = per_class_ap_at(dets_per_image, gts_per_image, 0.5, mode, classes,
                                       gt_counts);
    rep.map50 = mean_ap(rep.per_class_ap);
    double acc = 0.0;
    for (double thr : map5095_thresholds()) {
        auto ap = (thr == 0.5) ? rep.per_class_ap
                               : per_class_ap_at(dets_per_image, gts_per_image, thr, mode,
                                                 classes, gt_counts);
        acc += mean_ap(ap);
    }
    rep.map5095 = acc / 10.0;

    // Operating point over every emitted detection at IoU 0.5.
    int64_t tp = 0, total = 0, n_gt_total = 0;
    for (const auto& [cls, cnt] : gt_counts) n_gt_total += cnt;
    for (size_t img = 0; img < dets_per_image.size(); ++img) {
        MatchResult m = match_predictions(dets_per_image[img], gts_per_image[img], 0.5);
        for (uint8_t f : m.tp) tp += f;
        total += static_cast<int64_t>(m.tp.size());
    }
    rep.precision = total > 0 ? static_cast<double>(tp) / total : 0.0;
    rep.recall = n_gt_total > 0 ? static_cast<double>(tp) / n_gt_total : 0.0;
    return rep;
}

std::string report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["map50"] = r.map50;
    j["map50_95"] = r.map5095;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["params_m"] = r.params_m;
    j["gflops"] = r.gflops;
    nlohmann::json ap = nlohmann::json::object();
    for (const auto& [cls, v] : r.per_class_ap) ap[std::to_string(cls)] = v;
    j["per_class_ap50"] = ap;
    j["flagged_classes"] = r.flagged_classes;
    return j.dump(2);
}

std::string report_to_table(const EvalReport& r, const std::string& row_label) {
    std::ostringstream os;
    os << std::left << std::setw(16) << "Model" << std::right << std::setw(8) << "P"
       << std::setw(8) << "R" << std::setw(12) << "mAP50 (%)" << std::setw(16)
       << "mAP50:95 (%)" << std::setw(12) << "Params (M)" << "\n";
    os << std::left << std::setw(16) << row_label << std::right << std::fixed
       << std::setprecision(3) << std::setw(8) << r.precision << std::setw(8) << r.recall
       << std::setprecision(1) << std::setw(12) << 100.0 * r.map50 << std::setw(16)
       << 100.0 * r.map5095 << std::setprecision(2) << std::setw(12) << r.params_m << "\n";
    return os.str();
}

}  // namespace masf
