#include "masf/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "masf/boxcodec.hpp"
#include "masf/kernels.hpp"

namespace masf {

double iou(const Box& a, const Box& b) {
    const double ix = std::max(0.0, static_cast<double>(std::min(a.x2, b.x2)) -
                                        std::max(a.x1, b.x1));
    const double iy = std::max(0.0, static_cast<double>(std::min(a.y2, b.y2)) -
                                        std::max(a.y1, b.y1));
    const double inter = ix * iy;
    const double uni = static_cast<double>(a.area()) + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

float decode_size_multiplier(float t) { return size_multiplier_s(t); }

DecodeResult decode(const std::map<int, Tensor>& raw_by_level, const DecodeConfig& cfg,
                    int image_index) {
    DecodeResult out;
    for (const auto& [level, pred] : raw_by_level) {
        const int stride = 1 << level;
        const int H = pred.h(), W = pred.w();
        if (pred.c() != 4 + cfg.num_classes) {
            throw ConfigError("decode: level P" + std::to_string(level) + " has " +
                              std::to_string(pred.c()) + " channels, expected " +
                              std::to_string(4 + cfg.num_classes));
        }
        for (int row = 0; row < H; ++row) {
            for (int col = 0; col < W; ++col) {
                const float tx = pred.at(image_index, 0, row, col);
                const float ty = pred.at(image_index, 1, row, col);
                const float tw = pred.at(image_index, 2, row, col);
                const float th = pred.at(image_index, 3, row, col);
                if (!std::isfinite(tx) || !std::isfinite(ty) || !std::isfinite(tw) ||
                    !std::isfinite(th)) {
                    ++out.dropped_cells;
                    continue;
                }
                const float cx = (col + stable_sigmoid(tx)) * stride;
                const float cy = (row + stable_sigmoid(ty)) * stride;
                const float bw = decode_size_multiplier(tw) * stride;
                const float bh = decode_size_multiplier(th) * stride;
                for (int k = 0; k < cfg.num_classes; ++k) {
                    const float logit = pred.at(image_index, 4 + k, row, col);
                    if (!std::isfinite(logit)) {
                        ++out.dropped_cells;
                        break;
                    }
                    const float score = stable_sigmoid(logit);
                    if (score < cfg.score_threshold) continue;
                    Box b{cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2};
                    const float S = static_cast<float>(cfg.image_size);
                    b.x1 = std::clamp(b.x1, 0.f, S);
                    b.y1 = std::clamp(b.y1, 0.f, S);
                    b.x2 = std::clamp(b.x2, 0.f, S);
                    b.y2 = std::clamp(b.y2, 0.f, S);
                    if (b.x2 - b.x1 <= 0.f || b.y2 - b.y1 <= 0.f) continue;
                    out.detections.push_back({b, k, score});
                }
            }
        }
    }
    // Keep only the strongest max_detections; stable on original order.
    if (static_cast<int>(out.detections.size()) > cfg.max_detections) {
        std::vector<int> idx(out.detections.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
            return out.detections[a].score > out.detections[b].score;
        });
        idx.resize(cfg.max_detections);
        std::sort(idx.begin(), idx.end());
        std::vector<Detection> kept;
        kept.reserve(idx.size());
        for (int i : idx) kept.push_back(out.detections[i]);
        out.detections.swap(kept);
    }
    return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    // score desc, ties by original index asc
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return dets[a].score > dets[b].score; });
    std::vector<char> suppressed(dets.size(), 0);
    std::vector<Detection> kept;
    for (size_t i = 0; i < order.size(); ++i) {
        const int a = order[i];
        if (suppressed[a]) continue;
        kept.push_back(dets[a]);
        for (size_t j = i + 1; j < order.size(); ++j) {
            const int b = order[j];
            if (suppressed[b] || dets[b].class_id != dets[a].class_id) continue;
            if (iou(dets[a].box, dets[b].box) > iou_threshold) suppressed[b] = 1;
        }
    }
    return kept;
}

std::string detections_to_jsonl(const std::vector<Detection>& dets, int image_id) {
    std::ostringstream os;
    for (const auto& d : dets) {
        nlohmann::json j{{"image_id", image_id}, {"class_id", d.class_id}, {"score", d.score},
                         {"x1", d.box.x1},       {"y1", d.box.y1},         {"x2", d.box.x2},
                         {"y2", d.box.y2}};
        os << j.dump() << "\n";
    }
    return os.str();
}

}  // namespace masf
