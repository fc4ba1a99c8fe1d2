#include "masf/render.hpp"

#include <algorithm>
#include <cmath>

#include "masf/data.hpp"

namespace masf {

namespace {

void draw_rect(Tensor& img, const Box& b, const float rgb[3], int x_off, int thickness) {
    const int H = img.h(), W = img.w();
    const int x1 = std::clamp(static_cast<int>(std::floor(b.x1)) + x_off, 0, W - 1);
    const int x2 = std::clamp(static_cast<int>(std::ceil(b.x2)) + x_off, 0, W - 1);
    const int y1 = std::clamp(static_cast<int>(std::floor(b.y1)), 0, H - 1);
    const int y2 = std::clamp(static_cast<int>(std::ceil(b.y2)), 0, H - 1);
    auto put = [&](int y, int x) {
        for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = rgb[c];
    };
    for (int t = 0; t < thickness; ++t) {
        const int yt = std::min(y1 + t, H - 1), yb = std::max(y2 - t, 0);
        for (int x = x1; x <= x2; ++x) {
            put(yt, x);
            put(yb, x);
        }
        const int xl = std::min(x1 + t, W - 1), xr = std::max(x2 - t, 0);
        for (int y = y1; y <= y2; ++y) {
            put(y, xl);
            put(y, xr);
        }
    }
}

std::vector<char> gt_hits(const std::vector<Detection>& dets,
                          const std::vector<GroundTruth>& gts, double hit_iou) {
    std::vector<char> hit(gts.size(), 0);
    for (size_t g = 0; g < gts.size(); ++g) {
        for (const auto& d : dets) {
            if (d.class_id == gts[g].class_id && iou(d.box, gts[g].box) >= hit_iou) {
                hit[g] = 1;
                break;
            }
        }
    }
    return hit;
}

constexpr float kGreen[3] = {0.1f, 0.85f, 0.1f};
constexpr float kBlue[3] = {0.15f, 0.4f, 0.95f};
constexpr float kOrange[3] = {0.95f, 0.6f, 0.1f};
constexpr float kRed[3] = {0.95f, 0.1f, 0.1f};

}  // namespace

int count_highlights(const std::vector<Detection>& dets_a, const std::vector<Detection>& dets_b,
                     const std::vector<GroundTruth>& gts, double hit_iou) {
    auto ha = gt_hits(dets_a, gts, hit_iou);
    auto hb = gt_hits(dets_b, gts, hit_iou);
    int n = 0;
    for (size_t g = 0; g < gts.size(); ++g) n += (hb[g] && !ha[g]);
    return n;
}

Tensor render_comparison(const Tensor& image, const std::vector<Detection>& dets_a,
                         const std::vector<Detection>& dets_b,
                         const std::vector<GroundTruth>& gts, double hit_iou) {
    const int H = image.h(), W = image.w(), gap = 8;
    Tensor canvas = Tensor::full(1, 3, H, 2 * W + gap, 0.15f);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                canvas.at(0, c, y, x) = image.at(0, std::min(c, image.c() - 1), y, x);
                canvas.at(0, c, y, W + gap + x) = image.at(0, std::min(c, image.c() - 1), y, x);
            }
        }
    }
    for (const auto& g : gts) {
        draw_rect(canvas, g.box, kGreen, 0, 1);
        draw_rect(canvas, g.box, kGreen, W + gap, 1);
    }
    for (const auto& d : dets_a) draw_rect(canvas, d.box, kBlue, 0, 1);
    for (const auto& d : dets_b) draw_rect(canvas, d.box, kOrange, W + gap, 1);
    // Targets the second model finds and the first misses, as in the
    // side-by-side comparison figures.
    auto ha = gt_hits(dets_a, gts, hit_iou);
    auto hb = gt_hits(dets_b, gts, hit_iou);
    for (size_t g = 0; g < gts.size(); ++g) {
        if (hb[g] && !ha[g]) {
            Box wide = gts[g].box;
            wide.x1 -= 2;
            wide.y1 -= 2;
            wide.x2 += 2;
            wide.y2 += 2;
            draw_rect(canvas, wide, kRed, W + gap, 2);
        }
    }
    return canvas;
}

void render_comparison_to_file(const std::string& path, const Tensor& image,
                               const std::vector<Detection>& dets_a,
                               const std::vector<Detection>& dets_b,
                               const std::vector<GroundTruth>& gts, double hit_iou) {
    save_image_ppm(path, render_comparison(image, dets_a, dets_b, gts, hit_iou));
}

}  // namespace masf
