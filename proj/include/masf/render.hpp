#pragma once

#include <string>
#include <vector>

#include "masf/postproc.hpp"

namespace masf {

// Side-by-side raster: ground truth in green on both panels, model-A boxes
// in blue (left), model-B boxes in orange (right); ground truth hit by B
// but missed by A gets a red outline on the right panel. Returns the canvas
// (1,3,H,2W+gap).
Tensor render_comparison(const Tensor& image, const std::vector<Detection>& dets_a,
                         const std::vector<Detection>& dets_b,
                         const std::vector<GroundTruth>& gts, double hit_iou = 0.5);

void render_comparison_to_file(const std::string& path, const Tensor& image,
                               const std::vector<Detection>& dets_a,
                               const std::vector<Detection>& dets_b,
                               const std::vector<GroundTruth>& gts, double hit_iou = 0.5);

// Count of red highlights the comparison would draw (exposed for tests).
int count_highlights(const std::vector<Detection>& dets_a, const std::vector<Detection>& dets_b,
                     const std::vector<GroundTruth>& gts, double hit_iou = 0.5);

}  // namespace masf
