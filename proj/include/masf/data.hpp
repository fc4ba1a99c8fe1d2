#pragma once

#include <optional>
#include <string>
#include <vector>

#include "masf/postproc.hpp"
#include "masf/rng.hpp"
#include "masf/tensor.hpp"

namespace masf {

// Synthetic small-object scenes: colored geometric shapes over textured
// noise backgrounds, with exact annotations. A stand-in benchmark stressing
// tiny targets, overlap, and background clutter.
struct GenConfig {
    int image_size = 128;
    int num_classes = 3;
    int min_objects = 5;
    int max_objects = 25;
    double min_size_frac = 0.02;  // object side as a fraction of image side
    double max_size_frac = 0.08;
    double noise_amplitude = 0.25;
    double occlusion_prob = 0.30;  // chance an overlapping placement is kept

    void validate() const;
};

struct Scene {
    Tensor image;  // (1, 3, S, S) in [0, 1]
    std::vector<GroundTruth> gts;
    uint64_t seed = 0;
};

// Pure function of (config, seed).
Scene generate_scene(const GenConfig& cfg, uint64_t seed);

enum class AnnotationFormat { VisDrone, Internal };

struct ParseStats {
    int dropped = 0;  // ignored-region / degenerate / zero-score rows
};

// VisDrone rows: x,y,w,h,score,category,truncation,occlusion (pixels).
// Internal rows: class_id cx cy w h (normalized). Boxes come back as
// (x1,y1,x2,y2) pixels clamped to the image.
std::vector<GroundTruth> parse_annotations(const std::string& path, AnnotationFormat format,
                                           int image_w, int image_h,
                                           ParseStats* stats = nullptr);

void write_annotations(const std::string& path, const std::vector<GroundTruth>& gts,
                       AnnotationFormat format, int image_w, int image_h);

// Aspect-preserving resize + symmetric pad (value 114/255) with the exact
// affine transform for mapping boxes both ways.
struct LetterboxTransform {
    double scale = 1.0;
    double pad_x = 0.0;
    double pad_y = 0.0;

    Box apply(const Box& b) const {
        return {static_cast<float>(b.x1 * scale + pad_x), static_cast<float>(b.y1 * scale + pad_y),
                static_cast<float>(b.x2 * scale + pad_x), static_cast<float>(b.y2 * scale + pad_y)};
    }
    Box invert(const Box& b) const {
        return {static_cast<float>((b.x1 - pad_x) / scale),
                static_cast<float>((b.y1 - pad_y) / scale),
                static_cast<float>((b.x2 - pad_x) / scale),
                static_cast<float>((b.y2 - pad_y) / scale)};
    }
};

std::pair<Tensor, LetterboxTransform> letterbox(const Tensor& image, int target);

// Dataset manifest: JSON listing image/annotation path pairs per split.
struct ManifestEntry {
    std::string image_path;
    std::string annotation_path;
};

struct Manifest {
    AnnotationFormat format = AnnotationFormat::Internal;
    std::map<std::string, std::vector<ManifestEntry>> splits;
};

Manifest load_manifest(const std::string& path);

// Image files: binary PPM (P6, 8-bit) or the flat tensor format
// (*.msft), picked by extension.
Tensor load_image(const std::string& path);
void save_image_ppm(const std::string& path, const Tensor& image);

}  // namespace masf
