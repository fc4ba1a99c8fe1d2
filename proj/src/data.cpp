#include "masf/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "masf/errors.hpp"

namespace masf {

void GenConfig::validate() const {
    if (image_size < 32) throw ConfigError("generator: image_size must be >= 32");
    if (num_classes < 1) throw ConfigError("generator: num_classes must be >= 1");
    if (min_objects < 0 || max_objects < min_objects) {
        throw ConfigError("generator: invalid object count range");
    }
    if (min_size_frac <= 0 || max_size_frac < min_size_frac || max_size_frac > 1.0) {
        throw ConfigError("generator: size range [" + std::to_string(min_size_frac) + ", " +
                          std::to_string(max_size_frac) + "] exceeds the image");
    }
}

namespace {

// Base colors cycle through distinct hues; per-class appearance is the
// primary classification cue at very small object sizes.
constexpr float kPalette[][3] = {
    {0.85f, 0.20f, 0.20f}, {0.20f, 0.80f, 0.25f}, {0.20f, 0.35f, 0.90f},
    {0.90f, 0.80f, 0.20f}, {0.80f, 0.30f, 0.85f}, {0.20f, 0.80f, 0.80f},
};
constexpr int kPaletteSize = 6;

// Smooth value-noise background: a coarse random grid, bilinearly upsampled.
void fill_background(Tensor& img, SplitMix64& rng, double amplitude) {
    const int S = img.h();
    const int grid = 9;
    std::vector<float> coarse(grid * grid);
    for (auto& v : coarse) v = static_cast<float>(rng.next_double());
    const float tint[3] = {static_cast<float>(0.9 + 0.2 * rng.next_double()),
                           static_cast<float>(0.9 + 0.2 * rng.next_double()),
                           static_cast<float>(0.9 + 0.2 * rng.next_double())};
    for (int y = 0; y < S; ++y) {
        const double gy = static_cast<double>(y) / (S - 1) * (grid - 1);
        const int y0 = std::min(static_cast<int>(gy), grid - 2);
        const double fy = gy - y0;
        for (int x = 0; x < S; ++x) {
            const double gx = static_cast<double>(x) / (S - 1) * (grid - 1);
            const int x0 = std::min(static_cast<int>(gx), grid - 2);
            const double fx = gx - x0;
            const double v00 = coarse[y0 * grid + x0], v01 = coarse[y0 * grid + x0 + 1];
            const double v10 = coarse[(y0 + 1) * grid + x0], v11 = coarse[(y0 + 1) * grid + x0 + 1];
            const double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                             fy * ((1 - fx) * v10 + fx * v11);
            const float base = static_cast<float>(0.35 + amplitude * (v - 0.5));
            for (int c = 0; c < 3; ++c) {
                img.at(0, c, y, x) = std::clamp(base * tint[c], 0.f, 1.f);
            }
        }
    }
    // Sprinkle fine-grained pixel noise on top.
    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            const float n = static_cast<float>(amplitude * 0.25 * (rng.next_double() - 0.5));
            for (int c = 0; c < 3; ++c) {
                img.at(0, c, y, x) = std::clamp(img.at(0, c, y, x) + n, 0.f, 1.f);
            }
        }
    }
}

enum class ShapeKind { Disc, Square, Triangle };

bool inside_shape(ShapeKind kind, double px, double py, double cx, double cy, double half) {
    const double dx = px - cx, dy = py - cy;
    switch (kind) {
        case ShapeKind::Disc:
            return dx * dx + dy * dy <= half * half;
        case ShapeKind::Square:
            return std::abs(dx) <= half && std::abs(dy) <= half;
        case ShapeKind::Triangle:
            // upward triangle inscribed in the box
            if (dy < -half || dy > half) return false;
            return std::abs(dx) <= (dy + half) / 2.0;
    }
    return false;
}

void draw_shape(Tensor& img, ShapeKind kind, double cx, double cy, double half,
                const float color[3]) {
    const int S = img.h();
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - half)));
    const int x1 = std::min(S - 1, static_cast<int>(std::ceil(cx + half)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - half)));
    const int y1 = std::min(S - 1, static_cast<int>(std::ceil(cy + half)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            // 2x2 supersampled coverage for less aliased tiny shapes
            int hit = 0;
            for (int sy = 0; sy < 2; ++sy)
                for (int sx = 0; sx < 2; ++sx)
                    hit += inside_shape(kind, x + 0.25 + 0.5 * sx, y + 0.25 + 0.5 * sy, cx, cy,
                                        half);
            if (hit == 0) continue;
            const float a = hit / 4.0f;
            for (int c = 0; c < 3; ++c) {
                img.at(0, c, y, x) = (1 - a) * img.at(0, c, y, x) + a * color[c];
            }
        }
    }
}

}  // namespace

Scene generate_scene(const GenConfig& cfg, uint64_t seed) {
    cfg.validate();
    SplitMix64 rng(seed ^ 0xA5C3E8D1B2F49607ULL);
    Scene scene;
    scene.seed = seed;
    const int S = cfg.image_size;
    scene.image = Tensor(1, 3, S, S);
    fill_background(scene.image, rng, cfg.noise_amplitude);

    const int count = cfg.min_objects +
                      static_cast<int>(rng.next_below(cfg.max_objects - cfg.min_objects + 1));
    for (int i = 0; i < count; ++i) {
        const int cls = static_cast<int>(rng.next_below(cfg.num_classes));
        const double side = S * rng.uniform(cfg.min_size_frac, cfg.max_size_frac);
        const double half = side / 2.0;
        double cx = 0, cy = 0;
        Box box;
        for (int attempt = 0; attempt < 10; ++attempt) {
            cx = rng.uniform(half + 1.0, S - half - 1.0);
            cy = rng.uniform(half + 1.0, S - half - 1.0);
            box = {static_cast<float>(cx - half), static_cast<float>(cy - half),
                   static_cast<float>(cx + half), static_cast<float>(cy + half)};
            bool crowded = false;
            for (const auto& g : scene.gts) {
                if (iou(box, g.box) > 0.25) {
                    crowded = true;
                    break;
                }
            }
            if (!crowded || rng.next_double() < cfg.occlusion_prob) break;
        }
        const ShapeKind kind = static_cast<ShapeKind>(cls % 3);
        const float* base = kPalette[cls % kPaletteSize];
        float color[3];
        for (int c = 0; c < 3; ++c) {
            color[c] = std::clamp(
                base[c] + static_cast<float>(0.12 * (rng.next_double() - 0.5)), 0.f, 1.f);
        }
        draw_shape(scene.image, kind, cx, cy, half, color);
        scene.gts.push_back({box, cls});
    }
    return scene;
}

// --- annotation parsing --------------------------------------------------------

namespace {

Box clamp_box(Box b, int w, int h) {
    b.x1 = std::clamp(b.x1, 0.f, static_cast<float>(w));
    b.y1 = std::clamp(b.y1, 0.f, static_cast<float>(h));
    b.x2 = std::clamp(b.x2, 0.f, static_cast<float>(w));
    b.y2 = std::clamp(b.y2, 0.f, static_cast<float>(h));
    return b;
}

[[noreturn]] void malformed(const std::string& path, int line_no, const std::string& text) {
    throw DataError("malformed annotation in " + path + " line " + std::to_string(line_no) +
                    ": \"" + text + "\"");
}

}  // namespace

std::vector<GroundTruth> parse_annotations(const std::string& path, AnnotationFormat format,
                                           int image_w, int image_h, ParseStats* stats) {
    std::ifstream in(path);
    if (!in) throw DataError("annotation file not found: " + path);
    std::vector<GroundTruth> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        if (format == AnnotationFormat::VisDrone) {
            double x, y, w, h, score;
            int category, trunc, occ;
            char c;
            std::istringstream ls(line);
            if (!(ls >> x >> c >> y >> c >> w >> c >> h >> c >> score >> c >> category >> c >>
                  trunc >> c >> occ)) {
                malformed(path, line_no, line);
            }
            if (category == 0 || w <= 0 || h <= 0 || score == 0) {
                if (stats) stats->dropped++;
                continue;
            }
            Box b{static_cast<float>(x), static_cast<float>(y), static_cast<float>(x + w),
                  static_cast<float>(y + h)};
            out.push_back({clamp_box(b, image_w, image_h), category});
        } else {
            int cls;
            double cx, cy, w, h;
            std::istringstream ls(line);
            if (!(ls >> cls >> cx >> cy >> w >> h)) malformed(path, line_no, line);
            std::string extra;
            if (ls >> extra) malformed(path, line_no, line);
            if (w <= 0 || h <= 0) {
                if (stats) stats->dropped++;
                continue;
            }
            Box b{static_cast<float>((cx - w / 2) * image_w),
                  static_cast<float>((cy - h / 2) * image_h),
                  static_cast<float>((cx + w / 2) * image_w),
                  static_cast<float>((cy + h / 2) * image_h)};
            out.push_back({clamp_box(b, image_w, image_h), cls});
        }
    }
    return out;
}

void write_annotations(const std::string& path, const std::vector<GroundTruth>& gts,
                       AnnotationFormat format, int image_w, int image_h) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write annotations: " + path);
    char buf[160];
    for (const auto& g : gts) {
        if (format == AnnotationFormat::Internal) {
            const double cx = (g.box.x1 + g.box.x2) / 2.0 / image_w;
            const double cy = (g.box.y1 + g.box.y2) / 2.0 / image_h;
            const double w = (g.box.x2 - g.box.x1) / static_cast<double>(image_w);
            const double h = (g.box.y2 - g.box.y1) / static_cast<double>(image_h);
            std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f\n", g.class_id, cx, cy, w, h);
        } else {
            std::snprintf(buf, sizeof buf, "%d,%d,%d,%d,1,%d,0,0\n",
                          static_cast<int>(std::lround(g.box.x1)),
                          static_cast<int>(std::lround(g.box.y1)),
                          static_cast<int>(std::lround(g.box.x2 - g.box.x1)),
                          static_cast<int>(std::lround(g.box.y2 - g.box.y1)), g.class_id);
        }
        os << buf;
    }
}

// --- letterbox -------------------------------------------------------------------

std::pair<Tensor, LetterboxTransform> letterbox(const Tensor& image, int target) {
    if (target % 32 != 0) throw ConfigError("letterbox: target must be divisible by 32");
    const int H = image.h(), W = image.w();
    LetterboxTransform tf;
    tf.scale = std::min(static_cast<double>(target) / W, static_cast<double>(target) / H);
    const int new_w = static_cast<int>(std::round(W * tf.scale));
    const int new_h = static_cast<int>(std::round(H * tf.scale));
    tf.pad_x = (target - new_w) / 2.0;
    tf.pad_y = (target - new_h) / 2.0;

    Tensor out = Tensor::full(image.n(), image.c(), target, target, 114.f / 255.f);
    const int off_x = static_cast<int>(tf.pad_x);
    const int off_y = static_cast<int>(tf.pad_y);
    // Bilinear resample of the source into the scaled region.
    for (int n = 0; n < image.n(); ++n) {
        for (int c = 0; c < image.c(); ++c) {
            for (int y = 0; y < new_h; ++y) {
                const double sy = std::min((y + 0.5) / tf.scale - 0.5,
                                           static_cast<double>(H - 1));
                const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, H - 1);
                const int y1 = std::min(y0 + 1, H - 1);
                const double fy = std::clamp(sy - y0, 0.0, 1.0);
                for (int x = 0; x < new_w; ++x) {
                    const double sx = std::min((x + 0.5) / tf.scale - 0.5,
                                               static_cast<double>(W - 1));
                    const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, W - 1);
                    const int x1 = std::min(x0 + 1, W - 1);
                    const double fx = std::clamp(sx - x0, 0.0, 1.0);
                    const double v = (1 - fy) * ((1 - fx) * image.at(n, c, y0, x0) +
                                                 fx * image.at(n, c, y0, x1)) +
                                     fy * ((1 - fx) * image.at(n, c, y1, x0) +
                                           fx * image.at(n, c, y1, x1));
                    out.at(n, c, y + off_y, x + off_x) = static_cast<float>(v);
                }
            }
        }
    }
    return {out, tf};
}

// --- manifest / images -------------------------------------------------------------

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("manifest not found: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + path + " is not valid JSON: " + e.what());
    }
    Manifest m;
    const std::string fmt = j.value("format", "internal");
    if (fmt == "visdrone") {
        m.format = AnnotationFormat::VisDrone;
    } else if (fmt == "internal") {
        m.format = AnnotationFormat::Internal;
    } else {
        throw DataError("manifest format must be visdrone or internal, got " + fmt);
    }
    if (!j.contains("splits")) throw DataError("manifest has no splits object");
    for (auto it = j["splits"].begin(); it != j["splits"].end(); ++it) {
        for (const auto& e : it.value()) {
            m.splits[it.key()].push_back(
                {e.at("image").get<std::string>(), e.at("annotations").get<std::string>()});
        }
    }
    return m;
}

Tensor load_image(const std::string& path) {
    if (path.size() > 5 && path.substr(path.size() - 5) == ".msft") {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("image not found: " + path);
        return read_tensor(in);
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("image not found: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw DataError("image " + path + " is not a binary PPM (P6)");
    int w = 0, h = 0, maxval = 0;
    in >> w >> h >> maxval;
    in.get();  // single whitespace after maxval
    if (w < 1 || h < 1 || maxval != 255) {
        throw DataError("image " + path + " has unsupported PPM header");
    }
    std::vector<unsigned char> buf(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw DataError("image " + path + " is truncated");
    Tensor t(1, 3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                t.at(0, c, y, x) = buf[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.f;
    return t;
}

void save_image_ppm(const std::string& path, const Tensor& image) {
    if (image.c() != 3) throw ConfigError("save_image_ppm: need a 3-channel image");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write image: " + path);
    os << "P6\n" << image.w() << " " << image.h() << "\n255\n";
    for (int y = 0; y < image.h(); ++y) {
        for (int x = 0; x < image.w(); ++x) {
            for (int c = 0; c < 3; ++c) {
                const float v = std::clamp(image.at(0, c, y, x), 0.f, 1.f);
                os.put(static_cast<char>(std::lround(v * 255.f)));
            }
        }
    }
}

}  // namespace masf
