#include "masf/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace masf {

ModelConfig ModelConfig::baseline_tiny() {
    ModelConfig c;
    c.levels = {3, 4, 5};
    c.use_p2 = false;
    c.use_mfam = false;
    c.use_iema = false;
    c.use_dasi = false;
    c.use_skips = false;
    return c;
}

ModelConfig ModelConfig::full_tiny() { return ModelConfig{}; }

int ModelConfig::channels_at(int level) const {
    if (level < 1 || level > 5) throw ConfigError("no level P" + std::to_string(level));
    const double scaled = base_channels[level - 1] * width_mult;
    const int c = static_cast<int>(std::lround(scaled / 4.0)) * 4;
    if (c <= 0) {
        throw ConfigError("level P" + std::to_string(level) + ": width_mult " +
                          std::to_string(width_mult) + " rounds " +
                          std::to_string(base_channels[level - 1]) + " channels to 0");
    }
    return c;
}

void ModelConfig::validate() const {
    if (num_classes < 1) throw ConfigError("config: num_classes must be >= 1");
    if (image_size < 32 || image_size % 32 != 0) {
        throw ConfigError("config: image_size " + std::to_string(image_size) +
                          " must be a positive multiple of 32");
    }
    if (levels.empty()) throw ConfigError("config: no detection levels");
    std::set<int> seen;
    for (int k : levels) {
        if (k < 2 || k > 5) throw ConfigError("config: level P" + std::to_string(k) + " invalid");
        if (!seen.insert(k).second) throw ConfigError("config: duplicate level");
    }
    if (use_p2 != (seen.count(2) > 0)) {
        throw ConfigError("config: use_p2 must agree with levels containing P2");
    }
    for (int k = 1; k <= 5; ++k) channels_at(k);  // throws on zero-channel rounding
    if (iema_groups < 1) throw ConfigError("config: iema_groups must be >= 1");
    for (int k : mfam_kernels) {
        if (k < 1 || k % 2 == 0) throw ConfigError("config: mfam kernels must be odd");
    }
    if (width_mult <= 0 || depth_mult <= 0) {
        throw ConfigError("config: width/depth multipliers must be positive");
    }
}

namespace {

const std::set<std::string> kConfigKeys = {
    "num_classes", "image_size", "width_mult", "depth_mult", "levels",   "use_mfam",
    "use_iema",    "use_dasi",   "use_skips",  "use_p2",     "iema_groups", "mfam_kernels"};

int parse_level(const std::string& s) {
    if (s.size() == 2 && (s[0] == 'P' || s[0] == 'p') && s[1] >= '2' && s[1] <= '5') {
        return s[1] - '0';
    }
    throw ConfigError("config: bad level name \"" + s + "\" (expected P2..P5)");
}

}  // namespace

ModelConfig config_from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!kConfigKeys.count(it.key())) {
            throw ConfigError("config: unknown key \"" + it.key() + "\"");
        }
    }
    ModelConfig c;
    c.num_classes = j.value("num_classes", c.num_classes);
    c.image_size = j.value("image_size", c.image_size);
    c.width_mult = j.value("width_mult", c.width_mult);
    c.depth_mult = j.value("depth_mult", c.depth_mult);
    c.use_mfam = j.value("use_mfam", c.use_mfam);
    c.use_iema = j.value("use_iema", c.use_iema);
    c.use_dasi = j.value("use_dasi", c.use_dasi);
    c.use_skips = j.value("use_skips", c.use_skips);
    c.iema_groups = j.value("iema_groups", c.iema_groups);
    if (j.contains("mfam_kernels")) {
        c.mfam_kernels = j["mfam_kernels"].get<std::vector<int>>();
    }
    if (j.contains("levels")) {
        c.levels.clear();
        for (const auto& l : j["levels"]) c.levels.push_back(parse_level(l.get<std::string>()));
        std::sort(c.levels.begin(), c.levels.end());
        c.use_p2 = std::find(c.levels.begin(), c.levels.end(), 2) != c.levels.end();
        if (j.contains("use_p2") && j["use_p2"].get<bool>() != c.use_p2) {
            throw ConfigError("config: use_p2 disagrees with levels");
        }
    } else if (j.contains("use_p2")) {
        c.use_p2 = j["use_p2"].get<bool>();
        c.levels = c.use_p2 ? std::vector<int>{2, 3, 4, 5} : std::vector<int>{3, 4, 5};
    }
    c.validate();
    return c;
}

ModelConfig load_model_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("model config not found: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

std::string config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["num_classes"] = cfg.num_classes;
    j["image_size"] = cfg.image_size;
    j["width_mult"] = cfg.width_mult;
    j["depth_mult"] = cfg.depth_mult;
    std::vector<std::string> levels;
    for (int k : cfg.levels) levels.push_back("P" + std::to_string(k));
    j["levels"] = levels;
    j["use_mfam"] = cfg.use_mfam;
    j["use_iema"] = cfg.use_iema;
    j["use_dasi"] = cfg.use_dasi;
    j["use_skips"] = cfg.use_skips;
    j["use_p2"] = cfg.use_p2;
    j["iema_groups"] = cfg.iema_groups;
    j["mfam_kernels"] = cfg.mfam_kernels;
    return j.dump(2);
}

}  // namespace masf
