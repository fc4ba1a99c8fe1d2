#include "masf/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace masf {

namespace {

nlohmann::json read_manifest(std::istream& in) {
    uint64_t len = detail::get_u64(in);
    if (!in || len == 0 || len > (1ull << 30)) {
        throw DataError("checkpoint: bad manifest length");
    }
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw DataError("checkpoint: truncated manifest");
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ParamStore<float>& store) {
    // Offsets are zero-padded fixed-width strings so patching them in after
    // the manifest is sized does not change its length.
    auto offset_str = [](uint64_t v) {
        char buf[24];
        std::snprintf(buf, sizeof buf, "%020llu", static_cast<unsigned long long>(v));
        return std::string(buf);
    };
    nlohmann::json manifest;
    manifest["model_config"] = nlohmann::json::parse(config_to_json(cfg));
    nlohmann::json tensors = nlohmann::json::object();
    nlohmann::json params = nlohmann::json::array();
    nlohmann::json buffers = nlohmann::json::array();
    for (const auto& p : store.all()) {
        tensors[p->name] = offset_str(0);
        (p->trainable ? params : buffers).push_back(p->name);
    }
    manifest["tensors"] = tensors;
    manifest["params"] = params;
    manifest["buffers"] = buffers;
    uint64_t running = 8 + manifest.dump().size();
    for (const auto& p : store.all()) {
        manifest["tensors"][p->name] = offset_str(running);
        running += tensor_record_size(p->value);
    }
    const std::string text = manifest.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint: " + path);
    detail::put_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : store.all()) write_tensor(os, p->value);
    if (!os) throw DataError("checkpoint write failed: " + path);
}

ModelConfig load_checkpoint_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint not found: " + path);
    nlohmann::json manifest = read_manifest(in);
    if (!manifest.contains("model_config")) {
        throw DataError("checkpoint has no embedded model config");
    }
    return config_from_json(manifest["model_config"].dump());
}

void load_checkpoint_params(const std::string& path, ParamStore<float>& store) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint not found: " + path);
    nlohmann::json manifest = read_manifest(in);
    const auto& tensors = manifest.at("tensors");
    for (const auto& p : store.all()) {
        if (!tensors.contains(p->name)) {
            throw DataError("checkpoint is missing tensor \"" + p->name + "\"");
        }
        const uint64_t off = std::stoull(tensors[p->name].get<std::string>());
        in.seekg(static_cast<std::streamoff>(off));
        Tensor t = read_tensor(in);
        if (!t.same_shape(p->value)) {
            throw DataError("checkpoint tensor \"" + p->name + "\" has shape " + t.shape_str() +
                            ", model expects " + p->value.shape_str());
        }
        p->value = t;
    }
}

int64_t checkpoint_param_count(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint not found: " + path);
    nlohmann::json manifest = read_manifest(in);
    int64_t total = 0;
    for (const auto& name : manifest.at("params")) {
        const uint64_t off =
            std::stoull(manifest.at("tensors")[name.get<std::string>()].get<std::string>());
        in.seekg(static_cast<std::streamoff>(off));
        Tensor t = read_tensor(in);
        total += t.numel();
    }
    return total;
}

}  // namespace masf
