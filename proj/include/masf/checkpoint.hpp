#pragma once

#include <string>

#include "masf/blocks.hpp"
#include "masf/network.hpp"

namespace masf {

// Checkpoint file: 8-byte little-endian manifest length, the JSON manifest,
// then tensor records in the flat binary format. The manifest maps each
// parameter/buffer name to its absolute file offset and embeds the model
// config so `eval` can rebuild the graph.
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ParamStore<float>& store);

// Loads tensors by name into an existing store; shapes must match.
ModelConfig load_checkpoint_config(const std::string& path);
void load_checkpoint_params(const std::string& path, ParamStore<float>& store);

// Sum of element counts of the serialized trainable tensors (the
// checkpoint-side view of count_params).
int64_t checkpoint_param_count(const std::string& path);

}  // namespace masf
