#pragma once

#include <string>

#include "lpn/transformer.hpp"

namespace lpn {

// Saved model that cannot be loaded: bad magic, wrong format version, or a
// config that does not describe the stored arrays.
struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

constexpr uint32_t kCheckpointVersion = 1;

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

// Binary layout: magic, version, config JSON, surgery registry, then named
// float64 arrays with explicit shapes (row-major). Written via temp + rename.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace lpn
