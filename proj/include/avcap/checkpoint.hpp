#pragma once

#include <filesystem>
#include <memory>

#include "avcap/model.hpp"

namespace avcap {

// Checkpoint layout (all integers u32 little-endian, floats IEEE-754 LE):
//   magic "AVCK1"
//   config block: length-prefixed UTF-8 key=value lines
//   parameter count
//   per parameter: length-prefixed name, rank, dims, row-major f32 values
void save_checkpoint(const std::filesystem::path& path, const Model& model);
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path);

std::string encode_model_config(const ModelConfig& cfg);
ModelConfig decode_model_config(const std::string& text);

}  // namespace avcap
