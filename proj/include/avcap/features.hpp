#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "avcap/model.hpp"

namespace avcap {

// On-disk feature matrix: magic "AVCF", rank (u32 LE, always 2), dims T and D
// (u32 LE), then 32-bit IEEE little-endian values, row-major.
struct FeatureMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<float> values;

  float at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  float& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
};

void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& m);
FeatureMatrix read_feature_file(const std::filesystem::path& path);

// Time-aligned audio/visual feature pair; frame i of a stream covers
// [i*period, (i+1)*period) seconds.
struct FeatureStream {
  FeatureMatrix audio;
  FeatureMatrix visual;
  double audio_period = 0.96;
  double visual_period = 2.56;
};

// Index range [first, last) of frames whose start time lies in [t0, t1),
// clamped to `total` available frames. A frame belongs to a window iff its
// start time does.
std::pair<std::size_t, std::size_t> frames_in_window(double t0, double t1, double period, std::size_t total);

// Rank-2 tensor view of a frame range.
Tensor rows_to_tensor(const FeatureMatrix& m, std::size_t first, std::size_t last);

}  // namespace avcap
