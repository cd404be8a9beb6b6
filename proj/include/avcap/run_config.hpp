#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "avcap/model.hpp"
#include "avcap/synth.hpp"
#include "avcap/training.hpp"

namespace avcap {

// Whole-run settings as key=value text. Unknown keys are rejected; flags on
// the command line override file values. Every command echoes the fully
// resolved table next to its outputs.
struct RunConfig {
  std::uint64_t seed = 12345;

  SyntheticSpec synth;
  ModelConfig model;
  TrainConfig train;

  double infer_threshold = 0.5;
  std::size_t beam_width = 1;
  std::vector<double> sweep_thresholds{0.1, 0.3, 0.5, 0.7, 0.9};

  // Parses `key=value` lines; '#' starts a comment.
  void apply_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);

  // Stable, complete key=value rendering.
  std::string echo() const;

  // Derived seeds and coupled fields pushed into the sub-configs.
  void finalize();
};

}  // namespace avcap
