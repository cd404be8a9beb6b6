#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "avcap/manifest.hpp"
#include "avcap/model.hpp"
#include "avcap/rng.hpp"

namespace avcap {

struct TrainConfig {
  double alpha = 1.0 / 3.0;  // caption cross-entropy weight
  double beta = 1.0 / 3.0;   // distillation weight
  double gamma = 1.0 / 3.0;  // detection weight
  double sim_threshold = 0.6;
  double label_smoothing = 0.1;
  double lr = 2e-3;
  std::int64_t warmup_steps = 500;
  std::size_t batch_size = 8;
  std::size_t teacher_epochs = 30;
  std::size_t student_epochs = 45;
  std::size_t checkpoint_every = 10;
  double val_threshold = 0.5;  // firing threshold for per-epoch validation
  std::uint64_t seed = 12345;

  void validate() const;
};

// Uniform draw of the emission time over [t_start + visual_period, t_end]
// (the floor keeps at least one visual frame in the window). Returns nothing
// when the event is too short for even one frame.
std::optional<double> sample_emission_time(double t_start, double t_end, double visual_period, Rng& rng);

struct HistoryRow {
  int epoch = 0;
  double latency_ratio = 1.0;
  double bleu3 = 0.0, bleu4 = 0.0, word_acc = 0.0;
  double loss_ce = 0.0, loss_kl = 0.0, loss_d = 0.0;
};

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& rows);

struct TrainArtifacts {
  std::filesystem::path best_checkpoint;
  std::filesystem::path final_checkpoint;
  std::filesystem::path history_csv;
  std::filesystem::path teacher_captions;  // teacher runs only
  std::vector<HistoryRow> history;
};

// Offline pretraining on full event windows with label-smoothed cross
// entropy. Saves the best-validation checkpoint, then caches a greedy
// full-clip caption for every train/val event next to it.
TrainArtifacts train_teacher(Dataset& ds, const ModelConfig& model_cfg, const TrainConfig& cfg,
                             const std::filesystem::path& out_dir);

// Joint captioner + end-detector training on truncated windows against a
// frozen teacher. The teacher checkpoint directory must contain the cached
// captions written by train_teacher.
TrainArtifacts train_student(Dataset& ds, const std::filesystem::path& teacher_checkpoint, const TrainConfig& cfg,
                             const std::filesystem::path& out_dir);

}  // namespace avcap
