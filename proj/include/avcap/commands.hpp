#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "avcap/eval.hpp"
#include "avcap/run_config.hpp"

namespace avcap {

// In-process command layer behind the CLI. Every command validates its
// inputs, writes only under `out_dir`, and drops a resolved.cfg echo of the
// configuration it actually used.

void cmd_gen_data(RunConfig cfg, const std::filesystem::path& out_dir);

void cmd_train_teacher(RunConfig cfg, const std::filesystem::path& data_dir, const std::filesystem::path& out_dir);

void cmd_train_student(RunConfig cfg, const std::filesystem::path& data_dir,
                       const std::filesystem::path& teacher_checkpoint, const std::filesystem::path& out_dir);

struct InferResult {
  std::string caption_text;
  std::vector<int> caption;
  double t_emit = 0.0;
  double latency_ratio = 1.0;
  bool fired = false;
  std::filesystem::path trace_csv;
};

InferResult cmd_infer(RunConfig cfg, const std::filesystem::path& data_dir, const std::filesystem::path& checkpoint,
                      const std::string& event_id, const std::filesystem::path& out_dir, std::ostream& os);

// Single-threshold evaluation; writes eval_report.csv and eval_events.tsv.
TradeoffRow cmd_eval(RunConfig cfg, const std::filesystem::path& data_dir, const std::filesystem::path& checkpoint,
                     const std::string& split, const std::filesystem::path& out_dir);

// Threshold sweep; writes tradeoff.csv plus tradeoff_naive.csv (fixed-ratio
// truncation at each row's mean latency, decoded by the baseline checkpoint
// when one is supplied).
TradeoffReport cmd_sweep(RunConfig cfg, const std::filesystem::path& data_dir, const std::filesystem::path& checkpoint,
                         const std::optional<std::filesystem::path>& baseline_checkpoint, const std::string& split,
                         const std::filesystem::path& out_dir);

}  // namespace avcap
