#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "avcap/manifest.hpp"
#include "avcap/model.hpp"
#include "avcap/streaming.hpp"

namespace avcap {

// Modified n-gram counts for one candidate/reference pair; corpus scores sum
// these before the geometric mean.
struct BleuStats {
  std::vector<std::size_t> matched;    // per order 1..n
  std::vector<std::size_t> candidate;  // candidate n-gram counts per order
  std::size_t candidate_len = 0;
  std::size_t reference_len = 0;

  void accumulate(const BleuStats& o);
};

BleuStats bleu_stats(const std::vector<int>& candidate, const std::vector<int>& reference, std::size_t n);

// Geometric mean of modified precisions with brevity penalty. Orders with
// zero matches are floored at 1/(2 * candidate_ngram_count); a candidate with
// no n-grams of some order scores 0, as does an empty candidate.
double bleu_from_stats(const BleuStats& stats);

// Sentence-level convenience wrapper.
double bleu_n(const std::vector<int>& candidate, const std::vector<int>& reference, std::size_t n);

// One row of the latency/quality trade-off table.
struct TradeoffRow {
  double threshold = 0.0;
  double latency_ratio = 1.0;
  double bleu3 = 0.0;
  double bleu4 = 0.0;
  double word_acc = 0.0;
  double fired_frac = 0.0;
};

struct PerEventEval {
  std::string event_id;
  std::vector<int> caption;
  double t_emit = 0.0;
  double latency_ratio = 1.0;
  bool fired = false;
  double word_acc = 0.0;
};

struct CorpusEvalResult {
  TradeoffRow row;
  std::vector<PerEventEval> events;
  std::vector<std::string> failures;  // "<event_id>: <message>"
};

// Streams every event of the split at threshold F and aggregates corpus-level
// BLEU (summed n-gram statistics), mean latency, mean teacher-forced word
// accuracy on the emitted window, and the fired fraction. Per-event failures
// are recorded and the run continues.
CorpusEvalResult corpus_eval(const Model& model, const Dataset& ds, const std::vector<EventRecord>& split, double threshold,
                             std::size_t beam_width = 1);

// Offline captioning on fixed-ratio prefixes (the naive comparison). The
// ratio is clamped so every window keeps at least one visual frame;
// fired_frac reports 1 since emission always happens at the cut.
CorpusEvalResult fixed_ratio_eval(const Model& model, const Dataset& ds, const std::vector<EventRecord>& split,
                                  double ratio, std::size_t beam_width = 1);

struct TradeoffReport {
  std::vector<TradeoffRow> proposed;
  std::vector<TradeoffRow> naive;  // threshold column carries the matched F
};

// One corpus_eval row per threshold plus naive rows truncated at each row's
// mean latency. Naive rows use `baseline` when given (the offline captioner),
// otherwise the same model.
TradeoffReport threshold_sweep(const Model& model, const Model* baseline, const Dataset& ds,
                               const std::vector<EventRecord>& split, const std::vector<double>& thresholds,
                               std::size_t beam_width = 1);

// CSV with header "F,latency_ratio,bleu3,bleu4,word_acc,fired_frac".
void write_tradeoff_csv(const std::filesystem::path& path, const std::vector<TradeoffRow>& rows);

// Per-epoch training metrics parsed back from a history CSV.
struct LearningCurve {
  std::vector<int> epochs;
  std::vector<double> latency;
  std::vector<double> bleu3, bleu4, word_acc;
  std::vector<double> loss_ce, loss_kl, loss_d;

  double latency_slope() const;  // least-squares slope of latency over epochs
};

LearningCurve learning_curve(const std::filesystem::path& history_csv);

}  // namespace avcap
