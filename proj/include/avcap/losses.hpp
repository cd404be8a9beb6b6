#pragma once

#include <cmath>
#include <vector>

#include "avcap/model.hpp"
#include "avcap/ops.hpp"
#include "avcap/tensor.hpp"

namespace avcap {

// Label-smoothed cross entropy on teacher-forced logits, averaged over
// positions. The smoothing mass eps is spread uniformly over the non-target
// vocabulary; positions whose target is <pad> are excluded.
template <typename S>
TensorT<S> caption_ce_loss(const TensorT<S>& logits, const std::vector<int>& targets, double eps) {
  if (logits.rank() != 2) throw ShapeError("caption_ce_loss: logits must be [LxV]");
  if (targets.size() != logits.rows())
    throw ContractError("caption_ce_loss: " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(logits.rows()) + " positions");
  if (!(eps >= 0.0 && eps < 1.0)) throw ConfigError("caption_ce_loss: smoothing must lie in [0,1)");
  const std::size_t l = logits.rows(), v = logits.cols();
  std::size_t n_valid = 0;
  TensorT<S> weights = TensorT<S>::zeros({l, v});
  const S off_mass = static_cast<S>(eps / static_cast<double>(v - 1));
  for (std::size_t r = 0; r < l; ++r) {
    const int t = targets[r];
    if (t == kPadId) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v)
      throw ContractError("caption_ce_loss: target id outside vocabulary");
    ++n_valid;
    for (std::size_t j = 0; j < v; ++j)
      weights.at(r, j) = static_cast<int>(j) == t ? static_cast<S>(1.0 - eps) : off_mass;
  }
  if (n_valid == 0) throw ContractError("caption_ce_loss: no non-pad targets");
  TensorT<S> weighted = hadamard(log_softmax(logits), weights);
  return scale(sum_all(weighted), static_cast<S>(-1.0 / static_cast<double>(n_valid)));
}

// Distillation term: cross entropy of the student's distributions against the
// (fixed) teacher distributions, summed over the vocabulary and averaged over
// positions.
template <typename S>
TensorT<S> distill_kl_loss(const std::vector<std::vector<S>>& teacher_rows, const TensorT<S>& student_logits) {
  if (student_logits.rank() != 2) throw ShapeError("distill_kl_loss: logits must be [LxV]");
  const std::size_t l = student_logits.rows(), v = student_logits.cols();
  if (teacher_rows.size() != l)
    throw ContractError("distill_kl_loss: " + std::to_string(teacher_rows.size()) + " teacher positions for " +
                        std::to_string(l) + " student positions");
  TensorT<S> pt = TensorT<S>::zeros({l, v});
  for (std::size_t r = 0; r < l; ++r) {
    if (teacher_rows[r].size() != v) throw ContractError("distill_kl_loss: teacher vocabulary width mismatch");
    for (std::size_t j = 0; j < v; ++j) pt.at(r, j) = teacher_rows[r][j];
  }
  TensorT<S> weighted = hadamard(log_softmax(student_logits), pt);
  return scale(sum_all(weighted), static_cast<S>(-1.0 / static_cast<double>(l)));
}

// Position-wise match rate between predicted next words and the reference
// extended by <eos>; the <eos> position counts.
inline double sim_word_accuracy(const std::vector<int>& predicted, const std::vector<int>& reference) {
  if (reference.empty()) throw ContractError("sim_word_accuracy: empty reference");
  if (predicted.size() != reference.size() + 1)
    throw ContractError("sim_word_accuracy: prediction count must be reference length + 1");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < reference.size(); ++i)
    if (predicted[i] == reference[i]) ++hits;
  if (predicted.back() == kEosId) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

// Timing label: 1 iff either similarity reaches the threshold.
inline int detection_label(double sim_gt, double sim_teacher, double threshold) {
  return std::max(sim_gt, sim_teacher) >= threshold ? 1 : 0;
}

// Value-level binary cross entropy, matching the graph op bit for bit.
inline double detection_loss(double prob, int d) {
  if (d != 0 && d != 1) throw ContractError("detection_loss: label must be 0 or 1");
  const double p = std::min(1.0 - 1e-7, std::max(1e-7, prob));
  return -(d * std::log(p) + (1 - d) * std::log(1.0 - p));
}

}  // namespace avcap
