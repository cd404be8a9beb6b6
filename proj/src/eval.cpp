#include "avcap/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "avcap/io_util.hpp"
#include "avcap/losses.hpp"

namespace avcap {

void BleuStats::accumulate(const BleuStats& o) {
  if (matched.empty()) {
    matched.assign(o.matched.size(), 0);
    candidate.assign(o.candidate.size(), 0);
  }
  if (matched.size() != o.matched.size()) throw ContractError("bleu: mixing different orders");
  for (std::size_t i = 0; i < matched.size(); ++i) {
    matched[i] += o.matched[i];
    candidate[i] += o.candidate[i];
  }
  candidate_len += o.candidate_len;
  reference_len += o.reference_len;
}

BleuStats bleu_stats(const std::vector<int>& candidate, const std::vector<int>& reference, std::size_t n) {
  if (n < 1) throw ContractError("bleu: order must be >= 1");
  BleuStats s;
  s.matched.assign(n, 0);
  s.candidate.assign(n, 0);
  s.candidate_len = candidate.size();
  s.reference_len = reference.size();
  for (std::size_t k = 1; k <= n; ++k) {
    if (candidate.size() < k) break;
    std::map<std::vector<int>, std::size_t> ref_counts;
    if (reference.size() >= k)
      for (std::size_t i = 0; i + k <= reference.size(); ++i)
        ++ref_counts[std::vector<int>(reference.begin() + i, reference.begin() + i + k)];
    std::map<std::vector<int>, std::size_t> cand_counts;
    for (std::size_t i = 0; i + k <= candidate.size(); ++i)
      ++cand_counts[std::vector<int>(candidate.begin() + i, candidate.begin() + i + k)];
    s.candidate[k - 1] = candidate.size() - k + 1;
    for (const auto& [gram, count] : cand_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) s.matched[k - 1] += std::min(count, it->second);
    }
  }
  return s;
}

double bleu_from_stats(const BleuStats& stats) {
  if (stats.candidate_len == 0) return 0.0;
  if (!stats.matched.empty() && stats.matched[0] == 0) return 0.0;  // nothing survives zero unigram overlap
  const std::size_t n = stats.matched.size();
  double log_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (stats.candidate[k] == 0) return 0.0;  // no k-grams at all
    const double floor = 1.0 / (2.0 * static_cast<double>(stats.candidate[k]));
    const double p = stats.matched[k] > 0
                         ? static_cast<double>(stats.matched[k]) / static_cast<double>(stats.candidate[k])
                         : floor;
    log_sum += std::log(p);
  }
  const double bp = stats.candidate_len >= stats.reference_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(stats.reference_len) /
                                             static_cast<double>(stats.candidate_len));
  return bp * std::exp(log_sum / static_cast<double>(n));
}

double bleu_n(const std::vector<int>& candidate, const std::vector<int>& reference, std::size_t n) {
  return bleu_from_stats(bleu_stats(candidate, reference, n));
}

namespace {

// Teacher-forced accuracy of the model against the reference on a window.
double forced_accuracy(const Model& model, const Dataset& ds, const EventRecord& rec, double until) {
  NoGradGuard ng;
  const FeatureStream fs = load_event(ds, rec, until);
  Encodings enc = model.encode(rows_to_tensor(fs.audio, 0, fs.audio.rows), rows_to_tensor(fs.visual, 0, fs.visual.rows));
  ForcedResult forced = model.teacher_forced_predictions(rec.caption, enc);
  return sim_word_accuracy(forced.argmax, rec.caption);
}

TradeoffRow finish_row(double threshold, const std::vector<PerEventEval>& events, const BleuStats& b3,
                       const BleuStats& b4) {
  TradeoffRow row;
  row.threshold = threshold;
  row.bleu3 = bleu_from_stats(b3);
  row.bleu4 = bleu_from_stats(b4);
  double lat = 0, acc = 0, fired = 0;
  for (const PerEventEval& e : events) {
    lat += e.latency_ratio;
    acc += e.word_acc;
    fired += e.fired ? 1.0 : 0.0;
  }
  const double n = events.empty() ? 1.0 : static_cast<double>(events.size());
  row.latency_ratio = lat / n;
  row.word_acc = acc / n;
  row.fired_frac = fired / n;
  return row;
}

}  // namespace

CorpusEvalResult corpus_eval(const Model& model, const Dataset& ds, const std::vector<EventRecord>& split,
                             double threshold, std::size_t beam_width) {
  if (split.empty()) throw ContractError("corpus_eval: empty split");
  CorpusEvalResult res;
  BleuStats b3, b4;
  for (const EventRecord& rec : split) {
    try {
      StreamOutcome out = run_streaming_event(model, ds, rec, threshold, beam_width);
      PerEventEval pe;
      pe.event_id = rec.id;
      pe.caption = out.caption;
      pe.t_emit = out.t_emit;
      pe.latency_ratio = out.latency_ratio;
      pe.fired = out.fired;
      pe.word_acc = forced_accuracy(model, ds, rec, out.t_emit);
      b3.accumulate(bleu_stats(out.caption, rec.caption, 3));
      b4.accumulate(bleu_stats(out.caption, rec.caption, 4));
      res.events.push_back(std::move(pe));
    } catch (const std::exception& e) {
      res.failures.push_back(rec.id + ": " + e.what());
    }
  }
  if (res.events.empty()) throw DataError("corpus_eval: every event failed");
  res.row = finish_row(threshold, res.events, b3, b4);
  return res;
}

CorpusEvalResult fixed_ratio_eval(const Model& model, const Dataset& ds, const std::vector<EventRecord>& split,
                                  double ratio, std::size_t beam_width) {
  if (split.empty()) throw ContractError("fixed_ratio_eval: empty split");
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("fixed_ratio_eval: ratio must lie in (0,1]");
  CorpusEvalResult res;
  BleuStats b3, b4;
  NoGradGuard ng;
  for (const EventRecord& rec : split) {
    try {
      const double span = rec.t_end - rec.t_start;
      double until = rec.t_start + ratio * span;
      until = std::min(rec.t_end, std::max(until, rec.t_start + ds.visual_period));
      const FeatureStream fs = load_event(ds, rec, until);
      Encodings enc =
          model.encode(rows_to_tensor(fs.audio, 0, fs.audio.rows), rows_to_tensor(fs.visual, 0, fs.visual.rows));
      PerEventEval pe;
      pe.event_id = rec.id;
      pe.caption = beam_width <= 1 ? model.greedy_decode(enc) : model.beam_decode(enc, beam_width);
      pe.t_emit = until;
      pe.latency_ratio = latency_ratio(rec.t_start, rec.t_end, until);
      pe.fired = true;
      ForcedResult forced = model.teacher_forced_predictions(rec.caption, enc);
      pe.word_acc = sim_word_accuracy(forced.argmax, rec.caption);
      b3.accumulate(bleu_stats(pe.caption, rec.caption, 3));
      b4.accumulate(bleu_stats(pe.caption, rec.caption, 4));
      res.events.push_back(std::move(pe));
    } catch (const std::exception& e) {
      res.failures.push_back(rec.id + ": " + e.what());
    }
  }
  if (res.events.empty()) throw DataError("fixed_ratio_eval: every event failed");
  res.row = finish_row(ratio, res.events, b3, b4);
  res.row.latency_ratio = ratio;  // by construction
  return res;
}

TradeoffReport threshold_sweep(const Model& model, const Model* baseline, const Dataset& ds,
                               const std::vector<EventRecord>& split, const std::vector<double>& thresholds,
                               std::size_t beam_width) {
  std::vector<double> sorted = thresholds;
  std::sort(sorted.begin(), sorted.end());
  for (double f : sorted)
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("threshold_sweep: thresholds must lie in (0,1)");
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i] == sorted[i - 1]) throw ConfigError("threshold_sweep: duplicate threshold");
  TradeoffReport report;
  const Model& naive_model = baseline ? *baseline : model;
  for (double f : sorted) {
    CorpusEvalResult r = corpus_eval(model, ds, split, f, beam_width);
    report.proposed.push_back(r.row);
    CorpusEvalResult n = fixed_ratio_eval(naive_model, ds, split, r.row.latency_ratio, beam_width);
    TradeoffRow naive_row = n.row;
    naive_row.threshold = f;  // the matched sweep point
    report.naive.push_back(naive_row);
  }
  return report;
}

void write_tradeoff_csv(const std::filesystem::path& path, const std::vector<TradeoffRow>& rows) {
  std::ostringstream os;
  os << "F,latency_ratio,bleu3,bleu4,word_acc,fired_frac\n";
  for (const TradeoffRow& r : rows)
    os << fmt_fixed(r.threshold) << ',' << fmt_fixed(r.latency_ratio) << ',' << fmt_fixed(r.bleu3) << ','
       << fmt_fixed(r.bleu4) << ',' << fmt_fixed(r.word_acc) << ',' << fmt_fixed(r.fired_frac) << '\n';
  write_text_file(path, os.str());
}

LearningCurve learning_curve(const std::filesystem::path& history_csv) {
  std::ifstream is(history_csv);
  if (!is) throw IoError("cannot open history: " + history_csv.string());
  LearningCurve c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1) {
      if (line != "epoch,latency_ratio,bleu3,bleu4,word_acc,loss_ce,loss_kl,loss_d")
        throw DataError("history: unexpected header at line 1");
      continue;
    }
    std::istringstream ls(line);
    std::string field;
    std::vector<double> vals;
    while (std::getline(ls, field, ',')) {
      try {
        vals.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw DataError("history: bad number at line " + std::to_string(lineno));
      }
    }
    if (vals.size() != 8) throw DataError("history: expected 8 columns at line " + std::to_string(lineno));
    c.epochs.push_back(static_cast<int>(vals[0]));
    c.latency.push_back(vals[1]);
    c.bleu3.push_back(vals[2]);
    c.bleu4.push_back(vals[3]);
    c.word_acc.push_back(vals[4]);
    c.loss_ce.push_back(vals[5]);
    c.loss_kl.push_back(vals[6]);
    c.loss_d.push_back(vals[7]);
  }
  if (c.epochs.empty()) throw DataError("history: no rows in " + history_csv.string());
  return c;
}

double LearningCurve::latency_slope() const {
  const std::size_t n = epochs.size();
  if (n < 2) return 0.0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(epochs[i]);
    sx += x;
    sy += latency[i];
    sxx += x * x;
    sxy += x * latency[i];
  }
  const double denom = static_cast<double>(n) * sxx - sx * sx;
  if (denom == 0.0) return 0.0;
  return (static_cast<double>(n) * sxy - sx * sy) / denom;
}

}  // namespace avcap
