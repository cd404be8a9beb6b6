#include "avcap/streaming.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "avcap/io_util.hpp"

namespace avcap {

double latency_ratio(double t_start, double t_end, double t_emit) {
  if (!(t_start < t_end)) throw ContractError("latency_ratio: empty event window");
  if (!(t_emit > t_start) || t_emit > t_end + 1e-9)
    throw ContractError("latency_ratio: emission time outside (t_start, t_end]");
  return std::min(1.0, (t_emit - t_start) / (t_end - t_start));
}

StreamSession::StreamSession(const Model& model, const SessionConfig& cfg) : model_(model), cfg_(cfg) {
  if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0))
    throw ConfigError("stream session: threshold must lie in (0,1)");
  if (!(cfg.t_start < cfg.t_end)) throw ContractError("stream session: empty event window");
  auto [fa, la] = frames_in_window(cfg.t_start, cfg.t_end, cfg.audio_period, static_cast<std::size_t>(-1));
  auto [fv, lv] = frames_in_window(cfg.t_start, cfg.t_end, cfg.visual_period, static_cast<std::size_t>(-1));
  expected_audio_ = la - fa;
  expected_visual_ = lv - fv;
}

double StreamSession::push_frames(const std::vector<float>& audio_rows, std::size_t n_audio,
                                  const std::vector<float>& visual_rows, std::size_t n_visual) {
  if (state_ != SessionState::collecting)
    throw ContractError("stream session: push after the session reached a terminal state");
  audio_.insert(audio_.end(), audio_rows.begin(), audio_rows.end());
  visual_.insert(visual_.end(), visual_rows.begin(), visual_rows.end());
  n_audio_ += n_audio;
  n_visual_ += n_visual;
  if (n_audio_ > expected_audio_ || n_visual_ > expected_visual_)
    throw ContractError("stream session: more frames pushed than the event contains");
  if (n_audio_ == 0 || n_visual_ == 0)
    throw ContractError("stream session: detector needs at least one frame per modality");

  // Evaluation clock: the end time of the latest visual frame (the coarser
  // stream), clamped to the event window. Using this exact value as the
  // offline truncation point reproduces the streamed prefix frame for frame.
  const double t_now =
      std::min(cfg_.t_end, cfg_.t_start + static_cast<double>(n_visual_) * cfg_.visual_period);
  double prob;
  {
    NoGradGuard ng;
    Tensor a = Tensor::zeros({n_audio_, audio_.size() / n_audio_});
    std::copy(audio_.begin(), audio_.end(), a.data->begin());
    Tensor v = Tensor::zeros({n_visual_, visual_.size() / n_visual_});
    std::copy(visual_.begin(), visual_.end(), v.data->begin());
    Encodings enc = model_.encode(a, v);
    prob = static_cast<double>(model_.detect_end(enc).at(0));
  }
  const bool crossed = prob > cfg_.threshold;
  trace_.push_back({t_now, prob, crossed});
  if (crossed) {
    state_ = SessionState::fired;
    t_fired_ = t_now;
  } else if (n_audio_ == expected_audio_ && n_visual_ == expected_visual_) {
    state_ = SessionState::exhausted;
  }
  return prob;
}

StreamOutcome StreamSession::finalize(std::size_t beam_width) const {
  if (state_ == SessionState::collecting)
    throw ContractError("stream session: finalize while frames remain and no crossing happened");
  StreamOutcome out;
  out.fired = state_ == SessionState::fired;
  out.t_emit = out.fired ? t_fired_ : cfg_.t_end;
  out.latency_ratio = latency_ratio(cfg_.t_start, cfg_.t_end, out.t_emit);
  NoGradGuard ng;
  Tensor a = Tensor::zeros({n_audio_, audio_.size() / n_audio_});
  std::copy(audio_.begin(), audio_.end(), a.data->begin());
  Tensor v = Tensor::zeros({n_visual_, visual_.size() / n_visual_});
  std::copy(visual_.begin(), visual_.end(), v.data->begin());
  Encodings enc = model_.encode(a, v);
  out.caption = beam_width <= 1 ? model_.greedy_decode(enc) : model_.beam_decode(enc, beam_width);
  return out;
}

void StreamSession::dump_trace(const std::filesystem::path& path) const {
  std::ostringstream os;
  os << "t_sec,probability,fired\n";
  for (const TracePoint& p : trace_)
    os << fmt_fixed(p.t_sec) << ',' << fmt_fixed(p.probability, 9) << ',' << (p.fired ? 1 : 0) << '\n';
  write_text_file(path, os.str());
}

StreamOutcome run_streaming_event(const Model& model, const Dataset& ds, const EventRecord& rec, double threshold,
                                  std::size_t beam_width, std::vector<TracePoint>* trace_out) {
  const FeatureStream fs = load_event(ds, rec);
  SessionConfig cfg;
  cfg.t_start = rec.t_start;
  cfg.t_end = rec.t_end;
  cfg.audio_period = ds.audio_period;
  cfg.visual_period = ds.visual_period;
  cfg.threshold = threshold;
  StreamSession session(model, cfg);

  std::size_t audio_sent = 0;
  const std::size_t d_audio = fs.audio.cols, d_visual = fs.visual.cols;
  for (std::size_t k = 1; k <= fs.visual.rows && session.state() == SessionState::collecting; ++k) {
    // All audio frames that start before the wall time of the k-th visual frame.
    const double t_wall = rec.t_start + static_cast<double>(k) * ds.visual_period;
    auto [fa, la] = frames_in_window(rec.t_start, t_wall, ds.audio_period, static_cast<std::size_t>(-1));
    const std::size_t audio_upto = std::min(la - fa, fs.audio.rows);
    std::vector<float> arows(fs.audio.values.begin() + static_cast<std::ptrdiff_t>(audio_sent * d_audio),
                             fs.audio.values.begin() + static_cast<std::ptrdiff_t>(audio_upto * d_audio));
    std::vector<float> vrows(fs.visual.values.begin() + static_cast<std::ptrdiff_t>((k - 1) * d_visual),
                             fs.visual.values.begin() + static_cast<std::ptrdiff_t>(k * d_visual));
    session.push_frames(arows, audio_upto - audio_sent, vrows, 1);
    audio_sent = audio_upto;
  }
  if (trace_out) *trace_out = session.trace();
  return session.finalize(beam_width);
}

}  // namespace avcap
