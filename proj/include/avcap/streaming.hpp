#pragma once

#include <filesystem>
#include <vector>

#include "avcap/manifest.hpp"
#include "avcap/model.hpp"

namespace avcap {

// Timing of one event plus the firing threshold.
struct SessionConfig {
  double t_start = 0.0;
  double t_end = 0.0;
  double audio_period = 0.96;
  double visual_period = 2.56;
  double threshold = 0.5;  // fires on the first probability strictly above
};

enum class SessionState { collecting, fired, exhausted };

struct TracePoint {
  double t_sec = 0.0;
  double probability = 0.0;
  bool fired = false;
};

struct StreamOutcome {
  std::vector<int> caption;
  double t_emit = 0.0;
  double latency_ratio = 1.0;
  bool fired = false;
};

// Latency accounting: fraction of the event window consumed before emission.
double latency_ratio(double t_start, double t_end, double t_emit);

// Online inference over one event. Frames arrive in time order; every push
// re-encodes the accumulated prefix and evaluates the end detector once. The
// session fires on the first crossing and then rejects further pushes.
class StreamSession {
 public:
  StreamSession(const Model& model, const SessionConfig& cfg);

  // Appends frames, runs the detector, records a trace point. Returns the
  // detector probability. Throws ContractError once the session left the
  // collecting state.
  double push_frames(const std::vector<float>& audio_rows, std::size_t n_audio, const std::vector<float>& visual_rows,
                     std::size_t n_visual);

  // Decodes the accumulated prefix. Requires the session to have fired or to
  // have seen every frame of the event (fallback emission at t_end with
  // latency 1.0).
  StreamOutcome finalize(std::size_t beam_width = 1) const;

  SessionState state() const { return state_; }
  const std::vector<TracePoint>& trace() const { return trace_; }
  double fired_at() const { return t_fired_; }

  void dump_trace(const std::filesystem::path& path) const;  // CSV: t_sec,probability,fired

 private:
  const Model& model_;
  SessionConfig cfg_;
  SessionState state_ = SessionState::collecting;
  std::size_t expected_audio_ = 0, expected_visual_ = 0;
  std::vector<float> audio_, visual_;  // accumulated rows
  std::size_t n_audio_ = 0, n_visual_ = 0;
  std::vector<TracePoint> trace_;
  double t_fired_ = 0.0;
};

// Feeds an event through a session one visual frame at a time, each push
// carrying the audio frames available by that wall time.
StreamOutcome run_streaming_event(const Model& model, const Dataset& ds, const EventRecord& rec, double threshold,
                                  std::size_t beam_width = 1, std::vector<TracePoint>* trace_out = nullptr);

}  // namespace avcap
