#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "avcap/io_util.hpp"
#include "avcap/streaming.hpp"
#include "avcap/synth.hpp"

using namespace avcap;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  fs::path dir;
  Dataset ds;
  Model model;

  static ModelConfig model_config(std::size_t vocab) {
    ModelConfig mc;
    mc.enc_blocks = 1;
    mc.dec_blocks = 1;
    mc.heads = 2;
    mc.d_audio = 8;
    mc.d_visual = 12;
    mc.d_embed = 12;
    mc.ffn_audio = 16;
    mc.ffn_visual = 16;
    mc.ffn_decoder = 16;
    mc.det_channels = 8;
    mc.det_ffn_hidden = 8;
    mc.vocab_size = vocab;
    mc.max_decode_len = 10;
    return mc;
  }

  static Dataset make_ds(fs::path& dir) {
    dir = fs::temp_directory_path() / "avcap_stream_data";
    fs::remove_all(dir);
    SyntheticSpec spec;
    spec.train_events = 10;
    spec.val_events = 6;
    spec.classes = 3;
    spec.vocab_target = 24;
    spec.clip_min_sec = 12;
    spec.clip_max_sec = 22;
    spec.d_audio = 8;
    spec.d_visual = 12;
    spec.seed = 4242;
    generate_synthetic(spec, dir);
    return Dataset::load(dir, spec.audio_period, spec.visual_period);
  }

  Fixture() : ds(make_ds(dir)), model(model_config(ds.vocab.size()), 31337) {}
};

}  // namespace

TEST_CASE("latency_ratio arithmetic and contracts") {
  CHECK(latency_ratio(0.0, 37.7, 37.7) == doctest::Approx(1.0));
  CHECK(latency_ratio(0.0, 37.7, 10.6) == doctest::Approx(0.28).epsilon(0.01));
  CHECK(latency_ratio(10.0, 20.0, 15.0) == doctest::Approx(0.5));
  CHECK_THROWS_AS(latency_ratio(0.0, 10.0, 0.0), ContractError);
  CHECK_THROWS_AS(latency_ratio(0.0, 10.0, 10.5), ContractError);
  CHECK_THROWS_AS(latency_ratio(5.0, 5.0, 5.0), ContractError);
}

TEST_CASE("session state machine: fresh, terminal absorption, finalize contract") {
  Fixture fx;
  const EventRecord& rec = fx.ds.train.front();
  SessionConfig cfg{rec.t_start, rec.t_end, fx.ds.audio_period, fx.ds.visual_period, 0.5};

  StreamSession fresh(fx.model, cfg);
  CHECK(fresh.trace().empty());
  CHECK(fresh.state() == SessionState::collecting);
  CHECK_THROWS_AS(fresh.finalize(), ContractError);

  // Two sessions over the same model are independent.
  StreamSession other(fx.model, cfg);
  const FeatureStream fs_full = load_event(fx.ds, rec);
  std::vector<float> arow(fs_full.audio.values.begin(),
                          fs_full.audio.values.begin() + static_cast<std::ptrdiff_t>(fs_full.audio.cols));
  std::vector<float> vrow(fs_full.visual.values.begin(),
                          fs_full.visual.values.begin() + static_cast<std::ptrdiff_t>(fs_full.visual.cols));
  other.push_frames(arow, 1, vrow, 1);
  CHECK(fresh.trace().empty());
  CHECK(other.trace().size() == 1);

  SessionConfig bad = cfg;
  bad.threshold = 1.5;
  CHECK_THROWS_AS(StreamSession(fx.model, bad), ConfigError);
}

TEST_CASE("the detector fires on the first strict crossing") {
  Fixture fx;
  const EventRecord& rec = fx.ds.train[1];

  // Reference trace from a threshold nothing crosses.
  std::vector<TracePoint> trace;
  StreamOutcome base = run_streaming_event(fx.model, fx.ds, rec, 0.999, 1, &trace);
  REQUIRE_FALSE(trace.empty());
  CHECK_FALSE(base.fired);
  CHECK(base.latency_ratio == doctest::Approx(1.0));
  // One evaluation per visual frame of the event.
  CHECK(trace.size() == load_event(fx.ds, rec).visual.rows);

  // For thresholds between observed probabilities, the firing index must be
  // the first strict crossing of the same trace.
  for (double f : {0.3, 0.45, 0.5, 0.55, 0.7}) {
    std::size_t expect = trace.size();
    for (std::size_t i = 0; i < trace.size(); ++i)
      if (trace[i].probability > f) {
        expect = i;
        break;
      }
    std::vector<TracePoint> got;
    StreamOutcome out = run_streaming_event(fx.model, fx.ds, rec, f, 1, &got);
    if (expect == trace.size()) {
      CHECK_FALSE(out.fired);
      CHECK(got.size() == trace.size());
    } else {
      CHECK(out.fired);
      CHECK(got.size() == expect + 1);
      CHECK(out.t_emit == doctest::Approx(trace[expect].t_sec));
    }
  }
}

TEST_CASE("fired sessions reject further pushes") {
  Fixture fx;
  const EventRecord& rec = fx.ds.train[2];
  const FeatureStream full = load_event(fx.ds, rec);
  // Pick a threshold just under the first probability so the session fires
  // immediately.
  std::vector<TracePoint> trace;
  run_streaming_event(fx.model, fx.ds, rec, 0.999, 1, &trace);
  const double f = std::max(1e-6, trace[0].probability - 1e-6);

  SessionConfig cfg{rec.t_start, rec.t_end, fx.ds.audio_period, fx.ds.visual_period, f};
  StreamSession session(fx.model, cfg);
  auto first_rows = [&](const FeatureMatrix& m, std::size_t n) {
    return std::vector<float>(m.values.begin(), m.values.begin() + static_cast<std::ptrdiff_t>(n * m.cols));
  };
  // Same first push as the per-visual-frame driver: every audio frame that
  // starts before the first visual frame ends.
  auto [fa, la] =
      frames_in_window(rec.t_start, rec.t_start + fx.ds.visual_period, fx.ds.audio_period, full.audio.rows);
  const std::size_t n_audio = la - fa;
  session.push_frames(first_rows(full.audio, n_audio), n_audio, first_rows(full.visual, 1), 1);
  CHECK(session.state() == SessionState::fired);
  CHECK_THROWS_AS(session.push_frames(first_rows(full.audio, 1), 1, first_rows(full.visual, 1), 1), ContractError);
  StreamOutcome out = session.finalize();
  CHECK(out.fired);
}

TEST_CASE("online captions equal offline decoding of the prefix truncated at the firing time") {
  Fixture fx;
  NoGradGuard ng;
  for (const EventRecord& rec : fx.ds.val) {
    for (double f : {0.3, 0.5, 0.7}) {
      StreamOutcome out = run_streaming_event(fx.model, fx.ds, rec, f);
      const FeatureStream cut = load_event(fx.ds, rec, out.t_emit);
      Encodings enc = fx.model.encode(rows_to_tensor(cut.audio, 0, cut.audio.rows),
                                      rows_to_tensor(cut.visual, 0, cut.visual.rows));
      CHECK(fx.model.greedy_decode(enc) == out.caption);
    }
  }
}

TEST_CASE("first-crossing monotonicity in the threshold") {
  Fixture fx;
  for (const EventRecord& rec : fx.ds.train) {
    double prev_emit = 0.0;
    for (double f : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      StreamOutcome out = run_streaming_event(fx.model, fx.ds, rec, f);
      CHECK(out.t_emit >= prev_emit - 1e-12);
      prev_emit = out.t_emit;
    }
  }
}

TEST_CASE("streaming runs are deterministic and traces dump as CSV") {
  Fixture fx;
  const EventRecord& rec = fx.ds.val.front();
  std::vector<TracePoint> t1, t2;
  StreamOutcome o1 = run_streaming_event(fx.model, fx.ds, rec, 0.5, 1, &t1);
  StreamOutcome o2 = run_streaming_event(fx.model, fx.ds, rec, 0.5, 1, &t2);
  CHECK(o1.caption == o2.caption);
  REQUIRE(t1.size() == t2.size());
  for (std::size_t i = 0; i < t1.size(); ++i) CHECK(t1[i].probability == t2[i].probability);

  SessionConfig cfg{rec.t_start, rec.t_end, fx.ds.audio_period, fx.ds.visual_period, 0.999};
  StreamSession session(fx.model, cfg);
  const FeatureStream full = load_event(fx.ds, rec);
  std::size_t audio_sent = 0;
  for (std::size_t k = 1; k <= full.visual.rows; ++k) {
    auto [fa, la] =
        frames_in_window(rec.t_start, rec.t_start + k * fx.ds.visual_period, fx.ds.audio_period, full.audio.rows);
    (void)fa;
    std::vector<float> arows(full.audio.values.begin() + static_cast<std::ptrdiff_t>(audio_sent * full.audio.cols),
                             full.audio.values.begin() + static_cast<std::ptrdiff_t>(la * full.audio.cols));
    std::vector<float> vrows(full.visual.values.begin() + static_cast<std::ptrdiff_t>((k - 1) * full.visual.cols),
                             full.visual.values.begin() + static_cast<std::ptrdiff_t>(k * full.visual.cols));
    session.push_frames(arows, la - audio_sent, vrows, 1);
    audio_sent = la;
  }
  CHECK(session.state() == SessionState::exhausted);
  const fs::path csv = fs::temp_directory_path() / "avcap_trace.csv";
  session.dump_trace(csv);
  const std::string text = read_text_file(csv);
  CHECK(text.rfind("t_sec,probability,fired\n", 0) == 0);
  std::size_t lines = 0;
  for (char c : text)
    if (c == '\n') ++lines;
  CHECK(lines == session.trace().size() + 1);
}
