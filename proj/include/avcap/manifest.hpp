#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "avcap/features.hpp"
#include "avcap/vocab.hpp"

namespace avcap {

// One captioning instance. Paths are stored relative to the manifest's
// directory. The teacher caption is absent until a trained teacher has been
// run over the full clip.
struct EventRecord {
  std::string id;
  std::string audio_path;
  std::string visual_path;
  double t_start = 0.0;
  double t_end = 0.0;
  std::string caption_text;

  std::vector<int> caption;          // ground-truth token ids
  std::vector<int> teacher_caption;  // cached full-clip prediction
  bool has_teacher_caption = false;
};

// Manifest lines are UTF-8, tab-separated:
//   event_id <TAB> audio_path <TAB> visual_path <TAB> t_start_sec <TAB> t_end_sec <TAB> caption_text
// Lines starting with '#' are ignored.
std::vector<EventRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<EventRecord>& records);

// Every train/val record plus the vocabulary derived from the training split.
struct Dataset {
  std::filesystem::path root;
  std::vector<EventRecord> train;
  std::vector<EventRecord> val;
  Vocabulary vocab;
  double audio_period = 0.96;
  double visual_period = 2.56;

  static Dataset load(const std::filesystem::path& dir, double audio_period, double visual_period);

  const EventRecord* find(const std::string& event_id) const;
};

inline constexpr double kFullWindow = -1.0;

// Feature prefix of one event: frames whose start time lies in
// [t_start, until). `until` = kFullWindow loads the whole event window; any
// other value must leave room for at least one visual frame.
FeatureStream load_event(const Dataset& ds, const EventRecord& rec, double until = kFullWindow);

// Caption caches produced by teacher training: event_id <TAB> caption_text.
void write_teacher_captions(const std::filesystem::path& path, const std::vector<const EventRecord*>& records,
                            const Vocabulary& vocab);
void apply_teacher_captions(const std::filesystem::path& path, const Vocabulary& vocab,
                            std::vector<EventRecord>& records);

// One event padded to the batch maxima, with validity masks.
struct BatchItem {
  Tensor audio;                        // [max_audio x d_audio], padded with zeros
  Tensor visual;                       // [max_visual x d_visual]
  std::vector<std::uint8_t> audio_valid;
  std::vector<std::uint8_t> visual_valid;
  std::vector<int> caption;            // padded with <pad>
  std::vector<std::uint8_t> caption_valid;
};

struct Batch {
  std::size_t max_audio = 0, max_visual = 0, max_caption = 0;
  std::vector<BatchItem> items;
};

// Pads per-event streams and captions to the component-wise maxima.
Batch make_batch(const std::vector<const EventRecord*>& events, const std::vector<FeatureStream>& streams);

}  // namespace avcap
