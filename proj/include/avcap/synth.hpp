#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace avcap {

// Controls for the synthetic multimodal event generator.
//
// Each event is a Gaussian-noise clip into which constant patterns are
// injected from a cue time onward, in the audio stream, the visual stream, or
// both. Four independent factors are drawn per event — the event class plus
// three secondary slots (qualifier, object, adverb) — and each factor writes
// its pattern into its own slice of the feature vector. The caption spells
// out all four factors, so every content word is recoverable from post-cue
// frames but none is predictable before the cue, not even with the true
// preceding words as decoder context.
struct SyntheticSpec {
  std::size_t train_events = 500;
  std::size_t val_events = 100;
  std::size_t classes = 8;
  std::size_t vocab_target = 50;  // approximate distinct-token budget
  double clip_min_sec = 20.0;
  double clip_max_sec = 40.0;
  double cue_min_frac = 0.2;
  double cue_max_frac = 0.4;
  double mix_audio = 1.0 / 3.0;   // probability of an audio-only cue
  double mix_visual = 1.0 / 3.0;  // probability of a visual-only cue; remainder is both
  double noise = 0.1;
  double audio_period = 0.96;
  double visual_period = 2.56;
  std::size_t d_audio = 16;
  std::size_t d_visual = 32;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t secondary_count() const;  // qualifier/object cardinality
  std::size_t adverb_count() const;     // sized to hit vocab_target
};

enum class CueModality : int { audio = 0, visual = 1, both = 2 };

// Generator-side ground truth, one row per event (written as synth_meta.tsv).
struct SynthMeta {
  std::string event_id;
  std::size_t klass = 0;
  std::size_t qualifier = 0;
  std::size_t object = 0;
  std::size_t adverb = 0;
  double cue_time = 0.0;
  double duration = 0.0;
  CueModality modality = CueModality::both;
};

// Writes train.tsv, val.tsv, synth_meta.tsv and features/*.avcf under
// out_dir. Identical specs produce byte-identical trees.
std::vector<SynthMeta> generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

std::vector<SynthMeta> read_synth_meta(const std::filesystem::path& path);

// Caption factor slots.
enum class SynthSlot : int { klass = 0, qualifier = 1, object = 2, adverb = 3 };

// Pattern values are fixed functions of (slot, value, modality, dimension),
// not of the generator seed, so datasets generated with different seeds share
// the same feature-to-caption semantics. Each slot owns one quarter of the
// feature dimensions; values are zero outside the slot's slice.
float synth_pattern_value(SynthSlot slot, std::size_t value, int modality, std::size_t dim, std::size_t width);

std::string synth_caption(std::size_t klass, std::size_t qualifier, std::size_t object, std::size_t adverb);

}  // namespace avcap
