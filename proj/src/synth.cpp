#include "avcap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "avcap/errors.hpp"
#include "avcap/features.hpp"
#include "avcap/io_util.hpp"
#include "avcap/manifest.hpp"
#include "avcap/rng.hpp"

namespace avcap {

namespace {

const char* kVerbs[] = {"opens",  "closes", "lifts",  "drops",  "spins",  "shakes", "taps",    "rolls",
                        "pushes", "pulls",  "folds",  "breaks", "stacks", "throws", "catches", "tilts"};
const char* kQualifiers[] = {"wooden", "metal",  "plastic", "glass",   "paper",  "heavy",  "small",  "round",
                             "square", "soft",   "shiny",   "dusty",   "painted", "broken", "narrow", "wide"};
const char* kObjects[] = {"box",   "door",  "ball",  "cup",   "chair",  "drum", "bell", "wheel",
                          "crate", "plate", "stick", "table", "bottle", "bag",  "book", "lamp"};
const char* kAdverbs[] = {"slowly", "quickly", "twice",    "gently",   "loudly",   "again",   "quietly",
                          "firmly", "briefly", "suddenly", "smoothly", "carefully", "eagerly", "calmly",
                          "softly", "once",    "neatly",   "sharply",  "steadily", "lightly", "warily",
                          "boldly", "tightly", "loosely",  "evenly",   "oddly",    "plainly", "crisply"};
constexpr std::size_t kListLen = 16;
constexpr std::size_t kAdverbListLen = sizeof(kAdverbs) / sizeof(kAdverbs[0]);

// Small stateless mixer so pattern values depend only on their indices.
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::string word(const char* const* list, std::size_t list_len, const char* prefix, std::size_t index) {
  if (index < list_len) return list[index];
  return prefix + std::to_string(index);
}

}  // namespace

void SyntheticSpec::validate() const {
  if (train_events < 1 || val_events < 1) throw ConfigError("synthetic: need at least one event per split");
  if (classes < 2 || classes > kListLen) throw ConfigError("synthetic: class count must lie in [2,16]");
  if (!(clip_min_sec > 0) || !(clip_min_sec <= clip_max_sec))
    throw ConfigError("synthetic: bad clip duration range");
  if (!(cue_min_frac > 0 && cue_max_frac < 1 && cue_min_frac <= cue_max_frac))
    throw ConfigError("synthetic: cue fractions must lie in (0,1)");
  if (!(mix_audio >= 0 && mix_visual >= 0 && mix_audio + mix_visual <= 1.0))
    throw ConfigError("synthetic: bad cue modality mix");
  if (!(noise >= 0)) throw ConfigError("synthetic: noise must be nonnegative");
  if (!(audio_period > 0) || !(visual_period > 0)) throw ConfigError("synthetic: frame periods must be positive");
  if (d_audio < 8 || d_visual < 8) throw ConfigError("synthetic: feature widths must be >= 8");
  if (clip_min_sec < visual_period * 2) throw ConfigError("synthetic: clips must span at least two visual frames");
}

std::size_t SyntheticSpec::secondary_count() const { return std::min(kListLen, std::max<std::size_t>(2, classes)); }

std::size_t SyntheticSpec::adverb_count() const {
  // Reserved ids (4) + "the person" (2) + verbs + qualifiers + objects fill
  // the budget; the adverb list takes the rest, capped at the codeword
  // capacity of the narrowest feature slice so every adverb stays decodable
  // from either modality alone.
  const std::size_t fixed = 6 + classes + 2 * secondary_count();
  const std::size_t slice_bits = std::min(d_audio, d_visual) / 4;
  const std::size_t cap = slice_bits >= 6 ? 64 : (std::size_t{1} << slice_bits);
  if (vocab_target <= fixed + 2) return 2;
  return std::min(cap, vocab_target - fixed);
}

float synth_pattern_value(SynthSlot slot, std::size_t value, int modality, std::size_t dim, std::size_t width) {
  // Four equal slices; the slot owns [s*q, s*q + q) with the last slice
  // absorbing the remainder. Within its slice a value maps to a +-1.2
  // codeword: the binary digits of the value while they fit (guaranteeing
  // distinct codewords), a hashed sign pattern beyond that. The amplitude
  // sits above the unit-amplitude positional encoding the encoder adds, so
  // one post-cue frame already carries a readable code.
  constexpr float kAmp = 1.2f;
  const std::size_t q = width / 4;
  const std::size_t s = static_cast<std::size_t>(slot);
  const std::size_t lo = s * q;
  const std::size_t hi = s == 3 ? width : lo + q;
  if (dim < lo || dim >= hi) return 0.0f;
  const std::size_t j = dim - lo;
  const std::size_t slice = hi - lo;
  bool bit;
  if (slice < 64 && value < (1ull << slice))
    bit = (value >> j) & 1ull;
  else
    bit = mix64((s + 1) * 0x1000000ull + 0x10000ull * (value + 1) + 0x100ull * static_cast<std::size_t>(modality) +
                j) &
          1ull;
  return bit ? kAmp : -kAmp;
}

std::string synth_caption(std::size_t klass, std::size_t qualifier, std::size_t object, std::size_t adverb) {
  return std::string("the person ") + word(kVerbs, kListLen, "act", klass) + " " +
         word(kQualifiers, kListLen, "qual", qualifier) + " " + word(kObjects, kListLen, "obj", object) + " " +
         word(kAdverbs, kAdverbListLen, "adv", adverb);
}

std::vector<SynthMeta> generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "features", ec);
  if (ec) throw IoError("cannot create output directory: " + (out_dir / "features").string());

  Rng rng(spec.seed);
  const std::size_t n_secondary = spec.secondary_count();
  const std::size_t n_adverb = spec.adverb_count();
  const std::size_t total = spec.train_events + spec.val_events;

  std::vector<EventRecord> train, val;
  std::vector<SynthMeta> metas;
  for (std::size_t i = 0; i < total; ++i) {
    SynthMeta meta;
    {
      std::ostringstream id;
      id << "ev" << (i < spec.train_events ? "t" : "v");
      id.width(5);
      id.fill('0');
      id << (i < spec.train_events ? i : i - spec.train_events);
      meta.event_id = id.str();
    }
    meta.klass = rng.index(spec.classes);
    meta.qualifier = rng.index(n_secondary);
    meta.object = rng.index(n_secondary);
    meta.adverb = rng.index(n_adverb);
    meta.duration = rng.uniform(spec.clip_min_sec, spec.clip_max_sec);
    meta.cue_time = rng.uniform(spec.cue_min_frac, spec.cue_max_frac) * meta.duration;
    const double roll = rng.uniform();
    meta.modality = roll < spec.mix_audio                     ? CueModality::audio
                    : roll < spec.mix_audio + spec.mix_visual ? CueModality::visual
                                                              : CueModality::both;

    auto fill_stream = [&](FeatureMatrix& m, double period, std::size_t width, int modality, bool cued) {
      auto [first, last] = frames_in_window(0.0, meta.duration, period, static_cast<std::size_t>(-1));
      (void)first;
      m.rows = last;
      m.cols = width;
      m.values.resize(m.rows * m.cols);
      for (std::size_t r = 0; r < m.rows; ++r) {
        const bool pattern = cued && r * period >= meta.cue_time - 1e-9;
        for (std::size_t c = 0; c < width; ++c) {
          float v = static_cast<float>(spec.noise * rng.gaussian());
          if (pattern)
            v += synth_pattern_value(SynthSlot::klass, meta.klass, modality, c, width) +
                 synth_pattern_value(SynthSlot::qualifier, meta.qualifier, modality, c, width) +
                 synth_pattern_value(SynthSlot::object, meta.object, modality, c, width) +
                 synth_pattern_value(SynthSlot::adverb, meta.adverb, modality, c, width);
          m.at(r, c) = v;
        }
      }
    };

    const bool cue_audio = meta.modality != CueModality::visual;
    const bool cue_visual = meta.modality != CueModality::audio;
    FeatureMatrix audio, visual;
    fill_stream(audio, spec.audio_period, spec.d_audio, 0, cue_audio);
    fill_stream(visual, spec.visual_period, spec.d_visual, 1, cue_visual);

    EventRecord rec;
    rec.id = meta.event_id;
    rec.audio_path = "features/" + meta.event_id + ".a.avcf";
    rec.visual_path = "features/" + meta.event_id + ".v.avcf";
    rec.t_start = 0.0;
    rec.t_end = meta.duration;
    rec.caption_text = synth_caption(meta.klass, meta.qualifier, meta.object, meta.adverb);
    write_feature_file(out_dir / rec.audio_path, audio);
    write_feature_file(out_dir / rec.visual_path, visual);
    (i < spec.train_events ? train : val).push_back(std::move(rec));
    metas.push_back(std::move(meta));
  }

  write_manifest(out_dir / "train.tsv", train);
  write_manifest(out_dir / "val.tsv", val);
  {
    std::ostringstream os;
    os << "# event_id\tclass\tqualifier\tobject\tadverb\tcue_time_sec\tduration_sec\tcue_modality\n";
    for (const SynthMeta& m : metas)
      os << m.event_id << '\t' << m.klass << '\t' << m.qualifier << '\t' << m.object << '\t' << m.adverb << '\t'
         << fmt_fixed(m.cue_time) << '\t' << fmt_fixed(m.duration) << '\t' << static_cast<int>(m.modality) << '\n';
    write_text_file(out_dir / "synth_meta.tsv", os.str());
  }
  return metas;
}

std::vector<SynthMeta> read_synth_meta(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<SynthMeta> metas;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    SynthMeta m;
    int modality = 0;
    if (!(ls >> m.event_id >> m.klass >> m.qualifier >> m.object >> m.adverb >> m.cue_time >> m.duration >> modality))
      throw DataError("synth meta: malformed line in " + path.string());
    m.modality = static_cast<CueModality>(modality);
    metas.push_back(std::move(m));
  }
  return metas;
}

}  // namespace avcap
