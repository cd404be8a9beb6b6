#include "avcap/run_config.hpp"

#include <fstream>
#include <sstream>

#include "avcap/io_util.hpp"

namespace avcap {

namespace {

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  }
}

double parse_f64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for " + key + ": '" + v + "'");
  }
}

std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, ','))
    if (!item.empty()) out.push_back(parse_f64(key, item));
  if (out.empty()) throw ConfigError("config: empty list for " + key);
  return out;
}

std::string render_list(const std::vector<double>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << fmt_fixed(v[i], 3);
  return os.str();
}

}  // namespace

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t' || line.back() == '\r')) line.pop_back();
    std::size_t start = 0;
    while (start < line.size() && (line[start] == ' ' || line[start] == '\t')) ++start;
    line.erase(0, start);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key=value at " + path.string() + ":" + std::to_string(lineno));
    auto trim = [](std::string s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.pop_back();
      return s;
    };
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "seed") seed = parse_u64(key, value);

  else if (key == "synth.train_events") synth.train_events = parse_u64(key, value);
  else if (key == "synth.val_events") synth.val_events = parse_u64(key, value);
  else if (key == "synth.classes") synth.classes = parse_u64(key, value);
  else if (key == "synth.vocab_target") synth.vocab_target = parse_u64(key, value);
  else if (key == "synth.clip_min_sec") synth.clip_min_sec = parse_f64(key, value);
  else if (key == "synth.clip_max_sec") synth.clip_max_sec = parse_f64(key, value);
  else if (key == "synth.cue_min_frac") synth.cue_min_frac = parse_f64(key, value);
  else if (key == "synth.cue_max_frac") synth.cue_max_frac = parse_f64(key, value);
  else if (key == "synth.mix_audio") synth.mix_audio = parse_f64(key, value);
  else if (key == "synth.mix_visual") synth.mix_visual = parse_f64(key, value);
  else if (key == "synth.noise") synth.noise = parse_f64(key, value);

  else if (key == "data.audio_period_sec") synth.audio_period = parse_f64(key, value);
  else if (key == "data.visual_period_sec") synth.visual_period = parse_f64(key, value);

  else if (key == "model.enc_blocks") model.enc_blocks = parse_u64(key, value);
  else if (key == "model.dec_blocks") model.dec_blocks = parse_u64(key, value);
  else if (key == "model.heads") model.heads = parse_u64(key, value);
  else if (key == "model.d_audio") model.d_audio = parse_u64(key, value);
  else if (key == "model.d_visual") model.d_visual = parse_u64(key, value);
  else if (key == "model.d_embed") model.d_embed = parse_u64(key, value);
  else if (key == "model.ffn_audio") model.ffn_audio = parse_u64(key, value);
  else if (key == "model.ffn_visual") model.ffn_visual = parse_u64(key, value);
  else if (key == "model.ffn_decoder") model.ffn_decoder = parse_u64(key, value);
  else if (key == "model.det_channels") model.det_channels = parse_u64(key, value);
  else if (key == "model.det_kernel") model.det_kernel = parse_u64(key, value);
  else if (key == "model.det_ffn_hidden") model.det_ffn_hidden = parse_u64(key, value);
  else if (key == "model.dropout") model.dropout = parse_f64(key, value);
  else if (key == "model.max_decode_len") model.max_decode_len = parse_u64(key, value);

  else if (key == "train.alpha") train.alpha = parse_f64(key, value);
  else if (key == "train.beta") train.beta = parse_f64(key, value);
  else if (key == "train.gamma") train.gamma = parse_f64(key, value);
  else if (key == "train.sim_threshold") train.sim_threshold = parse_f64(key, value);
  else if (key == "train.label_smoothing") train.label_smoothing = parse_f64(key, value);
  else if (key == "train.lr") train.lr = parse_f64(key, value);
  else if (key == "train.warmup_steps") train.warmup_steps = static_cast<std::int64_t>(parse_u64(key, value));
  else if (key == "train.batch_size") train.batch_size = parse_u64(key, value);
  else if (key == "train.teacher_epochs") train.teacher_epochs = parse_u64(key, value);
  else if (key == "train.student_epochs") train.student_epochs = parse_u64(key, value);
  else if (key == "train.checkpoint_every") train.checkpoint_every = parse_u64(key, value);
  else if (key == "train.val_threshold") train.val_threshold = parse_f64(key, value);

  else if (key == "infer.threshold") infer_threshold = parse_f64(key, value);
  else if (key == "infer.beam") beam_width = parse_u64(key, value);
  else if (key == "eval.thresholds") sweep_thresholds = parse_list(key, value);

  else throw ConfigError("config: unknown key '" + key + "'");
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  os << "seed=" << seed << '\n'
     << "synth.train_events=" << synth.train_events << '\n'
     << "synth.val_events=" << synth.val_events << '\n'
     << "synth.classes=" << synth.classes << '\n'
     << "synth.vocab_target=" << synth.vocab_target << '\n'
     << "synth.clip_min_sec=" << fmt_fixed(synth.clip_min_sec) << '\n'
     << "synth.clip_max_sec=" << fmt_fixed(synth.clip_max_sec) << '\n'
     << "synth.cue_min_frac=" << fmt_fixed(synth.cue_min_frac) << '\n'
     << "synth.cue_max_frac=" << fmt_fixed(synth.cue_max_frac) << '\n'
     << "synth.mix_audio=" << fmt_fixed(synth.mix_audio) << '\n'
     << "synth.mix_visual=" << fmt_fixed(synth.mix_visual) << '\n'
     << "synth.noise=" << fmt_fixed(synth.noise) << '\n'
     << "data.audio_period_sec=" << fmt_fixed(synth.audio_period) << '\n'
     << "data.visual_period_sec=" << fmt_fixed(synth.visual_period) << '\n'
     << "model.enc_blocks=" << model.enc_blocks << '\n'
     << "model.dec_blocks=" << model.dec_blocks << '\n'
     << "model.heads=" << model.heads << '\n'
     << "model.d_audio=" << model.d_audio << '\n'
     << "model.d_visual=" << model.d_visual << '\n'
     << "model.d_embed=" << model.d_embed << '\n'
     << "model.ffn_audio=" << model.ffn_audio << '\n'
     << "model.ffn_visual=" << model.ffn_visual << '\n'
     << "model.ffn_decoder=" << model.ffn_decoder << '\n'
     << "model.det_channels=" << model.det_channels << '\n'
     << "model.det_kernel=" << model.det_kernel << '\n'
     << "model.det_ffn_hidden=" << model.det_ffn_hidden << '\n'
     << "model.dropout=" << fmt_fixed(model.dropout) << '\n'
     << "model.max_decode_len=" << model.max_decode_len << '\n'
     << "train.alpha=" << fmt_fixed(train.alpha) << '\n'
     << "train.beta=" << fmt_fixed(train.beta) << '\n'
     << "train.gamma=" << fmt_fixed(train.gamma) << '\n'
     << "train.sim_threshold=" << fmt_fixed(train.sim_threshold) << '\n'
     << "train.label_smoothing=" << fmt_fixed(train.label_smoothing) << '\n'
     << "train.lr=" << fmt_fixed(train.lr) << '\n'
     << "train.warmup_steps=" << train.warmup_steps << '\n'
     << "train.batch_size=" << train.batch_size << '\n'
     << "train.teacher_epochs=" << train.teacher_epochs << '\n'
     << "train.student_epochs=" << train.student_epochs << '\n'
     << "train.checkpoint_every=" << train.checkpoint_every << '\n'
     << "train.val_threshold=" << fmt_fixed(train.val_threshold) << '\n'
     << "infer.threshold=" << fmt_fixed(infer_threshold) << '\n'
     << "infer.beam=" << beam_width << '\n'
     << "eval.thresholds=" << render_list(sweep_thresholds) << '\n';
  return os.str();
}

void RunConfig::finalize() {
  synth.d_audio = model.d_audio;
  synth.d_visual = model.d_visual;
  synth.seed = seed;
  train.seed = seed;
}

}  // namespace avcap
