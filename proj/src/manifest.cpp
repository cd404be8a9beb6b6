#include "avcap/manifest.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "avcap/io_util.hpp"

namespace avcap {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == '\t') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_seconds(const std::string& s, const std::string& context) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("manifest: bad time value '" + s + "' in " + context);
  }
}

}  // namespace

std::vector<EventRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path.string());
  std::vector<EventRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const std::vector<std::string> f = split_tabs(line);
    const std::string ctx = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 6) throw DataError("manifest: expected 6 tab-separated fields in " + ctx);
    EventRecord rec;
    rec.id = f[0];
    rec.audio_path = f[1];
    rec.visual_path = f[2];
    rec.t_start = parse_seconds(f[3], ctx);
    rec.t_end = parse_seconds(f[4], ctx);
    rec.caption_text = f[5];
    if (rec.id.empty()) throw DataError("manifest: empty event id in " + ctx);
    if (!(rec.t_start >= 0.0) || !(rec.t_start < rec.t_end))
      throw DataError("manifest: need 0 <= t_start < t_end in " + ctx);
    if (Vocabulary::normalize(rec.caption_text).empty())
      throw DataError("manifest: empty caption in " + ctx);
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw DataError("manifest: no records in " + path.string());
  return records;
}

void write_manifest(const std::filesystem::path& path, const std::vector<EventRecord>& records) {
  std::ostringstream os;
  for (const EventRecord& r : records)
    os << r.id << '\t' << r.audio_path << '\t' << r.visual_path << '\t' << fmt_fixed(r.t_start) << '\t'
       << fmt_fixed(r.t_end) << '\t' << r.caption_text << '\n';
  write_text_file(path, os.str());
}

Dataset Dataset::load(const std::filesystem::path& dir, double audio_period, double visual_period) {
  Dataset ds;
  ds.root = dir;
  ds.audio_period = audio_period;
  ds.visual_period = visual_period;
  ds.train = read_manifest(dir / "train.tsv");
  ds.val = read_manifest(dir / "val.tsv");
  for (const EventRecord& r : ds.train) ds.vocab.add_caption(r.caption_text);
  for (EventRecord& r : ds.train) r.caption = ds.vocab.encode(r.caption_text);
  for (EventRecord& r : ds.val) r.caption = ds.vocab.encode(r.caption_text);
  return ds;
}

const EventRecord* Dataset::find(const std::string& event_id) const {
  for (const EventRecord& r : train)
    if (r.id == event_id) return &r;
  for (const EventRecord& r : val)
    if (r.id == event_id) return &r;
  return nullptr;
}

FeatureStream load_event(const Dataset& ds, const EventRecord& rec, double until) {
  const bool full = until == kFullWindow;
  const double stop = full ? rec.t_end : until;
  if (!full) {
    if (stop > rec.t_end + 1e-9) throw ContractError("load_event: window end beyond the event");
    if (stop - rec.t_start < ds.visual_period - 1e-9)
      throw ContractError("load_event: window shorter than one visual frame");
  }
  FeatureMatrix audio = read_feature_file(ds.root / rec.audio_path);
  FeatureMatrix visual = read_feature_file(ds.root / rec.visual_path);

  FeatureStream out;
  out.audio_period = ds.audio_period;
  out.visual_period = ds.visual_period;
  auto [fa, la] = frames_in_window(rec.t_start, stop, ds.audio_period, audio.rows);
  auto [fv, lv] = frames_in_window(rec.t_start, stop, ds.visual_period, visual.rows);
  if (la == fa || lv == fv) throw DataError("load_event: no frames in window for event " + rec.id);
  out.audio.rows = la - fa;
  out.audio.cols = audio.cols;
  out.audio.values.assign(audio.values.begin() + static_cast<std::ptrdiff_t>(fa * audio.cols),
                          audio.values.begin() + static_cast<std::ptrdiff_t>(la * audio.cols));
  out.visual.rows = lv - fv;
  out.visual.cols = visual.cols;
  out.visual.values.assign(visual.values.begin() + static_cast<std::ptrdiff_t>(fv * visual.cols),
                           visual.values.begin() + static_cast<std::ptrdiff_t>(lv * visual.cols));
  return out;
}

void write_teacher_captions(const std::filesystem::path& path, const std::vector<const EventRecord*>& records,
                            const Vocabulary& vocab) {
  std::ostringstream os;
  for (const EventRecord* r : records) {
    if (!r->has_teacher_caption) throw ContractError("teacher captions: event " + r->id + " has no cached caption");
    os << r->id << '\t' << vocab.decode(r->teacher_caption) << '\n';
  }
  write_text_file(path, os.str());
}

void apply_teacher_captions(const std::filesystem::path& path, const Vocabulary& vocab,
                            std::vector<EventRecord>& records) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open teacher captions: " + path.string());
  std::map<std::string, std::string> by_id;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("teacher captions: missing tab in " + path.string());
    by_id[line.substr(0, tab)] = line.substr(tab + 1);
  }
  for (EventRecord& r : records) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) continue;
    r.teacher_caption = vocab.encode(it->second);
    r.has_teacher_caption = true;
  }
}

Batch make_batch(const std::vector<const EventRecord*>& events, const std::vector<FeatureStream>& streams) {
  if (events.empty() || events.size() != streams.size())
    throw ContractError("make_batch: need a nonempty, aligned event/stream list");
  Batch b;
  for (std::size_t i = 0; i < events.size(); ++i) {
    b.max_audio = std::max(b.max_audio, streams[i].audio.rows);
    b.max_visual = std::max(b.max_visual, streams[i].visual.rows);
    b.max_caption = std::max(b.max_caption, events[i]->caption.size());
  }
  for (std::size_t i = 0; i < events.size(); ++i) {
    const FeatureStream& s = streams[i];
    BatchItem item;
    item.audio = Tensor::zeros({b.max_audio, s.audio.cols});
    item.visual = Tensor::zeros({b.max_visual, s.visual.cols});
    std::copy(s.audio.values.begin(), s.audio.values.end(), item.audio.data->begin());
    std::copy(s.visual.values.begin(), s.visual.values.end(), item.visual.data->begin());
    item.audio_valid.assign(b.max_audio, 0);
    std::fill(item.audio_valid.begin(), item.audio_valid.begin() + static_cast<std::ptrdiff_t>(s.audio.rows), 1);
    item.visual_valid.assign(b.max_visual, 0);
    std::fill(item.visual_valid.begin(), item.visual_valid.begin() + static_cast<std::ptrdiff_t>(s.visual.rows), 1);
    item.caption.assign(b.max_caption, kPadId);
    std::copy(events[i]->caption.begin(), events[i]->caption.end(), item.caption.begin());
    item.caption_valid.assign(b.max_caption, 0);
    std::fill(item.caption_valid.begin(),
              item.caption_valid.begin() + static_cast<std::ptrdiff_t>(events[i]->caption.size()), 1);
    b.items.push_back(std::move(item));
  }
  return b;
}

}  // namespace avcap
