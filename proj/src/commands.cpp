#include "avcap/commands.hpp"

#include <ostream>
#include <sstream>

#include "avcap/checkpoint.hpp"
#include "avcap/io_util.hpp"
#include "avcap/streaming.hpp"
#include "avcap/training.hpp"

namespace avcap {

namespace {

void echo_config(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  write_text_file(out_dir / "resolved.cfg", cfg.echo());
}

Dataset load_dataset(const RunConfig& cfg, const std::filesystem::path& data_dir) {
  return Dataset::load(data_dir, cfg.synth.audio_period, cfg.synth.visual_period);
}

const std::vector<EventRecord>& pick_split(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "val") return ds.val;
  throw ConfigError("split must be 'train' or 'val', got '" + split + "'");
}

}  // namespace

void cmd_gen_data(RunConfig cfg, const std::filesystem::path& out_dir) {
  cfg.finalize();
  cfg.synth.validate();  // nothing is written for an invalid spec
  std::filesystem::create_directories(out_dir);
  generate_synthetic(cfg.synth, out_dir);
  echo_config(cfg, out_dir);
}

void cmd_train_teacher(RunConfig cfg, const std::filesystem::path& data_dir, const std::filesystem::path& out_dir) {
  cfg.finalize();
  Dataset ds = load_dataset(cfg, data_dir);
  std::filesystem::create_directories(out_dir);
  echo_config(cfg, out_dir);
  train_teacher(ds, cfg.model, cfg.train, out_dir);
}

void cmd_train_student(RunConfig cfg, const std::filesystem::path& data_dir,
                       const std::filesystem::path& teacher_checkpoint, const std::filesystem::path& out_dir) {
  cfg.finalize();
  if (!std::filesystem::exists(teacher_checkpoint))
    throw IoError("teacher checkpoint not found: " + teacher_checkpoint.string());
  Dataset ds = load_dataset(cfg, data_dir);
  std::filesystem::create_directories(out_dir);
  echo_config(cfg, out_dir);
  train_student(ds, teacher_checkpoint, cfg.train, out_dir);
}

InferResult cmd_infer(RunConfig cfg, const std::filesystem::path& data_dir, const std::filesystem::path& checkpoint,
                      const std::string& event_id, const std::filesystem::path& out_dir, std::ostream& os) {
  cfg.finalize();
  Dataset ds = load_dataset(cfg, data_dir);
  const EventRecord* rec = ds.find(event_id);
  if (!rec) throw DataError("event '" + event_id + "' not found in " + data_dir.string());
  std::unique_ptr<Model> model = load_checkpoint(checkpoint);
  if (model->config().vocab_size != ds.vocab.size())
    throw DataError("checkpoint vocabulary size does not match the dataset");
  std::filesystem::create_directories(out_dir);
  echo_config(cfg, out_dir);

  std::vector<TracePoint> trace;
  StreamOutcome out = run_streaming_event(*model, ds, *rec, cfg.infer_threshold, cfg.beam_width, &trace);

  InferResult res;
  res.caption = out.caption;
  res.caption_text = ds.vocab.decode(out.caption);
  res.t_emit = out.t_emit;
  res.latency_ratio = out.latency_ratio;
  res.fired = out.fired;
  res.trace_csv = out_dir / ("trace_" + event_id + ".csv");
  {
    std::ostringstream csv;
    csv << "t_sec,probability,fired\n";
    for (const TracePoint& p : trace)
      csv << fmt_fixed(p.t_sec) << ',' << fmt_fixed(p.probability, 9) << ',' << (p.fired ? 1 : 0) << '\n';
    write_text_file(res.trace_csv, csv.str());
  }
  os << "event: " << event_id << '\n'
     << "caption: " << res.caption_text << '\n'
     << "t_emit_sec: " << fmt_fixed(res.t_emit) << '\n'
     << "latency_ratio: " << fmt_fixed(res.latency_ratio) << '\n'
     << "fired: " << (res.fired ? 1 : 0) << '\n'
     << "trace: " << res.trace_csv.string() << '\n';
  return res;
}

TradeoffRow cmd_eval(RunConfig cfg, const std::filesystem::path& data_dir, const std::filesystem::path& checkpoint,
                     const std::string& split, const std::filesystem::path& out_dir) {
  cfg.finalize();
  Dataset ds = load_dataset(cfg, data_dir);
  std::unique_ptr<Model> model = load_checkpoint(checkpoint);
  if (model->config().vocab_size != ds.vocab.size())
    throw DataError("checkpoint vocabulary size does not match the dataset");
  std::filesystem::create_directories(out_dir);
  echo_config(cfg, out_dir);

  CorpusEvalResult res = corpus_eval(*model, ds, pick_split(ds, split), cfg.infer_threshold, cfg.beam_width);
  write_tradeoff_csv(out_dir / "eval_report.csv", {res.row});
  {
    std::ostringstream os;
    os << "# event_id\tfired\tt_emit_sec\tlatency_ratio\tword_acc\tcaption\n";
    for (const PerEventEval& e : res.events)
      os << e.event_id << '\t' << (e.fired ? 1 : 0) << '\t' << fmt_fixed(e.t_emit) << '\t'
         << fmt_fixed(e.latency_ratio) << '\t' << fmt_fixed(e.word_acc) << '\t' << ds.vocab.decode(e.caption) << '\n';
    write_text_file(out_dir / "eval_events.tsv", os.str());
  }
  if (!res.failures.empty()) {
    std::ostringstream os;
    for (const std::string& f : res.failures) os << f << '\n';
    write_text_file(out_dir / "eval_failures.txt", os.str());
  }
  return res.row;
}

TradeoffReport cmd_sweep(RunConfig cfg, const std::filesystem::path& data_dir, const std::filesystem::path& checkpoint,
                         const std::optional<std::filesystem::path>& baseline_checkpoint, const std::string& split,
                         const std::filesystem::path& out_dir) {
  cfg.finalize();
  Dataset ds = load_dataset(cfg, data_dir);
  std::unique_ptr<Model> model = load_checkpoint(checkpoint);
  if (model->config().vocab_size != ds.vocab.size())
    throw DataError("checkpoint vocabulary size does not match the dataset");
  std::unique_ptr<Model> baseline;
  if (baseline_checkpoint) baseline = load_checkpoint(*baseline_checkpoint);
  std::filesystem::create_directories(out_dir);
  echo_config(cfg, out_dir);

  TradeoffReport report =
      threshold_sweep(*model, baseline.get(), ds, pick_split(ds, split), cfg.sweep_thresholds, cfg.beam_width);
  write_tradeoff_csv(out_dir / "tradeoff.csv", report.proposed);
  write_tradeoff_csv(out_dir / "tradeoff_naive.csv", report.naive);
  return report;
}

}  // namespace avcap
