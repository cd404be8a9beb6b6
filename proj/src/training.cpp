#include "avcap/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "avcap/checkpoint.hpp"
#include "avcap/eval.hpp"
#include "avcap/io_util.hpp"
#include "avcap/losses.hpp"
#include "avcap/optimizer.hpp"
#include "avcap/streaming.hpp"

namespace avcap {

void TrainConfig::validate() const {
  if (!(alpha >= 0 && beta >= 0 && gamma >= 0)) throw ConfigError("train: loss weights must be nonnegative");
  if (!(sim_threshold > 0 && sim_threshold <= 1)) throw ConfigError("train: similarity threshold must lie in (0,1]");
  if (!(label_smoothing >= 0 && label_smoothing < 1)) throw ConfigError("train: label smoothing must lie in [0,1)");
  if (!(lr > 0)) throw ConfigError("train: learning rate must be positive");
  if (warmup_steps < 1) throw ConfigError("train: warmup must be >= 1 step");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (teacher_epochs < 1 || student_epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(val_threshold > 0 && val_threshold < 1)) throw ConfigError("train: validation threshold must lie in (0,1)");
}

std::optional<double> sample_emission_time(double t_start, double t_end, double visual_period, Rng& rng) {
  const double lo = t_start + visual_period;
  if (lo > t_end + 1e-9) return std::nullopt;
  if (lo >= t_end) return t_end;
  return rng.uniform(lo, t_end);
}

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& rows) {
  std::ostringstream os;
  os << "epoch,latency_ratio,bleu3,bleu4,word_acc,loss_ce,loss_kl,loss_d\n";
  for (const HistoryRow& r : rows)
    os << r.epoch << ',' << fmt_fixed(r.latency_ratio) << ',' << fmt_fixed(r.bleu3) << ',' << fmt_fixed(r.bleu4)
       << ',' << fmt_fixed(r.word_acc) << ',' << fmt_fixed(r.loss_ce) << ',' << fmt_fixed(r.loss_kl) << ','
       << fmt_fixed(r.loss_d) << '\n';
  write_text_file(path, os.str());
}

namespace {

struct LoadedEvent {
  const EventRecord* rec;
  FeatureStream full;  // event window, loaded once
};

std::vector<LoadedEvent> preload(const Dataset& ds, const std::vector<EventRecord>& split) {
  std::vector<LoadedEvent> out;
  out.reserve(split.size());
  for (const EventRecord& rec : split) out.push_back({&rec, load_event(ds, rec)});
  return out;
}

// Number of frames of the preloaded event window that start before `until`.
std::size_t prefix_count(double t_start, double until, double period, std::size_t rows) {
  auto [first, last] = frames_in_window(t_start, until, period, static_cast<std::size_t>(-1));
  return std::min(last - first, rows);
}

Encodings encode_window(const Model& model, const LoadedEvent& ev, const Dataset& ds, double until, ForwardCtx ctx) {
  const std::size_t na = prefix_count(ev.rec->t_start, until, ds.audio_period, ev.full.audio.rows);
  const std::size_t nv = prefix_count(ev.rec->t_start, until, ds.visual_period, ev.full.visual.rows);
  if (na == 0 || nv == 0) throw ContractError("encode_window: window holds no frames for event " + ev.rec->id);
  return model.encode(rows_to_tensor(ev.full.audio, 0, na), rows_to_tensor(ev.full.visual, 0, nv), ctx);
}

double checked_scalar(const Tensor& t, const char* what, int epoch) {
  const double v = static_cast<double>(t.at(0));
  if (!std::isfinite(v))
    throw TrainError(std::string(what) + " became non-finite at epoch " + std::to_string(epoch));
  return v;
}

std::vector<std::vector<float>> snapshot(const Model& model) {
  std::vector<std::vector<float>> vals;
  vals.reserve(model.parameters().size());
  for (const auto& [name, t] : model.parameters()) vals.push_back(*t.data);
  return vals;
}

void restore(Model& model, const std::vector<std::vector<float>>& vals) {
  for (std::size_t i = 0; i < vals.size(); ++i) *model.parameters()[i].second.data = vals[i];
}

void write_run_manifest(const std::filesystem::path& out_dir, const TrainArtifacts& art) {
  std::ostringstream os;
  os << "best=" << art.best_checkpoint.filename().string() << '\n'
     << "final=" << art.final_checkpoint.filename().string() << '\n'
     << "history=" << art.history_csv.filename().string() << '\n';
  if (!art.teacher_captions.empty()) os << "captions=" << art.teacher_captions.filename().string() << '\n';
  write_text_file(out_dir / "MANIFEST", os.str());
}

}  // namespace

TrainArtifacts train_teacher(Dataset& ds, const ModelConfig& model_cfg, const TrainConfig& cfg,
                             const std::filesystem::path& out_dir) {
  cfg.validate();
  ModelConfig mc = model_cfg;
  mc.vocab_size = ds.vocab.size();
  mc.validate();
  std::filesystem::create_directories(out_dir);

  Rng rng(cfg.seed);
  Model model(mc, rng.next_u64());
  Adam opt(model.parameters());
  const std::vector<LoadedEvent> train_ev = preload(ds, ds.train);
  const std::vector<LoadedEvent> val_ev = preload(ds, ds.val);

  std::vector<HistoryRow> history;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<std::vector<float>> best_params = snapshot(model);

  std::vector<std::size_t> order(train_ev.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.teacher_epochs; ++epoch) {
    // Fisher-Yates on the driver rng keeps runs reproducible.
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    double epoch_ce = 0.0;
    std::size_t in_batch = 0;
    ForwardCtx ctx{&rng, true};
    for (std::size_t idx : order) {
      const LoadedEvent& ev = train_ev[idx];
      Encodings enc = encode_window(model, ev, ds, ev.rec->t_end, ctx);
      ForcedResult forced = model.teacher_forced_predictions(ev.rec->caption, enc, ctx);
      std::vector<int> targets = ev.rec->caption;
      targets.push_back(kEosId);
      Tensor loss = caption_ce_loss(forced.logits, targets, cfg.label_smoothing);
      epoch_ce += checked_scalar(loss, "teacher loss", static_cast<int>(epoch));
      backward(loss);
      if (++in_batch == cfg.batch_size) {
        opt.step(model.parameters(), lr_schedule(opt.steps_taken() + 1, cfg.lr, cfg.warmup_steps),
                 1.0 / static_cast<double>(in_batch));
        model.zero_grad();
        in_batch = 0;
      }
    }
    if (in_batch > 0) {
      opt.step(model.parameters(), lr_schedule(opt.steps_taken() + 1, cfg.lr, cfg.warmup_steps),
               1.0 / static_cast<double>(in_batch));
      model.zero_grad();
      in_batch = 0;
    }

    // Validation: forced loss for model selection, full-window decode quality
    // for the history.
    double val_loss = 0.0, val_acc = 0.0;
    BleuStats b3, b4;
    {
      NoGradGuard ng;
      for (const LoadedEvent& ev : val_ev) {
        Encodings enc = encode_window(model, ev, ds, ev.rec->t_end, {});
        ForcedResult forced = model.teacher_forced_predictions(ev.rec->caption, enc);
        std::vector<int> targets = ev.rec->caption;
        targets.push_back(kEosId);
        val_loss += checked_scalar(caption_ce_loss(forced.logits, targets, cfg.label_smoothing), "teacher val loss",
                                   static_cast<int>(epoch));
        val_acc += sim_word_accuracy(forced.argmax, ev.rec->caption);
        const std::vector<int> decoded = model.greedy_decode(enc);
        b3.accumulate(bleu_stats(decoded, ev.rec->caption, 3));
        b4.accumulate(bleu_stats(decoded, ev.rec->caption, 4));
      }
    }
    val_loss /= static_cast<double>(val_ev.size());
    val_acc /= static_cast<double>(val_ev.size());

    HistoryRow row;
    row.epoch = static_cast<int>(epoch);
    row.latency_ratio = 1.0;
    row.bleu3 = bleu_from_stats(b3);
    row.bleu4 = bleu_from_stats(b4);
    row.word_acc = val_acc;
    row.loss_ce = epoch_ce / static_cast<double>(train_ev.size());
    history.push_back(row);

    if (val_loss < best_val_loss) {
      best_val_loss = val_loss;
      best_params = snapshot(model);
    }
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
      save_checkpoint(out_dir / ("teacher_ep" + std::to_string(epoch) + ".avck"), model);
  }

  TrainArtifacts art;
  art.final_checkpoint = out_dir / "teacher_final.avck";
  save_checkpoint(art.final_checkpoint, model);
  restore(model, best_params);
  art.best_checkpoint = out_dir / "teacher_best.avck";
  save_checkpoint(art.best_checkpoint, model);
  art.history_csv = out_dir / "teacher_history.csv";
  write_history_csv(art.history_csv, history);
  art.history = history;

  // Cache the best model's full-clip captions for student training.
  {
    NoGradGuard ng;
    std::vector<const EventRecord*> all;
    auto cache_split = [&](std::vector<EventRecord>& split, const std::vector<LoadedEvent>& loaded) {
      for (std::size_t i = 0; i < split.size(); ++i) {
        Encodings enc = encode_window(model, loaded[i], ds, split[i].t_end, {});
        split[i].teacher_caption = model.greedy_decode(enc);
        split[i].has_teacher_caption = true;
        all.push_back(&split[i]);
      }
    };
    cache_split(ds.train, train_ev);
    cache_split(ds.val, val_ev);
    art.teacher_captions = out_dir / "teacher_captions.tsv";
    write_teacher_captions(art.teacher_captions, all, ds.vocab);
  }
  write_run_manifest(out_dir, art);
  return art;
}

TrainArtifacts train_student(Dataset& ds, const std::filesystem::path& teacher_checkpoint, const TrainConfig& cfg,
                             const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);

  std::unique_ptr<Model> teacher = load_checkpoint(teacher_checkpoint);
  if (teacher->config().vocab_size != ds.vocab.size())
    throw DataError("student: teacher vocabulary size does not match the dataset");
  const std::filesystem::path captions_path = teacher_checkpoint.parent_path() / "teacher_captions.tsv";
  if (!std::filesystem::exists(captions_path))
    throw ContractError("student: missing cached teacher captions next to " + teacher_checkpoint.string());
  apply_teacher_captions(captions_path, ds.vocab, ds.train);
  apply_teacher_captions(captions_path, ds.vocab, ds.val);
  for (const EventRecord& r : ds.train)
    if (!r.has_teacher_caption)
      throw ContractError("student: event " + r.id + " has no cached teacher caption");

  Rng rng(cfg.seed ^ 0x5bd1e995u);
  // The student trains from scratch under the teacher's distillation signal.
  // Copying the teacher's captioner weights instead makes every post-cue
  // window label positive from the first step, which collapses the detector
  // into firing immediately; the latency curve then starts at its minimum
  // rather than easing down as the captioner improves.
  Model model(teacher->config(), rng.next_u64());
  Adam opt(model.parameters());
  const std::vector<LoadedEvent> train_ev = preload(ds, ds.train);

  // The teacher is frozen, so its full-window distributions per event never
  // change; compute them once.
  std::vector<std::vector<std::vector<float>>> teacher_rows(train_ev.size());
  {
    NoGradGuard ng;
    for (std::size_t i = 0; i < train_ev.size(); ++i) {
      const LoadedEvent& ev = train_ev[i];
      Encodings enc = encode_window(*teacher, ev, ds, ev.rec->t_end, {});
      teacher_rows[i] = teacher->teacher_forced_predictions(ev.rec->caption, enc).distributions;
    }
  }

  std::vector<HistoryRow> history;
  double best_bleu4 = -1.0;
  std::vector<std::vector<float>> best_params = snapshot(model);

  std::vector<std::size_t> order(train_ev.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.student_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    double sum_ce = 0.0, sum_kl = 0.0, sum_d = 0.0;
    std::size_t counted = 0, in_batch = 0;
    ForwardCtx ctx{&rng, true};
    for (std::size_t idx : order) {
      const LoadedEvent& ev = train_ev[idx];
      const std::optional<double> t_o = sample_emission_time(ev.rec->t_start, ev.rec->t_end, ds.visual_period, rng);
      if (!t_o) continue;

      Encodings enc = encode_window(model, ev, ds, *t_o, ctx);
      ForcedResult forced = model.teacher_forced_predictions(ev.rec->caption, enc, ctx);
      std::vector<int> targets = ev.rec->caption;
      targets.push_back(kEosId);
      Tensor ce = caption_ce_loss(forced.logits, targets, cfg.label_smoothing);
      Tensor kl = distill_kl_loss(teacher_rows[idx], forced.logits);

      const double sim_gt = sim_word_accuracy(forced.argmax, ev.rec->caption);
      double sim_teacher = 0.0;
      if (!ev.rec->teacher_caption.empty()) {
        NoGradGuard ng;
        ForcedResult vs_teacher = model.teacher_forced_predictions(ev.rec->teacher_caption, enc);
        sim_teacher = sim_word_accuracy(vs_teacher.argmax, ev.rec->teacher_caption);
      }
      const int d = detection_label(sim_gt, sim_teacher, cfg.sim_threshold);
      Tensor d_loss = binary_cross_entropy(model.detect_end(enc, ctx), d);

      Tensor total = add(add(scale(ce, static_cast<float>(cfg.alpha)), scale(kl, static_cast<float>(cfg.beta))),
                         scale(d_loss, static_cast<float>(cfg.gamma)));
      sum_ce += checked_scalar(ce, "student caption loss", static_cast<int>(epoch));
      sum_kl += checked_scalar(kl, "student distillation loss", static_cast<int>(epoch));
      sum_d += checked_scalar(d_loss, "student detection loss", static_cast<int>(epoch));
      ++counted;
      backward(total);
      if (++in_batch == cfg.batch_size) {
        opt.step(model.parameters(), lr_schedule(opt.steps_taken() + 1, cfg.lr, cfg.warmup_steps),
                 1.0 / static_cast<double>(in_batch));
        model.zero_grad();
        in_batch = 0;
      }
    }
    if (in_batch > 0) {
      opt.step(model.parameters(), lr_schedule(opt.steps_taken() + 1, cfg.lr, cfg.warmup_steps),
               1.0 / static_cast<double>(in_batch));
      model.zero_grad();
    }

    // Streamed validation at the configured firing threshold.
    CorpusEvalResult val = corpus_eval(model, ds, ds.val, cfg.val_threshold);
    HistoryRow row;
    row.epoch = static_cast<int>(epoch);
    row.latency_ratio = val.row.latency_ratio;
    row.bleu3 = val.row.bleu3;
    row.bleu4 = val.row.bleu4;
    row.word_acc = val.row.word_acc;
    row.loss_ce = counted ? sum_ce / static_cast<double>(counted) : 0.0;
    row.loss_kl = counted ? sum_kl / static_cast<double>(counted) : 0.0;
    row.loss_d = counted ? sum_d / static_cast<double>(counted) : 0.0;
    history.push_back(row);

    if (val.row.bleu4 > best_bleu4) {
      best_bleu4 = val.row.bleu4;
      best_params = snapshot(model);
    }
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
      save_checkpoint(out_dir / ("student_ep" + std::to_string(epoch) + ".avck"), model);
  }

  TrainArtifacts art;
  art.final_checkpoint = out_dir / "student_final.avck";
  save_checkpoint(art.final_checkpoint, model);
  restore(model, best_params);
  art.best_checkpoint = out_dir / "student_best.avck";
  save_checkpoint(art.best_checkpoint, model);
  art.history_csv = out_dir / "student_history.csv";
  write_history_csv(art.history_csv, history);
  art.history = history;
  write_run_manifest(out_dir, art);
  return art;
}

}  // namespace avcap
