#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <map>
#include <sstream>

#include "avcap/commands.hpp"
#include "avcap/io_util.hpp"

using namespace avcap;
namespace fs = std::filesystem;

namespace {

RunConfig smoke_config() {
  RunConfig cfg;
  cfg.seed = 2026;
  cfg.synth.train_events = 20;
  cfg.synth.val_events = 8;
  cfg.synth.classes = 3;
  cfg.synth.vocab_target = 26;
  cfg.synth.clip_min_sec = 10;
  cfg.synth.clip_max_sec = 18;
  cfg.model.enc_blocks = 1;
  cfg.model.dec_blocks = 1;
  cfg.model.heads = 2;
  cfg.model.d_audio = 8;
  cfg.model.d_visual = 12;
  cfg.model.d_embed = 12;
  cfg.model.ffn_audio = 16;
  cfg.model.ffn_visual = 16;
  cfg.model.ffn_decoder = 16;
  cfg.model.det_channels = 8;
  cfg.model.det_ffn_hidden = 8;
  cfg.model.max_decode_len = 10;
  cfg.train.teacher_epochs = 3;
  cfg.train.student_epochs = 2;
  cfg.train.batch_size = 4;
  cfg.train.warmup_steps = 10;
  cfg.train.checkpoint_every = 2;
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

std::string tree_digest(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file()) files[fs::relative(entry.path(), root).string()] = read_text_file(entry.path());
  std::string all;
  for (const auto& [name, content] : files) all += name + "\x01" + content + "\x02";
  return all;
}

}  // namespace

TEST_CASE("config files, overrides, and unknown keys") {
  const fs::path dir = fresh_dir("avcap_cfg_test");
  fs::create_directories(dir);
  write_text_file(dir / "a.cfg", "# comment\nseed=42\ntrain.lr = 0.001\n  model.heads=2\n");
  RunConfig cfg;
  cfg.apply_file(dir / "a.cfg");
  CHECK(cfg.seed == 42);
  CHECK(cfg.train.lr == doctest::Approx(0.001));
  CHECK(cfg.model.heads == 2);

  CHECK_THROWS_AS(cfg.set("nope.key", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("train.lr", "fast"), ConfigError);
  cfg.set("eval.thresholds", "0.2,0.4");
  CHECK(cfg.sweep_thresholds == std::vector<double>{0.2, 0.4});

  // The echo round-trips through the parser.
  write_text_file(dir / "echo.cfg", cfg.echo());
  RunConfig back;
  back.apply_file(dir / "echo.cfg");
  CHECK(back.echo() == cfg.echo());
}

TEST_CASE("gen-data: deterministic bytes, invalid spec leaves nothing behind") {
  RunConfig cfg = smoke_config();
  const fs::path d1 = fresh_dir("avcap_cmd_gen1");
  const fs::path d2 = fresh_dir("avcap_cmd_gen2");
  cmd_gen_data(cfg, d1);
  cmd_gen_data(cfg, d2);
  CHECK(fs::exists(d1 / "train.tsv"));
  CHECK(fs::exists(d1 / "val.tsv"));
  CHECK(fs::exists(d1 / "resolved.cfg"));
  CHECK(tree_digest(d1) == tree_digest(d2));

  RunConfig bad = smoke_config();
  bad.synth.cue_min_frac = 0.9;
  bad.synth.cue_max_frac = 0.1;
  const fs::path d3 = fresh_dir("avcap_cmd_gen3");
  CHECK_THROWS_AS(cmd_gen_data(bad, d3), ConfigError);
  CHECK_FALSE(fs::exists(d3));
}

TEST_CASE("end-to-end smoke: teacher, student, infer, eval, sweep") {
  RunConfig cfg = smoke_config();
  const fs::path data = fresh_dir("avcap_cmd_data");
  cmd_gen_data(cfg, data);

  const fs::path tdir = fresh_dir("avcap_cmd_teacher");
  cmd_train_teacher(cfg, data, tdir);
  CHECK(fs::exists(tdir / "teacher_best.avck"));
  CHECK(fs::exists(tdir / "teacher_final.avck"));
  CHECK(fs::exists(tdir / "teacher_history.csv"));
  CHECK(fs::exists(tdir / "teacher_captions.tsv"));
  CHECK(fs::exists(tdir / "teacher_ep2.avck"));
  CHECK(fs::exists(tdir / "MANIFEST"));

  const fs::path sdir = fresh_dir("avcap_cmd_student");
  cmd_train_student(cfg, data, tdir / "teacher_best.avck", sdir);
  CHECK(fs::exists(sdir / "student_best.avck"));
  CHECK(fs::exists(sdir / "student_final.avck"));
  CHECK(fs::exists(sdir / "student_history.csv"));

  // Missing teacher checkpoint path is an I/O error.
  CHECK_THROWS_AS(cmd_train_student(cfg, data, tdir / "nothere.avck", fresh_dir("avcap_cmd_student2")), IoError);
  // Zero epochs is a config error.
  RunConfig zero = cfg;
  zero.train.teacher_epochs = 0;
  CHECK_THROWS_AS(cmd_train_teacher(zero, data, fresh_dir("avcap_cmd_teacher2")), ConfigError);

  // Inference prints the caption and drops a trace next to its outputs.
  const fs::path idir = fresh_dir("avcap_cmd_infer");
  std::ostringstream out;
  cfg.infer_threshold = 0.5;
  InferResult inf = cmd_infer(cfg, data, sdir / "student_best.avck", "evv00002", idir, out);
  CHECK(out.str().find("caption:") != std::string::npos);
  CHECK(out.str().find("latency_ratio:") != std::string::npos);
  CHECK(fs::exists(inf.trace_csv));

  // The eval records agree with single-event inference at the same F.
  const fs::path edir = fresh_dir("avcap_cmd_eval");
  TradeoffRow row = cmd_eval(cfg, data, sdir / "student_best.avck", "val", edir);
  CHECK(fs::exists(edir / "eval_report.csv"));
  CHECK(fs::exists(edir / "eval_events.tsv"));
  CHECK(row.latency_ratio > 0.0);
  const std::string events = read_text_file(edir / "eval_events.tsv");
  const std::string needle = "evv00002\t" + std::string(inf.fired ? "1" : "0") + "\t" + fmt_fixed(inf.t_emit);
  CHECK(events.find(needle) != std::string::npos);
  CHECK(events.find(inf.caption_text) != std::string::npos);

  // Sweep: row per threshold, matching naive table, monotone latency.
  RunConfig swcfg = cfg;
  swcfg.sweep_thresholds = {0.3, 0.5, 0.7, 0.9};
  const fs::path wdir = fresh_dir("avcap_cmd_sweep");
  TradeoffReport report = cmd_sweep(swcfg, data, sdir / "student_best.avck",
                                    std::optional<fs::path>(tdir / "teacher_best.avck"), "val", wdir);
  CHECK(report.proposed.size() == 4);
  CHECK(report.naive.size() == 4);
  const std::string csv = read_text_file(wdir / "tradeoff.csv");
  CHECK(csv.rfind("F,latency_ratio,bleu3,bleu4,word_acc,fired_frac\n", 0) == 0);
  std::size_t lines = 0;
  for (char c : csv)
    if (c == '\n') ++lines;
  CHECK(lines == 5);
  for (std::size_t i = 1; i < report.proposed.size(); ++i)
    CHECK(report.proposed[i].latency_ratio >= report.proposed[i - 1].latency_ratio - 1e-12);

  // Determinism across repeat runs of a command.
  const fs::path edir2 = fresh_dir("avcap_cmd_eval2");
  cmd_eval(cfg, data, sdir / "student_best.avck", "val", edir2);
  CHECK(tree_digest(edir) == tree_digest(edir2));
}
