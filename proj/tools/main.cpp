#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "avcap/commands.hpp"
#include "avcap/errors.hpp"

namespace {

// Exit codes: 0 success, 1 usage/config, 2 data, 3 training/numeric, 4 I/O.
int run(int argc, char** argv) {
  CLI::App app{"Low-latency audio-visual captioning"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, checkpoint, teacher, event_id, split = "val";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold;
  std::optional<std::size_t> beam;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value configuration file");
    cmd->add_option("--set", overrides, "override a config key, e.g. --set train.lr=0.001")->take_all();
    cmd->add_option("--seed", seed, "override the run seed");
    cmd->add_option("--out", out_dir, "output directory")->required();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen);

  CLI::App* tt = app.add_subcommand("train-teacher", "pretrain the full-clip captioner");
  add_common(tt);
  tt->add_option("--data", data_dir, "dataset directory")->required();

  CLI::App* ts = app.add_subcommand("train-student", "jointly train captioner and end detector");
  add_common(ts);
  ts->add_option("--data", data_dir, "dataset directory")->required();
  ts->add_option("--teacher", teacher, "teacher checkpoint (.avck)")->required();

  CLI::App* inf = app.add_subcommand("infer", "stream one event and emit its caption");
  add_common(inf);
  inf->add_option("--data", data_dir, "dataset directory")->required();
  inf->add_option("--checkpoint", checkpoint, "model checkpoint (.avck)")->required();
  inf->add_option("--event", event_id, "event id")->required();
  inf->add_option("--threshold", threshold, "firing threshold");
  inf->add_option("--beam", beam, "beam width (1 = greedy)");

  CLI::App* ev = app.add_subcommand("eval", "streamed evaluation at one threshold");
  add_common(ev);
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--checkpoint", checkpoint, "model checkpoint (.avck)")->required();
  ev->add_option("--threshold", threshold, "firing threshold");
  ev->add_option("--beam", beam, "beam width (1 = greedy)");
  ev->add_option("--split", split, "train or val");

  CLI::App* sw = app.add_subcommand("sweep", "latency/quality trade-off across thresholds");
  add_common(sw);
  sw->add_option("--data", data_dir, "dataset directory")->required();
  sw->add_option("--checkpoint", checkpoint, "model checkpoint (.avck)")->required();
  sw->add_option("--teacher", teacher, "baseline checkpoint for the naive rows");
  sw->add_option("--beam", beam, "beam width (1 = greedy)");
  sw->add_option("--split", split, "train or val");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage errors exit 1; --help exits 0
  }

  avcap::RunConfig cfg;
  if (!config_path.empty()) cfg.apply_file(config_path);
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw avcap::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (seed) cfg.seed = *seed;
  if (threshold) cfg.infer_threshold = *threshold;
  if (beam) cfg.beam_width = *beam;

  if (gen->parsed()) {
    avcap::cmd_gen_data(cfg, out_dir);
  } else if (tt->parsed()) {
    avcap::cmd_train_teacher(cfg, data_dir, out_dir);
  } else if (ts->parsed()) {
    avcap::cmd_train_student(cfg, data_dir, teacher, out_dir);
  } else if (inf->parsed()) {
    avcap::cmd_infer(cfg, data_dir, checkpoint, event_id, out_dir, std::cout);
  } else if (ev->parsed()) {
    avcap::cmd_eval(cfg, data_dir, checkpoint, split, out_dir);
  } else if (sw->parsed()) {
    std::optional<std::filesystem::path> baseline;
    if (!teacher.empty()) baseline = teacher;
    avcap::cmd_sweep(cfg, data_dir, checkpoint, baseline, split, out_dir);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const avcap::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const avcap::ContractError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const avcap::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const avcap::TrainError& e) {
    std::cerr << "training error: " << e.what() << '\n';
    return 3;
  } catch (const avcap::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const avcap::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
