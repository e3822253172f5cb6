#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "fat/fat.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Federated alternate-training simulator on synthetic segmentation data"};
  app.require_subcommand(1);

  std::string config_path, out_path, out_dir, ckpt_path, data_path, eval_out;
  int jobs = 0;

  CLI::App* pre = app.add_subcommand("pretrain", "Train a warm-start checkpoint on the source task");
  pre->add_option("--config", config_path, "experiment config file")
      ->required()
      ->check(CLI::ExistingFile);
  pre->add_option("--out", out_path, "checkpoint file to write")->required();

  CLI::App* run = app.add_subcommand("run", "Run the configured federated experiment");
  run->add_option("--config", config_path, "experiment config file")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--out-dir", out_dir, "output directory (default: out_dir from the config)");
  run->add_option("--jobs", jobs, "parallel silo jobs per round (default: config value)")
      ->check(CLI::PositiveNumber);
  run->add_option("--data", data_path, "dataset bundle to use instead of generating")
      ->check(CLI::ExistingFile);

  CLI::App* ev = app.add_subcommand("evaluate", "Per-class Dice of a checkpoint on the test set");
  ev->add_option("--ckpt", ckpt_path, "checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--config", config_path, "experiment config file")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--data", data_path, "dataset bundle to evaluate on")->check(CLI::ExistingFile);
  ev->add_option("--out", eval_out, "report file (default: <ckpt>.dice.csv)");

  CLI::App* ex = app.add_subcommand("export-data", "Write the generated datasets to a bundle file");
  ex->add_option("--config", config_path, "experiment config file")
      ->required()
      ->check(CLI::ExistingFile);
  ex->add_option("--out", out_path, "bundle file to write")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const fat::ExperimentConfig cfg = fat::load_config_file(config_path);
    if (pre->parsed()) {
      fat::cmd_pretrain(cfg, out_path);
    } else if (run->parsed()) {
      fat::cmd_run(cfg, out_dir.empty() ? cfg.out_dir : out_dir, jobs, data_path);
    } else if (ev->parsed()) {
      fat::cmd_evaluate(ckpt_path, cfg, data_path,
                        eval_out.empty() ? ckpt_path + ".dice.csv" : eval_out);
    } else if (ex->parsed()) {
      fat::cmd_export_data(cfg, out_path);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
