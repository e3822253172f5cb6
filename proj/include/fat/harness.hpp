#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "fat/config.hpp"
#include "fat/data_synth.hpp"
#include "fat/federation.hpp"
#include "fat/model.hpp"
#include "fat/serialize.hpp"
#include "fat/trainers.hpp"

namespace fat {

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

/// Fixed schema: round,phase,mode,seed,dice_class0..dice_class{C-1},
/// mean_train_loss,wall_ms. The wall_ms column is always zero so identical
/// configs yield identical bytes; measured times live in RunHistory and go
/// to stderr.
inline std::string metrics_csv(const RunHistory& h) {
  const int C = h.final_model.arch.n_classes;
  std::string out = "round,phase,mode,seed";
  for (int c = 0; c < C; ++c) out += ",dice_class" + std::to_string(c);
  out += ",mean_train_loss,wall_ms\n";
  for (const MetricsRecord& r : h.records) {
    out += std::to_string(r.round);
    out += "," + phase_name(r.phase);
    out += "," + mode_name(h.config.mode);
    out += "," + std::to_string(h.config.seed);
    for (double d : r.dice) out += "," + fixed6(d);
    out += "," + fixed6(r.mean_train_loss);
    out += "," + fixed6(r.wall_ms);
    out += "\n";
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write " + path);
  out << text;
  out.flush();
  require(out.good(), "write to " + path + " failed");
}

/// Training silos plus test set, generated from the spec or loaded from a
/// pinned bundle file.
inline DatasetBundle build_datasets(const ExperimentConfig& cfg, const std::string& data_path) {
  if (!data_path.empty()) return load_dataset_bundle(data_path);
  const DatasetSpec spec = dataset_spec(cfg);
  DatasetBundle b;
  for (int k = 0; k < spec.n_silos; ++k) b.silos.push_back(generate_silo(spec, k));
  b.test = generate_test_set(spec);
  return b;
}

inline ModelParams initial_model(const ExperimentConfig& cfg) {
  const ArchDescriptor arch = arch_of(cfg);
  if (cfg.pretrain_checkpoint.empty())
    return init_model(arch, substream_id(cfg.seed, {kStreamInit}));
  std::string provenance;
  ModelParams m = load_checkpoint(cfg.pretrain_checkpoint, &provenance);
  require(same_arch(m.arch, arch),
          "checkpoint " + cfg.pretrain_checkpoint + " was trained for another architecture");
  std::cerr << "warm start from " << cfg.pretrain_checkpoint << " (" << provenance << ")\n";
  return m;
}

/// Central training on the rectangle source task; writes the warm-start
/// checkpoint and returns its provenance string.
inline std::string cmd_pretrain(const ExperimentConfig& cfg, const std::string& out_path) {
  validate_experiment(cfg);
  const DatasetSpec spec = dataset_spec(cfg);
  const SiloDataset source = generate_pretrain_source(spec);
  ModelParams model = init_model(arch_of(cfg), substream_id(cfg.seed, {kStreamInit}));
  RngStream stream(substream_id(cfg.seed, {kStreamPretrain}));
  LocalTrainConfig local = cfg.train;
  TrainStats stats;
  for (int round = 0; round < cfg.pretrain_rounds; ++round)
    model = supervised_training(source, model, local, stream, &stats);
  const std::string provenance = "source=rect-synthetic;rounds=" +
                                 std::to_string(cfg.pretrain_rounds) +
                                 ";seed=" + std::to_string(cfg.seed);
  save_checkpoint(model, provenance, out_path);
  std::cout << "pretrained " << cfg.pretrain_rounds << " rounds on " << source.n_samples()
            << " source samples, mean loss " << fixed6(stats.mean_loss()) << "\n";
  std::cout << "checkpoint written to " << out_path << "\n";
  return provenance;
}

/// Executes the configured mode end to end; writes metrics.csv, final.ckpt
/// and a canonical config echo into out_dir.
inline RunHistory cmd_run(const ExperimentConfig& cfg, const std::string& out_dir, int jobs,
                          const std::string& data_path = "") {
  validate_experiment(cfg);
  require(!out_dir.empty(), "run: output directory must not be empty");
  DatasetBundle data = build_datasets(cfg, data_path);
  FederationConfig fed = federation_config(cfg);
  if (jobs > 0) fed.jobs = jobs;
  const ModelParams theta0 = initial_model(cfg);
  RunHistory history = run_federation(fed, data.silos, theta0, data.test);

  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir + "/metrics.csv", metrics_csv(history));
  const std::string provenance = "mode=" + mode_name(cfg.mode) +
                                 ";rounds=" + std::to_string(cfg.total_rounds) +
                                 ";seed=" + std::to_string(cfg.seed);
  save_checkpoint(history.final_model, provenance, out_dir + "/final.ckpt");
  ExperimentConfig echo = cfg;
  echo.out_dir = out_dir;
  save_config_file(echo, out_dir + "/config.cfg");

  double total_ms = 0.0;
  for (double ms : history.round_wall_ms) total_ms += ms;
  std::cerr << mode_name(cfg.mode) << " seed " << cfg.seed << ": " << cfg.total_rounds
            << " rounds in " << fixed6(total_ms) << " ms\n";
  const MetricsRecord& last = history.records.back();
  std::cout << "final round " << last.round;
  for (size_t c = 0; c < last.dice.size(); ++c)
    std::cout << " dice_class" << c << "=" << fixed6(last.dice[(size_t)c]);
  std::cout << "\n";
  return history;
}

/// Per-class Dice of a saved model over the test set; prints one line per
/// class and writes the same as CSV.
inline std::vector<double> cmd_evaluate(const std::string& ckpt_path, const ExperimentConfig& cfg,
                                        const std::string& data_path,
                                        const std::string& out_path) {
  validate_experiment(cfg);
  std::string provenance;
  const ModelParams model = load_checkpoint(ckpt_path, &provenance);
  require(same_arch(model.arch, arch_of(cfg)),
          "checkpoint " + ckpt_path + " was trained for another architecture");
  SiloDataset test;
  if (data_path.empty())
    test = generate_test_set(dataset_spec(cfg));
  else
    test = load_dataset_bundle(data_path).test;
  const std::vector<double> dice = evaluate_model(model, test);
  std::string csv = "class,dice\n";
  for (size_t c = 0; c < dice.size(); ++c) {
    std::cout << "dice_class" << c << " = " << fixed6(dice[c]) << "\n";
    csv += std::to_string(c) + "," + fixed6(dice[c]) + "\n";
  }
  write_text_file(out_path, csv);
  return dice;
}

/// Pins the generated datasets to a bundle file for exact replay.
inline void cmd_export_data(const ExperimentConfig& cfg, const std::string& out_path) {
  validate_experiment(cfg);
  const DatasetBundle data = build_datasets(cfg, "");
  save_dataset_bundle(data.silos, data.test, out_path);
  std::cout << "wrote " << data.silos.size() << " silos + test set to " << out_path << "\n";
}

}  // namespace fat
