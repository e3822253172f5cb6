#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fat/data_synth.hpp"
#include "fat/federation.hpp"
#include "fat/tensor.hpp"
#include "fat/trainers.hpp"

namespace fat {

/// One experiment, one file. The writer emits sections and keys in one fixed
/// order, so parse -> write is byte-stable; the parser accepts comments (#),
/// blank lines and missing keys (which keep their defaults) but rejects
/// unknown keys.
struct ExperimentConfig {
  RunMode mode = RunMode::FAT;
  uint64_t seed = 1;
  int total_rounds = 60;
  int alternation_period = 5;
  int eval_every = 5;
  int warmup_rounds = -1;  // ThresholdSOTA; -1 means total_rounds/6
  double confidence_threshold = 0.9;
  int jobs = 1;
  std::string pretrain_checkpoint;  // empty = random init
  std::string out_dir = "runs/out";
  int base_width = 8;
  LocalTrainConfig train;
  DatasetSpec data;
  int pretrain_rounds = 40;
};

namespace cfgio {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

template <class T>
std::string fmt_num(T v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string fmt_bool(bool v) { return v ? "true" : "false"; }

template <class T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt_num(v[i]);
  }
  return out;
}

template <class T>
T parse_num(const std::string& value, const std::string& key) {
  T out{};
  const std::string v = trim(value);
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  require(res.ec == std::errc() && res.ptr == v.data() + v.size(),
          "config: bad number for " + key + ": \"" + value + "\"");
  return out;
}

inline bool parse_bool(const std::string& value, const std::string& key) {
  const std::string v = trim(value);
  if (v == "true") return true;
  if (v == "false") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": \"" + value + "\"");
}

template <class T>
std::vector<T> parse_list(const std::string& value, const std::string& key) {
  std::vector<T> out;
  std::string v = trim(value);
  if (v.empty()) return out;
  size_t at = 0;
  while (true) {
    const size_t comma = v.find(',', at);
    const std::string item = v.substr(at, comma == std::string::npos ? comma : comma - at);
    out.push_back(parse_num<T>(item, key));
    if (comma == std::string::npos) break;
    at = comma + 1;
  }
  return out;
}

}  // namespace cfgio

inline std::string write_config(const ExperimentConfig& c) {
  using namespace cfgio;
  std::ostringstream o;
  o << "[experiment]\n";
  o << "mode = " << mode_name(c.mode) << "\n";
  o << "seed = " << fmt_num(c.seed) << "\n";
  o << "total_rounds = " << fmt_num(c.total_rounds) << "\n";
  o << "alternation_period = " << fmt_num(c.alternation_period) << "\n";
  o << "eval_every = " << fmt_num(c.eval_every) << "\n";
  o << "warmup_rounds = " << fmt_num(c.warmup_rounds) << "\n";
  o << "confidence_threshold = " << fmt_num(c.confidence_threshold) << "\n";
  o << "jobs = " << fmt_num(c.jobs) << "\n";
  o << "pretrain_checkpoint = " << c.pretrain_checkpoint << "\n";
  o << "out_dir = " << c.out_dir << "\n";
  o << "\n[model]\n";
  o << "base_width = " << fmt_num(c.base_width) << "\n";
  o << "\n[train]\n";
  o << "epochs = " << fmt_num(c.train.epochs) << "\n";
  o << "batch_size = " << fmt_num(c.train.batch_size) << "\n";
  o << "lr_theta = " << fmt_num(c.train.lr_theta) << "\n";
  o << "lr_xi = " << fmt_num(c.train.lr_xi) << "\n";
  o << "ema_decay = " << fmt_num(c.train.ema_decay) << "\n";
  o << "mixup_lo = " << fmt_num(c.train.mixup_lo) << "\n";
  o << "mixup_hi = " << fmt_num(c.train.mixup_hi) << "\n";
  o << "dice_include_background = " << fmt_bool(c.train.dice_include_background) << "\n";
  o << "intensity_level = " << fmt_num(c.train.intensity_level) << "\n";
  o << "\n[data]\n";
  o << "n_silos = " << fmt_num(c.data.n_silos) << "\n";
  o << "supervised_ids = " << fmt_list(c.data.supervised_ids) << "\n";
  o << "samples_per_silo = " << fmt_list(c.data.samples_per_silo) << "\n";
  o << "image_size = " << fmt_num(c.data.image_size) << "\n";
  o << "n_classes = " << fmt_num(c.data.n_classes) << "\n";
  o << "test_samples = " << fmt_num(c.data.test_samples) << "\n";
  o << "pretrain_samples = " << fmt_num(c.data.pretrain_samples) << "\n";
  o << "intensity_offsets = " << fmt_list(c.data.intensity_offsets) << "\n";
  o << "tumor_freqs = " << fmt_list(c.data.tumor_freqs) << "\n";
  o << "organ_r_lo = " << fmt_num(c.data.organ_r_lo) << "\n";
  o << "organ_r_hi = " << fmt_num(c.data.organ_r_hi) << "\n";
  o << "noise_level = " << fmt_num(c.data.noise_level) << "\n";
  o << "organ_intensity = " << fmt_num(c.data.organ_intensity) << "\n";
  o << "tumor_intensity = " << fmt_num(c.data.tumor_intensity) << "\n";
  o << "\n[pretrain]\n";
  o << "rounds = " << fmt_num(c.pretrain_rounds) << "\n";
  return o.str();
}

inline ExperimentConfig parse_config(const std::string& text) {
  using namespace cfgio;
  ExperimentConfig c;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = line.substr(1, line.size() - 2);
      require(section == "experiment" || section == "model" || section == "train" ||
                  section == "data" || section == "pretrain",
              "config: unknown section [" + section + "]");
      continue;
    }
    const size_t eq = line.find('=');
    require(eq != std::string::npos,
            "config: line " + std::to_string(line_no) + " is not key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string qual = section + "." + key;
    if (qual == "experiment.mode") c.mode = parse_mode(value);
    else if (qual == "experiment.seed") c.seed = parse_num<uint64_t>(value, qual);
    else if (qual == "experiment.total_rounds") c.total_rounds = parse_num<int>(value, qual);
    else if (qual == "experiment.alternation_period") c.alternation_period = parse_num<int>(value, qual);
    else if (qual == "experiment.eval_every") c.eval_every = parse_num<int>(value, qual);
    else if (qual == "experiment.warmup_rounds") c.warmup_rounds = parse_num<int>(value, qual);
    else if (qual == "experiment.confidence_threshold") c.confidence_threshold = parse_num<double>(value, qual);
    else if (qual == "experiment.jobs") c.jobs = parse_num<int>(value, qual);
    else if (qual == "experiment.pretrain_checkpoint") c.pretrain_checkpoint = value;
    else if (qual == "experiment.out_dir") c.out_dir = value;
    else if (qual == "model.base_width") c.base_width = parse_num<int>(value, qual);
    else if (qual == "train.epochs") c.train.epochs = parse_num<int>(value, qual);
    else if (qual == "train.batch_size") c.train.batch_size = parse_num<int>(value, qual);
    else if (qual == "train.lr_theta") c.train.lr_theta = parse_num<double>(value, qual);
    else if (qual == "train.lr_xi") c.train.lr_xi = parse_num<double>(value, qual);
    else if (qual == "train.ema_decay") c.train.ema_decay = parse_num<double>(value, qual);
    else if (qual == "train.mixup_lo") c.train.mixup_lo = parse_num<float>(value, qual);
    else if (qual == "train.mixup_hi") c.train.mixup_hi = parse_num<float>(value, qual);
    else if (qual == "train.dice_include_background") c.train.dice_include_background = parse_bool(value, qual);
    else if (qual == "train.intensity_level") c.train.intensity_level = parse_num<float>(value, qual);
    else if (qual == "data.n_silos") c.data.n_silos = parse_num<int>(value, qual);
    else if (qual == "data.supervised_ids") c.data.supervised_ids = parse_list<int>(value, qual);
    else if (qual == "data.samples_per_silo") c.data.samples_per_silo = parse_list<int>(value, qual);
    else if (qual == "data.image_size") c.data.image_size = parse_num<int>(value, qual);
    else if (qual == "data.n_classes") c.data.n_classes = parse_num<int>(value, qual);
    else if (qual == "data.test_samples") c.data.test_samples = parse_num<int>(value, qual);
    else if (qual == "data.pretrain_samples") c.data.pretrain_samples = parse_num<int>(value, qual);
    else if (qual == "data.intensity_offsets") c.data.intensity_offsets = parse_list<float>(value, qual);
    else if (qual == "data.tumor_freqs") c.data.tumor_freqs = parse_list<float>(value, qual);
    else if (qual == "data.organ_r_lo") c.data.organ_r_lo = parse_num<float>(value, qual);
    else if (qual == "data.organ_r_hi") c.data.organ_r_hi = parse_num<float>(value, qual);
    else if (qual == "data.noise_level") c.data.noise_level = parse_num<float>(value, qual);
    else if (qual == "data.organ_intensity") c.data.organ_intensity = parse_num<float>(value, qual);
    else if (qual == "data.tumor_intensity") c.data.tumor_intensity = parse_num<float>(value, qual);
    else if (qual == "pretrain.rounds") c.pretrain_rounds = parse_num<int>(value, qual);
    else throw std::invalid_argument("config: unknown key " + qual);
  }
  return c;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

inline void save_config_file(const ExperimentConfig& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "config: cannot write " + path);
  out << write_config(c);
  require(out.good(), "config: write to " + path + " failed");
}

inline ArchDescriptor arch_of(const ExperimentConfig& c) {
  return ArchDescriptor{1, c.base_width, c.data.n_classes};
}

inline DatasetSpec dataset_spec(const ExperimentConfig& c) {
  DatasetSpec d = c.data;
  d.seed = c.seed;
  return d;
}

inline FederationConfig federation_config(const ExperimentConfig& c) {
  FederationConfig f;
  f.mode = c.mode;
  f.total_rounds = c.total_rounds;
  f.alternation_period = c.alternation_period;
  f.eval_every = c.eval_every;
  f.warmup_rounds = c.warmup_rounds;
  f.confidence_threshold = (float)c.confidence_threshold;
  f.local = c.train;
  f.seed = c.seed;
  f.jobs = c.jobs;
  return f;
}

inline void validate_experiment(const ExperimentConfig& c) {
  validate_arch(arch_of(c));
  validate_dataset_spec(dataset_spec(c));
  validate_federation_config(federation_config(c));
  require(c.pretrain_rounds >= 1, "config: pretrain.rounds must be >= 1");
  require(!c.out_dir.empty(), "config: out_dir must not be empty");
  for (int n : c.data.samples_per_silo)
    require(n >= 2 * c.train.batch_size,
            "config: every silo needs at least 2*batch_size samples, got " + std::to_string(n));
  require(c.data.image_size >= 8, "config: image_size too small for the model");
}

}  // namespace fat
