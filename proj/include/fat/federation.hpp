#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "fat/data_synth.hpp"
#include "fat/dataset.hpp"
#include "fat/model.hpp"
#include "fat/rng.hpp"
#include "fat/trainers.hpp"

namespace fat {

enum class PhaseTag { Supervised, Unsupervised, Mixed };
enum class RunMode { FAT, FedAvgAll, SupervisedOnly, WeightedRamp, ThresholdSOTA, Centralized };

inline std::string phase_name(PhaseTag p) {
  switch (p) {
    case PhaseTag::Supervised: return "supervised";
    case PhaseTag::Unsupervised: return "unsupervised";
    default: return "mixed";
  }
}

inline std::string mode_name(RunMode m) {
  switch (m) {
    case RunMode::FAT: return "FAT";
    case RunMode::FedAvgAll: return "FedAvgAll";
    case RunMode::SupervisedOnly: return "SupervisedOnly";
    case RunMode::WeightedRamp: return "WeightedRamp";
    case RunMode::ThresholdSOTA: return "ThresholdSOTA";
    default: return "Centralized";
  }
}

inline RunMode parse_mode(const std::string& s) {
  for (RunMode m : {RunMode::FAT, RunMode::FedAvgAll, RunMode::SupervisedOnly,
                    RunMode::WeightedRamp, RunMode::ThresholdSOTA, RunMode::Centralized})
    if (mode_name(m) == s) return m;
  throw std::invalid_argument("unknown mode \"" + s + "\"");
}

struct FederationConfig {
  RunMode mode = RunMode::FAT;
  int total_rounds = 60;       // T
  int alternation_period = 5;  // A
  int eval_every = 5;
  int warmup_rounds = -1;  // ThresholdSOTA supervised warmup; -1 means T/6
  float confidence_threshold = 0.9f;
  LocalTrainConfig local;
  uint64_t seed = 0;
  int jobs = 1;
};

inline int effective_warmup(const FederationConfig& c) {
  return c.warmup_rounds < 0 ? c.total_rounds / 6 : c.warmup_rounds;
}

inline void validate_federation_config(const FederationConfig& c) {
  require(c.total_rounds >= 1, "federation: total_rounds must be >= 1");
  require(c.alternation_period >= 1, "federation: alternation_period must be >= 1");
  require(c.eval_every >= 1, "federation: eval_every must be >= 1");
  require(c.confidence_threshold > 0.0f && c.confidence_threshold < 1.0f,
          "federation: confidence_threshold outside (0,1)");
  require(effective_warmup(c) <= c.total_rounds, "federation: warmup exceeds total_rounds");
  require(c.jobs >= 1, "federation: jobs must be >= 1");
  validate_local_config(c.local);
}

/// Supervised for the first A of every 2A rounds, starting supervised at t=0.
inline PhaseTag phase_of(int t, int A) {
  require(t >= 0, "phase_of: negative round");
  require(A >= 1, "phase_of: alternation period must be >= 1");
  return (t % (2 * A)) < A ? PhaseTag::Supervised : PhaseTag::Unsupervised;
}

struct RoundPlan {
  int round = 0;
  PhaseTag phase = PhaseTag::Supervised;
  std::vector<int> participants;  // silo ids, ascending
  std::vector<double> weights;    // same order, positive, sum 1
};

inline void validate_round_plan(const RoundPlan& p) {
  require(!p.participants.empty(), "round plan: no participants");
  require(p.participants.size() == p.weights.size(), "round plan: weights do not match silos");
  require(std::is_sorted(p.participants.begin(), p.participants.end()),
          "round plan: participants must be ascending");
  double sum = 0.0;
  for (double w : p.weights) {
    require(w > 0.0, "round plan: weights must be positive");
    sum += w;
  }
  require(std::fabs(sum - 1.0) <= 1e-9, "round plan: weights sum to " + std::to_string(sum));
}

/// Sample-count weighted mean of models, accumulated in 64-bit.
inline ModelParams aggregate_weighted(const std::vector<ModelParams>& models,
                                      const std::vector<double>& weights) {
  require(!models.empty(), "aggregate: no models");
  require(models.size() == weights.size(), "aggregate: weights do not match models");
  for (const ModelParams& m : models) check_same_arch(models[0], m, "aggregate");
  std::vector<std::vector<double>> acc;
  auto first = model_tensors(models[0]);
  for (int i = 0; i < kModelTensorCount; ++i)
    acc.emplace_back(first[(size_t)i]->data.size(), 0.0);
  for (size_t k = 0; k < models.size(); ++k) {
    require(weights[k] > 0.0, "aggregate: weights must be positive");
    auto ts = model_tensors(models[k]);
    for (int i = 0; i < kModelTensorCount; ++i) {
      check_same_shape(*ts[(size_t)i], *first[(size_t)i], "aggregate");
      for (size_t j = 0; j < acc[(size_t)i].size(); ++j)
        acc[(size_t)i][j] += weights[k] * (double)ts[(size_t)i]->data[j];
    }
  }
  ModelParams out = models[0];
  auto os = model_tensors(out);
  for (int i = 0; i < kModelTensorCount; ++i)
    for (size_t j = 0; j < acc[(size_t)i].size(); ++j)
      os[(size_t)i]->data[j] = (float)acc[(size_t)i][j];
  return out;
}

inline ModelParams aggregate(const std::vector<ModelParams>& models,
                             const std::vector<int64_t>& sample_counts) {
  require(!models.empty(), "aggregate: no models");
  require(models.size() == sample_counts.size(), "aggregate: counts do not match models");
  int64_t total = 0;
  for (int64_t n : sample_counts) {
    require(n > 0, "aggregate: sample counts must be positive");
    total += n;
  }
  std::vector<double> weights;
  weights.reserve(sample_counts.size());
  for (int64_t n : sample_counts) weights.push_back((double)n / (double)total);
  return aggregate_weighted(models, weights);
}

/// exp(-5 (1 - t/(T-1))^2): e^-5 at t=0, exactly 1 at t=T-1, increasing.
inline double gaussian_rampup(int t, int total_rounds) {
  require(total_rounds >= 2, "gaussian_rampup: need at least 2 rounds");
  require(t >= 0 && t < total_rounds, "gaussian_rampup: round outside [0,T)");
  const double frac = (double)t / (double)(total_rounds - 1);
  return std::exp(-5.0 * (1.0 - frac) * (1.0 - frac));
}

struct MetricsRecord {
  int round = 0;
  PhaseTag phase = PhaseTag::Supervised;
  std::vector<double> dice;  // per class, pooled over the test set
  double mean_train_loss = 0.0;
  double wall_ms = 0.0;  // kept zero so run outputs are byte-stable
};

struct RunHistory {
  FederationConfig config;
  std::vector<MetricsRecord> records;
  ModelParams final_model;
  std::vector<double> round_wall_ms;  // measured, one entry per round
};

/// Pooled per-class Dice of argmax predictions over the whole test set.
inline std::vector<double> evaluate_model(const ModelParams& model, const SiloDataset& test) {
  validate_silo(test);
  require(test.labels.has_value(), "evaluate: test set has no labels");
  const int N = test.n_samples();
  LabelMap pred(N, test.images.dim(2), test.images.dim(3), model.arch.n_classes);
  const int64_t per = (int64_t)test.images.dim(2) * test.images.dim(3);
  constexpr int kChunk = 16;
  for (int at = 0; at < N; at += kChunk) {
    std::vector<int> idx;
    for (int i = at; i < std::min(N, at + kChunk); ++i) idx.push_back(i);
    const Tensor logits = model_forward(model, gather_batch(test.images, idx));
    const LabelMap chunk = pseudo_label(ops::softmax_channels(logits));
    std::copy(chunk.ids.begin(), chunk.ids.end(), pred.ids.begin() + (int64_t)at * per);
  }
  return dice_scores(pred, *test.labels);
}

namespace detail {

template <class Fn>
void parallel_for_indices(int n, int jobs, Fn&& fn) {
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors((size_t)n);
  std::vector<std::thread> workers;
  workers.reserve((size_t)jobs);
  for (int w = 0; w < jobs; ++w)
    workers.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          errors[(size_t)i] = std::current_exception();
        }
      }
    });
  for (std::thread& t : workers) t.join();
  for (std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

struct SiloIndex {
  std::vector<int> supervised;    // indices into the silo vector, id-ascending
  std::vector<int> unsupervised;
  std::vector<int> all;
};

inline SiloIndex index_silos(const std::vector<SiloDataset>& silos) {
  require(!silos.empty(), "federation: no silos");
  SiloIndex ix;
  std::vector<int> order((size_t)silos.size());
  for (size_t i = 0; i < silos.size(); ++i) order[i] = (int)i;
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return silos[(size_t)a].silo_id < silos[(size_t)b].silo_id; });
  for (size_t k = 1; k < order.size(); ++k)
    require(silos[(size_t)order[k - 1]].silo_id != silos[(size_t)order[k]].silo_id,
            "federation: duplicate silo id");
  for (int i : order) {
    validate_silo(silos[(size_t)i]);
    ix.all.push_back(i);
    (silos[(size_t)i].supervised ? ix.supervised : ix.unsupervised).push_back(i);
  }
  require(!ix.supervised.empty(), "federation: need at least one supervised silo");
  return ix;
}

inline RoundPlan plan_for(const FederationConfig& cfg, const std::vector<SiloDataset>& silos,
                          const SiloIndex& ix, int t, const std::vector<int>** members) {
  RoundPlan plan;
  plan.round = t;
  auto fill_counts = [&](const std::vector<int>& group) {
    int64_t total = 0;
    for (int i : group) total += silos[(size_t)i].n_samples();
    for (int i : group) {
      plan.participants.push_back(silos[(size_t)i].silo_id);
      plan.weights.push_back((double)silos[(size_t)i].n_samples() / (double)total);
    }
  };
  switch (cfg.mode) {
    case RunMode::FAT: {
      plan.phase = phase_of(t, cfg.alternation_period);
      const std::vector<int>& group =
          plan.phase == PhaseTag::Supervised ? ix.supervised : ix.unsupervised;
      fill_counts(group);
      *members = &group;
      break;
    }
    case RunMode::SupervisedOnly: {
      plan.phase = PhaseTag::Supervised;
      fill_counts(ix.supervised);
      *members = &ix.supervised;
      break;
    }
    case RunMode::FedAvgAll: {
      plan.phase = PhaseTag::Mixed;
      fill_counts(ix.all);
      *members = &ix.all;
      break;
    }
    case RunMode::ThresholdSOTA: {
      const bool warm = t < effective_warmup(cfg);
      plan.phase = warm ? PhaseTag::Supervised : PhaseTag::Mixed;
      fill_counts(warm ? ix.supervised : ix.all);
      *members = warm ? &ix.supervised : &ix.all;
      break;
    }
    case RunMode::WeightedRamp: {
      plan.phase = PhaseTag::Mixed;
      const double eta = gaussian_rampup(t, cfg.total_rounds);
      double total = 0.0;
      for (int i : ix.all)
        total += (silos[(size_t)i].supervised ? 1.0 : eta) * silos[(size_t)i].n_samples();
      for (int i : ix.all) {
        plan.participants.push_back(silos[(size_t)i].silo_id);
        plan.weights.push_back((silos[(size_t)i].supervised ? 1.0 : eta) *
                               silos[(size_t)i].n_samples() / total);
      }
      *members = &ix.all;
      break;
    }
    default:
      throw std::invalid_argument("plan_for: centralized runs have no round plan");
  }
  validate_round_plan(plan);
  if (cfg.mode == RunMode::FAT)
    for (int i : **members)
      require(silos[(size_t)i].supervised == (plan.phase == PhaseTag::Supervised),
              "round plan: mixed supervision inside a phase");
  return plan;
}

}  // namespace detail

/// Pool every silo's samples (with ground truth everywhere) into one
/// supervised dataset; the centralized skyline trains on this directly.
inline SiloDataset pool_silos(const std::vector<SiloDataset>& silos) {
  detail::SiloIndex ix = detail::index_silos(silos);
  int n = 0, max_id = 0;
  for (const SiloDataset& s : silos) {
    n += s.n_samples();
    max_id = std::max(max_id, s.silo_id);
  }
  const SiloDataset& first = silos[(size_t)ix.all[0]];
  const int H = first.images.dim(2), W = first.images.dim(3);
  SiloDataset pooled;
  pooled.silo_id = max_id + 2;
  pooled.supervised = true;
  pooled.images = Tensor::zeros({n, first.images.dim(1), H, W});
  int n_classes = 0;
  for (int i : ix.all) {
    const SiloDataset sv = supervised_view(silos[(size_t)i]);
    n_classes = std::max(n_classes, sv.labels->n_classes);
  }
  LabelMap labels(n, H, W, n_classes);
  int64_t at = 0;
  const int64_t per_img = (int64_t)first.images.dim(1) * H * W;
  const int64_t per_lab = (int64_t)H * W;
  for (int i : ix.all) {
    const SiloDataset sv = supervised_view(silos[(size_t)i]);
    require(sv.images.dim(1) == first.images.dim(1) && sv.images.dim(2) == H &&
                sv.images.dim(3) == W,
            "pool_silos: silo " + std::to_string(sv.silo_id) + " images " +
                shape_str(sv.images.shape) + " do not match " + shape_str(first.images.shape));
    std::copy(sv.images.data.begin(), sv.images.data.end(),
              pooled.images.data.begin() + at * per_img);
    std::copy(sv.labels->ids.begin(), sv.labels->ids.end(), labels.ids.begin() + at * per_lab);
    at += sv.n_samples();
  }
  pooled.labels = labels;
  pooled.diagnostic_labels = std::move(labels);
  validate_silo(pooled);
  return pooled;
}

/// Shared round loop for every federated mode plus the centralized skyline.
/// Per-silo randomness always derives from (seed, silo id, round), so results
/// cannot depend on scheduling; the centralized path instead carries one
/// stream across rounds, making T rounds of E epochs equal one long run.
inline RunHistory run_federation(const FederationConfig& cfg,
                                 const std::vector<SiloDataset>& silos,
                                 const ModelParams& theta0, const SiloDataset& test) {
  validate_federation_config(cfg);
  detail::SiloIndex ix = detail::index_silos(silos);
  if (cfg.mode == RunMode::FAT)
    require(!ix.unsupervised.empty(),
            "federation: FAT needs at least one unsupervised silo (use FedAvgAll otherwise)");
  RunHistory history;
  history.config = cfg;
  ModelParams global = theta0;

  SiloDataset pooled;
  RngStream central_stream(substream_id(cfg.seed, {kStreamCentral}));
  if (cfg.mode == RunMode::Centralized) pooled = pool_silos(silos);

  for (int t = 0; t < cfg.total_rounds; ++t) {
    const auto start = std::chrono::steady_clock::now();
    PhaseTag phase = PhaseTag::Mixed;
    double loss_sum = 0.0;
    int64_t loss_steps = 0;

    if (cfg.mode == RunMode::Centralized) {
      TrainStats stats;
      global = supervised_training(pooled, global, cfg.local, central_stream, &stats);
      loss_sum = stats.loss_sum;
      loss_steps = stats.steps;
    } else {
      const std::vector<int>* members = nullptr;
      const RoundPlan plan = detail::plan_for(cfg, silos, ix, t, &members);
      phase = plan.phase;
      const int n = (int)members->size();
      std::vector<ModelParams> results((size_t)n);
      std::vector<TrainStats> stats((size_t)n);
      detail::parallel_for_indices(n, cfg.jobs, [&](int k) {
        const SiloDataset& silo = silos[(size_t)(*members)[(size_t)k]];
        LocalTrainConfig local = cfg.local;
        local.seed = substream_id(cfg.seed, {kStreamSilo, (uint64_t)silo.silo_id, (uint64_t)t});
        switch (cfg.mode) {
          case RunMode::FAT:
          case RunMode::WeightedRamp:
            results[(size_t)k] =
                silo.supervised
                    ? supervised_training(silo, global, local, &stats[(size_t)k])
                    : unsupervised_training(silo, global, local, &stats[(size_t)k]);
            break;
          case RunMode::SupervisedOnly:
            results[(size_t)k] = supervised_training(silo, global, local, &stats[(size_t)k]);
            break;
          case RunMode::FedAvgAll:
            results[(size_t)k] = supervised_training(
                silo.supervised ? silo : supervised_view(silo), global, local,
                &stats[(size_t)k]);
            break;
          case RunMode::ThresholdSOTA:
            results[(size_t)k] =
                silo.supervised
                    ? supervised_training(silo, global, local, &stats[(size_t)k])
                    : threshold_selftrain(silo, global, local, cfg.confidence_threshold,
                                          &stats[(size_t)k]);
            break;
          default:
            break;
        }
      });
      global = aggregate_weighted(results, plan.weights);
      for (const TrainStats& s : stats) {
        loss_sum += s.loss_sum;
        loss_steps += s.steps;
      }
    }

    const auto stop = std::chrono::steady_clock::now();
    history.round_wall_ms.push_back(
        std::chrono::duration<double, std::milli>(stop - start).count());

    if (t % cfg.eval_every == 0 || t == cfg.total_rounds - 1) {
      MetricsRecord rec;
      rec.round = t;
      rec.phase = phase;
      rec.dice = evaluate_model(global, test);
      rec.mean_train_loss = loss_steps ? loss_sum / (double)loss_steps : 0.0;
      history.records.push_back(std::move(rec));
    }
  }
  history.final_model = global;
  return history;
}

inline RunHistory run_fat(const FederationConfig& cfg, const std::vector<SiloDataset>& silos,
                          const ModelParams& theta0, const SiloDataset& test) {
  require(cfg.mode == RunMode::FAT, "run_fat: config mode is " + mode_name(cfg.mode));
  return run_federation(cfg, silos, theta0, test);
}

inline RunHistory run_weighted_ramp(const FederationConfig& cfg,
                                    const std::vector<SiloDataset>& silos,
                                    const ModelParams& theta0, const SiloDataset& test) {
  require(cfg.mode == RunMode::WeightedRamp,
          "run_weighted_ramp: config mode is " + mode_name(cfg.mode));
  return run_federation(cfg, silos, theta0, test);
}

inline RunHistory run_baseline(const FederationConfig& cfg, const std::vector<SiloDataset>& silos,
                               const ModelParams& theta0, const SiloDataset& test) {
  require(cfg.mode == RunMode::FedAvgAll || cfg.mode == RunMode::SupervisedOnly ||
              cfg.mode == RunMode::ThresholdSOTA || cfg.mode == RunMode::Centralized,
          "run_baseline: config mode is " + mode_name(cfg.mode));
  return run_federation(cfg, silos, theta0, test);
}

}  // namespace fat
