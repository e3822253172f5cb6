#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fat/augment.hpp"
#include "fat/autodiff.hpp"
#include "fat/dataset.hpp"
#include "fat/losses.hpp"
#include "fat/model.hpp"
#include "fat/rng.hpp"

namespace fat {

struct LocalTrainConfig {
  int epochs = 2;
  int batch_size = 4;
  double lr_theta = 5e-2;
  double lr_xi = 5e-2;
  double ema_decay = 0.99;
  // lambda ~ Uniform(mixup_lo, mixup_hi) per step; equal bounds pin it.
  float mixup_lo = 0.3f;
  float mixup_hi = 0.7f;
  bool dice_include_background = true;
  float intensity_level = 0.9f;
  uint64_t seed = 0;
};

inline void validate_local_config(const LocalTrainConfig& c) {
  require(c.epochs >= 1, "train config: epochs must be >= 1");
  require(c.batch_size >= 1, "train config: batch_size must be >= 1");
  // Zero is allowed so a no-op pass stays expressible; negative rates are not.
  require(c.lr_theta >= 0.0 && c.lr_xi >= 0.0, "train config: learning rates must be >= 0");
  require(c.ema_decay > 0.0 && c.ema_decay < 1.0, "train config: ema_decay outside (0,1)");
  require(c.mixup_lo > 0.0f && c.mixup_hi < 1.0f && c.mixup_lo <= c.mixup_hi,
          "train config: mixup bounds must satisfy 0 < lo <= hi < 1");
  require(c.intensity_level >= 0.0f, "train config: intensity_level must be >= 0");
}

struct TrainStats {
  double loss_sum = 0.0;
  int64_t steps = 0;

  double mean_loss() const { return steps ? loss_sum / (double)steps : 0.0; }
};

/// theta <- tau*theta + (1-tau)*xi, evaluated as theta + (1-tau)*(xi-theta)
/// in double so xi == theta returns theta bit for bit and every element stays
/// inside [min(theta,xi), max(theta,xi)].
inline ModelParams ema_update(const ModelParams& theta, const ModelParams& xi, double tau) {
  require(tau > 0.0 && tau < 1.0, "ema_update: tau outside (0,1)");
  check_same_arch(theta, xi, "ema_update");
  ModelParams out = theta;
  auto os = model_tensors(out);
  auto xs = model_tensors(xi);
  for (int i = 0; i < kModelTensorCount; ++i) {
    check_same_shape(*xs[(size_t)i], *os[(size_t)i], "ema_update");
    for (size_t j = 0; j < os[(size_t)i]->data.size(); ++j) {
      const double t = os[(size_t)i]->data[j];
      const double x = xs[(size_t)i]->data[j];
      os[(size_t)i]->data[j] = (float)(t + (1.0 - tau) * (x - t));
    }
  }
  return out;
}

namespace detail {

/// One taped SGD step of Dice+CE against `labels`; returns the step loss.
inline double dice_ce_step(ModelParams& params, const Tensor& x, const LabelMap& labels,
                           const std::vector<uint8_t>* mask, bool include_background, double lr) {
  GradTape tape;
  TapedForward f = model_forward(tape, params, x);
  const int probs = tape.softmax_channels(f.logits_id);
  const int dl = soft_dice_loss(tape, probs, labels, include_background, 1e-5, mask);
  const int ce = cross_entropy(tape, probs, labels, mask);
  const int loss = tape.add(dl, ce);
  tape.backward(loss);
  ModelParams grads = zeros_like(params);
  add_param_grads(tape, f, grads);
  apply_sgd(params, grads, lr);
  return (double)tape.scalar(loss);
}

inline std::vector<int> slice(const std::vector<int>& order, int begin, int count) {
  return std::vector<int>(order.begin() + begin, order.begin() + begin + count);
}

}  // namespace detail

/// Pixels whose maximum probability reaches `threshold`.
inline std::vector<uint8_t> confidence_mask(const Tensor& probs, float threshold) {
  require(probs.rank() == 4, "confidence_mask: probs must be 4-d");
  const int B = probs.dim(0), C = probs.dim(1);
  const int64_t plane = (int64_t)probs.dim(2) * probs.dim(3);
  std::vector<uint8_t> mask((size_t)(B * plane), 0);
  for (int b = 0; b < B; ++b)
    for (int64_t i = 0; i < plane; ++i) {
      float best = probs.data[(size_t)((int64_t)b * C * plane + i)];
      for (int c = 1; c < C; ++c)
        best = std::max(best, probs.data[(size_t)(((int64_t)b * C + c) * plane + i)]);
      mask[(size_t)((int64_t)b * plane + i)] = best >= threshold ? 1 : 0;
    }
  return mask;
}

/// E epochs of mini-batch SGD on ground-truth labels. Batch order is a fresh
/// seeded shuffle per epoch; trailing samples that do not fill a batch are
/// skipped that epoch.
inline ModelParams supervised_training(const SiloDataset& silo, ModelParams theta,
                                       const LocalTrainConfig& cfg, RngStream& rng,
                                       TrainStats* stats = nullptr) {
  validate_silo(silo);
  validate_local_config(cfg);
  require(silo.supervised, "supervised_training: silo " + std::to_string(silo.silo_id) +
                               " carries no labels");
  const int N = silo.n_samples();
  require(N >= cfg.batch_size, "supervised_training: silo smaller than one batch");
  for (int e = 0; e < cfg.epochs; ++e) {
    const std::vector<int> order = rng.shuffled_indices(N);
    for (int at = 0; at + cfg.batch_size <= N; at += cfg.batch_size) {
      const std::vector<int> idx = detail::slice(order, at, cfg.batch_size);
      const Tensor x = gather_batch(silo.images, idx);
      const LabelMap y = gather_labels(*silo.labels, idx);
      const double loss =
          detail::dice_ce_step(theta, x, y, nullptr, cfg.dice_include_background, cfg.lr_theta);
      if (stats) {
        stats->loss_sum += loss;
        ++stats->steps;
      }
    }
  }
  return theta;
}

inline ModelParams supervised_training(const SiloDataset& silo, const ModelParams& theta,
                                       const LocalTrainConfig& cfg, TrainStats* stats = nullptr) {
  RngStream rng(cfg.seed);
  return supervised_training(silo, theta, cfg, rng, stats);
}

/// Online/target pair: xi trains by SGD on pseudo-labels from the mixed
/// target outputs, the target follows xi by EMA after every step, and the
/// target is what goes back to the server. Each step consumes two disjoint
/// batches; an epoch ends when fewer than two batches remain.
inline ModelParams unsupervised_training(const SiloDataset& silo, const ModelParams& theta_global,
                                         const LocalTrainConfig& cfg, RngStream& rng,
                                         TrainStats* stats = nullptr) {
  validate_silo(silo);
  validate_local_config(cfg);
  require(!silo.supervised, "unsupervised_training: silo " + std::to_string(silo.silo_id) +
                                " is supervised");
  const int N = silo.n_samples();
  require(N >= 2 * cfg.batch_size,
          "unsupervised_training: need at least two batches of samples, silo " +
              std::to_string(silo.silo_id) + " holds " + std::to_string(N));
  ModelParams xi = theta_global;
  ModelParams theta = theta_global;
  for (int e = 0; e < cfg.epochs; ++e) {
    const std::vector<int> order = rng.shuffled_indices(N);
    for (int at = 0; at + 2 * cfg.batch_size <= N; at += 2 * cfg.batch_size) {
      const Tensor x1 = gather_batch(silo.images, detail::slice(order, at, cfg.batch_size));
      const Tensor x2 =
          gather_batch(silo.images, detail::slice(order, at + cfg.batch_size, cfg.batch_size));
      const float lambda =
          cfg.mixup_lo == cfg.mixup_hi ? cfg.mixup_lo : (float)rng.uniform(cfg.mixup_lo, cfg.mixup_hi);
      const Tensor x_mixed = mixup(x1, x2, lambda);
      const Tensor p1 = ops::softmax_channels(model_forward(theta, x1));
      const Tensor p2 = ops::softmax_channels(model_forward(theta, x2));
      const LabelMap y = pseudo_label(mixup(p1, p2, lambda));
      const double loss = detail::dice_ce_step(xi, x_mixed, y, nullptr,
                                               cfg.dice_include_background, cfg.lr_xi);
      theta = ema_update(theta, xi, cfg.ema_decay);
      if (stats) {
        stats->loss_sum += loss;
        ++stats->steps;
      }
    }
  }
  return theta;
}

inline ModelParams unsupervised_training(const SiloDataset& silo, const ModelParams& theta_global,
                                         const LocalTrainConfig& cfg,
                                         TrainStats* stats = nullptr) {
  RngStream rng(cfg.seed);
  return unsupervised_training(silo, theta_global, cfg, rng, stats);
}

/// Single-model self-training: pseudo-labels come from the clean forward
/// pass, low-confidence pixels are masked out of both losses, and the SGD
/// step runs on an intensity-shifted copy of the batch.
inline ModelParams threshold_selftrain(const SiloDataset& silo, ModelParams theta,
                                       const LocalTrainConfig& cfg, float threshold,
                                       RngStream& rng, TrainStats* stats = nullptr) {
  validate_silo(silo);
  validate_local_config(cfg);
  require(!silo.supervised, "threshold_selftrain: silo " + std::to_string(silo.silo_id) +
                                " is supervised");
  require(threshold > 0.0f && threshold < 1.0f, "threshold_selftrain: threshold outside (0,1)");
  const int N = silo.n_samples();
  require(N >= cfg.batch_size, "threshold_selftrain: silo smaller than one batch");
  for (int e = 0; e < cfg.epochs; ++e) {
    const std::vector<int> order = rng.shuffled_indices(N);
    for (int at = 0; at + cfg.batch_size <= N; at += cfg.batch_size) {
      const std::vector<int> idx = detail::slice(order, at, cfg.batch_size);
      const Tensor x = gather_batch(silo.images, idx);
      const Tensor clean = ops::softmax_channels(model_forward(theta, x));
      const LabelMap y = pseudo_label(clean);
      const std::vector<uint8_t> mask = confidence_mask(clean, threshold);
      const Tensor x_aug = intensity_shift(x, cfg.intensity_level, rng);
      const double loss =
          detail::dice_ce_step(theta, x_aug, y, &mask, cfg.dice_include_background, cfg.lr_theta);
      if (stats) {
        stats->loss_sum += loss;
        ++stats->steps;
      }
    }
  }
  return theta;
}

inline ModelParams threshold_selftrain(const SiloDataset& silo, const ModelParams& theta,
                                       const LocalTrainConfig& cfg, float threshold,
                                       TrainStats* stats = nullptr) {
  RngStream rng(cfg.seed);
  return threshold_selftrain(silo, theta, cfg, threshold, rng, stats);
}

}  // namespace fat
