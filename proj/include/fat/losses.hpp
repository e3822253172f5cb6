#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fat/autodiff.hpp"
#include "fat/tensor.hpp"

namespace fat {

/// Dense integer class map, row-major [B,H,W].
struct LabelMap {
  int b = 0, h = 0, w = 0;
  int n_classes = 0;
  std::vector<int> ids;

  LabelMap() = default;
  LabelMap(int b_, int h_, int w_, int n_classes_)
      : b(b_), h(h_), w(w_), n_classes(n_classes_), ids((size_t)b_ * h_ * w_, 0) {
    require(b_ >= 1 && h_ >= 1 && w_ >= 1, "labels: sides must be positive");
    require(n_classes_ >= 2, "labels: need at least 2 classes");
  }

  int& at(int bi, int hi, int wi) { return ids[(size_t)((int64_t)(bi * h + hi) * w + wi)]; }
  int at(int bi, int hi, int wi) const { return ids[(size_t)((int64_t)(bi * h + hi) * w + wi)]; }
  int64_t n_pixels() const { return (int64_t)b * h * w; }
};

inline void validate_labels(const LabelMap& m, const std::string& where) {
  require((int64_t)m.ids.size() == m.n_pixels(), where + ": label storage does not match dims");
  for (int v : m.ids)
    require(v >= 0 && v < m.n_classes, where + ": class id " + std::to_string(v) +
                                           " outside [0," + std::to_string(m.n_classes) + ")");
}

constexpr float kProbTolerance = 1e-3f;
constexpr float kLogClamp = 1e-7f;

/// Probabilities must be near-valid: entries in [-tol, 1+tol], per-pixel
/// channel sums within tol of one. The slack keeps finite-difference probes
/// on the probability simplex acceptable.
inline void validate_probs(const Tensor& p, const std::string& where) {
  require(p.rank() == 4, where + ": probs must be 4-d, got " + shape_str(p.shape));
  const int B = p.dim(0), C = p.dim(1), H = p.dim(2), W = p.dim(3);
  const int64_t plane = (int64_t)H * W;
  for (float v : p.data)
    require(v >= -kProbTolerance && v <= 1.0f + kProbTolerance,
            where + ": probability " + std::to_string(v) + " outside [0,1]");
  for (int b = 0; b < B; ++b)
    for (int64_t i = 0; i < plane; ++i) {
      double s = 0.0;
      for (int c = 0; c < C; ++c) s += p.data[(size_t)(((int64_t)b * C + c) * plane + i)];
      require(std::fabs(s - 1.0) <= (double)kProbTolerance,
              where + ": channel sum " + std::to_string(s) + " is not 1");
    }
}

inline void check_probs_match_labels(const Tensor& p, const LabelMap& m, const std::string& where) {
  require(p.dim(0) == m.b && p.dim(2) == m.h && p.dim(3) == m.w,
          where + ": probs " + shape_str(p.shape) + " do not cover " + std::to_string(m.b) + "x" +
              std::to_string(m.h) + "x" + std::to_string(m.w) + " labels");
  require(p.dim(1) == m.n_classes, where + ": probs carry " + std::to_string(p.dim(1)) +
                                       " classes, labels expect " + std::to_string(m.n_classes));
}

inline void check_mask(const std::vector<uint8_t>* mask, const LabelMap& m, const std::string& where) {
  if (mask)
    require((int64_t)mask->size() == m.n_pixels(), where + ": mask length does not match labels");
}

struct LossValue {
  float value = 0.0f;
  int64_t n_pixels = 0;  // pixels that contributed
};

namespace detail {

struct DiceSums {
  std::vector<double> inter;  // per included class
  std::vector<double> uni;
  std::vector<int> classes;
  int64_t active = 0;
};

inline DiceSums dice_sums(const Tensor& probs, const LabelMap& labels, bool include_background,
                          const std::vector<uint8_t>* mask) {
  const int B = labels.b, H = labels.h, W = labels.w, C = labels.n_classes;
  DiceSums s;
  for (int c = include_background ? 0 : 1; c < C; ++c) s.classes.push_back(c);
  s.inter.assign(s.classes.size(), 0.0);
  s.uni.assign(s.classes.size(), 0.0);
  const int64_t plane = (int64_t)H * W;
  for (int b = 0; b < B; ++b)
    for (int64_t i = 0; i < plane; ++i) {
      const int64_t pix = (int64_t)b * plane + i;
      if (mask && !(*mask)[(size_t)pix]) continue;
      ++s.active;
      const int y = labels.ids[(size_t)pix];
      for (size_t k = 0; k < s.classes.size(); ++k) {
        const int c = s.classes[k];
        const double pc = probs.data[(size_t)(((int64_t)b * C + c) * plane + i)];
        if (y == c) s.inter[k] += pc;
        s.uni[k] += pc + (y == c ? 1.0 : 0.0);
      }
    }
  return s;
}

inline double dice_value(const DiceSums& s, double eps) {
  double mean = 0.0;
  for (size_t k = 0; k < s.classes.size(); ++k)
    mean += (2.0 * s.inter[k] + eps) / (s.uni[k] + eps);
  mean /= (double)s.classes.size();
  return 1.0 - mean;
}

}  // namespace detail

/// Soft Dice loss: 1 - mean_c (2*I_c + eps) / (U_c + eps) with I_c the
/// prob/one-hot overlap and U_c the sum of both masses. Classes start at 1
/// when the background is excluded. Masked-out pixels contribute nothing.
inline LossValue soft_dice_loss(const Tensor& probs, const LabelMap& labels,
                                bool include_background = true, double eps = 1e-5,
                                const std::vector<uint8_t>* mask = nullptr) {
  validate_probs(probs, "soft_dice_loss");
  validate_labels(labels, "soft_dice_loss");
  check_probs_match_labels(probs, labels, "soft_dice_loss");
  check_mask(mask, labels, "soft_dice_loss");
  require(eps > 0.0, "soft_dice_loss: eps must be positive");
  detail::DiceSums s = detail::dice_sums(probs, labels, include_background, mask);
  return LossValue{(float)detail::dice_value(s, eps), s.active};
}

/// Taped soft Dice over a probability node; returns a scalar node id.
inline int soft_dice_loss(GradTape& tape, int probs_id, const LabelMap& labels,
                          bool include_background = true, double eps = 1e-5,
                          const std::vector<uint8_t>* mask = nullptr) {
  const Tensor& probs = tape.value(probs_id);
  validate_probs(probs, "soft_dice_loss");
  validate_labels(labels, "soft_dice_loss");
  check_probs_match_labels(probs, labels, "soft_dice_loss");
  check_mask(mask, labels, "soft_dice_loss");
  require(eps > 0.0, "soft_dice_loss: eps must be positive");
  detail::DiceSums s = detail::dice_sums(probs, labels, include_background, mask);
  const int id = tape.emplace(Tensor({1}, {(float)detail::dice_value(s, eps)}));
  LabelMap lab = labels;
  std::vector<uint8_t> msk = mask ? *mask : std::vector<uint8_t>{};
  tape.set_pull(id, [&tape, id, probs_id, s, lab = std::move(lab), msk = std::move(msk), eps] {
    const double g0 = tape.grad(id).data[0];
    if (g0 == 0.0) return;
    const int B = lab.b, H = lab.h, W = lab.w, C = lab.n_classes;
    const int64_t plane = (int64_t)H * W;
    const double inv_k = 1.0 / (double)s.classes.size();
    Tensor& gp = tape.grad_mut(probs_id);
    for (int b = 0; b < B; ++b)
      for (int64_t i = 0; i < plane; ++i) {
        const int64_t pix = (int64_t)b * plane + i;
        if (!msk.empty() && !msk[(size_t)pix]) continue;
        const int y = lab.ids[(size_t)pix];
        for (size_t k = 0; k < s.classes.size(); ++k) {
          const int c = s.classes[k];
          const double t = (y == c) ? 1.0 : 0.0;
          const double denom = s.uni[k] + eps;
          // d term_k / d p_c = (2*t*denom - (2*I_k + eps)) / denom^2
          const double dterm = (2.0 * t * denom - (2.0 * s.inter[k] + eps)) / (denom * denom);
          gp.data[(size_t)(((int64_t)b * C + c) * plane + i)] += (float)(-g0 * inv_k * dterm);
        }
      }
  });
  return id;
}

/// Mean over contributing pixels of -log p_true, with p clamped to
/// [1e-7, 1]. An all-masked batch yields zero loss.
inline LossValue cross_entropy(const Tensor& probs, const LabelMap& labels,
                               const std::vector<uint8_t>* mask = nullptr) {
  validate_probs(probs, "cross_entropy");
  validate_labels(labels, "cross_entropy");
  check_probs_match_labels(probs, labels, "cross_entropy");
  check_mask(mask, labels, "cross_entropy");
  const int B = labels.b, H = labels.h, W = labels.w, C = labels.n_classes;
  const int64_t plane = (int64_t)H * W;
  double sum = 0.0;
  int64_t active = 0;
  for (int b = 0; b < B; ++b)
    for (int64_t i = 0; i < plane; ++i) {
      const int64_t pix = (int64_t)b * plane + i;
      if (mask && !(*mask)[(size_t)pix]) continue;
      ++active;
      const int y = labels.ids[(size_t)pix];
      double p = probs.data[(size_t)(((int64_t)b * C + y) * plane + i)];
      p = std::min(1.0, std::max((double)kLogClamp, p));
      sum -= std::log(p);
    }
  return LossValue{active ? (float)(sum / (double)active) : 0.0f, active};
}

/// Taped cross entropy; returns a scalar node id. The clamp zeroes the
/// gradient outside (1e-7, 1).
inline int cross_entropy(GradTape& tape, int probs_id, const LabelMap& labels,
                         const std::vector<uint8_t>* mask = nullptr) {
  const Tensor& probs = tape.value(probs_id);
  LossValue v = cross_entropy(probs, labels, mask);
  const int id = tape.emplace(Tensor({1}, {v.value}));
  if (v.n_pixels == 0) return id;
  LabelMap lab = labels;
  std::vector<uint8_t> msk = mask ? *mask : std::vector<uint8_t>{};
  const int64_t active = v.n_pixels;
  tape.set_pull(id, [&tape, id, probs_id, lab = std::move(lab), msk = std::move(msk), active] {
    const double g0 = tape.grad(id).data[0];
    if (g0 == 0.0) return;
    const int B = lab.b, H = lab.h, W = lab.w, C = lab.n_classes;
    const int64_t plane = (int64_t)H * W;
    const Tensor& p = tape.value(probs_id);
    Tensor& gp = tape.grad_mut(probs_id);
    for (int b = 0; b < B; ++b)
      for (int64_t i = 0; i < plane; ++i) {
        const int64_t pix = (int64_t)b * plane + i;
        if (!msk.empty() && !msk[(size_t)pix]) continue;
        const int y = lab.ids[(size_t)pix];
        const size_t off = (size_t)(((int64_t)b * C + y) * plane + i);
        const double pv = p.data[off];
        if (pv <= (double)kLogClamp || pv >= 1.0) continue;
        gp.data[off] += (float)(-g0 / (pv * (double)active));
      }
  });
  return id;
}

/// Hard per-class Dice between two label maps: 2|A^B| / (|A|+|B|), with the
/// empty/empty case scored 1.
inline std::vector<double> dice_scores(const LabelMap& pred, const LabelMap& truth) {
  validate_labels(pred, "dice_score");
  validate_labels(truth, "dice_score");
  require(pred.b == truth.b && pred.h == truth.h && pred.w == truth.w &&
              pred.n_classes == truth.n_classes,
          "dice_score: label maps disagree in shape or class count");
  const int C = pred.n_classes;
  std::vector<int64_t> inter((size_t)C, 0), np((size_t)C, 0), nt((size_t)C, 0);
  for (size_t i = 0; i < pred.ids.size(); ++i) {
    const int a = pred.ids[i], b = truth.ids[i];
    ++np[(size_t)a];
    ++nt[(size_t)b];
    if (a == b) ++inter[(size_t)a];
  }
  std::vector<double> out((size_t)C, 0.0);
  for (int c = 0; c < C; ++c) {
    const int64_t denom = np[(size_t)c] + nt[(size_t)c];
    out[(size_t)c] = denom == 0 ? 1.0 : 2.0 * (double)inter[(size_t)c] / (double)denom;
  }
  return out;
}

inline double dice_score(const LabelMap& pred, const LabelMap& truth, int class_id) {
  require(class_id >= 0 && class_id < pred.n_classes,
          "dice_score: class " + std::to_string(class_id) + " outside [0," +
              std::to_string(pred.n_classes) + ")");
  return dice_scores(pred, truth)[(size_t)class_id];
}

}  // namespace fat
