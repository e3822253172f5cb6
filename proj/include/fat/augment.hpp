#pragma once

#include <cmath>
#include <string>

#include "fat/losses.hpp"
#include "fat/rng.hpp"
#include "fat/tensor.hpp"

namespace fat {

/// Two batches and the coefficient that blends them.
struct MixupPair {
  float lambda = 0.5f;
  Tensor batch_a;
  Tensor batch_b;

  MixupPair(float lambda_, Tensor a, Tensor b)
      : lambda(lambda_), batch_a(std::move(a)), batch_b(std::move(b)) {
    require(lambda_ > 0.0f && lambda_ < 1.0f,
            "mixup: lambda " + std::to_string(lambda_) + " outside (0,1)");
    check_same_shape(batch_a, batch_b, "mixup");
  }
};

/// Convex combination lambda*a + (1-lambda)*b, computed as b + lambda*(a-b)
/// so mixup(a, a, lambda) returns a bit for bit.
inline Tensor mixup(const Tensor& a, const Tensor& b, float lambda) {
  check_same_shape(a, b, "mixup");
  Tensor out = b;
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = b.data[i] + lambda * (a.data[i] - b.data[i]);
  check_finite(out, "mixup");
  return out;
}

inline Tensor mixup(const MixupPair& pair) {
  return mixup(pair.batch_a, pair.batch_b, pair.lambda);
}

/// Per-pixel argmax over channels; ties go to the lowest class index.
inline LabelMap pseudo_label(const Tensor& p_mixed) {
  require(p_mixed.rank() == 4, "pseudo_label: probs must be 4-d, got " + shape_str(p_mixed.shape));
  const int B = p_mixed.dim(0), C = p_mixed.dim(1), H = p_mixed.dim(2), W = p_mixed.dim(3);
  require(C >= 2, "pseudo_label: needs at least 2 channels");
  LabelMap out(B, H, W, C);
  const int64_t plane = (int64_t)H * W;
  for (int b = 0; b < B; ++b)
    for (int64_t i = 0; i < plane; ++i) {
      int best = 0;
      float bv = p_mixed.data[(size_t)((int64_t)b * C * plane + i)];
      for (int c = 1; c < C; ++c) {
        const float v = p_mixed.data[(size_t)(((int64_t)b * C + c) * plane + i)];
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      out.ids[(size_t)((int64_t)b * plane + i)] = best;
    }
  return out;
}

/// x + r*level*std(x) with r ~ Uniform(-1,1) drawn once per sample and the
/// std taken over that sample's pixels. Zero shifts leave bits untouched.
inline Tensor intensity_shift(const Tensor& x, float level, RngStream& rng) {
  require(x.rank() == 4, "intensity_shift: input must be 4-d, got " + shape_str(x.shape));
  require(level >= 0.0f, "intensity_shift: level must be >= 0");
  const int B = x.dim(0);
  const int64_t per = (int64_t)x.dim(1) * x.dim(2) * x.dim(3);
  Tensor out = x;
  for (int b = 0; b < B; ++b) {
    const float* s = x.data.data() + (int64_t)b * per;
    double mean = 0.0;
    for (int64_t i = 0; i < per; ++i) mean += s[i];
    mean /= (double)per;
    double var = 0.0;
    for (int64_t i = 0; i < per; ++i) var += (s[i] - mean) * (s[i] - mean);
    const double sd = std::sqrt(var / (double)per);
    const double r = rng.uniform(-1.0, 1.0);
    const float shift = (float)(r * (double)level * sd);
    if (shift == 0.0f) continue;
    float* d = out.data.data() + (int64_t)b * per;
    for (int64_t i = 0; i < per; ++i) d[i] += shift;
  }
  check_finite(out, "intensity_shift");
  return out;
}

}  // namespace fat
