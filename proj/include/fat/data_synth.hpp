#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fat/dataset.hpp"
#include "fat/rng.hpp"
#include "fat/tensor.hpp"

namespace fat {

/// Synthetic 2D scenes: a noisy background, one bright "organ" blob per
/// image, and sometimes a brighter "tumor" blob fully inside it. Training
/// silos use ellipse organs; the pretraining source task uses rectangles.
/// SampleRecipe and OrganShape live in dataset.hpp.
struct DatasetSpec {
  int n_silos = 6;
  std::vector<int> supervised_ids = {0, 1};
  std::vector<int> samples_per_silo = {24, 16, 12, 12, 8, 8};
  int image_size = 16;
  int n_classes = 3;
  int test_samples = 16;
  int pretrain_samples = 32;
  // Per-silo style: additive brightness and how often a tumor appears.
  std::vector<float> intensity_offsets = {-0.30f, -0.18f, -0.06f, 0.06f, 0.18f, 0.30f};
  std::vector<float> tumor_freqs = {0.45f, 0.50f, 0.85f, 0.90f, 0.85f, 0.90f};
  float organ_r_lo = 0.22f;  // organ half-extent as a fraction of image size
  float organ_r_hi = 0.38f;
  float noise_level = 0.05f;
  float organ_intensity = 0.45f;
  float tumor_intensity = 1.0f;
  uint64_t seed = 0;
};

inline void validate_dataset_spec(const DatasetSpec& s) {
  require(s.n_silos >= 1, "dataset spec: need at least one silo");
  require(!s.supervised_ids.empty(), "dataset spec: need at least one supervised silo");
  std::vector<int> ids = s.supervised_ids;
  std::sort(ids.begin(), ids.end());
  require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(),
          "dataset spec: duplicate supervised silo id");
  for (int id : ids)
    require(id >= 0 && id < s.n_silos, "dataset spec: supervised id " + std::to_string(id) +
                                           " outside [0," + std::to_string(s.n_silos) + ")");
  require((int)s.samples_per_silo.size() == s.n_silos,
          "dataset spec: samples_per_silo must list every silo");
  for (int n : s.samples_per_silo)
    require(n >= 2, "dataset spec: each silo needs at least 2 samples");
  require(s.image_size >= 8 && s.image_size % 2 == 0,
          "dataset spec: image_size must be even and >= 8");
  require(s.n_classes == 3, "dataset spec: the generator produces exactly 3 classes");
  require(s.test_samples >= 1 && s.pretrain_samples >= 1,
          "dataset spec: test and pretrain sample counts must be >= 1");
  require((int)s.intensity_offsets.size() == s.n_silos,
          "dataset spec: intensity_offsets must list every silo");
  require((int)s.tumor_freqs.size() == s.n_silos,
          "dataset spec: tumor_freqs must list every silo");
  for (float f : s.tumor_freqs)
    require(f >= 0.0f && f <= 1.0f, "dataset spec: tumor frequency outside [0,1]");
  require(s.organ_r_lo > 0.0f && s.organ_r_lo <= s.organ_r_hi && s.organ_r_hi <= 0.45f,
          "dataset spec: organ size range must satisfy 0 < lo <= hi <= 0.45");
  require(s.noise_level >= 0.0f, "dataset spec: noise_level must be >= 0");
}

inline bool supervised_in_spec(const DatasetSpec& s, int silo_id) {
  return std::find(s.supervised_ids.begin(), s.supervised_ids.end(), silo_id) !=
         s.supervised_ids.end();
}

namespace detail {

inline bool inside_organ(const SampleRecipe& r, float x, float y) {
  if (r.shape == OrganShape::Ellipse) {
    const float dx = (x - r.cx) / r.rx, dy = (y - r.cy) / r.ry;
    return dx * dx + dy * dy <= 1.0f;
  }
  return std::fabs(x - r.cx) <= r.rx && std::fabs(y - r.cy) <= r.ry;
}

inline bool inside_tumor(const SampleRecipe& r, float x, float y) {
  if (!r.has_tumor) return false;
  if (r.shape == OrganShape::Ellipse) {
    const float dx = x - r.tx, dy = y - r.ty;
    return dx * dx + dy * dy <= r.tr * r.tr;
  }
  return std::fabs(x - r.tx) <= r.tr && std::fabs(y - r.ty) <= r.tr;
}

/// Whole tumor boundary inside the organ, probed at 64 points for ellipses.
inline bool tumor_fits(const SampleRecipe& r) {
  if (r.shape == OrganShape::Rect)
    return std::fabs(r.tx - r.cx) + r.tr <= r.rx && std::fabs(r.ty - r.cy) + r.tr <= r.ry;
  for (int k = 0; k < 64; ++k) {
    const float a = (float)(2.0 * M_PI * k / 64.0);
    if (!inside_organ(r, r.tx + r.tr * std::cos(a), r.ty + r.tr * std::sin(a))) return false;
  }
  return true;
}

inline SampleRecipe draw_recipe(const DatasetSpec& spec, OrganShape shape, float offset,
                                float tumor_freq, RngStream& rng) {
  SampleRecipe r;
  r.shape = shape;
  r.noise_level = spec.noise_level;
  r.intensity_offset = offset;
  r.organ_intensity = spec.organ_intensity;
  r.tumor_intensity = spec.tumor_intensity;
  const float sz = (float)spec.image_size;
  r.rx = (float)rng.uniform(spec.organ_r_lo, spec.organ_r_hi) * sz;
  r.ry = (float)rng.uniform(spec.organ_r_lo, spec.organ_r_hi) * sz;
  r.cx = (float)rng.uniform(r.rx + 1.0, sz - r.rx - 1.0);
  r.cy = (float)rng.uniform(r.ry + 1.0, sz - r.ry - 1.0);
  r.has_tumor = rng.next_unit() < (double)tumor_freq;
  if (!r.has_tumor) return r;
  const float rmin = std::min(r.rx, r.ry);
  r.tr = (float)rng.uniform(0.28, 0.52) * rmin;
  for (int attempt = 0; attempt < 8; ++attempt) {
    r.tx = r.cx + (float)rng.uniform(-0.55, 0.55) * r.rx;
    r.ty = r.cy + (float)rng.uniform(-0.55, 0.55) * r.ry;
    if (tumor_fits(r)) return r;
  }
  r.tx = r.cx;  // a centered tumor always fits: tr <= 0.52 * min(rx, ry)
  r.ty = r.cy;
  return r;
}

/// Render one image row and its labels. Pixel (h, w) is probed at its center
/// (w + 0.5, h + 0.5). A tumor pixel must also satisfy the organ equation, so
/// label 2 never escapes the organ.
inline void render(const SampleRecipe& r, int size, float* image, int* label_row,
                   RngStream& rng) {
  for (int h = 0; h < size; ++h)
    for (int w = 0; w < size; ++w) {
      const float x = (float)w + 0.5f, y = (float)h + 0.5f;
      const bool organ = inside_organ(r, x, y);
      const bool tumor = organ && inside_tumor(r, x, y);
      const int64_t i = (int64_t)h * size + w;
      float v = r.intensity_offset + r.noise_level * rng.normal();
      if (tumor)
        v += r.tumor_intensity;
      else if (organ)
        v += r.organ_intensity;
      image[i] = v;
      label_row[i] = tumor ? 2 : (organ ? 1 : 0);
    }
}

inline SiloDataset generate_from_stream(const DatasetSpec& spec, int silo_id, bool supervised,
                                        int n, OrganShape shape, float offset_lo, float offset_hi,
                                        float freq_lo, float freq_hi, uint64_t stream) {
  RngStream rng(stream);
  const int size = spec.image_size;
  SiloDataset out;
  out.silo_id = silo_id;
  out.supervised = supervised;
  out.images = Tensor::zeros({n, 1, size, size});
  LabelMap truth(n, size, size, spec.n_classes);
  out.recipes.reserve((size_t)n);
  const int64_t per = (int64_t)size * size;
  for (int i = 0; i < n; ++i) {
    const float offset = offset_lo == offset_hi
                             ? offset_lo
                             : (float)rng.uniform(offset_lo, offset_hi);
    const float freq = freq_lo == freq_hi ? freq_lo : (float)rng.uniform(freq_lo, freq_hi);
    SampleRecipe r = draw_recipe(spec, shape, offset, freq, rng);
    std::vector<int> row((size_t)per, 0);
    render(r, size, out.images.data.data() + (int64_t)i * per, row.data(), rng);
    if (r.has_tumor) {
      bool any = false;
      for (int v : row) any = any || v == 2;
      if (!any) {  // tiny off-grid tumor: recenter it so a pixel lands inside
        r.tx = r.cx;
        r.ty = r.cy;
        render(r, size, out.images.data.data() + (int64_t)i * per, row.data(), rng);
      }
    }
    std::copy(row.begin(), row.end(), truth.ids.begin() + (int64_t)i * per);
    out.recipes.push_back(r);
  }
  check_finite(out.images, "generate");
  if (supervised) out.labels = truth;
  out.diagnostic_labels = std::move(truth);
  validate_silo(out);
  return out;
}

}  // namespace detail

/// One training silo, deterministic in (spec.seed, silo_id).
inline SiloDataset generate_silo(const DatasetSpec& spec, int silo_id) {
  validate_dataset_spec(spec);
  require(silo_id >= 0 && silo_id < spec.n_silos,
          "generate_silo: silo " + std::to_string(silo_id) + " outside [0," +
              std::to_string(spec.n_silos) + ")");
  const float off = spec.intensity_offsets[(size_t)silo_id];
  const float freq = spec.tumor_freqs[(size_t)silo_id];
  return detail::generate_from_stream(
      spec, silo_id, supervised_in_spec(spec, silo_id), spec.samples_per_silo[(size_t)silo_id],
      OrganShape::Ellipse, off, off, freq, freq,
      substream_id(spec.seed, {kStreamData, (uint64_t)silo_id}));
}

/// Held-out test silo: per-sample style drawn between the training silos'
/// extremes, labels always present.
inline SiloDataset generate_test_set(const DatasetSpec& spec) {
  validate_dataset_spec(spec);
  const auto [off_lo, off_hi] =
      std::minmax_element(spec.intensity_offsets.begin(), spec.intensity_offsets.end());
  const auto [fr_lo, fr_hi] = std::minmax_element(spec.tumor_freqs.begin(), spec.tumor_freqs.end());
  return detail::generate_from_stream(spec, spec.n_silos, true, spec.test_samples,
                                      OrganShape::Ellipse, *off_lo, *off_hi, *fr_lo, *fr_hi,
                                      substream_id(spec.seed, {kStreamTest}));
}

/// Structurally different source task for pretraining: rectangular organs,
/// same classes, same intensity domain.
inline SiloDataset generate_pretrain_source(const DatasetSpec& spec) {
  validate_dataset_spec(spec);
  const auto [off_lo, off_hi] =
      std::minmax_element(spec.intensity_offsets.begin(), spec.intensity_offsets.end());
  double mean_freq = 0.0;
  for (float f : spec.tumor_freqs) mean_freq += f;
  mean_freq /= (double)spec.tumor_freqs.size();
  return detail::generate_from_stream(spec, spec.n_silos + 1, true, spec.pretrain_samples,
                                      OrganShape::Rect, *off_lo, *off_hi, (float)mean_freq,
                                      (float)mean_freq,
                                      substream_id(spec.seed, {kStreamSource}));
}

}  // namespace fat
