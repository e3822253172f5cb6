#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fat/losses.hpp"
#include "fat/tensor.hpp"

namespace fat {

/// One silo's data. Supervised silos expose labels; unsupervised silos keep
/// them out of the training view entirely, with ground truth retained only in
/// diagnostic_labels for evaluation tooling.
/// How one synthetic sample was drawn. Class ids: 0 background, 1 organ,
/// 2 tumor. Kept alongside generated datasets for diagnostics; imported
/// datasets carry none.
enum class OrganShape { Ellipse, Rect };

struct SampleRecipe {
  OrganShape shape = OrganShape::Ellipse;
  float noise_level = 0.05f;
  float intensity_offset = 0.0f;
  float cx = 0, cy = 0, rx = 0, ry = 0;  // organ center and half-extents
  float organ_intensity = 0.45f;
  bool has_tumor = false;
  float tx = 0, ty = 0, tr = 0;  // tumor center and radius/half-extent
  float tumor_intensity = 1.0f;
};

struct SiloDataset {
  int silo_id = -1;
  bool supervised = false;
  Tensor images{{0, 0, 0, 0}, {}};
  std::optional<LabelMap> labels;
  std::optional<LabelMap> diagnostic_labels;
  std::vector<SampleRecipe> recipes;  // generator metadata, empty for imported data

  int n_samples() const { return images.rank() == 4 ? images.dim(0) : 0; }
};

inline void validate_silo(const SiloDataset& s) {
  require(s.images.rank() == 4, "silo: images must be 4-d, got " + shape_str(s.images.shape));
  require(s.n_samples() >= 1, "silo " + std::to_string(s.silo_id) + ": no samples");
  if (s.supervised)
    require(s.labels.has_value(), "silo " + std::to_string(s.silo_id) +
                                      ": supervised silo without labels");
  else
    require(!s.labels.has_value(), "silo " + std::to_string(s.silo_id) +
                                       ": unsupervised silo must not expose labels");
  for (const std::optional<LabelMap>* lm : {&s.labels, &s.diagnostic_labels}) {
    if (!lm->has_value()) continue;
    const LabelMap& m = **lm;
    validate_labels(m, "silo " + std::to_string(s.silo_id));
    require(m.b == s.n_samples() && m.h == s.images.dim(2) && m.w == s.images.dim(3),
            "silo " + std::to_string(s.silo_id) + ": labels do not cover the images");
  }
}

/// Rows of `images` selected by index, in order.
inline Tensor gather_batch(const Tensor& images, const std::vector<int>& indices) {
  require(images.rank() == 4, "gather: images must be 4-d");
  const int64_t per = (int64_t)images.dim(1) * images.dim(2) * images.dim(3);
  Tensor out = Tensor::zeros({(int)indices.size(), images.dim(1), images.dim(2), images.dim(3)});
  for (size_t k = 0; k < indices.size(); ++k) {
    const int i = indices[k];
    require(i >= 0 && i < images.dim(0), "gather: sample index out of range");
    std::copy_n(images.data.data() + (int64_t)i * per, (size_t)per,
                out.data.data() + (int64_t)k * per);
  }
  return out;
}

/// The same silo with its hidden truth promoted to training labels; used by
/// baselines that pretend every silo were annotated.
inline SiloDataset supervised_view(const SiloDataset& s) {
  require(s.diagnostic_labels.has_value(),
          "supervised_view: silo " + std::to_string(s.silo_id) + " has no ground truth at all");
  SiloDataset out = s;
  out.supervised = true;
  out.labels = s.diagnostic_labels;
  return out;
}

inline LabelMap gather_labels(const LabelMap& labels, const std::vector<int>& indices) {
  LabelMap out((int)indices.size(), labels.h, labels.w, labels.n_classes);
  const int64_t per = (int64_t)labels.h * labels.w;
  for (size_t k = 0; k < indices.size(); ++k) {
    const int i = indices[k];
    require(i >= 0 && i < labels.b, "gather: label index out of range");
    std::copy_n(labels.ids.data() + (int64_t)i * per, (size_t)per,
                out.ids.data() + (int64_t)k * per);
  }
  return out;
}

}  // namespace fat
