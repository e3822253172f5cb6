#pragma once

#include <array>
#include <cmath>
#include <string>

#include "fat/autodiff.hpp"
#include "fat/ops.hpp"
#include "fat/rng.hpp"
#include "fat/tensor.hpp"

namespace fat {

/// Small encoder/decoder segmentation net with one skip connection:
///   enc1 3x3 (Cin -> F) + relu   [kept as skip]
///   down 3x3 stride 2 (F -> 2F) + relu
///   mid  3x3 (2F -> 2F) + relu
///   upsample 2x, concat with skip (-> 3F)
///   dec  3x3 (3F -> F) + relu
///   head 1x1 (F -> C) logits
struct ArchDescriptor {
  int in_channels = 1;
  int base_width = 8;
  int n_classes = 3;
};

inline void validate_arch(const ArchDescriptor& a) {
  require(a.in_channels >= 1, "arch: in_channels must be >= 1");
  require(a.base_width >= 2, "arch: base_width must be >= 2");
  require(a.n_classes >= 2, "arch: n_classes must be >= 2");
}

struct ModelParams {
  ArchDescriptor arch;
  Tensor enc1_k{{0}, {}}, enc1_b{{0}, {}};
  Tensor down_k{{0}, {}}, down_b{{0}, {}};
  Tensor mid_k{{0}, {}}, mid_b{{0}, {}};
  Tensor dec_k{{0}, {}}, dec_b{{0}, {}};
  Tensor head_k{{0}, {}}, head_b{{0}, {}};
};

constexpr int kModelTensorCount = 10;

inline std::array<const Tensor*, kModelTensorCount> model_tensors(const ModelParams& p) {
  return {&p.enc1_k, &p.enc1_b, &p.down_k, &p.down_b, &p.mid_k,
          &p.mid_b,  &p.dec_k,  &p.dec_b,  &p.head_k, &p.head_b};
}

inline std::array<Tensor*, kModelTensorCount> model_tensors(ModelParams& p) {
  return {&p.enc1_k, &p.enc1_b, &p.down_k, &p.down_b, &p.mid_k,
          &p.mid_b,  &p.dec_k,  &p.dec_b,  &p.head_k, &p.head_b};
}

inline std::array<std::string, kModelTensorCount> model_tensor_names() {
  return {"enc1.kernel", "enc1.bias", "down.kernel", "down.bias", "mid.kernel",
          "mid.bias",    "dec.kernel", "dec.bias",   "head.kernel", "head.bias"};
}

/// All-zero parameters with the exact shapes the architecture dictates.
inline ModelParams model_shell(const ArchDescriptor& arch) {
  validate_arch(arch);
  const int Ci = arch.in_channels, F = arch.base_width, C = arch.n_classes;
  ModelParams p;
  p.arch = arch;
  p.enc1_k = Tensor::zeros({F, Ci, 3, 3});
  p.enc1_b = Tensor::zeros({F});
  p.down_k = Tensor::zeros({2 * F, F, 3, 3});
  p.down_b = Tensor::zeros({2 * F});
  p.mid_k = Tensor::zeros({2 * F, 2 * F, 3, 3});
  p.mid_b = Tensor::zeros({2 * F});
  p.dec_k = Tensor::zeros({F, 3 * F, 3, 3});
  p.dec_b = Tensor::zeros({F});
  p.head_k = Tensor::zeros({C, F, 1, 1});
  p.head_b = Tensor::zeros({C});
  return p;
}

/// He-normal kernels, zero biases. Draw order is fixed: tensors in declaration
/// order, values row-major, so one seed always yields the same model.
inline ModelParams init_model(const ArchDescriptor& arch, RngStream& rng) {
  ModelParams p = model_shell(arch);
  for (Tensor* t : model_tensors(p)) {
    if (t->rank() != 4) continue;  // biases stay zero
    const float stddev = std::sqrt(2.0f / (float)(t->dim(1) * t->dim(2) * t->dim(3)));
    for (float& v : t->data) v = stddev * rng.normal();
  }
  return p;
}

inline ModelParams init_model(const ArchDescriptor& arch, uint64_t seed) {
  RngStream rng(seed);
  return init_model(arch, rng);
}

inline int64_t scalar_count(const ModelParams& p) {
  int64_t n = 0;
  for (const Tensor* t : model_tensors(p)) n += (int64_t)t->size();
  return n;
}

inline float get_scalar(const ModelParams& p, int64_t index) {
  for (const Tensor* t : model_tensors(p)) {
    if (index < (int64_t)t->size()) return t->data[(size_t)index];
    index -= (int64_t)t->size();
  }
  throw std::invalid_argument("get_scalar: index out of range");
}

inline void add_scalar(ModelParams& p, int64_t index, float delta) {
  for (Tensor* t : model_tensors(p)) {
    if (index < (int64_t)t->size()) {
      t->data[(size_t)index] += delta;
      return;
    }
    index -= (int64_t)t->size();
  }
  throw std::invalid_argument("add_scalar: index out of range");
}

inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  for (Tensor* t : model_tensors(z))
    for (float& v : t->data) v = 0.0f;
  return z;
}

inline bool same_arch(const ArchDescriptor& a, const ArchDescriptor& b) {
  return a.in_channels == b.in_channels && a.base_width == b.base_width &&
         a.n_classes == b.n_classes;
}

inline void check_same_arch(const ModelParams& a, const ModelParams& b, const std::string& op) {
  require(same_arch(a.arch, b.arch), op + ": model descriptors differ");
}

/// dst += scale * src over every parameter, in place.
inline void axpy_into(ModelParams& dst, double scale, const ModelParams& src) {
  check_same_arch(dst, src, "axpy");
  auto ds = model_tensors(dst);
  auto ss = model_tensors(src);
  for (int i = 0; i < kModelTensorCount; ++i) {
    check_same_shape(*ss[(size_t)i], *ds[(size_t)i], "axpy");
    for (size_t j = 0; j < ds[(size_t)i]->data.size(); ++j)
      ds[(size_t)i]->data[j] =
          (float)((double)ds[(size_t)i]->data[j] + scale * (double)ss[(size_t)i]->data[j]);
  }
}

/// dst + scale * src elementwise, returned as a new value.
inline ModelParams axpy(const ModelParams& dst, double scale, const ModelParams& src) {
  ModelParams out = dst;
  axpy_into(out, scale, src);
  return out;
}

/// p -= lr * g. A zero learning rate leaves p untouched bit for bit.
inline void apply_sgd(ModelParams& p, const ModelParams& g, double lr) {
  if (lr == 0.0) return;
  axpy_into(p, -lr, g);
}

inline void validate_model_input(const ModelParams& p, const Tensor& x) {
  require(x.rank() == 4, "forward: input must be 4-d, got " + shape_str(x.shape));
  require(x.dim(1) == p.arch.in_channels,
          "forward: input " + shape_str(x.shape) + " does not carry " +
              std::to_string(p.arch.in_channels) + " channels");
  require(x.dim(2) >= 2 && x.dim(3) >= 2 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0,
          "forward: spatial sides must be even and >= 2, got " + shape_str(x.shape));
}

/// Logits [B, n_classes, H, W]; no tape, used for target models and eval.
inline Tensor model_forward(const ModelParams& p, const Tensor& x) {
  validate_model_input(p, x);
  Tensor skip = ops::relu(ops::conv2d(x, p.enc1_k, p.enc1_b, 1, 1));
  Tensor h = ops::relu(ops::conv2d(skip, p.down_k, p.down_b, 2, 1));
  h = ops::relu(ops::conv2d(h, p.mid_k, p.mid_b, 1, 1));
  h = ops::concat_channels(ops::upsample_nearest2x(h), skip);
  h = ops::relu(ops::conv2d(h, p.dec_k, p.dec_b, 1, 1));
  return ops::conv2d(h, p.head_k, p.head_b, 1, 0);
}

struct TapedForward {
  std::array<int, kModelTensorCount> param_ids;
  int input_id = -1;
  int logits_id = -1;
};

/// Same computation on the tape; kernels are shared with the plain path, so
/// both produce bit-identical logits.
inline TapedForward model_forward(GradTape& tape, const ModelParams& p, const Tensor& x) {
  validate_model_input(p, x);
  TapedForward f;
  auto ts = model_tensors(p);
  for (int i = 0; i < kModelTensorCount; ++i) f.param_ids[(size_t)i] = tape.leaf(*ts[(size_t)i]);
  f.input_id = tape.leaf(x);
  const auto& id = f.param_ids;
  int skip = tape.relu(tape.conv2d(f.input_id, id[0], id[1], 1, 1));
  int h = tape.relu(tape.conv2d(skip, id[2], id[3], 2, 1));
  h = tape.relu(tape.conv2d(h, id[4], id[5], 1, 1));
  h = tape.concat_channels(tape.upsample_nearest2x(h), skip);
  h = tape.relu(tape.conv2d(h, id[6], id[7], 1, 1));
  f.logits_id = tape.conv2d(h, id[8], id[9], 1, 0);
  return f;
}

/// Copy parameter gradients off the tape; g += d(loss)/d(param).
inline void add_param_grads(const GradTape& tape, const TapedForward& f, ModelParams& g) {
  auto gs = model_tensors(g);
  for (int i = 0; i < kModelTensorCount; ++i) {
    const Tensor& src = tape.grad(f.param_ids[(size_t)i]);
    check_same_shape(src, *gs[(size_t)i], "add_param_grads");
    for (size_t j = 0; j < src.data.size(); ++j) gs[(size_t)i]->data[j] += src.data[j];
  }
}

}  // namespace fat
