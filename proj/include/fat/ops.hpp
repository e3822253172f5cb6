#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fat/tensor.hpp"

namespace fat::ops {

// Forward/backward kernels for the fixed op set. Accumulation runs in 64-bit;
// every stored value is float32. Output spatial size of conv2d follows the
// usual floor rule H' = floor((H + 2*pad - kH) / stride) + 1.

inline void validate_conv_args(const Tensor& in, const Tensor& kernel, const Tensor& bias,
                               int stride, int padding) {
  require(in.rank() == 4, "conv2d: input must be 4-d, got " + shape_str(in.shape));
  require(kernel.rank() == 4, "conv2d: kernel must be 4-d, got " + shape_str(kernel.shape));
  require(bias.rank() == 1 && bias.dim(0) == kernel.dim(0),
          "conv2d: bias shape " + shape_str(bias.shape) + " does not match kernel " +
              shape_str(kernel.shape));
  require(in.dim(1) == kernel.dim(1),
          "conv2d: channel mismatch: input " + shape_str(in.shape) + " vs kernel " +
              shape_str(kernel.shape));
  require(kernel.dim(2) % 2 == 1 && kernel.dim(3) % 2 == 1,
          "conv2d: kernel sides must be odd, got " + shape_str(kernel.shape));
  require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
  require(padding >= 0, "conv2d: padding must be >= 0");
  require(in.dim(2) + 2 * padding >= kernel.dim(2) && in.dim(3) + 2 * padding >= kernel.dim(3),
          "conv2d: input " + shape_str(in.shape) + " too small for kernel " +
              shape_str(kernel.shape));
}

/// Cross-correlation of [B,Cin,H,W] with [Cout,Cin,kH,kW] plus per-channel bias.
inline Tensor conv2d(const Tensor& in, const Tensor& kernel, const Tensor& bias, int stride,
                     int padding) {
  validate_conv_args(in, kernel, bias, stride, padding);
  const int B = in.dim(0), Ci = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int Co = kernel.dim(0), kH = kernel.dim(2), kW = kernel.dim(3);
  const int Ho = (H + 2 * padding - kH) / stride + 1;
  const int Wo = (W + 2 * padding - kW) / stride + 1;
  Tensor out = Tensor::zeros({B, Co, Ho, Wo});
  const float* X = in.data.data();
  const float* K = kernel.data.data();
  float* Y = out.data.data();
  for (int b = 0; b < B; ++b)
    for (int co = 0; co < Co; ++co) {
      const double bval = bias.data[(size_t)co];
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          double acc = bval;
          for (int ci = 0; ci < Ci; ++ci) {
            const float* Xc = X + ((int64_t)(b * Ci + ci) * H) * W;
            const float* Kc = K + ((int64_t)(co * Ci + ci) * kH) * kW;
            for (int r = 0; r < kH; ++r) {
              const int ih = oh * stride - padding + r;
              if ((unsigned)ih >= (unsigned)H) continue;
              const int iw0 = ow * stride - padding;
              for (int c = 0; c < kW; ++c) {
                const int iw = iw0 + c;
                if ((unsigned)iw >= (unsigned)W) continue;
                acc += (double)Xc[(int64_t)ih * W + iw] * (double)Kc[(int64_t)r * kW + c];
              }
            }
          }
          Y[((int64_t)(b * Co + co) * Ho + oh) * Wo + ow] = (float)acc;
        }
    }
  check_finite(out, "conv2d");
  return out;
}

/// Gradients of conv2d w.r.t. input, kernel and bias. Null outputs are skipped.
inline void conv2d_backward(const Tensor& in, const Tensor& kernel, int stride, int padding,
                            const Tensor& dout, Tensor* din, Tensor* dkernel, Tensor* dbias) {
  const int B = in.dim(0), Ci = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int Co = kernel.dim(0), kH = kernel.dim(2), kW = kernel.dim(3);
  const int Ho = dout.dim(2), Wo = dout.dim(3);
  std::vector<double> gin(din ? in.data.size() : 0, 0.0);
  std::vector<double> gker(dkernel ? kernel.data.size() : 0, 0.0);
  std::vector<double> gbias(dbias ? (size_t)Co : 0, 0.0);
  const float* X = in.data.data();
  const float* K = kernel.data.data();
  const float* G = dout.data.data();
  for (int b = 0; b < B; ++b)
    for (int co = 0; co < Co; ++co)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          const double g = G[((int64_t)(b * Co + co) * Ho + oh) * Wo + ow];
          if (dbias) gbias[(size_t)co] += g;
          for (int ci = 0; ci < Ci; ++ci) {
            const int64_t xoff = ((int64_t)(b * Ci + ci) * H) * W;
            const int64_t koff = ((int64_t)(co * Ci + ci) * kH) * kW;
            for (int r = 0; r < kH; ++r) {
              const int ih = oh * stride - padding + r;
              if ((unsigned)ih >= (unsigned)H) continue;
              const int iw0 = ow * stride - padding;
              for (int c = 0; c < kW; ++c) {
                const int iw = iw0 + c;
                if ((unsigned)iw >= (unsigned)W) continue;
                const int64_t xi = xoff + (int64_t)ih * W + iw;
                const int64_t ki = koff + (int64_t)r * kW + c;
                if (din) gin[(size_t)xi] += (double)K[ki] * g;
                if (dkernel) gker[(size_t)ki] += (double)X[xi] * g;
              }
            }
          }
        }
  if (din)
    for (size_t i = 0; i < gin.size(); ++i) din->data[i] += (float)gin[i];
  if (dkernel)
    for (size_t i = 0; i < gker.size(); ++i) dkernel->data[i] += (float)gker[i];
  if (dbias)
    for (size_t i = 0; i < gbias.size(); ++i) dbias->data[i] += (float)gbias[i];
}

inline Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (float& v : out.data) v = v > 0.0f ? v : 0.0f;
  check_finite(out, "relu");
  return out;
}

/// Subgradient at exactly zero is zero.
inline void relu_backward(const Tensor& x, const Tensor& dout, Tensor* dx) {
  for (size_t i = 0; i < x.data.size(); ++i)
    if (x.data[i] > 0.0f) dx->data[i] += dout.data[i];
}

inline Tensor upsample_nearest2x(const Tensor& x) {
  require(x.rank() == 4, "upsample_nearest2x: input must be 4-d, got " + shape_str(x.shape));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out = Tensor::zeros({B, C, 2 * H, 2 * W});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const float v = x.at4(b, c, h, w);
          out.at4(b, c, 2 * h, 2 * w) = v;
          out.at4(b, c, 2 * h, 2 * w + 1) = v;
          out.at4(b, c, 2 * h + 1, 2 * w) = v;
          out.at4(b, c, 2 * h + 1, 2 * w + 1) = v;
        }
  check_finite(out, "upsample_nearest2x");
  return out;
}

inline void upsample_nearest2x_backward(const Tensor& dout, Tensor* dx) {
  const int B = dx->dim(0), C = dx->dim(1), H = dx->dim(2), W = dx->dim(3);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          dx->at4(b, c, h, w) += dout.at4(b, c, 2 * h, 2 * w) + dout.at4(b, c, 2 * h, 2 * w + 1) +
                                 dout.at4(b, c, 2 * h + 1, 2 * w) +
                                 dout.at4(b, c, 2 * h + 1, 2 * w + 1);
}

/// Per-pixel softmax over the channel axis, computed with max subtraction.
inline Tensor softmax_channels(const Tensor& logits) {
  require(logits.rank() == 4, "softmax_channels: input must be 4-d, got " + shape_str(logits.shape));
  const int B = logits.dim(0), C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  require(C >= 2, "softmax_channels: needs at least 2 channels, got " + shape_str(logits.shape));
  Tensor out = Tensor::zeros(logits.shape);
  const int64_t plane = (int64_t)H * W;
  for (int b = 0; b < B; ++b)
    for (int64_t p = 0; p < plane; ++p) {
      const float* z = logits.data.data() + (int64_t)b * C * plane + p;
      float* y = out.data.data() + (int64_t)b * C * plane + p;
      float m = z[0];
      for (int c = 1; c < C; ++c) m = std::max(m, z[(int64_t)c * plane]);
      double denom = 0.0;
      for (int c = 0; c < C; ++c) denom += std::exp((double)z[(int64_t)c * plane] - (double)m);
      for (int c = 0; c < C; ++c)
        y[(int64_t)c * plane] = (float)(std::exp((double)z[(int64_t)c * plane] - (double)m) / denom);
    }
  check_finite(out, "softmax_channels");
  return out;
}

inline void softmax_channels_backward(const Tensor& probs, const Tensor& dout, Tensor* dlogits) {
  const int B = probs.dim(0), C = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
  const int64_t plane = (int64_t)H * W;
  for (int b = 0; b < B; ++b)
    for (int64_t p = 0; p < plane; ++p) {
      const float* y = probs.data.data() + (int64_t)b * C * plane + p;
      const float* g = dout.data.data() + (int64_t)b * C * plane + p;
      float* d = dlogits->data.data() + (int64_t)b * C * plane + p;
      double dot = 0.0;
      for (int c = 0; c < C; ++c)
        dot += (double)g[(int64_t)c * plane] * (double)y[(int64_t)c * plane];
      for (int c = 0; c < C; ++c)
        d[(int64_t)c * plane] +=
            (float)((double)y[(int64_t)c * plane] * ((double)g[(int64_t)c * plane] - dot));
    }
}

/// Channels of `a` followed by channels of `b`.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.rank() == 4 && b.rank() == 4,
          "concat_channels: inputs must be 4-d: " + shape_str(a.shape) + " and " + shape_str(b.shape));
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels: batch/spatial mismatch: " + shape_str(a.shape) + " vs " +
              shape_str(b.shape));
  const int B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
  Tensor out = Tensor::zeros({B, Ca + Cb, H, W});
  const int64_t plane = (int64_t)H * W;
  for (int bi = 0; bi < B; ++bi) {
    std::copy_n(a.data.data() + (int64_t)bi * Ca * plane, (size_t)(Ca * plane),
                out.data.data() + (int64_t)bi * (Ca + Cb) * plane);
    std::copy_n(b.data.data() + (int64_t)bi * Cb * plane, (size_t)(Cb * plane),
                out.data.data() + (int64_t)bi * (Ca + Cb) * plane + (int64_t)Ca * plane);
  }
  return out;
}

inline void concat_channels_backward(int ca, int cb, const Tensor& dout, Tensor* da, Tensor* db) {
  const int B = dout.dim(0), H = dout.dim(2), W = dout.dim(3);
  const int64_t plane = (int64_t)H * W;
  for (int bi = 0; bi < B; ++bi)
    for (int64_t i = 0; i < (int64_t)(ca + cb) * plane; ++i) {
      const float g = dout.data[(size_t)((int64_t)bi * (ca + cb) * plane + i)];
      if (i < (int64_t)ca * plane)
        da->data[(size_t)((int64_t)bi * ca * plane + i)] += g;
      else
        db->data[(size_t)((int64_t)bi * cb * plane + (i - (int64_t)ca * plane))] += g;
    }
}

}  // namespace fat::ops
