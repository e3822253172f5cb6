#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fat/gradcheck.hpp"
#include "fat/ops.hpp"
#include "fat/rng.hpp"
#include "fat/tensor.hpp"

using namespace fat;

namespace {

Tensor random_tensor(std::vector<int> shape, RngStream& rng, float scale = 1.0f) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (float& v : t.data) v = scale * rng.normal();
  return t;
}

/// Independent convolution oracle: materializes the zero-padded input and
/// runs the textbook correlation over it. Accumulation order matches the
/// production kernel (channel, kernel row, kernel column), so results agree
/// bit for bit.
Tensor ref_conv2d(const Tensor& in, const Tensor& kernel, const Tensor& bias, int stride,
                  int padding) {
  const int B = in.dim(0), Ci = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int Co = kernel.dim(0), kH = kernel.dim(2), kW = kernel.dim(3);
  const int Hp = H + 2 * padding, Wp = W + 2 * padding;
  Tensor padded = Tensor::zeros({B, Ci, Hp, Wp});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < Ci; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          padded.at4(b, c, h + padding, w + padding) = in.at4(b, c, h, w);
  const int Ho = (Hp - kH) / stride + 1;
  const int Wo = (Wp - kW) / stride + 1;
  Tensor out = Tensor::zeros({B, Co, Ho, Wo});
  for (int b = 0; b < B; ++b)
    for (int co = 0; co < Co; ++co)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          double acc = bias.data[(size_t)co];
          for (int ci = 0; ci < Ci; ++ci)
            for (int r = 0; r < kH; ++r)
              for (int c = 0; c < kW; ++c)
                acc += (double)padded.at4(b, ci, oh * stride + r, ow * stride + c) *
                       (double)kernel.at4(co, ci, r, c);
          out.at4(b, co, oh, ow) = (float)acc;
        }
  return out;
}

}  // namespace

TEST_CASE("tensor construction validates shape against data") {
  CHECK_THROWS(Tensor({2, 3}, {1.0f, 2.0f}));
  CHECK_THROWS(Tensor({-1, 3}, {}));
  const Tensor z = Tensor::zeros({2, 2});
  CHECK(z.size() == 4);
  const Tensor f = Tensor::full({3}, 2.5f);
  CHECK(f.data == std::vector<float>{2.5f, 2.5f, 2.5f});
  Tensor empty = Tensor::zeros({0, 4});
  CHECK(empty.size() == 0);
}

TEST_CASE("at4 follows row-major [B,C,H,W] layout") {
  Tensor t = Tensor::zeros({2, 3, 4, 5});
  t.at4(1, 2, 3, 4) = 9.0f;
  CHECK(t.data[(size_t)(((1 * 3 + 2) * 4 + 3) * 5 + 4)] == 9.0f);
  t.at4(0, 0, 0, 1) = 5.0f;
  CHECK(t.data[1] == 5.0f);
}

TEST_CASE("check_finite rejects NaN and infinity") {
  Tensor t = Tensor::zeros({2});
  CHECK_NOTHROW(check_finite(t, "test"));
  t.data[1] = std::nanf("");
  CHECK_THROWS(check_finite(t, "test"));
  t.data[1] = INFINITY;
  CHECK_THROWS(check_finite(t, "test"));
}

TEST_CASE("conv2d matches the padded-buffer oracle bit for bit") {
  RngStream rng(100);
  const struct {
    int B, Ci, Co, k, stride, pad, H, W;
  } cases[] = {
      {1, 1, 1, 1, 1, 0, 4, 4},  {1, 1, 2, 3, 1, 1, 6, 6},  {2, 3, 4, 3, 1, 1, 5, 7},
      {1, 2, 3, 5, 1, 2, 8, 8},  {2, 1, 2, 3, 2, 1, 8, 8},  {1, 3, 2, 3, 2, 1, 16, 16},
      {1, 2, 2, 5, 2, 2, 9, 11}, {2, 2, 1, 1, 2, 0, 6, 6},  {1, 1, 4, 3, 1, 0, 7, 5},
      {1, 4, 1, 3, 2, 0, 10, 9},
  };
  for (const auto& c : cases) {
    const Tensor x = random_tensor({c.B, c.Ci, c.H, c.W}, rng);
    const Tensor k = random_tensor({c.Co, c.Ci, c.k, c.k}, rng, 0.5f);
    const Tensor b = random_tensor({c.Co}, rng, 0.1f);
    const Tensor got = ops::conv2d(x, k, b, c.stride, c.pad);
    const Tensor want = ref_conv2d(x, k, b, c.stride, c.pad);
    REQUIRE(got.shape == want.shape);
    for (size_t i = 0; i < got.data.size(); ++i) REQUIRE(got.data[i] == want.data[i]);
  }
}

TEST_CASE("conv2d output sizing follows the floor rule") {
  RngStream rng(5);
  auto shape_of = [&](int H, int W, int k, int s, int p) {
    const Tensor x = random_tensor({1, 1, H, W}, rng);
    const Tensor ker = random_tensor({1, 1, k, k}, rng);
    const Tensor b = Tensor::zeros({1});
    return ops::conv2d(x, ker, b, s, p).shape;
  };
  CHECK(shape_of(16, 16, 3, 1, 1) == std::vector<int>{1, 1, 16, 16});
  CHECK(shape_of(16, 16, 3, 2, 1) == std::vector<int>{1, 1, 8, 8});
  CHECK(shape_of(16, 16, 1, 1, 0) == std::vector<int>{1, 1, 16, 16});
  CHECK(shape_of(7, 9, 3, 2, 1) == std::vector<int>{1, 1, 4, 5});
  CHECK(shape_of(8, 8, 5, 1, 2) == std::vector<int>{1, 1, 8, 8});
}

TEST_CASE("conv2d rejects malformed arguments") {
  RngStream rng(6);
  const Tensor x = random_tensor({1, 2, 8, 8}, rng);
  const Tensor k = random_tensor({3, 2, 3, 3}, rng);
  const Tensor b = Tensor::zeros({3});
  CHECK_THROWS(ops::conv2d(x, random_tensor({3, 2, 2, 2}, rng), b, 1, 1));  // even kernel
  CHECK_THROWS(ops::conv2d(x, k, b, 3, 1));                                 // bad stride
  CHECK_THROWS(ops::conv2d(x, k, b, 1, -1));                                // bad padding
  CHECK_THROWS(ops::conv2d(x, k, Tensor::zeros({2}), 1, 1));                // bias mismatch
  CHECK_THROWS(ops::conv2d(random_tensor({1, 3, 8, 8}, rng), k, b, 1, 1));  // channels
  CHECK_THROWS(ops::conv2d(random_tensor({1, 2, 2, 2}, rng),
                           random_tensor({3, 2, 5, 5}, rng), b, 1, 0));     // too small
  CHECK_NOTHROW(ops::conv2d(x, k, b, 2, 1));
}

TEST_CASE("relu clamps negatives and keeps positives") {
  const Tensor x({6}, {-2.0f, -0.0f, 0.0f, 0.5f, 3.0f, -1e-8f});
  const Tensor y = ops::relu(x);
  CHECK(y.data == std::vector<float>{0.0f, 0.0f, 0.0f, 0.5f, 3.0f, 0.0f});
}

TEST_CASE("relu backward uses subgradient zero at exactly zero") {
  const Tensor x({4}, {-1.0f, 0.0f, 2.0f, 5.0f});
  const Tensor dout({4}, {10.0f, 10.0f, 10.0f, 10.0f});
  Tensor dx = Tensor::zeros({4});
  ops::relu_backward(x, dout, &dx);
  CHECK(dx.data == std::vector<float>{0.0f, 0.0f, 10.0f, 10.0f});
}

TEST_CASE("upsample_nearest2x replicates 2x2 blocks and its backward sums them") {
  const Tensor x({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  const Tensor y = ops::upsample_nearest2x(x);
  REQUIRE(y.shape == std::vector<int>{1, 1, 4, 4});
  const std::vector<float> want = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  CHECK(y.data == want);

  Tensor dout = Tensor::zeros({1, 1, 4, 4});
  for (size_t i = 0; i < dout.data.size(); ++i) dout.data[i] = (float)i;
  Tensor dx = Tensor::zeros({1, 1, 2, 2});
  ops::upsample_nearest2x_backward(dout, &dx);
  // each input cell receives the sum of its four replicas
  CHECK(dx.data == std::vector<float>{0 + 1 + 4 + 5, 2 + 3 + 6 + 7, 8 + 9 + 12 + 13,
                                      10 + 11 + 14 + 15});
}

TEST_CASE("softmax_channels normalizes each pixel and resists large shifts") {
  RngStream rng(8);
  Tensor logits = random_tensor({2, 3, 4, 4}, rng, 2.0f);
  const Tensor p = ops::softmax_channels(logits);
  const int64_t plane = 16;
  for (int b = 0; b < 2; ++b)
    for (int64_t i = 0; i < plane; ++i) {
      double s = 0.0;
      for (int c = 0; c < 3; ++c) s += p.data[(size_t)(((int64_t)b * 3 + c) * plane + i)];
      REQUIRE(std::fabs(s - 1.0) < 1e-6);
    }

  // Shift invariance, exact version: inputs quantized to multiples of 2^-10
  // stay exactly representable after adding 1024, so x - max(x) is bit-equal
  // before and after the shift and the outputs must match to the last bit.
  Tensor quant = logits;
  for (float& v : quant.data) v = std::round(v * 1024.0f) / 1024.0f;
  Tensor quant_shifted = quant;
  for (float& v : quant_shifted.data) v += 1024.0f;
  const Tensor pq = ops::softmax_channels(quant);
  const Tensor pq2 = ops::softmax_channels(quant_shifted);
  for (size_t i = 0; i < pq.data.size(); ++i) REQUIRE(pq.data[i] == pq2.data[i]);

  // Robustness version: +1000 is not representable next to small floats, so
  // the inputs themselves move by ~1e-4; outputs must stay normalized and
  // close, and naive exp would have overflowed long before this.
  Tensor shifted = logits;
  for (float& v : shifted.data) v += 1000.0f;
  const Tensor p2 = ops::softmax_channels(shifted);
  for (size_t i = 0; i < p.data.size(); ++i) {
    REQUIRE(std::isfinite(p2.data[i]));
    REQUIRE(std::fabs((double)p.data[i] - (double)p2.data[i]) < 5e-4);
  }

  // closed-form two-channel case: logits (0, ln 3) -> probs (0.25, 0.75)
  const Tensor two({1, 2, 1, 1}, {0.0f, std::log(3.0f)});
  const Tensor q = ops::softmax_channels(two);
  CHECK(std::fabs(q.data[0] - 0.25) < 1e-6);
  CHECK(std::fabs(q.data[1] - 0.75) < 1e-6);

  CHECK_THROWS(ops::softmax_channels(random_tensor({1, 1, 2, 2}, rng)));  // needs >= 2 channels
}

TEST_CASE("concat_channels stacks a then b and the backward splits gradients") {
  const Tensor a({1, 2, 1, 2}, {1, 2, 3, 4});
  const Tensor b({1, 1, 1, 2}, {5, 6});
  const Tensor y = ops::concat_channels(a, b);
  REQUIRE(y.shape == std::vector<int>{1, 3, 1, 2});
  CHECK(y.data == std::vector<float>{1, 2, 3, 4, 5, 6});

  Tensor dout({1, 3, 1, 2}, {10, 20, 30, 40, 50, 60});
  Tensor da = Tensor::zeros(a.shape), db = Tensor::zeros(b.shape);
  ops::concat_channels_backward(2, 1, dout, &da, &db);
  CHECK(da.data == std::vector<float>{10, 20, 30, 40});
  CHECK(db.data == std::vector<float>{50, 60});

  CHECK_THROWS(ops::concat_channels(a, Tensor::zeros({1, 1, 2, 2})));  // spatial mismatch
  CHECK_THROWS(ops::concat_channels(a, Tensor::zeros({2, 1, 1, 2})));  // batch mismatch
}

TEST_CASE("conv2d gradients agree with finite differences for every argument") {
  RngStream rng(200);
  int cases = 0;
  for (int rep = 0; rep < 6; ++rep) {
    const int B = 1 + (int)rng.next_below(2);
    const int Ci = 1 + (int)rng.next_below(3);
    const int Co = 1 + (int)rng.next_below(3);
    const int k = rng.next_unit() < 0.5 ? 1 : 3;
    const int stride = rng.next_unit() < 0.5 ? 1 : 2;
    const int pad = (int)rng.next_below(2);
    const int H = 4 + 2 * (int)rng.next_below(3);
    const int W = 4 + 2 * (int)rng.next_below(3);
    if (H + 2 * pad < k || W + 2 * pad < k) continue;
    const Tensor x0 = random_tensor({B, Ci, H, W}, rng);
    const Tensor k0 = random_tensor({Co, Ci, k, k}, rng, 0.5f);
    const Tensor b0 = random_tensor({Co}, rng, 0.1f);
    // fixed projection makes the output a scalar function
    const Tensor probe = random_tensor(ops::conv2d(x0, k0, b0, stride, pad).shape, rng);

    auto weigh = [&](const Tensor& y) {
      double s = 0.0;
      for (size_t i = 0; i < y.data.size(); ++i) s += (double)y.data[i] * (double)probe.data[i];
      return s;
    };

    // d/d input
    auto f_in = [&](const std::vector<float>& flat, std::vector<float>* grad) {
      const Tensor x(x0.shape, flat);
      const double val = weigh(ops::conv2d(x, k0, b0, stride, pad));
      if (grad) {
        Tensor dx = Tensor::zeros(x0.shape);
        ops::conv2d_backward(x, k0, stride, pad, probe, &dx, nullptr, nullptr);
        *grad = dx.data;
      }
      return val;
    };
    CHECK(finite_diff_check_flat(f_in, x0.data, 1e-3, 5, 77 + (uint64_t)rep) < 1e-2);

    // d/d kernel
    auto f_ker = [&](const std::vector<float>& flat, std::vector<float>* grad) {
      const Tensor kk(k0.shape, flat);
      const double val = weigh(ops::conv2d(x0, kk, b0, stride, pad));
      if (grad) {
        Tensor dk = Tensor::zeros(k0.shape);
        ops::conv2d_backward(x0, kk, stride, pad, probe, nullptr, &dk, nullptr);
        *grad = dk.data;
      }
      return val;
    };
    CHECK(finite_diff_check_flat(f_ker, k0.data, 1e-3, 5, 78 + (uint64_t)rep) < 1e-2);

    // d/d bias
    auto f_bias = [&](const std::vector<float>& flat, std::vector<float>* grad) {
      const Tensor bb(b0.shape, flat);
      const double val = weigh(ops::conv2d(x0, k0, bb, stride, pad));
      if (grad) {
        Tensor db = Tensor::zeros(b0.shape);
        ops::conv2d_backward(x0, k0, stride, pad, probe, nullptr, nullptr, &db);
        *grad = db.data;
      }
      return val;
    };
    CHECK(finite_diff_check_flat(f_bias, b0.data, 1e-3, 2, 79 + (uint64_t)rep) < 1e-2);
    cases += 3;
  }
  CHECK(cases >= 15);
}

TEST_CASE("relu, upsample and softmax gradients agree with finite differences") {
  RngStream rng(300);
  for (int rep = 0; rep < 4; ++rep) {
    const int B = 1 + (int)rng.next_below(2);
    const int C = 2 + (int)rng.next_below(3);
    const int H = 2 + 2 * (int)rng.next_below(3);
    const int W = 2 + 2 * (int)rng.next_below(3);
    Tensor x0 = random_tensor({B, C, H, W}, rng);
    // keep activations away from the relu kink so the FD probe stays one-sided
    for (float& v : x0.data)
      if (std::fabs(v) < 0.05f) v = v < 0 ? v - 0.05f : v + 0.05f;
    const Tensor probe = random_tensor({B, C, H, W}, rng);
    const Tensor probe_up = random_tensor({B, C, 2 * H, 2 * W}, rng);

    auto weigh = [](const Tensor& y, const Tensor& p) {
      double s = 0.0;
      for (size_t i = 0; i < y.data.size(); ++i) s += (double)y.data[i] * (double)p.data[i];
      return s;
    };

    auto f_relu = [&](const std::vector<float>& flat, std::vector<float>* grad) {
      const Tensor x(x0.shape, flat);
      const double val = weigh(ops::relu(x), probe);
      if (grad) {
        Tensor dx = Tensor::zeros(x0.shape);
        ops::relu_backward(x, probe, &dx);
        *grad = dx.data;
      }
      return val;
    };
    CHECK(finite_diff_check_flat(f_relu, x0.data, 1e-4, 6, 11 + (uint64_t)rep) < 1e-2);

    auto f_up = [&](const std::vector<float>& flat, std::vector<float>* grad) {
      const Tensor x(x0.shape, flat);
      const double val = weigh(ops::upsample_nearest2x(x), probe_up);
      if (grad) {
        Tensor dx = Tensor::zeros(x0.shape);
        ops::upsample_nearest2x_backward(probe_up, &dx);
        *grad = dx.data;
      }
      return val;
    };
    CHECK(finite_diff_check_flat(f_up, x0.data, 1e-4, 6, 12 + (uint64_t)rep) < 1e-2);

    auto f_soft = [&](const std::vector<float>& flat, std::vector<float>* grad) {
      const Tensor x(x0.shape, flat);
      const Tensor p = ops::softmax_channels(x);
      const double val = weigh(p, probe);
      if (grad) {
        Tensor dx = Tensor::zeros(x0.shape);
        ops::softmax_channels_backward(p, probe, &dx);
        *grad = dx.data;
      }
      return val;
    };
    // logits are unconstrained, so the probe step can be large enough to beat
    // float storage noise on this smooth function
    CHECK(finite_diff_check_flat(f_soft, x0.data, 1e-2, 6, 13 + (uint64_t)rep) < 1e-2);

    auto f_cat = [&](const std::vector<float>& flat, std::vector<float>* grad) {
      const Tensor x(x0.shape, flat);
      const Tensor both = ops::concat_channels(x, x0);
      Tensor probe2 = Tensor::zeros(both.shape);
      for (size_t i = 0; i < probe2.data.size(); ++i)
        probe2.data[i] = (float)((i * 2654435761u % 97) / 97.0 - 0.5);
      const double val = weigh(both, probe2);
      if (grad) {
        Tensor dx = Tensor::zeros(x0.shape);
        Tensor ignore = Tensor::zeros(x0.shape);
        ops::concat_channels_backward(C, C, probe2, &dx, &ignore);
        *grad = dx.data;
      }
      return val;
    };
    CHECK(finite_diff_check_flat(f_cat, x0.data, 1e-4, 4, 14 + (uint64_t)rep) < 1e-2);
  }
}

TEST_CASE("conv2d_backward skips null gradient outputs") {
  RngStream rng(9);
  const Tensor x = random_tensor({1, 2, 6, 6}, rng);
  const Tensor k = random_tensor({2, 2, 3, 3}, rng);
  const Tensor b = Tensor::zeros({2});
  const Tensor y = ops::conv2d(x, k, b, 1, 1);
  const Tensor dout = Tensor::full(y.shape, 1.0f);
  Tensor dk = Tensor::zeros(k.shape);
  CHECK_NOTHROW(ops::conv2d_backward(x, k, 1, 1, dout, nullptr, &dk, nullptr));
  double mag = 0.0;
  for (float v : dk.data) mag += std::fabs(v);
  CHECK(mag > 0.0);
}
