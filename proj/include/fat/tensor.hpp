#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fat {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline int64_t shape_product(const std::vector<int>& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

/// Dense row-major float32 tensor. Shape is validated against the data length
/// on construction. Zero-sized dimensions are permitted (empty slices).
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<float> d)
      : shape(std::move(s)), data(std::move(d)) {
    for (int dim : shape)
      require(dim >= 0, "tensor: negative dimension in " + shape_str(shape));
    require(shape_product(shape) == (int64_t)data.size(),
            "tensor: shape " + shape_str(shape) + " does not match data length " +
                std::to_string(data.size()));
  }

  static Tensor zeros(std::vector<int> s) {
    int64_t n = shape_product(s);
    return Tensor(std::move(s), std::vector<float>((size_t)n, 0.0f));
  }

  static Tensor full(std::vector<int> s, float v) {
    int64_t n = shape_product(s);
    return Tensor(std::move(s), std::vector<float>((size_t)n, v));
  }

  int rank() const { return (int)shape.size(); }
  int dim(int i) const { return shape[(size_t)i]; }
  int64_t size() const { return (int64_t)data.size(); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // [B,C,H,W] addressing for the 4-d case.
  float& at4(int b, int c, int h, int w) {
    return data[(size_t)(((int64_t)(b * dim(1) + c) * dim(2) + h) * dim(3) + w)];
  }
  float at4(int b, int c, int h, int w) const {
    return data[(size_t)(((int64_t)(b * dim(1) + c) * dim(2) + h) * dim(3) + w)];
  }
};

/// Non-finite values anywhere in an op output are a hard error.
inline void check_finite(const Tensor& t, const char* where) {
  for (float v : t.data)
    if (!std::isfinite(v))
      throw std::runtime_error(std::string(where) + ": non-finite value in output");
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.same_shape(b), std::string(op) + ": shape mismatch: " + shape_str(a.shape) +
                               " vs " + shape_str(b.shape));
}

}  // namespace fat
