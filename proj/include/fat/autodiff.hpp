#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "fat/ops.hpp"
#include "fat/tensor.hpp"

namespace fat {

/// Wengert-list reverse-mode tape over the fixed op set in fat::ops.
/// Node ids are indices into the list; backward() walks them root to zero,
/// so every node's pull runs after all of its consumers.
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  /// Register an input or parameter tensor.
  int leaf(Tensor t) { return emplace(std::move(t)); }

  const Tensor& value(int id) const { return nodes_[check_id(id)].value; }
  const Tensor& grad(int id) const { return nodes_[check_id(id)].grad; }
  Tensor& grad_mut(int id) { return nodes_[check_id(id)].grad; }
  int node_count() const { return (int)nodes_.size(); }

  /// Value of a single-element node.
  float scalar(int id) const {
    const Tensor& v = value(id);
    require(v.size() == 1, "scalar: node holds " + shape_str(v.shape));
    return v.data[0];
  }

  int conv2d(int in, int kernel, int bias, int stride, int padding) {
    Tensor out = ops::conv2d(value(in), value(kernel), value(bias), stride, padding);
    const int id = emplace(std::move(out));
    set_pull(id, [this, id, in, kernel, bias, stride, padding] {
      ops::conv2d_backward(value(in), value(kernel), stride, padding, grad(id), &grad_mut(in),
                           &grad_mut(kernel), &grad_mut(bias));
    });
    return id;
  }

  int relu(int x) {
    const int id = emplace(ops::relu(value(x)));
    set_pull(id, [this, id, x] { ops::relu_backward(value(x), grad(id), &grad_mut(x)); });
    return id;
  }

  int upsample_nearest2x(int x) {
    const int id = emplace(ops::upsample_nearest2x(value(x)));
    set_pull(id, [this, id, x] { ops::upsample_nearest2x_backward(grad(id), &grad_mut(x)); });
    return id;
  }

  int softmax_channels(int logits) {
    const int id = emplace(ops::softmax_channels(value(logits)));
    set_pull(id, [this, id, logits] {
      ops::softmax_channels_backward(value(id), grad(id), &grad_mut(logits));
    });
    return id;
  }

  int concat_channels(int a, int b) {
    const int ca = value(a).dim(1), cb = value(b).dim(1);
    const int id = emplace(ops::concat_channels(value(a), value(b)));
    set_pull(id, [this, id, a, b, ca, cb] {
      ops::concat_channels_backward(ca, cb, grad(id), &grad_mut(a), &grad_mut(b));
    });
    return id;
  }

  int add(int a, int b) {
    check_same_shape(value(a), value(b), "add");
    Tensor out = value(a);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += value(b).data[i];
    const int id = emplace(std::move(out));
    set_pull(id, [this, id, a, b] {
      const Tensor& g = grad(id);
      for (size_t i = 0; i < g.data.size(); ++i) {
        grad_mut(a).data[i] += g.data[i];
        grad_mut(b).data[i] += g.data[i];
      }
    });
    return id;
  }

  /// Create a node with a custom pull; used by the taped loss functions.
  int emplace(Tensor value) {
    Tensor g = Tensor::zeros(value.shape);
    nodes_.push_back(Node{std::move(value), std::move(g), nullptr});
    return (int)nodes_.size() - 1;
  }

  void set_pull(int id, std::function<void()> fn) { nodes_[check_id(id)].pull = std::move(fn); }

  /// Seed d(root)/d(root) = 1 and propagate. Root must be a single element.
  void backward(int root) {
    const Tensor& rv = value(root);
    require(rv.size() == 1, "backward: root must be scalar, got " + shape_str(rv.shape));
    nodes_[(size_t)root].grad.data[0] = 1.0f;
    for (int id = root; id >= 0; --id)
      if (nodes_[(size_t)id].pull) nodes_[(size_t)id].pull();
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void()> pull;
  };

  size_t check_id(int id) const {
    require(id >= 0 && id < (int)nodes_.size(), "tape: bad node id");
    return (size_t)id;
  }

  std::vector<Node> nodes_;
};

}  // namespace fat
