#pragma once

// Minimal tape-free reverse-mode autodiff. Each op records a closure that
// pushes its output gradient into its parents; backward() walks the graph in
// reverse topological order. One forward pass handles one episode; batches are
// formed by accumulating parameter gradients over several passes.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "unifss/kernels.hpp"
#include "unifss/tensor.hpp"

namespace unifss::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Tensor& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  static Var constant(Tensor value) { return Var(std::move(value), false); }
  static Var parameter(Tensor value) { return Var(std::move(value), true); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

  void zero_grad();
  // Seeds d(self)/d(self) = 1; self must hold a single element.
  void backward() const;

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

// Records an op implemented elsewhere. `backward` reads the node's grad and
// forwards it to the inputs with accumulate_grad.
Var custom_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);
void accumulate_grad(const Var& target, const Tensor& g);

// Elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& x);
Var gelu(const Var& x);

// Reductions to a scalar
Var sum(const Var& x);
Var weighted_sum(const Var& x, const Tensor& weights);
// Mean over the last n axes.
Var mean_trailing(const Var& x, int n);

// Structure
Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, const std::vector<int>& perm);
Var concat(const std::vector<Var>& parts);  // along axis 0
Var slice(const Var& x, std::int64_t begin, std::int64_t end);  // along axis 0

// Affine map along `axis`: y[..., o, ...] = sum_c w[o, c] x[..., c, ...] + b[o].
Var linear(const Var& x, const Var& w, const Var& b, int axis);

// x: [Ci x H x W] or [B x Ci x H x W].
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// x: [B x C x H x W], w: [C x k x k], b: [C].
Var depthwise_conv2d(const Var& x, const Var& w, const Var& b);
// x: [Ci x h x w x h' x w'].
Var center_pivot_conv4d(const Var& x, const Var& query_kernel, const Var& query_bias, const Var& support_kernel,
                        const Var& support_bias, kernels::CenterPivotStride stride);

// Group normalization over a single sample x: [C x ...].
Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, double eps = 1e-5);
// Layer normalization along `axis` with per-element affine of that axis length.
Var layer_norm(const Var& x, int axis, const Var& gamma, const Var& beta, double eps = 1e-5);

// Bilinear (align_corners) resize of axes 1,2. x: [C x H x W] or [C x H x W x ...].
Var upsample_bilinear(const Var& x, std::int64_t out_h, std::int64_t out_w);

// Multi-head scaled dot-product attention. q: [d x P], k, v: [d x S]; heads | d.
Var attention(const Var& q, const Var& k, const Var& v, int heads);

}  // namespace unifss::ag
