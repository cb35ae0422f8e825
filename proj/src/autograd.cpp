#include "unifss/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "unifss/errors.hpp"

namespace unifss::ag {
namespace {

thread_local bool g_grad_enabled = true;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

Var make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  Var out(std::move(value), needs);
  if (needs) {
    auto& node = *out.node();
    for (auto& in : inputs) node.parents.push_back(in.node());
    node.backward_fn = std::move(fn);
  }
  return out;
}

void push(const Var& target, const Tensor& g) {
  if (target.requires_grad()) target.node()->accumulate(g);
}

bool wants(const Var& v) { return v.requires_grad(); }

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

struct AxisSplit {
  std::int64_t outer = 1, channels = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
  if (axis < 0 || static_cast<std::size_t>(axis) >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  }
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.channels = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

void Node::accumulate(const Tensor& g) {
  if (grad.empty() && value.numel() > 0) {
    grad = g;
    return;
  }
  if (g.numel() != grad.numel()) throw ShapeError("gradient shape mismatch during accumulation");
  for (std::int64_t i = 0; i < g.numel(); ++i) grad[i] += g[i];
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

void Var::backward() const {
  if (!node_ || node_->value.numel() != 1) throw ShapeError("backward() needs a single-element output");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS yields a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->accumulate(Tensor(node_->value.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

Var custom_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  return make(std::move(value), std::move(inputs), std::move(backward));
}

void accumulate_grad(const Var& target, const Tensor& g) { push(target, g); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return make(std::move(out), {a, b}, [a, b](Node& n) {
    push(a, n.grad);
    push(b, n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return make(std::move(out), {a, b}, [a, b](Node& n) {
    push(a, n.grad);
    if (wants(b)) {
      Tensor g = n.grad;
      for (auto& v : g.values()) v = -v;
      push(b, g);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return make(std::move(out), {a, b}, [a, b](Node& n) {
    if (wants(a)) {
      Tensor g = n.grad;
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= b.value()[i];
      push(a, g);
    }
    if (wants(b)) {
      Tensor g = n.grad;
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= a.value()[i];
      push(b, g);
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  return make(std::move(out), {a}, [a, s](Node& n) {
    Tensor g = n.grad;
    for (auto& v : g.values()) v *= s;
    push(a, g);
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make(std::move(out), {x}, [x](Node& n) {
    Tensor g = n.grad;
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      if (!(x.value()[i] > 0.0)) g[i] = 0.0;
    }
    push(x, g);
  });
}

Var gelu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return make(std::move(out), {x}, [x](Node& n) {
    Tensor g = n.grad;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double v = x.value()[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] *= cdf + v * pdf;
    }
    push(x, g);
  });
}

Var sum(const Var& x) {
  return make(Tensor::scalar(x.value().sum()), {x}, [x](Node& n) { push(x, Tensor(x.shape(), n.grad[0])); });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  if (weights.numel() != x.value().numel()) throw ShapeError("weighted_sum: weight count mismatch");
  double acc = 0.0;
  for (std::int64_t i = 0; i < weights.numel(); ++i) acc += weights[i] * x.value()[i];
  return make(Tensor::scalar(acc), {x}, [x, weights](Node& n) {
    Tensor g = weights.reshaped(x.shape());
    for (auto& v : g.values()) v *= n.grad[0];
    push(x, g);
  });
}

Var mean_trailing(const Var& x, int count) {
  const auto& shape = x.shape();
  if (count < 1 || static_cast<std::size_t>(count) > shape.size()) throw ShapeError("mean_trailing: bad axis count");
  const Shape out_shape(shape.begin(), shape.end() - count);
  const std::int64_t outer = numel(out_shape);
  const std::int64_t inner = outer == 0 ? 0 : x.value().numel() / outer;
  Tensor out(out_shape);
  for (std::int64_t o = 0; o < outer; ++o) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < inner; ++i) acc += x.value()[o * inner + i];
    out[o] = acc / static_cast<double>(inner);
  }
  return make(std::move(out), {x}, [x, outer, inner](Node& n) {
    Tensor g(x.shape());
    for (std::int64_t o = 0; o < outer; ++o) {
      const double v = n.grad[o] / static_cast<double>(inner);
      for (std::int64_t i = 0; i < inner; ++i) g[o * inner + i] = v;
    }
    push(x, g);
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make(std::move(out), {x}, [x](Node& n) { push(x, n.grad.reshaped(x.shape())); });
}

Var permute(const Var& x, const std::vector<int>& perm) {
  std::vector<int> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inverse[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  return make(unifss::permute(x.value(), perm), {x}, [x, inverse](Node& n) { push(x, unifss::permute(n.grad, inverse)); });
}

Var concat(const std::vector<Var>& parts) {
  std::vector<const Tensor*> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(&p.value());
  return make(concat_leading(values), parts, [parts](Node& n) {
    std::int64_t begin = 0;
    for (const auto& p : parts) {
      const std::int64_t len = p.shape()[0];
      if (wants(p)) push(p, slice_leading(n.grad, begin, begin + len));
      begin += len;
    }
  });
}

Var slice(const Var& x, std::int64_t begin, std::int64_t end) {
  return make(slice_leading(x.value(), begin, end), {x}, [x, begin](Node& n) {
    Tensor g(x.shape());
    const std::int64_t inner = x.shape()[0] == 0 ? 0 : g.numel() / x.shape()[0];
    std::copy(n.grad.storage().begin(), n.grad.storage().end(), g.storage().begin() + begin * inner);
    push(x, g);
  });
}

Var linear(const Var& x, const Var& w, const Var& b, int axis) {
  const AxisSplit s = split_at(x.shape(), axis);
  if (w.value().rank() != 2 || w.shape()[1] != s.channels) {
    throw ShapeError("linear: weight " + to_string(w.shape()) + " does not match input " + to_string(x.shape()) +
                     " on axis " + std::to_string(axis));
  }
  const std::int64_t co = w.shape()[0];
  if (b.defined() && b.value().numel() != co) throw ShapeError("linear: bias size mismatch");
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = co;
  Tensor out(out_shape);
  const ConstMatMap wm(w.value().data(), co, s.channels);
  for (std::int64_t o = 0; o < s.outer; ++o) {
    MatMap ym(out.data() + o * co * s.inner, co, s.inner);
    ym.noalias() = wm * ConstMatMap(x.value().data() + o * s.channels * s.inner, s.channels, s.inner);
    if (b.defined()) {
      for (std::int64_t r = 0; r < co; ++r) ym.row(r).array() += b.value()[r];
    }
  }
  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make(std::move(out), inputs, [x, w, b, s, co](Node& n) {
    const ConstMatMap wm(w.value().data(), co, s.channels);
    Tensor dx = wants(x) ? Tensor(x.shape()) : Tensor();
    Tensor dw = wants(w) ? Tensor(w.shape()) : Tensor();
    Tensor db = b.defined() && wants(b) ? Tensor(b.shape()) : Tensor();
    for (std::int64_t o = 0; o < s.outer; ++o) {
      const ConstMatMap gy(n.grad.data() + o * co * s.inner, co, s.inner);
      const ConstMatMap xm(x.value().data() + o * s.channels * s.inner, s.channels, s.inner);
      if (!dx.empty()) MatMap(dx.data() + o * s.channels * s.inner, s.channels, s.inner).noalias() = wm.transpose() * gy;
      if (!dw.empty()) MatMap(dw.data(), co, s.channels).noalias() += gy * xm.transpose();
      if (!db.empty()) {
        for (std::int64_t r = 0; r < co; ++r) db[r] += gy.row(r).sum();
      }
    }
    if (!dx.empty()) push(x, dx);
    if (!dw.empty()) push(w, dw);
    if (!db.empty()) push(b, db);
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  if (x.value().rank() == 3) {
    const auto& s = x.shape();
    Var batched = reshape(x, Shape{1, s[0], s[1], s[2]});
    Var y = conv2d(batched, w, b, stride, pad);
    const auto& ys = y.shape();
    return reshape(y, Shape{ys[1], ys[2], ys[3]});
  }
  const Tensor empty_bias;
  Tensor out = kernels::conv2d(x.value(), w.value(), b.defined() ? b.value() : empty_bias, stride, pad);
  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make(std::move(out), inputs, [x, w, b, stride, pad](Node& n) {
    auto g = kernels::conv2d_backward(x.value(), w.value(), n.grad, stride, pad, wants(x));
    if (wants(x)) push(x, g.dx);
    push(w, g.dw);
    if (b.defined()) push(b, g.db);
  });
}

Var depthwise_conv2d(const Var& x, const Var& w, const Var& b) {
  Tensor out = kernels::depthwise_conv2d(x.value(), w.value(), b.value());
  return make(std::move(out), {x, w, b}, [x, w, b](Node& n) {
    auto g = kernels::depthwise_conv2d_backward(x.value(), w.value(), n.grad, wants(x));
    if (wants(x)) push(x, g.dx);
    push(w, g.dw);
    push(b, g.db);
  });
}

Var center_pivot_conv4d(const Var& x, const Var& query_kernel, const Var& query_bias, const Var& support_kernel,
                        const Var& support_bias, kernels::CenterPivotStride stride) {
  Tensor out = kernels::center_pivot_conv4d(x.value(), query_kernel.value(), query_bias.value(),
                                            support_kernel.value(), support_bias.value(), stride);
  return make(std::move(out), {x, query_kernel, query_bias, support_kernel, support_bias},
              [x, query_kernel, query_bias, support_kernel, support_bias, stride](Node& n) {
                auto g = kernels::center_pivot_conv4d_backward(x.value(), query_kernel.value(),
                                                               support_kernel.value(), n.grad, stride, wants(x));
                if (wants(x)) push(x, g.dx);
                push(query_kernel, g.d_query_kernel);
                push(query_bias, g.d_query_bias);
                push(support_kernel, g.d_support_kernel);
                push(support_bias, g.d_support_bias);
              });
}

namespace {

// Per-group statistics kept for the backward pass.
struct NormStats {
  std::vector<double> mean, inv_std;
};

}  // namespace

Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, double eps) {
  const auto& shape = x.shape();
  if (shape.empty()) throw ShapeError("group_norm on a scalar");
  const std::int64_t c = shape[0];
  if (groups < 1 || c % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible by " + std::to_string(groups));
  }
  if (gamma.value().numel() != c || beta.value().numel() != c) throw ShapeError("group_norm affine size mismatch");
  const std::int64_t rest = x.value().numel() / c;
  const std::int64_t per_group = (c / groups) * rest;

  NormStats st{std::vector<double>(static_cast<std::size_t>(groups)),
               std::vector<double>(static_cast<std::size_t>(groups))};
  Tensor xhat(shape);
  Tensor out(shape);
  const Tensor& xv = x.value();
  for (int g = 0; g < groups; ++g) {
    const std::int64_t base = g * per_group;
    double mean = 0.0;
    for (std::int64_t i = 0; i < per_group; ++i) mean += xv[base + i];
    mean /= static_cast<double>(per_group);
    double var = 0.0;
    for (std::int64_t i = 0; i < per_group; ++i) var += (xv[base + i] - mean) * (xv[base + i] - mean);
    var /= static_cast<double>(per_group);
    const double inv = 1.0 / std::sqrt(var + eps);
    st.mean[static_cast<std::size_t>(g)] = mean;
    st.inv_std[static_cast<std::size_t>(g)] = inv;
    for (std::int64_t i = 0; i < per_group; ++i) {
      const std::int64_t idx = base + i;
      const std::int64_t ch = idx / rest;
      xhat[idx] = (xv[idx] - mean) * inv;
      out[idx] = xhat[idx] * gamma.value()[ch] + beta.value()[ch];
    }
  }
  return make(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, st, groups, rest, per_group, c](Node& n) {
    Tensor dgamma(Shape{c}), dbeta(Shape{c});
    Tensor dx = wants(x) ? Tensor(x.shape()) : Tensor();
    for (int g = 0; g < groups; ++g) {
      const std::int64_t base = g * per_group;
      double m1 = 0.0, m2 = 0.0;
      for (std::int64_t i = 0; i < per_group; ++i) {
        const std::int64_t idx = base + i;
        const std::int64_t ch = idx / rest;
        dgamma[ch] += n.grad[idx] * xhat[idx];
        dbeta[ch] += n.grad[idx];
        const double dxh = n.grad[idx] * gamma.value()[ch];
        m1 += dxh;
        m2 += dxh * xhat[idx];
      }
      if (dx.empty()) continue;
      m1 /= static_cast<double>(per_group);
      m2 /= static_cast<double>(per_group);
      const double inv = st.inv_std[static_cast<std::size_t>(g)];
      for (std::int64_t i = 0; i < per_group; ++i) {
        const std::int64_t idx = base + i;
        const double dxh = n.grad[idx] * gamma.value()[idx / rest];
        dx[idx] = inv * (dxh - m1 - xhat[idx] * m2);
      }
    }
    if (!dx.empty()) push(x, dx);
    push(gamma, dgamma);
    push(beta, dbeta);
  });
}

Var layer_norm(const Var& x, int axis, const Var& gamma, const Var& beta, double eps) {
  const AxisSplit s = split_at(x.shape(), axis);
  if (gamma.value().numel() != s.channels || beta.value().numel() != s.channels) {
    throw ShapeError("layer_norm: affine size does not match axis length " + std::to_string(s.channels));
  }
  const Tensor& xv = x.value();
  Tensor xhat(x.shape());
  Tensor out(x.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(s.outer * s.inner));
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t i = 0; i < s.inner; ++i) {
      const std::int64_t base = o * s.channels * s.inner + i;
      double mean = 0.0;
      for (std::int64_t ch = 0; ch < s.channels; ++ch) mean += xv[base + ch * s.inner];
      mean /= static_cast<double>(s.channels);
      double var = 0.0;
      for (std::int64_t ch = 0; ch < s.channels; ++ch) {
        const double d = xv[base + ch * s.inner] - mean;
        var += d * d;
      }
      var /= static_cast<double>(s.channels);
      const double inv = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(o * s.inner + i)] = inv;
      for (std::int64_t ch = 0; ch < s.channels; ++ch) {
        const std::int64_t idx = base + ch * s.inner;
        xhat[idx] = (xv[idx] - mean) * inv;
        out[idx] = xhat[idx] * gamma.value()[ch] + beta.value()[ch];
      }
    }
  }
  return make(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, s](Node& n) {
    Tensor dgamma(Shape{s.channels}), dbeta(Shape{s.channels});
    Tensor dx = wants(x) ? Tensor(x.shape()) : Tensor();
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t i = 0; i < s.inner; ++i) {
        const std::int64_t base = o * s.channels * s.inner + i;
        double m1 = 0.0, m2 = 0.0;
        for (std::int64_t ch = 0; ch < s.channels; ++ch) {
          const std::int64_t idx = base + ch * s.inner;
          dgamma[ch] += n.grad[idx] * xhat[idx];
          dbeta[ch] += n.grad[idx];
          const double dxh = n.grad[idx] * gamma.value()[ch];
          m1 += dxh;
          m2 += dxh * xhat[idx];
        }
        if (dx.empty()) continue;
        m1 /= static_cast<double>(s.channels);
        m2 /= static_cast<double>(s.channels);
        const double inv = inv_std[static_cast<std::size_t>(o * s.inner + i)];
        for (std::int64_t ch = 0; ch < s.channels; ++ch) {
          const std::int64_t idx = base + ch * s.inner;
          dx[idx] = inv * (n.grad[idx] * gamma.value()[ch] - m1 - xhat[idx] * m2);
        }
      }
    }
    if (!dx.empty()) push(x, dx);
    push(gamma, dgamma);
    push(beta, dbeta);
  });
}

Var upsample_bilinear(const Var& x, std::int64_t out_h, std::int64_t out_w) {
  const auto& s = x.shape();
  if (s.size() < 3) throw ShapeError("upsample_bilinear expects at least [C x H x W]");
  std::int64_t rest = 1;
  for (std::size_t i = 3; i < s.size(); ++i) rest *= s[i];
  const Tensor y4 = kernels::upsample_bilinear(x.value().reshaped(Shape{s[0], s[1], s[2], rest}), out_h, out_w);
  Shape out_shape = s;
  out_shape[1] = out_h;
  out_shape[2] = out_w;
  return make(y4.reshaped(out_shape), {x}, [x, rest](Node& n) {
    const auto& s = x.shape();
    const auto& gs = n.grad.shape();
    Tensor g = kernels::upsample_bilinear_backward(n.grad.reshaped(Shape{gs[0], gs[1], gs[2], rest}), s[1], s[2]);
    push(x, g.reshaped(s));
  });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads) {
  if (q.value().rank() != 2 || k.value().rank() != 2 || v.value().rank() != 2) {
    throw ShapeError("attention expects [d x P] queries and [d x S] keys/values");
  }
  const std::int64_t d = q.shape()[0], p = q.shape()[1], sl = k.shape()[1];
  if (k.shape()[0] != d || v.shape() != k.shape()) throw ShapeError("attention: key/value shape mismatch");
  if (heads < 1 || d % heads != 0) throw ShapeError("attention: width not divisible by head count");
  const std::int64_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs[h][p][s]
  Tensor probs(Shape{heads, p, sl});
  Tensor out(Shape{d, p});
  const Tensor &qv = q.value(), &kv = k.value(), &vv = v.value();
  for (std::int64_t h = 0; h < heads; ++h) {
    for (std::int64_t i = 0; i < p; ++i) {
      double mx = -INFINITY;
      for (std::int64_t j = 0; j < sl; ++j) {
        double acc = 0.0;
        for (std::int64_t e = 0; e < dh; ++e) acc += qv[(h * dh + e) * p + i] * kv[(h * dh + e) * sl + j];
        probs[(h * p + i) * sl + j] = acc * inv_sqrt;
        mx = std::max(mx, acc * inv_sqrt);
      }
      double z = 0.0;
      for (std::int64_t j = 0; j < sl; ++j) {
        double& a = probs[(h * p + i) * sl + j];
        a = std::exp(a - mx);
        z += a;
      }
      for (std::int64_t j = 0; j < sl; ++j) probs[(h * p + i) * sl + j] /= z;
      for (std::int64_t e = 0; e < dh; ++e) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < sl; ++j) acc += probs[(h * p + i) * sl + j] * vv[(h * dh + e) * sl + j];
        out[(h * dh + e) * p + i] = acc;
      }
    }
  }
  return make(std::move(out), {q, k, v}, [q, k, v, probs, heads, dh, p, sl, inv_sqrt](Node& n) {
    const Tensor &qv = q.value(), &kv = k.value(), &vv = v.value();
    Tensor dq(q.shape()), dk(k.shape()), dv(v.shape());
    std::vector<double> dprob(static_cast<std::size_t>(sl));
    for (std::int64_t h = 0; h < heads; ++h) {
      for (std::int64_t i = 0; i < p; ++i) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < sl; ++j) {
          double acc = 0.0;
          for (std::int64_t e = 0; e < dh; ++e) {
            const std::int64_t row = h * dh + e;
            acc += n.grad[row * p + i] * vv[row * sl + j];
            dv[row * sl + j] += probs[(h * p + i) * sl + j] * n.grad[row * p + i];
          }
          dprob[static_cast<std::size_t>(j)] = acc;
          dot += acc * probs[(h * p + i) * sl + j];
        }
        for (std::int64_t j = 0; j < sl; ++j) {
          const double ds = probs[(h * p + i) * sl + j] * (dprob[static_cast<std::size_t>(j)] - dot) * inv_sqrt;
          for (std::int64_t e = 0; e < dh; ++e) {
            const std::int64_t row = h * dh + e;
            dq[row * p + i] += ds * kv[row * sl + j];
            dk[row * sl + j] += ds * qv[row * p + i];
          }
        }
      }
    }
    push(q, dq);
    push(k, dk);
    push(v, dv);
  });
}

}  // namespace unifss::ag
