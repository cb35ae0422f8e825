#pragma once

// OpenMP-parallel numeric kernels. Every kernel here has a naive serial
// counterpart in reference.hpp; tests and bench/ compare the two.

#include <cstdint>

#include "unifss/tensor.hpp"

namespace unifss::kernels {

// Norm floor applied before dividing in cosine similarity.
inline constexpr double kNormFloor = 1e-8;

// a: [c x Pa], b: [c x Pb] (columns are feature vectors).
// Returns [Pa x Pb] with ReLU(cos(a[:,i], b[:,j])). Zero-norm columns give 0.
Tensor cosine_relu(const Tensor& a, const Tensor& b);

// Same-shape 2D convolution over a batch.
// x: [B x Ci x H x W], w: [Co x Ci x k x k], bias: [Co] or empty.
// Output: [B x Co x Ho x Wo], Ho = (H + 2*pad - k) / stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);

struct Conv2dGrads {
  Tensor dx;  // empty when not requested
  Tensor dw;
  Tensor db;
};
Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int stride, int pad,
                            bool need_dx);

// Depth-wise 2D convolution with same padding and stride 1.
// x: [B x C x H x W], w: [C x k x k], bias: [C].
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias);
Conv2dGrads depthwise_conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, bool need_dx);

// Center-pivot 4D convolution with same padding (k odd).
// x: [Ci x h x w x hs x ws]; query_kernel, support_kernel: [Co x Ci x k x k].
// Output: [Co x ceil(h/sq) x ceil(w/sq) x ceil(hs/ss) x ceil(ws/ss)].
struct CenterPivotStride {
  int query = 1;
  int support = 1;
};
Tensor center_pivot_conv4d(const Tensor& x, const Tensor& query_kernel, const Tensor& query_bias,
                           const Tensor& support_kernel, const Tensor& support_bias,
                           CenterPivotStride stride);

struct CenterPivotGrads {
  Tensor dx;
  Tensor d_query_kernel;
  Tensor d_query_bias;
  Tensor d_support_kernel;
  Tensor d_support_bias;
};
CenterPivotGrads center_pivot_conv4d_backward(const Tensor& x, const Tensor& query_kernel,
                                              const Tensor& support_kernel, const Tensor& dy,
                                              CenterPivotStride stride, bool need_dx);

// Bilinear resize (align_corners = true) of axes 1 and 2 of x: [A x H x W x R].
Tensor upsample_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w);
Tensor upsample_bilinear_backward(const Tensor& dy, std::int64_t in_h, std::int64_t in_w);

}  // namespace unifss::kernels
