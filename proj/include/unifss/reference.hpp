#pragma once

// Naive serial implementations kept as oracles for the kernels in kernels.hpp.
// Written as direct loops over the defining sums; nothing here is fast.

#include "unifss/kernels.hpp"
#include "unifss/tensor.hpp"

namespace unifss::reference {

// Scalar-loop ReLU cosine between columns of a: [c x Pa] and b: [c x Pb].
Tensor cosine_relu(const Tensor& a, const Tensor& b);

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias);

// Expands the two center-pivot kernels [Co x Ci x k x k] into the equivalent
// sparse dense kernel [Co x Ci x k x k x k x k].
Tensor sparse_kernel_4d(const Tensor& query_kernel, const Tensor& support_kernel);

// Dense 4D convolution with same padding. x: [Ci x h x w x hs x ws],
// kernel: [Co x Ci x k x k x k x k], bias: [Co] or empty.
Tensor dense_conv4d(const Tensor& x, const Tensor& kernel, const Tensor& bias, kernels::CenterPivotStride stride);

// Center-pivot convolution computed through the dense sparse-kernel route.
Tensor center_pivot_conv4d(const Tensor& x, const Tensor& query_kernel, const Tensor& query_bias,
                           const Tensor& support_kernel, const Tensor& support_bias,
                           kernels::CenterPivotStride stride);

Tensor upsample_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w);

}  // namespace unifss::reference
