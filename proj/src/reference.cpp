#include "unifss/reference.hpp"

#include <algorithm>
#include <cmath>

#include "unifss/errors.hpp"

namespace unifss::reference {

Tensor cosine_relu(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) throw ShapeError("reference::cosine_relu shapes");
  const std::int64_t c = a.dim(0), pa = a.dim(1), pb = b.dim(1);
  Tensor out(Shape{pa, pb});
  for (std::int64_t i = 0; i < pa; ++i) {
    for (std::int64_t j = 0; j < pb; ++j) {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::int64_t k = 0; k < c; ++k) {
        const double u = a.at({k, i});
        const double v = b.at({k, j});
        dot += u * v;
        na += u * u;
        nb += v * v;
      }
      const double denom = std::max(std::sqrt(na), kernels::kNormFloor) * std::max(std::sqrt(nb), kernels::kNormFloor);
      out.at({i, j}) = std::max(0.0, dot / denom);
    }
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  const std::int64_t batch = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::int64_t co = w.dim(0), k = w.dim(2);
  if (w.dim(1) != ci) throw ShapeError("reference::conv2d channel mismatch");
  const std::int64_t ho = (h + 2 * pad - k) / stride + 1;
  const std::int64_t wo = (wd + 2 * pad - k) / stride + 1;
  Tensor y(Shape{batch, co, ho, wo});
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t o = 0; o < co; ++o)
      for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::int64_t c = 0; c < ci; ++c)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const std::int64_t iy = oy * stride + ky - pad;
                const std::int64_t ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += w.at({o, c, ky, kx}) * x.at({b, c, iy, ix});
              }
          y.at({b, o, oy, ox}) = acc;
        }
  return y;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const std::int64_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::int64_t k = w.dim(1), pad = k / 2;
  Tensor y(x.shape());
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t oy = 0; oy < h; ++oy)
        for (std::int64_t ox = 0; ox < wd; ++ox) {
          double acc = bias[ch];
          for (std::int64_t ky = 0; ky < k; ++ky)
            for (std::int64_t kx = 0; kx < k; ++kx) {
              const std::int64_t iy = oy + ky - pad;
              const std::int64_t ix = ox + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += w.at({ch, ky, kx}) * x.at({b, ch, iy, ix});
            }
          y.at({b, ch, oy, ox}) = acc;
        }
  return y;
}

Tensor sparse_kernel_4d(const Tensor& query_kernel, const Tensor& support_kernel) {
  const std::int64_t co = query_kernel.dim(0), ci = query_kernel.dim(1), k = query_kernel.dim(2);
  const std::int64_t center = k / 2;
  Tensor dense(Shape{co, ci, k, k, k, k});
  for (std::int64_t o = 0; o < co; ++o)
    for (std::int64_t c = 0; c < ci; ++c)
      for (std::int64_t a = 0; a < k; ++a)
        for (std::int64_t b = 0; b < k; ++b) {
          dense.at({o, c, a, b, center, center}) += query_kernel.at({o, c, a, b});
          dense.at({o, c, center, center, a, b}) += support_kernel.at({o, c, a, b});
        }
  return dense;
}

Tensor dense_conv4d(const Tensor& x, const Tensor& kernel, const Tensor& bias, kernels::CenterPivotStride stride) {
  const std::int64_t ci = x.dim(0), h = x.dim(1), w = x.dim(2), hs = x.dim(3), ws = x.dim(4);
  const std::int64_t co = kernel.dim(0), k = kernel.dim(2), pad = k / 2;
  if (kernel.dim(1) != ci) throw ShapeError("reference::dense_conv4d channel mismatch");
  const std::int64_t sq = stride.query, ss = stride.support;
  const std::int64_t ho = (h + 2 * pad - k) / sq + 1, wo = (w + 2 * pad - k) / sq + 1;
  const std::int64_t hso = (hs + 2 * pad - k) / ss + 1, wso = (ws + 2 * pad - k) / ss + 1;
  Tensor y(Shape{co, ho, wo, hso, wso});
  for (std::int64_t o = 0; o < co; ++o)
    for (std::int64_t oy = 0; oy < ho; ++oy)
      for (std::int64_t ox = 0; ox < wo; ++ox)
        for (std::int64_t sy = 0; sy < hso; ++sy)
          for (std::int64_t sx = 0; sx < wso; ++sx) {
            double acc = bias.empty() ? 0.0 : bias[o];
            for (std::int64_t c = 0; c < ci; ++c)
              for (std::int64_t a = 0; a < k; ++a)
                for (std::int64_t b = 0; b < k; ++b)
                  for (std::int64_t a2 = 0; a2 < k; ++a2)
                    for (std::int64_t b2 = 0; b2 < k; ++b2) {
                      const std::int64_t iy = oy * sq + a - pad, ix = ox * sq + b - pad;
                      const std::int64_t jy = sy * ss + a2 - pad, jx = sx * ss + b2 - pad;
                      if (iy < 0 || iy >= h || ix < 0 || ix >= w || jy < 0 || jy >= hs || jx < 0 || jx >= ws) continue;
                      acc += kernel.at({o, c, a, b, a2, b2}) * x.at({c, iy, ix, jy, jx});
                    }
            y.at({o, oy, ox, sy, sx}) = acc;
          }
  return y;
}

Tensor center_pivot_conv4d(const Tensor& x, const Tensor& query_kernel, const Tensor& query_bias,
                           const Tensor& support_kernel, const Tensor& support_bias,
                           kernels::CenterPivotStride stride) {
  Tensor bias(Shape{query_kernel.dim(0)});
  for (std::int64_t o = 0; o < bias.numel(); ++o) {
    bias[o] = (query_bias.empty() ? 0.0 : query_bias[o]) + (support_bias.empty() ? 0.0 : support_bias[o]);
  }
  return dense_conv4d(x, sparse_kernel_4d(query_kernel, support_kernel), bias, stride);
}

Tensor upsample_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  const std::int64_t a = x.dim(0), h = x.dim(1), w = x.dim(2), r = x.dim(3);
  Tensor y(Shape{a, out_h, out_w, r});
  auto coord = [](std::int64_t o, std::int64_t in, std::int64_t out) {
    return out > 1 ? static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
  };
  for (std::int64_t ai = 0; ai < a; ++ai)
    for (std::int64_t oy = 0; oy < out_h; ++oy)
      for (std::int64_t ox = 0; ox < out_w; ++ox)
        for (std::int64_t ri = 0; ri < r; ++ri) {
          const double sy = coord(oy, h, out_h), sx = coord(ox, w, out_w);
          double acc = 0.0;
          // Tent-weighted sum over all input pixels.
          for (std::int64_t iy = 0; iy < h; ++iy)
            for (std::int64_t ix = 0; ix < w; ++ix) {
              const double wy = std::max(0.0, 1.0 - std::abs(sy - static_cast<double>(iy)));
              const double wx = std::max(0.0, 1.0 - std::abs(sx - static_cast<double>(ix)));
              acc += wy * wx * x.at({ai, iy, ix, ri});
            }
          y.at({ai, oy, ox, ri}) = acc;
        }
  return y;
}

}  // namespace unifss::reference
