#include "unifss/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "unifss/errors.hpp"

namespace unifss::kernels {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

// Target number of im2col columns per GEMM.
constexpr std::int64_t kColumnsPerChunk = 1024;

std::int64_t out_extent(std::int64_t n, int k, int stride, int pad) { return (n + 2 * pad - k) / stride + 1; }

void check_conv_args(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4) throw ShapeError("conv2d expects rank-4 input and weight");
  if (w.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d channel mismatch: input " + to_string(x.shape()) + " weight " + to_string(w.shape()));
  }
  if (w.dim(2) != w.dim(3)) throw ShapeError("conv2d expects square kernels");
  if (stride < 1 || pad < 0) throw ContractError("conv2d stride must be >= 1 and pad >= 0");
}

// Unfolds batch elements [b0, b1) of x into col: [Ci*k*k x (b1-b0)*Ho*Wo].
void im2col(const double* x, std::int64_t b0, std::int64_t b1, std::int64_t ci, std::int64_t h, std::int64_t w,
            int k, int stride, int pad, std::int64_t ho, std::int64_t wo, double* col) {
  const std::int64_t nb = b1 - b0;
  const std::int64_t cols = nb * ho * wo;
  const std::int64_t rows = ci * k * k;
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t c = r / (k * k);
    const int ky = static_cast<int>((r / k) % k);
    const int kx = static_cast<int>(r % k);
    double* dst = col + r * cols;
    for (std::int64_t b = 0; b < nb; ++b) {
      const double* src = x + ((b0 + b) * ci + c) * h * w;
      for (std::int64_t oy = 0; oy < ho; ++oy) {
        const std::int64_t iy = oy * stride + ky - pad;
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          const std::int64_t ix = ox * stride + kx - pad;
          *dst++ = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? src[iy * w + ix] : 0.0;
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates col back into dx for batch elements [b0, b1).
void col2im(const double* col, std::int64_t b0, std::int64_t b1, std::int64_t ci, std::int64_t h, std::int64_t w,
            int k, int stride, int pad, std::int64_t ho, std::int64_t wo, double* dx) {
  const std::int64_t nb = b1 - b0;
  const std::int64_t cols = nb * ho * wo;
  // Parallel over (batch, channel) planes; each plane is written by one thread.
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < nb; ++b) {
    for (std::int64_t c = 0; c < ci; ++c) {
      double* plane = dx + ((b0 + b) * ci + c) * h * w;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const std::int64_t r = (c * k + ky) * k + kx;
          const double* src = col + r * cols + b * ho * wo;
          for (std::int64_t oy = 0; oy < ho; ++oy) {
            const std::int64_t iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (std::int64_t ox = 0; ox < wo; ++ox) {
              const std::int64_t ix = ox * stride + kx - pad;
              if (ix >= 0 && ix < w) plane[iy * w + ix] += src[oy * wo + ox];
            }
          }
        }
      }
    }
  }
}

std::int64_t chunk_size(std::int64_t batch, std::int64_t per_item) {
  return std::clamp<std::int64_t>(kColumnsPerChunk / std::max<std::int64_t>(per_item, 1), 1, std::max<std::int64_t>(batch, 1));
}

}  // namespace

Tensor cosine_relu(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("cosine_relu expects [c x P] operands");
  if (a.dim(0) != b.dim(0)) {
    throw ShapeError("cosine_relu channel mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const std::int64_t c = a.dim(0), pa = a.dim(1), pb = b.dim(1);
  auto normalized = [c](const Tensor& t) {
    const std::int64_t p = t.dim(1);
    Tensor n = t;
#pragma omp parallel for schedule(static)
    for (std::int64_t j = 0; j < p; ++j) {
      double ss = 0.0;
      for (std::int64_t i = 0; i < c; ++i) ss += t[i * p + j] * t[i * p + j];
      const double inv = 1.0 / std::max(std::sqrt(ss), kNormFloor);
      for (std::int64_t i = 0; i < c; ++i) n[i * p + j] *= inv;
    }
    return n;
  };
  const Tensor an = normalized(a);
  const Tensor bn = normalized(b);
  Tensor out(Shape{pa, pb});
  MatMap(out.data(), pa, pb).noalias() =
      ConstMatMap(an.data(), c, pa).transpose() * ConstMatMap(bn.data(), c, pb);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < pa * pb; ++i) out[i] = std::clamp(out[i], 0.0, 1.0);
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  check_conv_args(x, w, stride, pad);
  const std::int64_t batch = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::int64_t co = w.dim(0);
  const int k = static_cast<int>(w.dim(2));
  const std::int64_t ho = out_extent(h, k, stride, pad), wo = out_extent(wd, k, stride, pad);
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d output would be empty");
  if (!bias.empty() && bias.numel() != co) throw ShapeError("conv2d bias size mismatch");

  Tensor y(Shape{batch, co, ho, wo});
  const std::int64_t rows = ci * k * k;
  const std::int64_t per_item = ho * wo;
  const std::int64_t chunk = chunk_size(batch, per_item);
  std::vector<double> col(static_cast<std::size_t>(rows * chunk * per_item));
  std::vector<double> out(static_cast<std::size_t>(co * chunk * per_item));
  const ConstMatMap wm(w.data(), co, rows);

  for (std::int64_t b0 = 0; b0 < batch; b0 += chunk) {
    const std::int64_t b1 = std::min(batch, b0 + chunk);
    const std::int64_t cols = (b1 - b0) * per_item;
    im2col(x.data(), b0, b1, ci, h, wd, k, stride, pad, ho, wo, col.data());
    MatMap om(out.data(), co, cols);
    om.noalias() = wm * ConstMatMap(col.data(), rows, cols);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t b = 0; b < b1 - b0; ++b) {
      for (std::int64_t o = 0; o < co; ++o) {
        const double add = bias.empty() ? 0.0 : bias[o];
        const double* src = out.data() + o * cols + b * per_item;
        double* dst = y.data() + ((b0 + b) * co + o) * per_item;
        for (std::int64_t p = 0; p < per_item; ++p) dst[p] = src[p] + add;
      }
    }
  }
  return y;
}

Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int stride, int pad,
                            bool need_dx) {
  check_conv_args(x, w, stride, pad);
  const std::int64_t batch = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::int64_t co = w.dim(0);
  const int k = static_cast<int>(w.dim(2));
  const std::int64_t ho = out_extent(h, k, stride, pad), wo = out_extent(wd, k, stride, pad);
  if (dy.shape() != Shape{batch, co, ho, wo}) throw ShapeError("conv2d_backward: dy shape mismatch");

  Conv2dGrads g;
  g.dw = Tensor(w.shape());
  g.db = Tensor(Shape{co});
  if (need_dx) g.dx = Tensor(x.shape());

  const std::int64_t rows = ci * k * k;
  const std::int64_t per_item = ho * wo;
  const std::int64_t chunk = chunk_size(batch, per_item);
  std::vector<double> col(static_cast<std::size_t>(rows * chunk * per_item));
  std::vector<double> dyc(static_cast<std::size_t>(co * chunk * per_item));
  const ConstMatMap wm(w.data(), co, rows);
  MatMap dwm(g.dw.data(), co, rows);

  for (std::int64_t b0 = 0; b0 < batch; b0 += chunk) {
    const std::int64_t b1 = std::min(batch, b0 + chunk);
    const std::int64_t cols = (b1 - b0) * per_item;
    // Gather dy into [Co x cols], matching the im2col column order.
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t b = 0; b < b1 - b0; ++b) {
      for (std::int64_t o = 0; o < co; ++o) {
        const double* src = dy.data() + ((b0 + b) * co + o) * per_item;
        std::copy(src, src + per_item, dyc.data() + o * cols + b * per_item);
      }
    }
    const ConstMatMap dym(dyc.data(), co, cols);
    for (std::int64_t o = 0; o < co; ++o) g.db[o] += dym.row(o).sum();
    im2col(x.data(), b0, b1, ci, h, wd, k, stride, pad, ho, wo, col.data());
    dwm.noalias() += dym * ConstMatMap(col.data(), rows, cols).transpose();
    if (need_dx) {
      MatMap colm(col.data(), rows, cols);
      colm.noalias() = wm.transpose() * dym;
      col2im(col.data(), b0, b1, ci, h, wd, k, stride, pad, ho, wo, g.dx.data());
    }
  }
  return g;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 4 || w.rank() != 3) throw ShapeError("depthwise_conv2d expects [B x C x H x W] and [C x k x k]");
  const std::int64_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  if (w.dim(0) != c || bias.numel() != c) {
    throw ShapeError("depthwise_conv2d channel mismatch: input " + to_string(x.shape()) + " kernel " +
                     to_string(w.shape()));
  }
  const int k = static_cast<int>(w.dim(1));
  if (k % 2 == 0 || w.dim(2) != k) throw ContractError("depthwise_conv2d needs an odd square kernel");
  const int pad = k / 2;
  Tensor y(x.shape());
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double* src = x.data() + (b * c + ch) * h * wd;
      const double* ker = w.data() + ch * k * k;
      double* dst = y.data() + (b * c + ch) * h * wd;
      for (std::int64_t oy = 0; oy < h; ++oy) {
        for (std::int64_t ox = 0; ox < wd; ++ox) {
          double acc = bias[ch];
          for (int ky = 0; ky < k; ++ky) {
            const std::int64_t iy = oy + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const std::int64_t ix = ox + kx - pad;
              if (ix >= 0 && ix < wd) acc += ker[ky * k + kx] * src[iy * wd + ix];
            }
          }
          dst[oy * wd + ox] = acc;
        }
      }
    }
  }
  return y;
}

Conv2dGrads depthwise_conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, bool need_dx) {
  const std::int64_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int k = static_cast<int>(w.dim(1));
  const int pad = k / 2;
  if (dy.shape() != x.shape()) throw ShapeError("depthwise_conv2d_backward: dy shape mismatch");
  Conv2dGrads g;
  g.dw = Tensor(w.shape());
  g.db = Tensor(Shape{c});
  if (need_dx) g.dx = Tensor(x.shape());
  // Channel-parallel: each thread owns the kernel gradient of its channels.
#pragma omp parallel for schedule(static)
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const double* ker = w.data() + ch * k * k;
    double* dker = g.dw.data() + ch * k * k;
    for (std::int64_t b = 0; b < batch; ++b) {
      const double* src = x.data() + (b * c + ch) * h * wd;
      const double* grad = dy.data() + (b * c + ch) * h * wd;
      double* dsrc = need_dx ? g.dx.data() + (b * c + ch) * h * wd : nullptr;
      for (std::int64_t oy = 0; oy < h; ++oy) {
        for (std::int64_t ox = 0; ox < wd; ++ox) {
          const double gv = grad[oy * wd + ox];
          g.db[ch] += gv;
          for (int ky = 0; ky < k; ++ky) {
            const std::int64_t iy = oy + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const std::int64_t ix = ox + kx - pad;
              if (ix < 0 || ix >= wd) continue;
              dker[ky * k + kx] += gv * src[iy * wd + ix];
              if (dsrc) dsrc[iy * wd + ix] += gv * ker[ky * k + kx];
            }
          }
        }
      }
    }
  }
  return g;
}

namespace {

struct CpDims {
  std::int64_t ci, h, w, hs, ws, co;
  int k, pad;
  std::int64_t ho, wo, hso, wso;
};

CpDims cp_dims(const Tensor& x, const Tensor& qk, const Tensor& sk, CenterPivotStride stride) {
  if (x.rank() != 5) throw ShapeError("center_pivot_conv4d expects a [C x h x w x h' x w'] volume");
  if (qk.rank() != 4 || sk.rank() != 4 || qk.shape() != sk.shape()) {
    throw ShapeError("center_pivot_conv4d kernels must share shape [Co x Ci x k x k]");
  }
  if (qk.dim(1) != x.dim(0)) throw ShapeError("center_pivot_conv4d input channel mismatch");
  const int k = static_cast<int>(qk.dim(2));
  if (k % 2 == 0 || qk.dim(3) != k) throw ContractError("center_pivot_conv4d needs an odd square kernel");
  if (stride.query < 1 || stride.support < 1) throw ContractError("center_pivot_conv4d strides must be >= 1");
  CpDims d{};
  d.ci = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.hs = x.dim(3);
  d.ws = x.dim(4);
  d.co = qk.dim(0);
  d.k = k;
  d.pad = k / 2;
  d.ho = out_extent(d.h, k, stride.query, d.pad);
  d.wo = out_extent(d.w, k, stride.query, d.pad);
  d.hso = out_extent(d.hs, k, stride.support, d.pad);
  d.wso = out_extent(d.ws, k, stride.support, d.pad);
  return d;
}

// [B1 = hso*wso, Ci, h, w]: query planes sampled at the strided support centers.
Tensor gather_query_planes(const Tensor& x, const CpDims& d, int ss) {
  Tensor out(Shape{d.hso * d.wso, d.ci, d.h, d.w});
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t c = 0; c < d.ci; ++c) {
    for (std::int64_t q = 0; q < d.h * d.w; ++q) {
      const double* src = x.data() + (c * d.h * d.w + q) * d.hs * d.ws;
      for (std::int64_t sy = 0; sy < d.hso; ++sy) {
        for (std::int64_t sx = 0; sx < d.wso; ++sx) {
          out[((sy * d.wso + sx) * d.ci + c) * d.h * d.w + q] = src[sy * ss * d.ws + sx * ss];
        }
      }
    }
  }
  return out;
}

// [B2 = ho*wo, Ci, hs, ws]: support planes at the strided query centers.
Tensor gather_support_planes(const Tensor& x, const CpDims& d, int sq) {
  Tensor out(Shape{d.ho * d.wo, d.ci, d.hs, d.ws});
  const std::int64_t plane = d.hs * d.ws;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t oy = 0; oy < d.ho; ++oy) {
    for (std::int64_t ox = 0; ox < d.wo; ++ox) {
      for (std::int64_t c = 0; c < d.ci; ++c) {
        const double* src = x.data() + ((c * d.h + oy * sq) * d.w + ox * sq) * plane;
        std::copy(src, src + plane, out.data() + ((oy * d.wo + ox) * d.ci + c) * plane);
      }
    }
  }
  return out;
}

}  // namespace

Tensor center_pivot_conv4d(const Tensor& x, const Tensor& query_kernel, const Tensor& query_bias,
                           const Tensor& support_kernel, const Tensor& support_bias, CenterPivotStride stride) {
  const CpDims d = cp_dims(x, query_kernel, support_kernel, stride);
  const Tensor yq = conv2d(gather_query_planes(x, d, stride.support), query_kernel, query_bias, stride.query, d.pad);
  const Tensor ys =
      conv2d(gather_support_planes(x, d, stride.query), support_kernel, support_bias, stride.support, d.pad);

  Tensor out(Shape{d.co, d.ho, d.wo, d.hso, d.wso});
  const std::int64_t qplane = d.ho * d.wo;
  const std::int64_t splane = d.hso * d.wso;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t o = 0; o < d.co; ++o) {
    for (std::int64_t q = 0; q < qplane; ++q) {
      double* dst = out.data() + (o * qplane + q) * splane;
      const double* sup = ys.data() + (q * d.co + o) * splane;
      for (std::int64_t s = 0; s < splane; ++s) dst[s] = yq[(s * d.co + o) * qplane + q] + sup[s];
    }
  }
  return out;
}

CenterPivotGrads center_pivot_conv4d_backward(const Tensor& x, const Tensor& query_kernel,
                                              const Tensor& support_kernel, const Tensor& dy,
                                              CenterPivotStride stride, bool need_dx) {
  const CpDims d = cp_dims(x, query_kernel, support_kernel, stride);
  if (dy.shape() != Shape{d.co, d.ho, d.wo, d.hso, d.wso}) {
    throw ShapeError("center_pivot_conv4d_backward: dy shape mismatch");
  }
  const std::int64_t qplane = d.ho * d.wo;
  const std::int64_t splane = d.hso * d.wso;
  Tensor dyq(Shape{splane, d.co, d.ho, d.wo});
  Tensor dys(Shape{qplane, d.co, d.hso, d.wso});
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t o = 0; o < d.co; ++o) {
    for (std::int64_t q = 0; q < qplane; ++q) {
      const double* src = dy.data() + (o * qplane + q) * splane;
      double* sup = dys.data() + (q * d.co + o) * splane;
      for (std::int64_t s = 0; s < splane; ++s) {
        dyq[(s * d.co + o) * qplane + q] = src[s];
        sup[s] = src[s];
      }
    }
  }

  CenterPivotGrads g;
  auto gq = conv2d_backward(gather_query_planes(x, d, stride.support), query_kernel, dyq, stride.query, d.pad,
                            need_dx);
  auto gs = conv2d_backward(gather_support_planes(x, d, stride.query), support_kernel, dys, stride.support,
                            d.pad, need_dx);
  g.d_query_kernel = std::move(gq.dw);
  g.d_query_bias = std::move(gq.db);
  g.d_support_kernel = std::move(gs.dw);
  g.d_support_bias = std::move(gs.db);
  if (need_dx) {
    g.dx = Tensor(x.shape());
    const std::int64_t sup_plane = d.hs * d.ws;
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t c = 0; c < d.ci; ++c) {
      for (std::int64_t q = 0; q < d.h * d.w; ++q) {
        double* dst = g.dx.data() + (c * d.h * d.w + q) * sup_plane;
        for (std::int64_t sy = 0; sy < d.hso; ++sy) {
          for (std::int64_t sx = 0; sx < d.wso; ++sx) {
            dst[sy * stride.support * d.ws + sx * stride.support] +=
                gq.dx[((sy * d.wso + sx) * d.ci + c) * d.h * d.w + q];
          }
        }
      }
    }
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t c = 0; c < d.ci; ++c) {
      for (std::int64_t oy = 0; oy < d.ho; ++oy) {
        for (std::int64_t ox = 0; ox < d.wo; ++ox) {
          double* dst = g.dx.data() + ((c * d.h + oy * stride.query) * d.w + ox * stride.query) * sup_plane;
          const double* src = gs.dx.data() + ((oy * d.wo + ox) * d.ci + c) * sup_plane;
          for (std::int64_t s = 0; s < sup_plane; ++s) dst[s] += src[s];
        }
      }
    }
  }
  return g;
}

namespace {

struct LerpTap {
  std::int64_t lo, hi;
  double frac;
};

std::vector<LerpTap> lerp_taps(std::int64_t in, std::int64_t out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  for (std::int64_t o = 0; o < out; ++o) {
    const double src = out > 1 ? static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
    const auto lo = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(src)), in - 1);
    taps[static_cast<std::size_t>(o)] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  if (x.rank() != 4) throw ShapeError("upsample_bilinear expects [A x H x W x R]");
  const std::int64_t a = x.dim(0), h = x.dim(1), w = x.dim(2), r = x.dim(3);
  const auto ty = lerp_taps(h, out_h);
  const auto tx = lerp_taps(w, out_w);
  Tensor y(Shape{a, out_h, out_w, r});
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t ai = 0; ai < a; ++ai) {
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const auto& vy = ty[static_cast<std::size_t>(oy)];
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const auto& vx = tx[static_cast<std::size_t>(ox)];
        const double w00 = (1 - vy.frac) * (1 - vx.frac), w01 = (1 - vy.frac) * vx.frac;
        const double w10 = vy.frac * (1 - vx.frac), w11 = vy.frac * vx.frac;
        const double* p00 = x.data() + ((ai * h + vy.lo) * w + vx.lo) * r;
        const double* p01 = x.data() + ((ai * h + vy.lo) * w + vx.hi) * r;
        const double* p10 = x.data() + ((ai * h + vy.hi) * w + vx.lo) * r;
        const double* p11 = x.data() + ((ai * h + vy.hi) * w + vx.hi) * r;
        double* dst = y.data() + ((ai * out_h + oy) * out_w + ox) * r;
        for (std::int64_t ri = 0; ri < r; ++ri) {
          dst[ri] = w00 * p00[ri] + w01 * p01[ri] + w10 * p10[ri] + w11 * p11[ri];
        }
      }
    }
  }
  return y;
}

Tensor upsample_bilinear_backward(const Tensor& dy, std::int64_t in_h, std::int64_t in_w) {
  if (dy.rank() != 4) throw ShapeError("upsample_bilinear_backward expects [A x Ho x Wo x R]");
  const std::int64_t a = dy.dim(0), out_h = dy.dim(1), out_w = dy.dim(2), r = dy.dim(3);
  const auto ty = lerp_taps(in_h, out_h);
  const auto tx = lerp_taps(in_w, out_w);
  Tensor dx(Shape{a, in_h, in_w, r});
  // Parallel over the leading axis only; scatter targets stay thread-private.
#pragma omp parallel for schedule(static)
  for (std::int64_t ai = 0; ai < a; ++ai) {
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const auto& vy = ty[static_cast<std::size_t>(oy)];
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const auto& vx = tx[static_cast<std::size_t>(ox)];
        const double w00 = (1 - vy.frac) * (1 - vx.frac), w01 = (1 - vy.frac) * vx.frac;
        const double w10 = vy.frac * (1 - vx.frac), w11 = vy.frac * vx.frac;
        const double* src = dy.data() + ((ai * out_h + oy) * out_w + ox) * r;
        double* p00 = dx.data() + ((ai * in_h + vy.lo) * in_w + vx.lo) * r;
        double* p01 = dx.data() + ((ai * in_h + vy.lo) * in_w + vx.hi) * r;
        double* p10 = dx.data() + ((ai * in_h + vy.hi) * in_w + vx.lo) * r;
        double* p11 = dx.data() + ((ai * in_h + vy.hi) * in_w + vx.hi) * r;
        for (std::int64_t ri = 0; ri < r; ++ri) {
          p00[ri] += w00 * src[ri];
          p01[ri] += w01 * src[ri];
          p10[ri] += w10 * src[ri];
          p11[ri] += w11 * src[ri];
        }
      }
    }
  }
  return dx;
}

}  // namespace unifss::kernels
