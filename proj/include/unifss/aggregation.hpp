#pragma once

#include <map>
#include <string>
#include <vector>

#include "unifss/autograd.hpp"
#include "unifss/correlation.hpp"
#include "unifss/geometry.hpp"
#include "unifss/parameters.hpp"

namespace unifss {

inline constexpr std::int64_t kAggregatedChannels = 128;

// Two 2D kernels whose sum forms a sparse 4D kernel: the query kernel acts on
// (h, w) at the centre support offset, the support kernel on (h', w') at the
// centre query offset.
struct CenterPivotKernel {
  ag::Var query_kernel;    // [Co x Ci x k x k]
  ag::Var query_bias;      // [Co]
  ag::Var support_kernel;  // [Co x Ci x k x k]
  ag::Var support_bias;    // [Co]
  kernels::CenterPivotStride stride;

  static CenterPivotKernel create(std::int64_t in_channels, std::int64_t out_channels, int kernel,
                                  kernels::CenterPivotStride stride, Rng& rng);
  std::int64_t out_channels() const { return query_kernel.shape()[0]; }
};

ag::Var center_pivot_conv4d(const ag::Var& x, const CenterPivotKernel& kernel);
Tensor center_pivot_conv4d(const Tensor& x, const CenterPivotKernel& kernel);

// center-pivot conv -> group norm -> ReLU
struct CenterPivotBlock {
  CenterPivotKernel conv;
  ag::Var gn_gamma;
  ag::Var gn_beta;
  int groups = 4;

  static CenterPivotBlock create(std::int64_t in_channels, std::int64_t out_channels,
                                 kernels::CenterPivotStride stride, Rng& rng);
  ag::Var forward(const ag::Var& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

// Pointwise channel projection applied before a top-down merge.
struct MergeProjection {
  ag::Var weight;  // [128 x 128]
  ag::Var bias;

  static MergeProjection create(std::int64_t channels, Rng& rng);
  ag::Var forward(const ag::Var& x) const;
};

struct AggregationParams {
  std::map<int, std::vector<CenterPivotBlock>> stage_blocks;  // stages 2..4
  MergeProjection merge_4to3;
  MergeProjection merge_3to2;

  static AggregationParams create(const ModelGeometry& geometry, Rng& rng);
  void collect(const std::string& prefix, ParameterList& out) const;
};

// Stage i -> [128 x h_i x w_i].
struct AggregatedFeatures {
  std::map<int, ag::Var> features;
  const ag::Var& at(int stage) const;
};

// output[0, y, x, y', x'] = c_vt[y, x].
Correlation4D broadcast_vt(const CorrelationVT& c_vt, std::int64_t support_h, std::int64_t support_w);

// Concatenates along L: visual channels first, then the text channel.
Correlation4D inject(const Correlation4D& visual, const Correlation4D& text);

// Mean over the trailing two (support) axes.
ag::Var compress_support(const ag::Var& volume);

// Top-down CCPE aggregation. corr must hold stages 2, 3 and 4 (stage 4 already injected).
AggregatedFeatures aggregate_pyramid(const std::map<int, ag::Var>& corr, const AggregationParams& params);

}  // namespace unifss
