#pragma once

#include <map>

#include "unifss/encoder.hpp"
#include "unifss/tensor.hpp"

namespace unifss {

// Stacked 4D cost volume [L x h x w x h' x w'] between a query and a support grid.
struct Correlation4D {
  Tensor volume;
  int stage = 0;

  std::int64_t channels() const { return volume.dim(0); }
  std::int64_t query_h() const { return volume.dim(1); }
  std::int64_t query_w() const { return volume.dim(2); }
  std::int64_t support_h() const { return volume.dim(3); }
  std::int64_t support_w() const { return volume.dim(4); }
};

// Visual-textual correlation over the stage-4 grid, [h_4 x w_4].
struct CorrelationVT {
  Tensor map;
};

// Per position ReLU(cos(f_v[:, y, x], f_t)).
CorrelationVT vt_correlation(const Tensor& dense_embedding, const Tensor& text_embedding);

// Channel 0: query vs support, channel 1: query vs object. [2 x h x w x h' x w'].
Tensor vv_layer_correlation(const Tensor& query, const Tensor& support, const Tensor& object);

// Stages 2..4, each with 2 * L_i channels in layer order (support, object) per layer.
std::map<int, Correlation4D> build_correlation_pyramid(const FeaturePyramid& query, const FeaturePyramid& support,
                                                       const FeaturePyramid& object);

}  // namespace unifss
