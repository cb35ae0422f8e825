#include "unifss/aggregation.hpp"

#include "unifss/errors.hpp"

namespace unifss {
namespace {

constexpr int kKernel = 3;
constexpr std::int64_t kIntermediateChannels = 32;

// Number of stride-2 support reductions that bring an extent down to <= 2.
int reductions_to_two(std::int64_t extent) {
  int r = 0;
  while (extent > 2) {
    extent = (extent + 1) / 2;
    ++r;
  }
  return r;
}

}  // namespace

CenterPivotKernel CenterPivotKernel::create(std::int64_t in_channels, std::int64_t out_channels, int kernel,
                                            kernels::CenterPivotStride stride, Rng& rng) {
  if (kernel % 2 == 0) throw ContractError("center-pivot kernels must have odd size");
  const std::int64_t fan_in = in_channels * kernel * kernel;
  CenterPivotKernel k;
  k.query_kernel = make_param(init::fan_in_uniform({out_channels, in_channels, kernel, kernel}, fan_in, rng));
  k.query_bias = make_param(init::fan_in_uniform({out_channels}, fan_in, rng));
  k.support_kernel = make_param(init::fan_in_uniform({out_channels, in_channels, kernel, kernel}, fan_in, rng));
  k.support_bias = make_param(init::fan_in_uniform({out_channels}, fan_in, rng));
  k.stride = stride;
  return k;
}

ag::Var center_pivot_conv4d(const ag::Var& x, const CenterPivotKernel& k) {
  return ag::center_pivot_conv4d(x, k.query_kernel, k.query_bias, k.support_kernel, k.support_bias, k.stride);
}

Tensor center_pivot_conv4d(const Tensor& x, const CenterPivotKernel& k) {
  return kernels::center_pivot_conv4d(x, k.query_kernel.value(), k.query_bias.value(), k.support_kernel.value(),
                                      k.support_bias.value(), k.stride);
}

CenterPivotBlock CenterPivotBlock::create(std::int64_t in_channels, std::int64_t out_channels,
                                          kernels::CenterPivotStride stride, Rng& rng) {
  CenterPivotBlock b;
  b.conv = CenterPivotKernel::create(in_channels, out_channels, kKernel, stride, rng);
  b.gn_gamma = make_param(Tensor(Shape{out_channels}, 1.0));
  b.gn_beta = make_param(Tensor(Shape{out_channels}));
  return b;
}

ag::Var CenterPivotBlock::forward(const ag::Var& x) const {
  return ag::relu(ag::group_norm(center_pivot_conv4d(x, conv), groups, gn_gamma, gn_beta));
}

void CenterPivotBlock::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".query_kernel", conv.query_kernel});
  out.push_back({prefix + ".query_bias", conv.query_bias});
  out.push_back({prefix + ".support_kernel", conv.support_kernel});
  out.push_back({prefix + ".support_bias", conv.support_bias});
  out.push_back({prefix + ".gn_gamma", gn_gamma});
  out.push_back({prefix + ".gn_beta", gn_beta});
}

MergeProjection MergeProjection::create(std::int64_t channels, Rng& rng) {
  return {make_param(init::fan_in_uniform({channels, channels}, channels, rng)),
          make_param(init::fan_in_uniform({channels}, channels, rng))};
}

ag::Var MergeProjection::forward(const ag::Var& x) const { return ag::linear(x, weight, bias, 0); }

AggregationParams AggregationParams::create(const ModelGeometry& g, Rng& rng) {
  AggregationParams p;
  for (int stage = 4; stage >= 2; --stage) {
    const int r = std::max(reductions_to_two(g.h(stage)), reductions_to_two(g.w(stage)));
    const int blocks = std::max(2, r);
    std::int64_t in = g.correlation_channels(stage);
    for (int j = 0; j < blocks; ++j) {
      const std::int64_t out = j == blocks - 1 ? kAggregatedChannels : kIntermediateChannels;
      p.stage_blocks[stage].push_back(CenterPivotBlock::create(in, out, {1, j < r ? 2 : 1}, rng));
      in = out;
    }
  }
  p.merge_4to3 = MergeProjection::create(kAggregatedChannels, rng);
  p.merge_3to2 = MergeProjection::create(kAggregatedChannels, rng);
  return p;
}

void AggregationParams::collect(const std::string& prefix, ParameterList& out) const {
  for (const auto& [stage, blocks] : stage_blocks) {
    for (std::size_t j = 0; j < blocks.size(); ++j) {
      blocks[j].collect(prefix + ".stage" + std::to_string(stage) + ".block" + std::to_string(j), out);
    }
  }
  out.push_back({prefix + ".merge43.weight", merge_4to3.weight});
  out.push_back({prefix + ".merge43.bias", merge_4to3.bias});
  out.push_back({prefix + ".merge32.weight", merge_3to2.weight});
  out.push_back({prefix + ".merge32.bias", merge_3to2.bias});
}

const ag::Var& AggregatedFeatures::at(int stage) const {
  auto it = features.find(stage);
  if (it == features.end()) throw ContractError("no aggregated feature for stage " + std::to_string(stage));
  return it->second;
}

Correlation4D broadcast_vt(const CorrelationVT& c_vt, std::int64_t support_h, std::int64_t support_w) {
  if (c_vt.map.rank() != 2) throw ShapeError("visual-textual map must be [h x w]");
  const std::int64_t h = c_vt.map.dim(0), w = c_vt.map.dim(1), s = support_h * support_w;
  Tensor out(Shape{1, h, w, support_h, support_w});
  for (std::int64_t q = 0; q < h * w; ++q) {
    for (std::int64_t j = 0; j < s; ++j) out[q * s + j] = c_vt.map[q];
  }
  return {std::move(out), 4};
}

Correlation4D inject(const Correlation4D& visual, const Correlation4D& text) {
  if (visual.volume.rank() != 5 || text.volume.rank() != 5 ||
      Shape(visual.volume.shape().begin() + 1, visual.volume.shape().end()) !=
          Shape(text.volume.shape().begin() + 1, text.volume.shape().end())) {
    throw ShapeError("inject: geometry mismatch " + to_string(visual.volume.shape()) + " vs " +
                     to_string(text.volume.shape()));
  }
  return {concat_leading({&visual.volume, &text.volume}), visual.stage};
}

ag::Var compress_support(const ag::Var& volume) {
  if (volume.shape().size() != 5) throw ShapeError("compress_support expects a 5-axis volume");
  return ag::mean_trailing(volume, 2);
}

AggregatedFeatures aggregate_pyramid(const std::map<int, ag::Var>& corr, const AggregationParams& params) {
  std::map<int, ag::Var> squeezed;
  for (int stage = 2; stage <= 4; ++stage) {
    auto it = corr.find(stage);
    if (it == corr.end()) throw ContractError("aggregation needs stage " + std::to_string(stage));
    auto blocks = params.stage_blocks.find(stage);
    if (blocks == params.stage_blocks.end()) throw ContractError("no aggregation blocks for stage " + std::to_string(stage));
    if (it->second.shape().size() != 5 || it->second.shape()[0] != blocks->second.front().conv.query_kernel.shape()[1]) {
      throw ShapeError("stage " + std::to_string(stage) + " volume " + to_string(it->second.shape()) +
                       " does not match the aggregation input width");
    }
    ag::Var x = it->second;
    for (const auto& b : blocks->second) x = b.forward(x);
    squeezed[stage] = x;
  }

  auto merge = [](const ag::Var& coarse, const ag::Var& fine, const MergeProjection& proj) {
    const auto& fs = fine.shape();
    const auto& cs = coarse.shape();
    if (cs[3] != fs[3] || cs[4] != fs[4]) throw ShapeError("support extents differ between pyramid levels");
    return ag::add(ag::upsample_bilinear(proj.forward(coarse), fs[1], fs[2]), fine);
  };
  const ag::Var mix43 = merge(squeezed[4], squeezed[3], params.merge_4to3);
  const ag::Var mix32 = merge(mix43, squeezed[2], params.merge_3to2);

  AggregatedFeatures out;
  out.features[4] = compress_support(squeezed[4]);
  out.features[3] = compress_support(mix43);
  out.features[2] = compress_support(mix32);
  return out;
}

}  // namespace unifss
