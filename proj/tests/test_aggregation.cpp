#include <doctest.h>

#include "support.hpp"
#include "unifss/aggregation.hpp"
#include "unifss/errors.hpp"
#include "unifss/reference.hpp"

using namespace unifss;
using testing::random_tensor;

namespace {

ModelGeometry geometry64() {
  return ModelGeometry::from_encoder(ProjectionEncoder::stub({}), 64, 64);
}

std::map<int, ag::Var> random_pyramid(const ModelGeometry& g, Rng& rng, bool grad = false) {
  std::map<int, ag::Var> corr;
  for (int s = 2; s <= 4; ++s) {
    Tensor t = random_tensor({g.correlation_channels(s), g.h(s), g.w(s), g.h(s), g.w(s)}, rng, 0.0, 1.0);
    corr[s] = grad ? ag::Var::parameter(std::move(t)) : ag::Var::constant(std::move(t));
  }
  return corr;
}

}  // namespace

TEST_CASE("even kernels are rejected") {
  Rng rng(1);
  CHECK_THROWS_AS(CenterPivotKernel::create(2, 2, 4, {1, 1}, rng), ContractError);
}

TEST_CASE("center pivot block kernel equals the dense sparse kernel on small shapes") {
  Rng rng(2);
  for (std::int64_t h : {1, 2, 3})
    for (std::int64_t hs : {1, 3}) {
      const Tensor x = random_tensor({2, h, 3, hs, 2}, rng);
      const CenterPivotKernel k = CenterPivotKernel::create(2, 3, 3, {1, 1}, rng);
      const Tensor fast = center_pivot_conv4d(x, k);
      Tensor bias(Shape{3});
      for (int o = 0; o < 3; ++o) bias[o] = k.query_bias.value()[o] + k.support_bias.value()[o];
      const Tensor slow = reference::dense_conv4d(
          x, reference::sparse_kernel_4d(k.query_kernel.value(), k.support_kernel.value()), bias, {1, 1});
      CHECK(max_abs_diff(fast, slow) < 1e-10);
    }
}

TEST_CASE("inject then slice recovers both inputs") {
  Rng rng(3);
  const Correlation4D visual{random_tensor({4, 2, 2, 2, 2}, rng), 4};
  const CorrelationVT vt{random_tensor({2, 2}, rng, 0.0, 1.0)};
  const Correlation4D text = broadcast_vt(vt, 2, 2);
  CHECK(text.volume.at({0, 1, 0, 1, 1}) == vt.map.at({1, 0}));
  const Correlation4D both = inject(visual, text);
  CHECK(slice_leading(both.volume, 0, 4) == visual.volume);
  CHECK(slice_leading(both.volume, 4, 5) == text.volume);
  CHECK_THROWS_AS(inject(visual, broadcast_vt(vt, 3, 3)), ShapeError);
}

TEST_CASE("block schedule reduces support dims to two") {
  const ModelGeometry g = geometry64();
  Rng rng(4);
  const AggregationParams params = AggregationParams::create(g, rng);
  CHECK(params.stage_blocks.at(2).size() == 2);
  CHECK(params.stage_blocks.at(3).size() == 2);
  CHECK(params.stage_blocks.at(4).size() == 2);
  CHECK(params.stage_blocks.at(2).front().conv.stride.support == 2);
  CHECK(params.stage_blocks.at(4).front().conv.stride.support == 1);

  ag::NoGradGuard guard;
  const AggregatedFeatures out = aggregate_pyramid(random_pyramid(g, rng), params);
  for (int s = 2; s <= 4; ++s) CHECK(out.at(s).shape() == Shape{kAggregatedChannels, g.h(s), g.w(s)});
  CHECK_THROWS_AS(out.at(1), ContractError);

  const ModelGeometry big = ModelGeometry::from_encoder(ProjectionEncoder::stub({}), 128, 128);
  const AggregationParams bp = AggregationParams::create(big, rng);
  CHECK(bp.stage_blocks.at(2).size() == 3);
}

TEST_CASE("aggregation validates its inputs") {
  const ModelGeometry g = geometry64();
  Rng rng(5);
  const AggregationParams params = AggregationParams::create(g, rng);
  auto corr = random_pyramid(g, rng);
  corr.erase(3);
  CHECK_THROWS_AS(aggregate_pyramid(corr, params), ContractError);
  corr = random_pyramid(g, rng);
  corr[4] = ag::Var::constant(random_tensor({3, 2, 2, 2, 2}, rng));
  CHECK_THROWS_AS(aggregate_pyramid(corr, params), ShapeError);
}

TEST_CASE("aggregation gradient check on one block") {
  const ModelGeometry g = geometry64();
  Rng rng(6);
  const AggregationParams params = AggregationParams::create(g, rng);
  const auto corr = random_pyramid(g, rng);
  ParameterList list;
  params.stage_blocks.at(3).front().collect("stage3.block0", list);
  const auto loss = [&] {
    const AggregatedFeatures out = aggregate_pyramid(corr, params);
    return ag::add(testing::probe_loss(out.at(2), 1), testing::probe_loss(out.at(3), 2));
  };
  const auto r = testing::grad_check(loss, list, 6);
  CHECK(r.all_finite);
  CHECK_MESSAGE(r.worst_rel_error < 1e-3, r.worst_name);
}
