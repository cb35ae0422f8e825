#pragma once

#include <array>
#include <cstdint>

#include "unifss/encoder.hpp"

namespace unifss {

inline constexpr std::int64_t kMinImageSize = 64;

// Spatial and channel layout of every stage for a fixed input size. Query and
// support images share the input size, so support grids equal query grids.
struct ModelGeometry {
  std::int64_t image_h = 0;
  std::int64_t image_w = 0;
  std::array<std::int64_t, 4> stage_h{};
  std::array<std::int64_t, 4> stage_w{};
  std::array<std::int64_t, 4> stage_channels{};
  std::array<int, 3> layers{};
  std::int64_t embedding_dim = 0;

  static ModelGeometry from_encoder(const Encoder& encoder, std::int64_t image_h, std::int64_t image_w);

  std::int64_t h(int stage) const { return stage_h[static_cast<std::size_t>(stage - 1)]; }
  std::int64_t w(int stage) const { return stage_w[static_cast<std::size_t>(stage - 1)]; }
  std::int64_t channels(int stage) const { return stage_channels[static_cast<std::size_t>(stage - 1)]; }
  int layer_count(int stage) const { return layers[static_cast<std::size_t>(stage - 2)]; }
  // Correlation channels entering aggregation: 2 L_i, plus the text channel at stage 4.
  std::int64_t correlation_channels(int stage) const { return 2 * layer_count(stage) + (stage == 4 ? 1 : 0); }
};

}  // namespace unifss
