#include "unifss/geometry.hpp"

#include "unifss/errors.hpp"

namespace unifss {

ModelGeometry ModelGeometry::from_encoder(const Encoder& encoder, std::int64_t image_h, std::int64_t image_w) {
  if (!supported_extent(image_h) || !supported_extent(image_w)) {
    throw ValidationError("image size " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                          " is not a positive multiple of 32");
  }
  if (image_h < kMinImageSize || image_w < kMinImageSize) {
    throw ValidationError("image size must be at least " + std::to_string(kMinImageSize) +
                          " so that stages 3 and 4 keep distinct support grids");
  }
  ModelGeometry g;
  g.image_h = image_h;
  g.image_w = image_w;
  // Stem halves twice before stage 1 (stride 4), then each stage halves with ceil.
  std::int64_t h = (((image_h + 1) / 2) + 1) / 2;
  std::int64_t w = (((image_w + 1) / 2) + 1) / 2;
  for (std::size_t i = 0; i < 4; ++i) {
    if (i > 0) {
      h = (h + 1) / 2;
      w = (w + 1) / 2;
    }
    g.stage_h[i] = h;
    g.stage_w[i] = w;
  }
  g.stage_channels = encoder.stage_channels();
  g.layers = encoder.layers_per_stage();
  g.embedding_dim = encoder.embedding_dim();
  return g;
}

}  // namespace unifss
