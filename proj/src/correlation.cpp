#include "unifss/correlation.hpp"

#include <cmath>

#include "unifss/errors.hpp"
#include "unifss/kernels.hpp"

namespace unifss {
namespace {

Tensor as_columns(const Tensor& feature) {
  if (feature.rank() != 3) throw ShapeError("feature map must be [c x h x w], got " + to_string(feature.shape()));
  return feature.reshaped(Shape{feature.dim(0), feature.dim(1) * feature.dim(2)});
}

}  // namespace

CorrelationVT vt_correlation(const Tensor& dense_embedding, const Tensor& text_embedding) {
  if (dense_embedding.rank() != 3) throw ShapeError("dense embedding must be [c x h x w]");
  if (text_embedding.numel() != dense_embedding.dim(0)) {
    throw ShapeError("text embedding width " + std::to_string(text_embedding.numel()) +
                     " does not match dense embedding channels " + std::to_string(dense_embedding.dim(0)));
  }
  double ss = 0.0;
  for (double v : text_embedding.values()) ss += v * v;
  if (!(std::sqrt(ss) > 0.0)) throw ValidationError("text embedding has zero norm");
  const Tensor corr = kernels::cosine_relu(as_columns(dense_embedding), text_embedding.reshaped(Shape{text_embedding.numel(), 1}));
  return {corr.reshaped(Shape{dense_embedding.dim(1), dense_embedding.dim(2)})};
}

Tensor vv_layer_correlation(const Tensor& query, const Tensor& support, const Tensor& object) {
  if (support.shape() != object.shape()) throw ShapeError("support and object features must share a shape");
  if (query.rank() != 3 || support.rank() != 3 || query.dim(0) != support.dim(0)) {
    throw ShapeError("query/support channel mismatch: " + to_string(query.shape()) + " vs " + to_string(support.shape()));
  }
  const Tensor q = as_columns(query);
  const Tensor s = kernels::cosine_relu(q, as_columns(support));
  const Tensor o = kernels::cosine_relu(q, as_columns(object));
  const Shape geom{1, query.dim(1), query.dim(2), support.dim(1), support.dim(2)};
  const Tensor s5 = s.reshaped(geom);
  const Tensor o5 = o.reshaped(geom);
  return concat_leading({&s5, &o5});
}

std::map<int, Correlation4D> build_correlation_pyramid(const FeaturePyramid& query, const FeaturePyramid& support,
                                                       const FeaturePyramid& object) {
  std::map<int, Correlation4D> out;
  for (int stage = 2; stage <= 4; ++stage) {
    const auto& ql = query.layers(stage);
    const auto& sl = support.layers(stage);
    const auto& ol = object.layers(stage);
    if (ql.size() != sl.size() || ql.size() != ol.size()) {
      throw ShapeError("stage " + std::to_string(stage) + " layer counts differ across pyramids");
    }
    std::vector<Tensor> per_layer;
    per_layer.reserve(ql.size());
    for (std::size_t l = 0; l < ql.size(); ++l) per_layer.push_back(vv_layer_correlation(ql[l], sl[l], ol[l]));
    std::vector<const Tensor*> parts;
    for (const auto& t : per_layer) parts.push_back(&t);
    out[stage] = Correlation4D{concat_leading(parts), stage};
  }
  return out;
}

}  // namespace unifss
