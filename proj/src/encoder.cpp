#include "unifss/encoder.hpp"

#include <Eigen/Core>
#include <cmath>
#include <random>

#include "unifss/errors.hpp"
#include "unifss/hashing.hpp"
#include "unifss/parameters.hpp"

namespace unifss {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

// y = act(W x + b) applied at every spatial position of x: [Ci x H x W].
Tensor project(const Tensor& x, const Tensor& w, const Tensor& b, bool relu) {
  const std::int64_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2), co = w.dim(0);
  Tensor y(Shape{co, h, wd});
  Eigen::Map<RowMatrix>(y.data(), co, h * wd).noalias() =
      ConstMatMap(w.data(), co, ci) * ConstMatMap(x.data(), ci, h * wd);
  for (std::int64_t o = 0; o < co; ++o) {
    const double add = b.empty() ? 0.0 : b[o];
    for (std::int64_t i = 0; i < h * wd; ++i) {
      double& v = y[o * h * wd + i];
      v += add;
      if (relu && v < 0.0) v = 0.0;
    }
  }
  return y;
}

// Subtracts each channel's spatial mean.
Tensor centre_spatial(Tensor x) {
  const std::int64_t c = x.dim(0), n = x.dim(1) * x.dim(2);
  for (std::int64_t k = 0; k < c; ++k) {
    double mean = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mean += x[k * n + i];
    mean /= static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) x[k * n + i] -= mean;
  }
  return x;
}

std::string layer_name(int stage, std::size_t l, const char* what) {
  return "encoder.stage" + std::to_string(stage) + ".layer" + std::to_string(l) + "." + what;
}

}  // namespace

const Tensor& FeaturePyramid::stage(int i) const {
  if (i < 1 || i > 4) throw ContractError("stage index must be in 1..4");
  return stage_features[static_cast<std::size_t>(i - 1)];
}

const std::vector<Tensor>& FeaturePyramid::layers(int i) const {
  auto it = layer_features.find(i);
  if (it == layer_features.end()) throw ContractError("no layer features for stage " + std::to_string(i));
  return it->second;
}

void FeaturePyramid::validate() const {
  for (int i = 1; i <= 4; ++i) {
    if (stage(i).rank() != 3) throw ShapeError("stage " + std::to_string(i) + " feature must be [c x h x w]");
  }
  for (int i = 1; i < 4; ++i) {
    if (height(i + 1) != (height(i) + 1) / 2 || width(i + 1) != (width(i) + 1) / 2) {
      throw ShapeError("stage " + std::to_string(i + 1) + " does not halve stage " + std::to_string(i));
    }
  }
  for (int i = 2; i <= 4; ++i) {
    const auto& ls = layers(i);
    if (ls.empty()) throw ShapeError("stage " + std::to_string(i) + " has no layer features");
    for (const auto& l : ls) {
      if (l.rank() != 3 || l.dim(1) != height(i) || l.dim(2) != width(i)) {
        throw ShapeError("layer feature geometry differs from stage " + std::to_string(i));
      }
    }
  }
  if (dense_embedding.rank() != 3 || dense_embedding.dim(1) != height(4) || dense_embedding.dim(2) != width(4)) {
    throw ShapeError("dense embedding must match stage-4 geometry");
  }
}

std::string_view to_string(EmbeddingSource source) {
  switch (source) {
    case EmbeddingSource::class_text:
      return "class_text";
    case EmbeddingSource::masked_pool:
      return "masked_pool";
    case EmbeddingSource::global_pool:
      return "global_pool";
  }
  return "unknown";
}

Tensor avg_pool2(const Tensor& x) {
  const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::int64_t ho = (h + 1) / 2, wo = (w + 1) / 2;
  Tensor y(Shape{c, ho, wo});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        int n = 0;
        for (std::int64_t dy = 0; dy < 2; ++dy) {
          for (std::int64_t dx = 0; dx < 2; ++dx) {
            const std::int64_t iy = 2 * oy + dy, ix = 2 * ox + dx;
            if (iy < h && ix < w) {
              acc += x[(ch * h + iy) * w + ix];
              ++n;
            }
          }
        }
        y[(ch * ho + oy) * wo + ox] = acc / n;
      }
    }
  }
  return y;
}

bool supported_extent(std::int64_t extent) {
  return extent > 0 && (extent % 32 == 0 || extent == kDefaultTrainImageSize);
}

void validate_image(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("image must be [3 x H x W], got " + to_string(image.shape()));
  if (!supported_extent(image.dim(1)) || !supported_extent(image.dim(2))) {
    throw ShapeError("image dims " + std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) +
                     " are not divisible by 32");
  }
  if (!image.all_finite()) throw ValidationError("image contains non-finite values");
}

ProjectionEncoder ProjectionEncoder::stub(const EncoderConfig& config) {
  for (int l : config.layers_per_stage) {
    if (l < 1) throw ValidationError("every stage needs at least one layer");
  }
  if (config.embedding_dim < 1) throw ValidationError("embedding_dim must be positive");
  ProjectionEncoder enc;
  enc.config_ = config;
  Rng rng(config.seed);
  std::int64_t in = 3;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::int64_t c = config.stage_channels[i];
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    std::normal_distribution<double> w(0.0, scale), b(0.0, 0.2);
    enc.stage_weight_[i] = Tensor(Shape{c, in});
    for (auto& v : enc.stage_weight_[i].values()) v = w(rng);
    enc.stage_bias_[i] = Tensor(Shape{c});
    for (auto& v : enc.stage_bias_[i].values()) v = b(rng);
    in = c;
  }
  for (int stage = 2; stage <= 4; ++stage) {
    const std::int64_t c = config.stage_channels[static_cast<std::size_t>(stage - 1)];
    std::normal_distribution<double> w(0.0, 1.0 / std::sqrt(static_cast<double>(c)));
    for (int l = 0; l < config.layers_per_stage[static_cast<std::size_t>(stage - 2)]; ++l) {
      Tensor lw(Shape{c, c});
      for (auto& v : lw.values()) v = w(rng);
      enc.layer_weight_[stage].push_back(std::move(lw));
    }
  }
  std::normal_distribution<double> e(0.0, 1.0 / std::sqrt(static_cast<double>(config.stage_channels[3])));
  enc.embed_weight_ = Tensor(Shape{config.embedding_dim, config.stage_channels[3]});
  for (auto& v : enc.embed_weight_.values()) v = e(rng);
  return enc;
}

std::vector<std::pair<std::string, Tensor>> ProjectionEncoder::weights() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out.emplace_back("encoder.stage" + std::to_string(i + 1) + ".weight", stage_weight_[i]);
    out.emplace_back("encoder.stage" + std::to_string(i + 1) + ".bias", stage_bias_[i]);
  }
  for (const auto& [stage, ws] : layer_weight_) {
    for (std::size_t l = 0; l < ws.size(); ++l) {
      out.emplace_back(layer_name(stage, l, "weight"), ws[l]);
    }
  }
  out.emplace_back("encoder.embed.weight", embed_weight_);
  return out;
}

TensorArchive ProjectionEncoder::to_archive() const {
  TensorArchive ar;
  ar.meta["kind"] = "projection_encoder";
  ar.meta["seed"] = std::to_string(config_.seed);
  for (std::size_t i = 0; i < 3; ++i) ar.meta["layers_stage" + std::to_string(i + 2)] = std::to_string(config_.layers_per_stage[i]);
  ar.tensors = weights();
  return ar;
}

void ProjectionEncoder::save(const std::filesystem::path& path) const { write_archive(path, to_archive()); }

ProjectionEncoder ProjectionEncoder::from_archive(const TensorArchive& ar) {
  ProjectionEncoder enc;
  try {
    enc.config_.seed = std::stoull(ar.meta.at("seed"));
    for (std::size_t i = 0; i < 3; ++i) enc.config_.layers_per_stage[i] = std::stoi(ar.meta.at("layers_stage" + std::to_string(i + 2)));
  } catch (const std::exception&) {
    throw IoError("encoder archive is missing its layer/seed metadata");
  }
  std::int64_t in = 3;
  for (std::size_t i = 0; i < 4; ++i) {
    enc.stage_weight_[i] = ar.get("encoder.stage" + std::to_string(i + 1) + ".weight");
    enc.stage_bias_[i] = ar.get("encoder.stage" + std::to_string(i + 1) + ".bias");
    if (enc.stage_weight_[i].rank() != 2 || enc.stage_weight_[i].dim(1) != in) {
      throw ShapeError("encoder stage " + std::to_string(i + 1) + " weight has wrong input width");
    }
    in = enc.stage_weight_[i].dim(0);
    enc.config_.stage_channels[i] = in;
  }
  for (int stage = 2; stage <= 4; ++stage) {
    for (int l = 0; l < enc.config_.layers_per_stage[static_cast<std::size_t>(stage - 2)]; ++l) {
      const Tensor& lw = ar.get(layer_name(stage, static_cast<std::size_t>(l), "weight"));
      const std::int64_t c = enc.config_.stage_channels[static_cast<std::size_t>(stage - 1)];
      if (lw.rank() != 2 || lw.dim(0) != c || lw.dim(1) != c) {
        throw ShapeError("encoder stage " + std::to_string(stage) + " layer weight must be square");
      }
      enc.layer_weight_[stage].push_back(lw);
    }
  }
  enc.embed_weight_ = ar.get("encoder.embed.weight");
  if (enc.embed_weight_.rank() != 2 || enc.embed_weight_.dim(1) != enc.config_.stage_channels[3]) {
    throw ShapeError("encoder embedding projection does not match stage-4 width");
  }
  enc.config_.embedding_dim = enc.embed_weight_.dim(0);
  return enc;
}

ProjectionEncoder ProjectionEncoder::load(const std::filesystem::path& path) { return from_archive(read_archive(path)); }

FeaturePyramid ProjectionEncoder::encode_image(const Tensor& image) const {
  validate_image(image);
  FeaturePyramid pyr;
  // Stem pooling so that stage 1 lands at stride 4.
  Tensor x = avg_pool2(image);
  for (std::size_t i = 0; i < 4; ++i) {
    x = avg_pool2(project(x, stage_weight_[i], stage_bias_[i], true));
    pyr.stage_features[i] = x;
  }
  for (const auto& [stage, ws] : layer_weight_) {
    const Tensor centred = centre_spatial(pyr.stage_features[static_cast<std::size_t>(stage - 1)]);
    auto& out = pyr.layer_features[stage];
    for (const Tensor& w : ws) out.push_back(project(centred, w, Tensor(), false));
  }
  pyr.dense_embedding = project(pyr.stage_features[3], embed_weight_, Tensor(), false);
  return pyr;
}

TextEmbedding ProjectionEncoder::encode_text(std::string_view class_name) const {
  if (class_name.empty()) throw ValidationError("class text must be non-empty");
  Rng rng(splitmix(fnv1a(class_name) ^ splitmix(config_.seed)));
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor v(Shape{config_.embedding_dim});
  double ss = 0.0;
  for (auto& x : v.values()) {
    x = dist(rng);
    ss += x * x;
  }
  const double inv = 1.0 / std::sqrt(ss);
  for (auto& x : v.values()) x *= inv;
  return {std::move(v), EmbeddingSource::class_text};
}

Tensor ProjectionEncoder::project_pooled(const Tensor& pooled) const {
  if (pooled.numel() != config_.stage_channels[3]) throw ShapeError("pooled feature width does not match stage 4");
  Tensor out(Shape{config_.embedding_dim});
  Eigen::Map<Eigen::VectorXd>(out.data(), out.numel()).noalias() =
      ConstMatMap(embed_weight_.data(), embed_weight_.dim(0), embed_weight_.dim(1)) *
      Eigen::Map<const Eigen::VectorXd>(pooled.data(), pooled.numel());
  return out;
}

Tensor masked_average(const Tensor& deep_feature, const BinaryMask* mask) {
  if (deep_feature.rank() != 3) throw ShapeError("deep feature must be [c x h x w]");
  const std::int64_t c = deep_feature.dim(0), h = deep_feature.dim(1), w = deep_feature.dim(2);
  const BinaryMask support = mask ? resize_nearest(*mask, static_cast<int>(h), static_cast<int>(w))
                                  : BinaryMask::ones(static_cast<int>(h), static_cast<int>(w));
  const std::int64_t n = support.count();
  if (n == 0) throw DegenerateMaskError("mask has no foreground after resizing to " + std::to_string(h) + "x" + std::to_string(w));
  Tensor out(Shape{c});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < h * w; ++i) {
      if (support.bits()[static_cast<std::size_t>(i)]) acc += deep_feature[ch * h * w + i];
    }
    out[ch] = acc / static_cast<double>(n);
  }
  return out;
}

TextEmbedding pooled_embedding(const Encoder& encoder, const Tensor& deep_feature, const BinaryMask* mask) {
  const Tensor pooled = masked_average(deep_feature, mask);
  return {encoder.project_pooled(pooled), mask ? EmbeddingSource::masked_pool : EmbeddingSource::global_pool};
}

}  // namespace unifss
