#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "unifss/archive.hpp"
#include "unifss/image.hpp"
#include "unifss/tensor.hpp"

namespace unifss {

// Multi-stage features of one image. Stage i (1..4) has stride 4 * 2^(i-1).
struct FeaturePyramid {
  std::array<Tensor, 4> stage_features;             // [c_i x h_i x w_i]
  std::map<int, std::vector<Tensor>> layer_features;  // stages 2..4, L_i maps each [c_i x h_i x w_i]
  Tensor dense_embedding;                            // f_v: [c_vt x h_4 x w_4]

  const Tensor& stage(int i) const;
  const std::vector<Tensor>& layers(int i) const;
  std::int64_t height(int i) const { return stage(i).dim(1); }
  std::int64_t width(int i) const { return stage(i).dim(2); }

  // Throws ShapeError if the stage geometry or embedding invariants fail.
  void validate() const;
};

enum class EmbeddingSource { class_text, masked_pool, global_pool };

std::string_view to_string(EmbeddingSource source);

struct TextEmbedding {
  Tensor vector;  // [c_vt]
  EmbeddingSource source = EmbeddingSource::class_text;
};

// Backbone seam. A pretrained vision-language adapter implements this; the
// dense embedding must come from the value path (1x1 value and output
// projections applied to every token) so that f_v lives in the text space.
class Encoder {
 public:
  virtual ~Encoder() = default;

  // image: normalized [3 x H x W], H and W divisible by 32.
  virtual FeaturePyramid encode_image(const Tensor& image) const = 0;
  virtual TextEmbedding encode_text(std::string_view class_name) const = 0;
  // Maps a pooled stage-4 feature vector [c_4] into the shared space [c_vt].
  virtual Tensor project_pooled(const Tensor& pooled) const = 0;

  virtual std::array<std::int64_t, 4> stage_channels() const = 0;
  virtual std::array<int, 3> layers_per_stage() const = 0;  // L_2, L_3, L_4
  virtual std::int64_t embedding_dim() const = 0;
};

struct EncoderConfig {
  std::uint64_t seed = 0;
  std::array<std::int64_t, 4> stage_channels{16, 32, 64, 64};
  std::array<int, 3> layers_per_stage{2, 3, 2};
  std::int64_t embedding_dim = 64;
};

// Frozen encoder built from 1x1 projections, ReLU and 2x average pooling.
// Layer features are bias-free projections of the stage feature after removing
// its per-channel spatial mean.
// Weights come from a seed (stub) or from a tensor archive (adapter path).
class ProjectionEncoder final : public Encoder {
 public:
  static ProjectionEncoder stub(const EncoderConfig& config);
  static ProjectionEncoder load(const std::filesystem::path& path);

  void save(const std::filesystem::path& path) const;
  TensorArchive to_archive() const;
  static ProjectionEncoder from_archive(const TensorArchive& archive);

  FeaturePyramid encode_image(const Tensor& image) const override;
  TextEmbedding encode_text(std::string_view class_name) const override;
  Tensor project_pooled(const Tensor& pooled) const override;

  std::array<std::int64_t, 4> stage_channels() const override { return config_.stage_channels; }
  std::array<int, 3> layers_per_stage() const override { return config_.layers_per_stage; }
  std::int64_t embedding_dim() const override { return config_.embedding_dim; }

  const EncoderConfig& config() const noexcept { return config_; }
  // All weight tensors by name, for the frozen-weights contract checks.
  std::vector<std::pair<std::string, Tensor>> weights() const;

 private:
  ProjectionEncoder() = default;

  EncoderConfig config_;
  std::array<Tensor, 4> stage_weight_;  // [c_i x c_{i-1}], c_0 = 3
  std::array<Tensor, 4> stage_bias_;
  std::map<int, std::vector<Tensor>> layer_weight_;  // [c_i x c_i], applied to spatially centred stage features
  Tensor embed_weight_;  // [c_vt x c_4]
};

// 2x average pooling with ceil-mode output over [C x H x W]; partial windows
// average their valid cells.
Tensor avg_pool2(const Tensor& x);

// Mean feature vector [c] over the mask support (all positions when absent).
// The mask is resized to the feature grid by nearest neighbour first.
// Throws DegenerateMaskError when the resized mask is empty.
Tensor masked_average(const Tensor& deep_feature, const BinaryMask* mask);

// masked_average followed by the encoder's embedding projection.
TextEmbedding pooled_embedding(const Encoder& encoder, const Tensor& deep_feature, const BinaryMask* mask);

// Image extents must be multiples of 32. 400 is also accepted: ceil-mode
// pooling gives it a 13x13 deepest grid.
inline constexpr std::int64_t kDefaultTrainImageSize = 400;
bool supported_extent(std::int64_t extent);
void validate_image(const Tensor& image);

}  // namespace unifss
