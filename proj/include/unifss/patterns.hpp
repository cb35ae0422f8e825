#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "unifss/encoder.hpp"
#include "unifss/image.hpp"

namespace unifss {

enum class PatternTag { image, mask, box, class_image, class_mask, class_box, text };

inline constexpr std::array<PatternTag, 7> kAllPatterns = {
    PatternTag::image,      PatternTag::mask,      PatternTag::box,  PatternTag::class_image,
    PatternTag::class_mask, PatternTag::class_box, PatternTag::text,
};

std::string_view pattern_name(PatternTag pattern);
// Throws ValidationError for anything but the seven stable names.
PatternTag parse_pattern(std::string_view name);
bool needs_mask(PatternTag pattern);
bool needs_box(PatternTag pattern);
bool needs_class_text(PatternTag pattern);  // class-aware patterns and text
std::string required_fields(PatternTag pattern);

// The three parameter sets trained for the pattern families.
enum class PatternGroup { image_only, mask_group, class_aware_group };
std::string_view group_name(PatternGroup group);
PatternGroup parse_group(std::string_view name);
PatternTag training_pattern(PatternGroup group);
std::vector<PatternTag> test_patterns(PatternGroup group);
PatternGroup group_of(PatternTag pattern);

// Pixel box with exclusive upper bounds.
struct Box {
  int x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  friend bool operator==(const Box&, const Box&) = default;
};

// 1 exactly on [y_min, y_max) x [x_min, x_max).
BinaryMask box_to_mask(const Box& box, int height, int width);
// Smallest box containing every foreground pixel. Throws DegenerateMaskError on an empty mask.
Box tight_box(const BinaryMask& mask);

struct RawSupport {
  Tensor image;  // normalized [3 x H x W]
  std::optional<BinaryMask> mask;
  std::optional<Box> box;
  std::optional<std::string> class_name;
};

struct GuidanceSet {
  Tensor support_image;
  BinaryMask support_mask;
  TextEmbedding guidance_embedding;
  PatternTag pattern = PatternTag::image;
  std::optional<std::string> class_name;
  std::vector<std::string> warnings;  // e.g. masked pooling fell back to global pooling
};

// support_pyramid may carry the already encoded support image (ignored for text,
// whose support is the query image) to skip a second encoder pass.
GuidanceSet normalize_guidance(PatternTag pattern, const RawSupport& raw, const Tensor& query_image,
                               const Encoder& encoder, const FeaturePyramid* support_pyramid = nullptr);

// Foreground where at least ceil(K/2) of the K masks vote foreground.
BinaryMask kshot_vote(const std::vector<BinaryMask>& predictions);

}  // namespace unifss
