#include "unifss/patterns.hpp"

#include <algorithm>

#include "unifss/errors.hpp"

namespace unifss {

std::string_view pattern_name(PatternTag p) {
  switch (p) {
    case PatternTag::image: return "image";
    case PatternTag::mask: return "mask";
    case PatternTag::box: return "box";
    case PatternTag::class_image: return "class_image";
    case PatternTag::class_mask: return "class_mask";
    case PatternTag::class_box: return "class_box";
    case PatternTag::text: return "text";
  }
  throw ContractError("unknown pattern tag");
}

PatternTag parse_pattern(std::string_view name) {
  for (PatternTag p : kAllPatterns) {
    if (pattern_name(p) == name) return p;
  }
  throw ValidationError("unknown pattern '" + std::string(name) +
                        "' (expected image, mask, box, class_image, class_mask, class_box or text)");
}

bool needs_mask(PatternTag p) { return p == PatternTag::mask || p == PatternTag::class_mask; }
bool needs_box(PatternTag p) { return p == PatternTag::box || p == PatternTag::class_box; }
bool needs_class_text(PatternTag p) {
  return p == PatternTag::class_image || p == PatternTag::class_mask || p == PatternTag::class_box ||
         p == PatternTag::text;
}

std::string required_fields(PatternTag p) {
  if (p == PatternTag::text) return "class_name";
  std::string out = "image";
  if (needs_mask(p)) out += ",mask";
  if (needs_box(p)) out += ",box";
  if (needs_class_text(p)) out += ",class_name";
  return out;
}

std::string_view group_name(PatternGroup g) {
  switch (g) {
    case PatternGroup::image_only: return "image-only";
    case PatternGroup::mask_group: return "mask-group";
    case PatternGroup::class_aware_group: return "class-aware-group";
  }
  throw ContractError("unknown pattern group");
}

PatternGroup parse_group(std::string_view name) {
  for (PatternGroup g : {PatternGroup::image_only, PatternGroup::mask_group, PatternGroup::class_aware_group}) {
    if (group_name(g) == name) return g;
  }
  throw ValidationError("unknown pattern group '" + std::string(name) +
                        "' (expected image-only, mask-group or class-aware-group)");
}

PatternTag training_pattern(PatternGroup g) {
  switch (g) {
    case PatternGroup::image_only: return PatternTag::image;
    case PatternGroup::mask_group: return PatternTag::mask;
    case PatternGroup::class_aware_group: return PatternTag::class_mask;
  }
  throw ContractError("unknown pattern group");
}

std::vector<PatternTag> test_patterns(PatternGroup g) {
  switch (g) {
    case PatternGroup::image_only: return {PatternTag::image};
    case PatternGroup::mask_group: return {PatternTag::mask, PatternTag::box};
    case PatternGroup::class_aware_group:
      return {PatternTag::class_image, PatternTag::class_mask, PatternTag::class_box, PatternTag::text};
  }
  throw ContractError("unknown pattern group");
}

PatternGroup group_of(PatternTag p) {
  if (p == PatternTag::image) return PatternGroup::image_only;
  if (p == PatternTag::mask || p == PatternTag::box) return PatternGroup::mask_group;
  return PatternGroup::class_aware_group;
}

BinaryMask box_to_mask(const Box& b, int height, int width) {
  if (b.x_min < 0 || b.y_min < 0 || b.x_min >= b.x_max || b.y_min >= b.y_max || b.x_max > width ||
      b.y_max > height) {
    throw ValidationError("box (" + std::to_string(b.x_min) + "," + std::to_string(b.y_min) + "," +
                          std::to_string(b.x_max) + "," + std::to_string(b.y_max) + ") is inverted or outside " +
                          std::to_string(width) + "x" + std::to_string(height));
  }
  BinaryMask m(height, width);
  for (int y = b.y_min; y < b.y_max; ++y) {
    for (int x = b.x_min; x < b.x_max; ++x) m.set(y, x, true);
  }
  return m;
}

Box tight_box(const BinaryMask& mask) {
  Box b{mask.width(), mask.height(), -1, -1};
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask(y, x)) continue;
      b.x_min = std::min(b.x_min, x);
      b.y_min = std::min(b.y_min, y);
      b.x_max = std::max(b.x_max, x + 1);
      b.y_max = std::max(b.y_max, y + 1);
    }
  }
  if (b.x_max < 0) throw DegenerateMaskError("empty mask has no bounding box");
  return b;
}

GuidanceSet normalize_guidance(PatternTag pattern, const RawSupport& raw, const Tensor& query_image,
                               const Encoder& encoder, const FeaturePyramid* support_pyramid) {
  const auto field = [&](const char* what) {
    return ValidationError(std::string(pattern_name(pattern)) + " guidance requires a support " + what);
  };
  if (needs_class_text(pattern) && (!raw.class_name || raw.class_name->empty())) throw field("class name");

  GuidanceSet g;
  g.pattern = pattern;
  g.class_name = raw.class_name;
  if (pattern == PatternTag::text) {
    g.support_image = query_image;
  } else {
    if (raw.image.numel() == 0) throw field("image");
    g.support_image = raw.image;
  }
  if (g.support_image.rank() != 3) throw ShapeError("support image must be [3 x H x W]");
  const auto h = static_cast<int>(g.support_image.dim(1)), w = static_cast<int>(g.support_image.dim(2));

  switch (pattern) {
    case PatternTag::mask:
    case PatternTag::class_mask:
      if (!raw.mask) throw field("mask");
      if (raw.mask->height() != h || raw.mask->width() != w) throw ShapeError("support mask does not match the image");
      g.support_mask = *raw.mask;
      break;
    case PatternTag::box:
    case PatternTag::class_box:
      if (!raw.box) throw field("box");
      g.support_mask = box_to_mask(*raw.box, h, w);
      break;
    case PatternTag::image:
    case PatternTag::class_image:
    case PatternTag::text:
      g.support_mask = BinaryMask::ones(h, w);
      break;
  }

  if (needs_class_text(pattern)) {
    g.guidance_embedding = encoder.encode_text(*raw.class_name);
    return g;
  }
  FeaturePyramid local;
  if (support_pyramid == nullptr) {
    local = encoder.encode_image(g.support_image);
    support_pyramid = &local;
  }
  const Tensor& deep = support_pyramid->stage(4);
  const BinaryMask* pool_mask = pattern == PatternTag::image ? nullptr : &g.support_mask;
  try {
    g.guidance_embedding = pooled_embedding(encoder, deep, pool_mask);
  } catch (const DegenerateMaskError& e) {
    g.warnings.push_back(std::string(e.what()) + "; using global pooling");
    g.guidance_embedding = pooled_embedding(encoder, deep, nullptr);
  }
  return g;
}

BinaryMask kshot_vote(const std::vector<BinaryMask>& predictions) {
  if (predictions.empty()) throw ValidationError("k-shot voting needs at least one prediction");
  const int h = predictions.front().height(), w = predictions.front().width();
  for (const auto& p : predictions) {
    if (p.height() != h || p.width() != w) throw ShapeError("k-shot predictions differ in size");
  }
  const std::size_t k = predictions.size();
  const std::size_t need = (k + 1) / 2;
  BinaryMask out(h, w);
  auto bits = out.bits();
  for (std::size_t i = 0; i < bits.size(); ++i) {
    std::size_t votes = 0;
    for (const auto& p : predictions) votes += p.bits()[i];
    bits[i] = votes >= need ? 1 : 0;
  }
  return out;
}

}  // namespace unifss
