#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "unifss/aggregation.hpp"
#include "unifss/correlation.hpp"
#include "unifss/decoder.hpp"
#include "unifss/geometry.hpp"
#include "unifss/hscu.hpp"

namespace unifss {

// Everything the trainable part of the network consumes for one query/support pair.
struct PairFeatures {
  const FeaturePyramid* query = nullptr;
  const FeaturePyramid* support = nullptr;
  const FeaturePyramid* object = nullptr;  // support image masked by the support mask
  Tensor guidance;                         // f_t, [c_vt]
};

// Trainable head on top of a frozen encoder: HSCU, injection, CCPE aggregation, EIU and decoder.
class UniFssModel {
 public:
  static UniFssModel create(const ModelGeometry& geometry, std::uint64_t seed);

  const ModelGeometry& geometry() const noexcept { return geometry_; }
  ParameterList parameters() const;

  // Logits [2 x H x W]. Records a graph when gradients are enabled.
  ag::Var forward(const PairFeatures& pair) const;

  // Parameters plus geometry in the archive; `meta` is stored alongside.
  TensorArchive to_archive(const std::map<std::string, std::string>& meta = {}) const;
  static UniFssModel from_archive(const TensorArchive& archive);

  HscuParams& hscu(int stage);
  const HscuParams& hscu(int stage) const;
  AggregationParams& aggregation() { return aggregation_; }
  DecoderParams& decoder() { return decoder_; }
  const DecoderParams& decoder() const { return decoder_; }

 private:
  ModelGeometry geometry_;
  HscuParams hscu3_;
  HscuParams hscu4_;
  AggregationParams aggregation_;
  DecoderParams decoder_;
};

std::map<std::string, std::string> geometry_meta(const ModelGeometry& geometry);
ModelGeometry geometry_from_meta(const std::map<std::string, std::string>& meta);

}  // namespace unifss
