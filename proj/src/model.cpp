#include "unifss/model.hpp"

#include <sstream>

#include "unifss/errors.hpp"

namespace unifss {
namespace {

template <typename Array>
std::string join(const Array& values) {
  std::ostringstream os;
  for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << values[i];
  return os.str();
}

template <typename T, std::size_t N>
std::array<T, N> split(const std::string& text, const std::string& key) {
  std::array<T, N> out{};
  std::istringstream is(text);
  std::string item;
  std::size_t i = 0;
  while (std::getline(is, item, ',')) {
    if (i >= N) break;
    try {
      out[i++] = static_cast<T>(std::stoll(item));
    } catch (const std::exception&) {
      throw IoError("checkpoint meta '" + key + "' is malformed");
    }
  }
  if (i != N) throw IoError("checkpoint meta '" + key + "' has the wrong arity");
  return out;
}

const std::string& lookup(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw IoError("checkpoint meta lacks '" + key + "'");
  return it->second;
}

void check_pyramid(const FeaturePyramid* p, const ModelGeometry& g, const char* role) {
  if (p == nullptr) throw ContractError(std::string(role) + " pyramid is missing");
  for (int s = 1; s <= 4; ++s) {
    if (p->height(s) != g.h(s) || p->width(s) != g.w(s) || p->stage(s).dim(0) != g.channels(s)) {
      throw ShapeError(std::string(role) + " pyramid stage " + std::to_string(s) + " does not match the model geometry");
    }
  }
}

}  // namespace

UniFssModel UniFssModel::create(const ModelGeometry& g, std::uint64_t seed) {
  UniFssModel m;
  m.geometry_ = g;
  Rng rng(seed);
  m.hscu3_ = HscuParams::create(g.h(3) * g.w(3), rng);
  m.hscu4_ = HscuParams::create(g.h(4) * g.w(4), rng);
  m.aggregation_ = AggregationParams::create(g, rng);
  m.decoder_ = DecoderParams::create(g.embedding_dim, g.channels(1), g.channels(2), rng);
  return m;
}

HscuParams& UniFssModel::hscu(int stage) {
  if (stage == 3) return hscu3_;
  if (stage == 4) return hscu4_;
  throw ContractError("no spatial correction unit for stage " + std::to_string(stage));
}

const HscuParams& UniFssModel::hscu(int stage) const { return const_cast<UniFssModel*>(this)->hscu(stage); }

ParameterList UniFssModel::parameters() const {
  ParameterList out;
  hscu3_.collect("hscu.stage3", out);
  hscu4_.collect("hscu.stage4", out);
  aggregation_.collect("aggregation", out);
  decoder_.collect("decoder", out);
  return out;
}

ag::Var UniFssModel::forward(const PairFeatures& pair) const {
  check_pyramid(pair.query, geometry_, "query");
  check_pyramid(pair.support, geometry_, "support");
  check_pyramid(pair.object, geometry_, "object");

  std::map<int, Correlation4D> corr = build_correlation_pyramid(*pair.query, *pair.support, *pair.object);
  const CorrelationVT c_vt = vt_correlation(pair.query->dense_embedding, pair.guidance);

  std::map<int, ag::Var> volumes;
  volumes[2] = ag::Var::constant(std::move(corr[2].volume));
  volumes[3] = correct(ag::Var::constant(std::move(corr[3].volume)), 3, hscu3_);
  const ag::Var c4 = correct(ag::Var::constant(std::move(corr[4].volume)), 4, hscu4_);
  const Correlation4D text = broadcast_vt(c_vt, geometry_.h(4), geometry_.w(4));
  volumes[4] = ag::concat({c4, ag::Var::constant(text.volume)});

  const AggregatedFeatures agg = aggregate_pyramid(volumes, aggregation_);
  const ag::Var f_v = ag::Var::constant(pair.query->dense_embedding);
  const ag::Var f_vt = eiu(f_v, ag::Var::constant(pair.guidance), decoder_.eiu);
  return decode(f_vt, agg, ag::Var::constant(pair.query->stage(1)), ag::Var::constant(pair.query->stage(2)), decoder_,
                geometry_.image_h, geometry_.image_w);
}

std::map<std::string, std::string> geometry_meta(const ModelGeometry& g) {
  return {
      {"geometry.image_h", std::to_string(g.image_h)},
      {"geometry.image_w", std::to_string(g.image_w)},
      {"geometry.stage_h", join(g.stage_h)},
      {"geometry.stage_w", join(g.stage_w)},
      {"geometry.stage_channels", join(g.stage_channels)},
      {"geometry.layers", join(g.layers)},
      {"geometry.embedding_dim", std::to_string(g.embedding_dim)},
  };
}

ModelGeometry geometry_from_meta(const std::map<std::string, std::string>& meta) {
  ModelGeometry g;
  try {
    g.image_h = std::stoll(lookup(meta, "geometry.image_h"));
    g.image_w = std::stoll(lookup(meta, "geometry.image_w"));
    g.embedding_dim = std::stoll(lookup(meta, "geometry.embedding_dim"));
  } catch (const std::invalid_argument&) {
    throw IoError("checkpoint geometry is malformed");
  }
  g.stage_h = split<std::int64_t, 4>(lookup(meta, "geometry.stage_h"), "geometry.stage_h");
  g.stage_w = split<std::int64_t, 4>(lookup(meta, "geometry.stage_w"), "geometry.stage_w");
  g.stage_channels = split<std::int64_t, 4>(lookup(meta, "geometry.stage_channels"), "geometry.stage_channels");
  g.layers = split<int, 3>(lookup(meta, "geometry.layers"), "geometry.layers");
  return g;
}

TensorArchive UniFssModel::to_archive(const std::map<std::string, std::string>& meta) const {
  TensorArchive a;
  a.meta = meta;
  for (auto& [k, v] : geometry_meta(geometry_)) a.meta[k] = v;
  a.tensors = snapshot(parameters());
  return a;
}

UniFssModel UniFssModel::from_archive(const TensorArchive& archive) {
  UniFssModel m = create(geometry_from_meta(archive.meta), 0);
  restore(m.parameters(), archive.tensors);
  return m;
}

}  // namespace unifss
