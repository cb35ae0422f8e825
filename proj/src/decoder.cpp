#include "unifss/decoder.hpp"

#include "unifss/errors.hpp"

namespace unifss {
namespace {

constexpr std::int64_t kWidth4 = 128;
constexpr std::int64_t kWidth3 = 96;
constexpr std::int64_t kWidth2 = 64;
constexpr std::int64_t kWidth1 = 32;
constexpr std::int64_t kQ2Width = 32;
constexpr std::int64_t kQ1Width = 16;

struct Affine {
  ag::Var weight, bias;
};

Affine affine(std::int64_t in, std::int64_t out, Rng& rng) {
  return {make_param(init::fan_in_uniform({out, in}, in, rng)), make_param(init::fan_in_uniform({out}, in, rng))};
}

Affine conv(std::int64_t in, std::int64_t out, int k, Rng& rng) {
  const std::int64_t fan_in = in * k * k;
  return {make_param(init::fan_in_uniform({out, in, k, k}, fan_in, rng)),
          make_param(init::fan_in_uniform({out}, fan_in, rng))};
}

void require_grid(const ag::Var& x, std::int64_t h, std::int64_t w, const std::string& what) {
  const auto& s = x.shape();
  if (s.size() != 3 || s[1] != h || s[2] != w) {
    throw ShapeError(what + " has shape " + to_string(s) + ", expected a " + std::to_string(h) + "x" +
                     std::to_string(w) + " grid");
  }
}

}  // namespace

EiuParams EiuParams::create(std::int64_t c, Rng& rng, std::int64_t d, int heads) {
  if (heads < 1 || d % heads != 0) throw ContractError("EIU width must be divisible by the head count");
  EiuParams p;
  p.heads = heads;
  auto assign = [](ag::Var& w, ag::Var& b, Affine a) {
    w = a.weight;
    b = a.bias;
  };
  assign(p.q_weight, p.q_bias, affine(c, d, rng));
  assign(p.k_weight, p.k_bias, affine(c, d, rng));
  assign(p.v_weight, p.v_bias, affine(c, d, rng));
  assign(p.attn_out_weight, p.attn_out_bias, affine(d, d, rng));
  assign(p.gate_weight, p.gate_bias, affine(d, d, rng));
  assign(p.reduce_weight, p.reduce_bias, affine(c, d, rng));
  assign(p.out1_weight, p.out1_bias, affine(d, d, rng));
  assign(p.out2_weight, p.out2_bias, affine(d, d, rng));
  return p;
}

void EiuParams::collect(const std::string& prefix, ParameterList& out) const {
  const std::pair<const char*, const ag::Var*> items[] = {
      {"q_weight", &q_weight},       {"q_bias", &q_bias},
      {"k_weight", &k_weight},       {"k_bias", &k_bias},
      {"v_weight", &v_weight},       {"v_bias", &v_bias},
      {"attn_out_weight", &attn_out_weight}, {"attn_out_bias", &attn_out_bias},
      {"gate_weight", &gate_weight}, {"gate_bias", &gate_bias},
      {"reduce_weight", &reduce_weight}, {"reduce_bias", &reduce_bias},
      {"out1_weight", &out1_weight}, {"out1_bias", &out1_bias},
      {"out2_weight", &out2_weight}, {"out2_bias", &out2_bias},
  };
  for (const auto& [name, var] : items) out.push_back({prefix + "." + name, *var});
}

ag::Var eiu_gate(const ag::Var& f_v, const ag::Var& f_t, const EiuParams& p) {
  const auto& vs = f_v.shape();
  if (vs.size() != 3) throw ShapeError("f_v must be [c x h x w]");
  if (f_t.shape().size() != 1 || f_t.shape()[0] != vs[0]) {
    throw ShapeError("guidance embedding " + to_string(f_t.shape()) + " does not match f_v channels " +
                     std::to_string(vs[0]));
  }
  if (p.q_weight.shape()[1] != vs[0]) throw ShapeError("EIU was built for a different embedding width");
  const std::int64_t d = p.width(), positions = vs[1] * vs[2];
  const ag::Var q = ag::reshape(ag::linear(f_v, p.q_weight, p.q_bias, 0), Shape{d, positions});
  const ag::Var k = ag::reshape(ag::linear(f_t, p.k_weight, p.k_bias, 0), Shape{d, 1});
  const ag::Var v = ag::reshape(ag::linear(f_t, p.v_weight, p.v_bias, 0), Shape{d, 1});
  ag::Var a = ag::attention(q, k, v, p.heads);
  a = ag::linear(a, p.attn_out_weight, p.attn_out_bias, 0);
  a = ag::linear(a, p.gate_weight, p.gate_bias, 0);
  return ag::reshape(a, Shape{d, vs[1], vs[2]});
}

ag::Var eiu_output(const ag::Var& f_v, const ag::Var& gate, const EiuParams& p) {
  const ag::Var reduced = ag::linear(f_v, p.reduce_weight, p.reduce_bias, 0);
  if (reduced.shape() != gate.shape()) throw ShapeError("EIU gate does not match the reduced embedding");
  return ag::linear(ag::linear(ag::mul(reduced, gate), p.out1_weight, p.out1_bias, 0), p.out2_weight, p.out2_bias, 0);
}

ag::Var eiu(const ag::Var& f_v, const ag::Var& f_t, const EiuParams& p) {
  return eiu_output(f_v, eiu_gate(f_v, f_t, p), p);
}

ConvBlock ConvBlock::create(std::int64_t in, std::int64_t out, Rng& rng) {
  ConvBlock b;
  Affine c1 = conv(in, out, 3, rng);
  Affine c2 = conv(out, out, 3, rng);
  b.conv1_weight = c1.weight;
  b.conv1_bias = c1.bias;
  b.conv2_weight = c2.weight;
  b.conv2_bias = c2.bias;
  b.gn1_gamma = make_param(Tensor(Shape{out}, 1.0));
  b.gn1_beta = make_param(Tensor(Shape{out}));
  b.gn2_gamma = make_param(Tensor(Shape{out}, 1.0));
  b.gn2_beta = make_param(Tensor(Shape{out}));
  return b;
}

ag::Var ConvBlock::forward(const ag::Var& x) const {
  ag::Var h = ag::relu(ag::group_norm(ag::conv2d(x, conv1_weight, conv1_bias, 1, 1), groups, gn1_gamma, gn1_beta));
  return ag::relu(ag::group_norm(ag::conv2d(h, conv2_weight, conv2_bias, 1, 1), groups, gn2_gamma, gn2_beta));
}

void ConvBlock::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".conv1_weight", conv1_weight});
  out.push_back({prefix + ".conv1_bias", conv1_bias});
  out.push_back({prefix + ".gn1_gamma", gn1_gamma});
  out.push_back({prefix + ".gn1_beta", gn1_beta});
  out.push_back({prefix + ".conv2_weight", conv2_weight});
  out.push_back({prefix + ".conv2_bias", conv2_bias});
  out.push_back({prefix + ".gn2_gamma", gn2_gamma});
  out.push_back({prefix + ".gn2_beta", gn2_beta});
}

DecoderParams DecoderParams::create(std::int64_t embedding_dim, std::int64_t c1, std::int64_t c2, Rng& rng) {
  DecoderParams p;
  p.eiu = EiuParams::create(embedding_dim, rng);
  Affine q1 = conv(c1, kQ1Width, 1, rng);
  Affine q2 = conv(c2, kQ2Width, 1, rng);
  p.q1_weight = q1.weight;
  p.q1_bias = q1.bias;
  p.q2_weight = q2.weight;
  p.q2_bias = q2.bias;
  p.block4 = ConvBlock::create(kEiuWidth + kAggregatedChannels, kWidth4, rng);
  p.block3 = ConvBlock::create(kWidth4 + kAggregatedChannels, kWidth3, rng);
  p.block2 = ConvBlock::create(kWidth3 + kAggregatedChannels + kQ2Width, kWidth2, rng);
  p.block1 = ConvBlock::create(kWidth2 + kQ1Width, kWidth1, rng);
  Affine head = conv(kWidth1, 2, 1, rng);
  p.head_weight = head.weight;
  p.head_bias = head.bias;
  return p;
}

void DecoderParams::collect(const std::string& prefix, ParameterList& out) const {
  eiu.collect(prefix + ".eiu", out);
  out.push_back({prefix + ".q1_weight", q1_weight});
  out.push_back({prefix + ".q1_bias", q1_bias});
  out.push_back({prefix + ".q2_weight", q2_weight});
  out.push_back({prefix + ".q2_bias", q2_bias});
  block4.collect(prefix + ".block4", out);
  block3.collect(prefix + ".block3", out);
  block2.collect(prefix + ".block2", out);
  block1.collect(prefix + ".block1", out);
  out.push_back({prefix + ".head_weight", head_weight});
  out.push_back({prefix + ".head_bias", head_bias});
}

ag::Var decode(const ag::Var& f_vt, const AggregatedFeatures& agg, const ag::Var& f_q1, const ag::Var& f_q2,
               const DecoderParams& p, std::int64_t out_h, std::int64_t out_w) {
  const ag::Var& a4 = agg.at(4);
  const ag::Var& a3 = agg.at(3);
  const ag::Var& a2 = agg.at(2);
  const auto& s4 = a4.shape();
  const auto& s3 = a3.shape();
  const auto& s2 = a2.shape();
  if (s4.size() != 3 || s3.size() != 3 || s2.size() != 3) throw ShapeError("aggregated features must be [c x h x w]");
  require_grid(f_vt, s4[1], s4[2], "f_vt");
  require_grid(f_q2, s2[1], s2[2], "f_q^2");
  if (f_q1.shape().size() != 3) throw ShapeError("f_q^1 must be [c x h x w]");
  const std::int64_t h1 = f_q1.shape()[1], w1 = f_q1.shape()[2];
  if ((h1 + 1) / 2 != s2[1] || (w1 + 1) / 2 != s2[2] || (s2[1] + 1) / 2 != s3[1] || (s2[2] + 1) / 2 != s3[2] ||
      (s3[1] + 1) / 2 != s4[1] || (s3[2] + 1) / 2 != s4[2]) {
    throw ShapeError("decoder inputs do not form a halving pyramid");
  }

  ag::Var x = p.block4.forward(ag::concat({f_vt, a4}));
  x = p.block3.forward(ag::concat({ag::upsample_bilinear(x, s3[1], s3[2]), a3}));
  const ag::Var q2 = ag::conv2d(f_q2, p.q2_weight, p.q2_bias, 1, 0);
  x = p.block2.forward(ag::concat({ag::upsample_bilinear(x, s2[1], s2[2]), a2, q2}));
  const ag::Var q1 = ag::conv2d(f_q1, p.q1_weight, p.q1_bias, 1, 0);
  x = p.block1.forward(ag::concat({ag::upsample_bilinear(x, h1, w1), q1}));
  x = ag::conv2d(x, p.head_weight, p.head_bias, 1, 0);
  return ag::upsample_bilinear(x, out_h, out_w);
}

BinaryMask predict_mask(const Tensor& logits) {
  if (logits.rank() != 3 || logits.dim(0) != 2) throw ShapeError("predict_mask expects [2 x H x W] logits");
  const auto h = static_cast<int>(logits.dim(1)), w = static_cast<int>(logits.dim(2));
  const std::int64_t plane = logits.dim(1) * logits.dim(2);
  BinaryMask mask(h, w);
  auto bits = mask.bits();
  for (std::int64_t i = 0; i < plane; ++i) bits[static_cast<std::size_t>(i)] = logits[plane + i] > logits[i] ? 1 : 0;
  return mask;
}

}  // namespace unifss
