#pragma once

#include <string>

#include "unifss/aggregation.hpp"
#include "unifss/autograd.hpp"
#include "unifss/image.hpp"
#include "unifss/parameters.hpp"

namespace unifss {

inline constexpr std::int64_t kEiuWidth = 128;

// Embedding interactive unit.
struct EiuParams {
  int heads = 4;
  ag::Var q_weight, q_bias;  // from f_v
  ag::Var k_weight, k_bias;  // from f_t
  ag::Var v_weight, v_bias;
  ag::Var attn_out_weight, attn_out_bias;
  ag::Var gate_weight, gate_bias;  // -> A_vt
  ag::Var reduce_weight, reduce_bias;
  ag::Var out1_weight, out1_bias;
  ag::Var out2_weight, out2_bias;

  static EiuParams create(std::int64_t embedding_dim, Rng& rng, std::int64_t width = kEiuWidth, int heads = 4);
  std::int64_t width() const { return q_weight.shape()[0]; }
  void collect(const std::string& prefix, ParameterList& out) const;
};

// A_vt: [d x h x w]. Unbounded (no squashing nonlinearity).
ag::Var eiu_gate(const ag::Var& f_v, const ag::Var& f_t, const EiuParams& params);
// out2(out1(reduce(f_v) * gate)).
ag::Var eiu_output(const ag::Var& f_v, const ag::Var& gate, const EiuParams& params);
ag::Var eiu(const ag::Var& f_v, const ag::Var& f_t, const EiuParams& params);

// Two (3x3 conv -> group norm -> ReLU) layers.
struct ConvBlock {
  ag::Var conv1_weight, conv1_bias, gn1_gamma, gn1_beta;
  ag::Var conv2_weight, conv2_bias, gn2_gamma, gn2_beta;
  int groups = 4;

  static ConvBlock create(std::int64_t in_channels, std::int64_t out_channels, Rng& rng);
  ag::Var forward(const ag::Var& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct DecoderParams {
  EiuParams eiu;
  ag::Var q1_weight, q1_bias;  // 1x1 transform of f_q^1
  ag::Var q2_weight, q2_bias;  // 1x1 transform of f_q^2
  ConvBlock block4, block3, block2, block1;
  ag::Var head_weight, head_bias;

  static DecoderParams create(std::int64_t embedding_dim, std::int64_t stage1_channels,
                              std::int64_t stage2_channels, Rng& rng);
  void collect(const std::string& prefix, ParameterList& out) const;
};

// logits [2 x out_h x out_w]; channel 0 background, channel 1 foreground.
ag::Var decode(const ag::Var& f_vt, const AggregatedFeatures& aggregated, const ag::Var& f_q1, const ag::Var& f_q2,
               const DecoderParams& params, std::int64_t out_h, std::int64_t out_w);

// Foreground where the foreground logit is strictly larger.
BinaryMask predict_mask(const Tensor& logits);

}  // namespace unifss
