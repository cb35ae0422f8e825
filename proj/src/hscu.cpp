#include "unifss/hscu.hpp"

#include "unifss/errors.hpp"

namespace unifss {

HscuParams HscuParams::create(std::int64_t support_positions, Rng& rng, Init init, int kernel, int expansion) {
  if (kernel % 2 == 0 || kernel < 1) throw ContractError("HSCU depth-wise kernel size must be odd");
  if (support_positions < 1 || expansion < 1) throw ContractError("HSCU width and expansion must be positive");
  HscuParams p;
  p.width = support_positions;
  p.kernel = kernel;
  p.expansion = expansion;
  const std::int64_t c = support_positions, hidden = expansion * support_positions;
  const bool rand = init == Init::random;

  p.dw_kernel = make_param(rand ? init::fan_in_uniform({c, kernel, kernel}, kernel * kernel, rng)
                                : Tensor(Shape{c, kernel, kernel}));
  p.dw_bias = make_param(rand ? init::fan_in_uniform({c}, kernel * kernel, rng) : Tensor(Shape{c}));
  p.ln_gamma = make_param(rand ? init::normal({c}, 0.2, rng) : Tensor(Shape{c}, 1.0));
  if (rand) {
    for (auto& v : p.ln_gamma.mutable_value().values()) v += 1.0;
  }
  p.ln_beta = make_param(rand ? init::normal({c}, 0.2, rng) : Tensor(Shape{c}));
  p.fc1_weight = make_param(init::fan_in_uniform({hidden, c}, c, rng));
  p.fc1_bias = make_param(init::fan_in_uniform({hidden}, c, rng));
  p.fc2_weight = make_param(rand ? init::fan_in_uniform({c, hidden}, hidden, rng) : Tensor(Shape{c, hidden}));
  p.fc2_bias = make_param(rand ? init::fan_in_uniform({c}, hidden, rng) : Tensor(Shape{c}));
  return p;
}

void HscuParams::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".dw_kernel", dw_kernel});
  out.push_back({prefix + ".dw_bias", dw_bias});
  out.push_back({prefix + ".ln_gamma", ln_gamma});
  out.push_back({prefix + ".ln_beta", ln_beta});
  out.push_back({prefix + ".fc1_weight", fc1_weight});
  out.push_back({prefix + ".fc1_bias", fc1_bias});
  out.push_back({prefix + ".fc2_weight", fc2_weight});
  out.push_back({prefix + ".fc2_bias", fc2_bias});
}

ag::Var reshape_to_pseudo_feature(const ag::Var& volume) {
  const auto& s = volume.shape();
  if (s.size() != 5) throw ShapeError("expected a [L x h x w x h' x w'] volume, got " + to_string(s));
  return ag::reshape(ag::permute(volume, {0, 3, 4, 1, 2}), Shape{s[0], s[3] * s[4], s[1], s[2]});
}

ag::Var restore_volume(const ag::Var& pseudo, std::int64_t support_h, std::int64_t support_w) {
  const auto& s = pseudo.shape();
  if (s.size() != 4 || s[1] != support_h * support_w) throw ShapeError("pseudo-feature does not match support dims");
  return ag::permute(ag::reshape(pseudo, Shape{s[0], support_h, support_w, s[2], s[3]}), {0, 3, 4, 1, 2});
}

ag::Var local_correct(const ag::Var& pseudo, const HscuParams& params) {
  if (pseudo.shape().size() != 4 || pseudo.shape()[1] != params.width) {
    throw ShapeError("HSCU local correction expects " + std::to_string(params.width) + " pseudo-channels, got " +
                     to_string(pseudo.shape()));
  }
  return ag::add(pseudo, ag::depthwise_conv2d(pseudo, params.dw_kernel, params.dw_bias));
}

ag::Var global_correct(const ag::Var& pseudo, const HscuParams& params) {
  if (pseudo.shape().size() != 4 || pseudo.shape()[1] != params.width) {
    throw ShapeError("HSCU global correction expects width " + std::to_string(params.width) + ", got " +
                     to_string(pseudo.shape()));
  }
  ag::Var h = ag::layer_norm(pseudo, 1, params.ln_gamma, params.ln_beta);
  h = ag::gelu(ag::linear(h, params.fc1_weight, params.fc1_bias, 1));
  h = ag::linear(h, params.fc2_weight, params.fc2_bias, 1);
  return ag::add(pseudo, h);
}

ag::Var correct(const ag::Var& volume, int stage, const HscuParams& params) {
  if (stage != 3 && stage != 4) {
    throw ContractError("spatial correction applies to stages 3 and 4 only, got stage " + std::to_string(stage));
  }
  const auto& s = volume.shape();
  if (s.size() != 5) throw ShapeError("expected a 5-axis correlation volume");
  ag::Var x = reshape_to_pseudo_feature(volume);
  x = global_correct(local_correct(x, params), params);
  return restore_volume(x, s[3], s[4]);
}

Correlation4D correct(const Correlation4D& volume, const HscuParams& params) {
  ag::NoGradGuard no_grad;
  return {correct(ag::Var::constant(volume.volume), volume.stage, params).value(), volume.stage};
}

}  // namespace unifss
