#pragma once

// High-level spatial correction of deep correlation volumes. A volume
// [L x h x w x h' x w'] is treated as a batch of L feature maps with h'w'
// channels over the query grid; a residual depth-wise convolution corrects it
// locally, then a residual LN + MLP over the h'w' axis corrects it globally.

#include <string>

#include "unifss/autograd.hpp"
#include "unifss/correlation.hpp"
#include "unifss/parameters.hpp"

namespace unifss {

struct HscuParams {
  std::int64_t width = 0;  // h' * w'
  int kernel = 3;
  int expansion = 4;

  ag::Var dw_kernel;  // [width x k x k]
  ag::Var dw_bias;    // [width]
  ag::Var ln_gamma;   // [width]
  ag::Var ln_beta;    // [width]
  ag::Var fc1_weight;  // [expansion*width x width]
  ag::Var fc1_bias;
  ag::Var fc2_weight;  // [width x expansion*width]
  ag::Var fc2_bias;

  enum class Init {
    zero_residual,  // depth-wise kernel and fc2 start at zero: correct() is the identity
    random,         // every tensor random; used by gradient checks
  };
  static HscuParams create(std::int64_t support_positions, Rng& rng, Init init = Init::zero_residual,
                           int kernel = 3, int expansion = 4);

  void collect(const std::string& prefix, ParameterList& out) const;
};

// [L x h x w x h' x w'] -> [L x h'w' x h x w]; entry (l, y, x, y', x') lands at (l, y'w' + x', y, x).
ag::Var reshape_to_pseudo_feature(const ag::Var& volume);
ag::Var restore_volume(const ag::Var& pseudo, std::int64_t support_h, std::int64_t support_w);

ag::Var local_correct(const ag::Var& pseudo, const HscuParams& params);
ag::Var global_correct(const ag::Var& pseudo, const HscuParams& params);

// Full correction of a stage-3 or stage-4 volume. Throws ContractError for other stages.
ag::Var correct(const ag::Var& volume, int stage, const HscuParams& params);
Correlation4D correct(const Correlation4D& volume, const HscuParams& params);

}  // namespace unifss
