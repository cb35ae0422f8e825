#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "unifss/autograd.hpp"

namespace unifss {

using Rng = std::mt19937_64;

struct NamedParameter {
  std::string name;
  ag::Var var;
};
using ParameterList = std::vector<NamedParameter>;

namespace init {

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the default for affine and conv layers.
Tensor fan_in_uniform(Shape shape, std::int64_t fan_in, Rng& rng);
Tensor normal(Shape shape, double stddev, Rng& rng);

}  // namespace init

inline ag::Var make_param(Tensor value) { return ag::Var::parameter(std::move(value)); }

void zero_grads(const ParameterList& params);

// Copies parameter values out of / into an archive-like list by name.
std::vector<std::pair<std::string, Tensor>> snapshot(const ParameterList& params);
void restore(const ParameterList& params, const std::vector<std::pair<std::string, Tensor>>& values);

}  // namespace unifss
