#include "unifss/parameters.hpp"

#include <cmath>
#include <unordered_map>

#include "unifss/errors.hpp"

namespace unifss {
namespace init {

Tensor fan_in_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::int64_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Tensor normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace init

void zero_grads(const ParameterList& params) {
  for (const auto& p : params) {
    auto var = p.var;
    var.zero_grad();
  }
}

std::vector<std::pair<std::string, Tensor>> snapshot(const ParameterList& params) {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.name, p.var.value());
  return out;
}

void restore(const ParameterList& params, const std::vector<std::pair<std::string, Tensor>>& values) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : values) by_name[name] = &t;
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw IoError("checkpoint is missing parameter '" + p.name + "'");
    if (it->second->shape() != p.var.shape()) {
      throw ShapeError("parameter '" + p.name + "' has shape " + to_string(it->second->shape()) + ", expected " +
                       to_string(p.var.shape()));
    }
    auto var = p.var;
    var.mutable_value() = *it->second;
  }
}

}  // namespace unifss
