#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "unifss/autograd.hpp"
#include "unifss/parameters.hpp"
#include "unifss/tensor.hpp"

namespace unifss::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

struct GradCheckResult {
  double worst_rel_error = 0.0;
  std::string worst_name;
  bool all_finite = true;
};

// Compares analytic parameter gradients of a scalar loss against central
// differences. Each tensor is probed at up to `probes` entries; the error per
// tensor is ||a - n|| / max(||a||, ||n||, floor) over the probed entries.
inline GradCheckResult grad_check(const std::function<ag::Var()>& loss_fn, const ParameterList& params,
                                  int probes = 6, double h = 1e-6, std::uint64_t seed = 1, double floor = 1e-7) {
  zero_grads(params);
  loss_fn().backward();
  GradCheckResult out;
  Rng rng(seed);
  for (const auto& p : params) {
    ag::Var var = p.var;
    const Tensor analytic = var.grad().empty() ? Tensor::zeros(var.shape()) : var.grad();
    if (!analytic.all_finite()) out.all_finite = false;
    const std::int64_t n = var.value().numel();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(std::min<std::int64_t>(n, probes)));
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::int64_t i : idx) {
      double& slot = var.mutable_value()[i];
      const double saved = slot;
      slot = saved + h;
      const double up = loss_fn().value()[0];
      slot = saved - h;
      const double down = loss_fn().value()[0];
      slot = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[i];
      diff += (a - numeric) * (a - numeric);
      na += a * a;
      nn += numeric * numeric;
    }
    const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
    if (rel > out.worst_rel_error) {
      out.worst_rel_error = rel;
      out.worst_name = p.name;
    }
  }
  return out;
}

// Scalar probe of a tensor-valued output: sum(w * y) with fixed random w.
inline ag::Var probe_loss(const ag::Var& y, std::uint64_t seed) {
  Rng rng(seed);
  return ag::weighted_sum(y, random_tensor(y.shape(), rng));
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("unifss-" + tag + "-" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace unifss::testing
