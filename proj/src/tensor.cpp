#include "unifss/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "unifss/errors.hpp"

namespace unifss {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(unifss::numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<std::int64_t>(data_.size()) != unifss::numel(shape_)) {
    throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                     to_string(shape_));
  }
}

std::int64_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  }
  return shape_[axis];
}

std::int64_t Tensor::offset(std::initializer_list<std::int64_t> idx) const {
  if (idx.size() != shape_.size()) {
    throw ShapeError("index rank " + std::to_string(idx.size()) + " does not match shape " + to_string(shape_));
  }
  std::int64_t off = 0;
  std::size_t axis = 0;
  for (auto i : idx) {
    if (i < 0 || i >= shape_[axis]) {
      throw ShapeError("index out of range on axis " + std::to_string(axis) + " of " + to_string(shape_));
    }
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::int64_t> idx) { return data_[static_cast<std::size_t>(offset(idx))]; }

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  return data_[static_cast<std::size_t>(offset(idx))];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (unifss::numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const noexcept { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::max_abs() const noexcept {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

Shape strides_of(const Shape& shape) {
  Shape s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const auto& in_shape = x.shape();
  const std::size_t r = in_shape.size();
  if (perm.size() != r) throw ShapeError("permutation rank mismatch for " + to_string(in_shape));
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    const auto p = static_cast<std::size_t>(perm[i]);
    if (p >= r || seen[p]) throw ShapeError("invalid permutation");
    seen[p] = true;
    out_shape[i] = in_shape[p];
  }
  const Shape in_strides = strides_of(in_shape);
  Shape mapped(r);
  for (std::size_t i = 0; i < r; ++i) mapped[i] = in_strides[static_cast<std::size_t>(perm[i])];

  Tensor out(out_shape);
  const std::int64_t n = out.numel();
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t src = 0;
  for (std::int64_t o = 0; o < n; ++o) {
    out[o] = x[src];
    // odometer increment over the output index
    for (std::size_t a = r; a-- > 0;) {
      if (++idx[a] < out_shape[a]) {
        src += mapped[a];
        break;
      }
      src -= mapped[a] * (out_shape[a] - 1);
      idx[a] = 0;
    }
  }
  return out;
}

Tensor concat_leading(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape tail(parts.front()->shape().begin() + 1, parts.front()->shape().end());
  std::int64_t lead = 0;
  std::size_t total = 0;
  for (const Tensor* p : parts) {
    if (p->rank() == 0 || Shape(p->shape().begin() + 1, p->shape().end()) != tail) {
      throw ShapeError("concat trailing shape mismatch: " + to_string(p->shape()));
    }
    lead += p->shape()[0];
    total += p->storage().size();
  }
  std::vector<double> data;
  data.reserve(total);
  for (const Tensor* p : parts) data.insert(data.end(), p->storage().begin(), p->storage().end());
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return Tensor(std::move(shape), std::move(data));
}

Tensor slice_leading(const Tensor& x, std::int64_t begin, std::int64_t end) {
  if (x.rank() == 0 || begin < 0 || end > x.shape()[0] || begin > end) {
    throw ShapeError("invalid leading slice of " + to_string(x.shape()));
  }
  const std::int64_t inner = x.shape()[0] == 0 ? 0 : x.numel() / x.shape()[0];
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<double> data(x.storage().begin() + begin * inner, x.storage().begin() + end * inner);
  return Tensor(std::move(shape), std::move(data));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace unifss
