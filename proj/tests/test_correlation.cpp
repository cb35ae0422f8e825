#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "unifss/correlation.hpp"
#include "unifss/errors.hpp"

using namespace unifss;
using testing::random_tensor;

namespace {

double cos_relu(const Tensor& a, int ay, int ax, const Tensor& b, int by, int bx) {
  double dot = 0, na = 0, nb = 0;
  for (std::int64_t c = 0; c < a.dim(0); ++c) {
    const double u = a.at({c, ay, ax}), v = b.at({c, by, bx});
    dot += u * v;
    na += u * u;
    nb += v * v;
  }
  if (na == 0 || nb == 0) return 0.0;
  return std::max(0.0, dot / (std::sqrt(na) * std::sqrt(nb)));
}

}  // namespace

TEST_CASE("layer correlation matches a scalar oracle and is bounded") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor q = random_tensor({4, 3, 2}, rng), s = random_tensor({4, 2, 3}, rng), o = random_tensor({4, 2, 3}, rng);
    const Tensor c = vv_layer_correlation(q, s, o);
    REQUIRE(c.shape() == Shape{2, 3, 2, 2, 3});
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 2; ++x)
        for (int ys = 0; ys < 2; ++ys)
          for (int xs = 0; xs < 3; ++xs) {
            CHECK(c.at({0, y, x, ys, xs}) == doctest::Approx(cos_relu(q, y, x, s, ys, xs)).epsilon(1e-12));
            CHECK(c.at({1, y, x, ys, xs}) == doctest::Approx(cos_relu(q, y, x, o, ys, xs)).epsilon(1e-12));
          }
    for (double v : c.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("zero features correlate to zero") {
  Rng rng(2);
  const Tensor q = random_tensor({4, 2, 2}, rng), s = random_tensor({4, 2, 2}, rng);
  const Tensor c = vv_layer_correlation(q, s, Tensor::zeros({4, 2, 2}));
  for (std::int64_t i = c.numel() / 2; i < c.numel(); ++i) CHECK(c[i] == 0.0);
}

TEST_CASE("support permutation permutes the support axes") {
  Rng rng(3);
  const Tensor q = random_tensor({5, 2, 3}, rng), s = random_tensor({5, 2, 2}, rng);
  // Swap support positions (0,0) and (1,1).
  Tensor sp = s;
  for (int c = 0; c < 5; ++c) std::swap(sp.at({c, 0, 0}), sp.at({c, 1, 1}));
  const Tensor a = vv_layer_correlation(q, s, s), b = vv_layer_correlation(q, sp, sp);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x) {
      CHECK(a.at({0, y, x, 0, 0}) == b.at({0, y, x, 1, 1}));
      CHECK(a.at({0, y, x, 1, 1}) == b.at({0, y, x, 0, 0}));
      CHECK(a.at({0, y, x, 0, 1}) == b.at({0, y, x, 0, 1}));
    }
}

TEST_CASE("positive rescaling leaves correlations unchanged") {
  Rng rng(4);
  Tensor q = random_tensor({6, 3, 3}, rng), s = random_tensor({6, 3, 3}, rng);
  const Tensor base = vv_layer_correlation(q, s, s);
  for (auto& v : q.values()) v *= 7.5;
  for (auto& v : s.values()) v *= 0.01;
  CHECK(max_abs_diff(base, vv_layer_correlation(q, s, s)) < 1e-6);

  const Tensor fv = random_tensor({6, 2, 2}, rng);
  Tensor ft = random_tensor({6}, rng);
  const Tensor vt = vt_correlation(fv, ft).map;
  for (auto& v : ft.values()) v *= 3.0;
  CHECK(max_abs_diff(vt, vt_correlation(fv, ft).map) < 1e-6);
}

TEST_CASE("visual-textual correlation checks its inputs") {
  Rng rng(5);
  const Tensor fv = random_tensor({6, 2, 2}, rng);
  CHECK_THROWS_AS(vt_correlation(fv, Tensor::zeros({5})), ShapeError);
  CHECK_THROWS_AS(vt_correlation(fv, Tensor::zeros({6})), ValidationError);
  const Tensor map = vt_correlation(fv, random_tensor({6}, rng)).map;
  CHECK(map.shape() == Shape{2, 2});
  for (double v : map.values()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("pyramid stacks support then object per layer") {
  EncoderConfig cfg;
  const auto enc = ProjectionEncoder::stub(cfg);
  Rng rng(6);
  const auto q = enc.encode_image(random_tensor({3, 64, 64}, rng));
  const auto s = enc.encode_image(random_tensor({3, 64, 64}, rng));
  const auto o = enc.encode_image(random_tensor({3, 64, 64}, rng));
  const auto pyr = build_correlation_pyramid(q, s, o);
  CHECK(pyr.at(2).volume.shape() == Shape{4, 8, 8, 8, 8});
  CHECK(pyr.at(3).volume.shape() == Shape{6, 4, 4, 4, 4});
  CHECK(pyr.at(4).volume.shape() == Shape{4, 2, 2, 2, 2});
  const Tensor layer1 = vv_layer_correlation(q.layers(3)[1], s.layers(3)[1], o.layers(3)[1]);
  CHECK(slice_leading(pyr.at(3).volume, 2, 4) == layer1);
}
