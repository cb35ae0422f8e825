#include <doctest.h>

#include "support.hpp"
#include "unifss/errors.hpp"
#include "unifss/hscu.hpp"

using namespace unifss;
using testing::random_tensor;

TEST_CASE("pseudo-feature layout") {
  Rng rng(1);
  const ag::Var v = ag::Var::constant(random_tensor({2, 3, 4, 2, 5}, rng));
  const ag::Var p = reshape_to_pseudo_feature(v);
  REQUIRE(p.shape() == Shape{2, 10, 3, 4});
  CHECK(p.value().at({1, 1 * 5 + 3, 2, 1}) == v.value().at({1, 2, 1, 1, 3}));
  CHECK(restore_volume(p, 2, 5).value() == v.value());
  CHECK_THROWS_AS(restore_volume(p, 3, 3), ShapeError);
}

TEST_CASE("zero-residual initialisation is the identity") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    const HscuParams params = HscuParams::create(4, rng);
    const Correlation4D vol{random_tensor({4, 3, 3, 2, 2}, rng, 0.0, 1.0), 4};
    const Correlation4D out = correct(vol, params);
    CHECK(out.volume.shape() == vol.volume.shape());
    CHECK(max_abs_diff(out.volume, vol.volume) <= 1e-12);
  }
}

TEST_CASE("stage contract and widths") {
  Rng rng(2);
  const HscuParams params = HscuParams::create(4, rng);
  const ag::Var vol = ag::Var::constant(random_tensor({2, 3, 3, 2, 2}, rng));
  CHECK_THROWS_AS(correct(vol, 2, params), ContractError);
  CHECK_NOTHROW(correct(vol, 3, params));
  const ag::Var wrong = ag::Var::constant(random_tensor({2, 3, 3, 3, 3}, rng));
  CHECK_THROWS_AS(correct(wrong, 4, params), ShapeError);
  CHECK_THROWS_AS(HscuParams::create(4, rng, HscuParams::Init::random, 2), ContractError);
}

TEST_CASE("random parameters change the volume but keep its shape") {
  Rng rng(3);
  const HscuParams params = HscuParams::create(9, rng, HscuParams::Init::random);
  const Correlation4D vol{random_tensor({2, 4, 4, 3, 3}, rng, 0.0, 1.0), 3};
  const Correlation4D out = correct(vol, params);
  CHECK(out.volume.shape() == vol.volume.shape());
  CHECK(max_abs_diff(out.volume, vol.volume) > 1e-3);
}

TEST_CASE("gradients match finite differences") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    Rng rng(seed);
    const HscuParams params = HscuParams::create(4, rng, HscuParams::Init::random);
    ParameterList list;
    params.collect("hscu", list);
    const ag::Var vol = ag::Var::parameter(random_tensor({2, 3, 3, 2, 2}, rng, 0.0, 1.0));
    list.push_back({"input", vol});
    const auto r = testing::grad_check([&] { return testing::probe_loss(correct(vol, 4, params), seed); }, list, 8);
    CHECK(r.all_finite);
    CHECK_MESSAGE(r.worst_rel_error < 1e-3, r.worst_name);
  }
}
