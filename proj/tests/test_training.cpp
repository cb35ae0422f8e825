#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "support.hpp"
#include "unifss/errors.hpp"
#include "unifss/training.hpp"

using namespace unifss;
using testing::random_tensor;

namespace {

BinaryMask random_mask(int h, int w, double p, Rng& rng) {
  BinaryMask m(h, w);
  std::bernoulli_distribution on(p);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.set(y, x, on(rng));
  return m;
}

struct Fixture {
  testing::ScratchDir dir{"training"};
  DatasetManifest manifest;
  ProjectionEncoder encoder = ProjectionEncoder::stub({});
  Fixture() {
    SynthConfig cfg;
    cfg.seed = 1;
    cfg.n_classes = 8;
    cfg.n_images_per_class = 4;
    manifest = synth_generate(cfg, dir.path());
  }
};

}  // namespace

TEST_CASE("loss terms on hand-evaluated cases") {
  const Tensor uniform = Tensor::zeros({2, 2, 2});
  const LossTerms t = loss_terms(uniform, BinaryMask(2, 2));
  CHECK(t.cross_entropy == std::log(2.0));
  CHECK(std::abs(t.dice - 2.0 / 3.0) < 1e-9);
  const LossTerms full = loss_terms(uniform, BinaryMask::ones(2, 2));
  CHECK(std::abs(full.dice - (1.0 - 5.0 / 7.0)) < 1e-9);
  Tensor bad = uniform;
  bad[0] = std::nan("");
  CHECK_THROWS_AS(loss_terms(bad, BinaryMask(2, 2)), ValidationError);
}

TEST_CASE("loss is non-negative and its gradient matches finite differences") {
  Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const ag::Var logits = ag::Var::parameter(random_tensor({2, 5, 4}, rng, -3, 3));
    const BinaryMask gt = random_mask(5, 4, 0.4, rng);
    const ag::Var loss = segmentation_loss(logits, gt);
    CHECK(loss.value()[0] >= 0.0);
    CHECK(loss.value()[0] == doctest::Approx(loss_terms(logits.value(), gt).total()).epsilon(1e-12));
    const auto r = testing::grad_check([&] { return segmentation_loss(logits, gt); }, {{"logits", logits}}, 40);
    CHECK(r.worst_rel_error < 1e-6);
  }
}

TEST_CASE("metrics equal a brute-force pixel counter") {
  Rng rng(2);
  FoldMetrics metrics;
  std::map<int, std::pair<long, long>> per_class;
  long fi = 0, fu = 0, bi = 0, bu = 0;
  for (int n = 0; n < 60; ++n) {
    const int c = static_cast<int>(rng() % 5);
    const BinaryMask p = random_mask(6, 5, 0.5, rng), g = random_mask(6, 5, 0.3, rng);
    metrics.add(c, p, g);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const bool a = p.bits()[i], b = g.bits()[i];
      per_class[c].first += a && b;
      per_class[c].second += a || b;
      fi += a && b;
      fu += a || b;
      bi += !a && !b;
      bu += !a || !b;
    }
  }
  double s = 0;
  for (const auto& [c, iu] : per_class) s += double(iu.first) / double(iu.second);
  CHECK(metrics.miou() == doctest::Approx(s / double(per_class.size())).epsilon(1e-12));
  CHECK(metrics.fbiou() == doctest::Approx((double(fi) / fu + double(bi) / bu) / 2).epsilon(1e-12));
}

TEST_CASE("zero-union classes are excluded") {
  FoldMetrics m;
  m.add(3, BinaryMask(2, 2), BinaryMask(2, 2));
  m.add(4, BinaryMask::ones(2, 2), BinaryMask::ones(2, 2));
  CHECK(m.excluded_classes() == std::vector<int>{3});
  CHECK(m.miou() == 1.0);
}

TEST_CASE("metric merge is associative and commutative") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    FoldMetrics parts[3];
    for (auto& part : parts) {
      for (int n = 0; n < 5; ++n) part.add(static_cast<int>(rng() % 4), random_mask(3, 3, 0.5, rng), random_mask(3, 3, 0.5, rng));
    }
    const FoldMetrics &a = parts[0], &b = parts[1], &c = parts[2];
    CHECK(FoldMetrics::merged(a, FoldMetrics::merged(b, c)) == FoldMetrics::merged(FoldMetrics::merged(a, b), c));
    CHECK(FoldMetrics::merged(a, b) == FoldMetrics::merged(b, a));
  }
}

TEST_CASE("metrics report format") {
  FoldMetrics m;
  m.add(2, BinaryMask::ones(1, 2), box_to_mask({0, 0, 1, 1}, 1, 2));
  std::ostringstream os;
  write_metrics_csv(os, 1, PatternTag::box, 5, m);
  CHECK(os.str() ==
        "fold,pattern,K,class_id,iou\n1,box,5,2,0.5000\n1,box,5,miou,0.5000\n1,box,5,fbiou,0.2500\n");
}

TEST_CASE("AdamW first step moves by the learning rate") {
  ag::Var w = ag::Var::parameter(Tensor(Shape{2}, std::vector<double>{1.0, -2.0}));
  AdamW opt({{"w", w}}, {0.1, 0.9, 0.999, 1e-8, 0.0});
  ag::weighted_sum(w, Tensor(Shape{2}, std::vector<double>{3.0, -0.5})).backward();
  opt.step();
  CHECK(w.value()[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(w.value()[1] == doctest::Approx(-1.9).epsilon(1e-6));

  ag::Var d = ag::Var::parameter(Tensor::filled({1}, 2.0));
  AdamW decay({{"d", d}}, {0.1, 0.9, 0.999, 1e-8, 0.5});
  decay.step();
  CHECK(d.value()[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
}

TEST_CASE("oracle predictor scores perfectly") {
  Fixture f;
  EpisodeData data(f.manifest, f.encoder, 64);
  OraclePredictor oracle;
  EvalConfig ec;
  ec.episodes = 20;
  ec.pattern = PatternTag::text;
  const EvalResult r = evaluate(oracle, data, {0, 1}, ec);
  CHECK(r.metrics.miou() == 1.0);
  CHECK(r.metrics.fbiou() == 1.0);
}

TEST_CASE("training is seeded, keeps the encoder frozen and never sees novel classes") {
  Fixture f;
  const auto before = f.encoder.weights();
  EpisodeData data(f.manifest, f.encoder, 64);
  const FoldSplit split = split_folds(f.manifest.class_ids(), 1, 4);
  TrainConfig cfg;
  cfg.image_size = 64;
  cfg.max_steps = 3;
  cfg.batch_size = 2;
  cfg.seed = 4;
  const auto geom = ModelGeometry::from_encoder(f.encoder, 64, 64);
  UniFssModel a = UniFssModel::create(geom, 4), b = UniFssModel::create(geom, 4);
  const TrainResult ra = train(a, data, cfg, split.base, 1);
  const TrainResult rb = train(b, data, cfg, split.base, 1);
  REQUIRE(ra.history.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(ra.history[static_cast<std::size_t>(i)].loss == rb.history[static_cast<std::size_t>(i)].loss);
  CHECK(a.parameters()[0].var.value() == b.parameters()[0].var.value());

  const auto after = f.encoder.weights();
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].second == after[i].second);

  for (int step = 0; step < 3; ++step)
    for (int slot = 0; slot < 2; ++slot) {
      const Episode e = training_episode(f.manifest, cfg, split.base, 1, step, slot);
      CHECK(std::find(split.novel.begin(), split.novel.end(), e.class_id) == split.novel.end());
      CHECK(e.pattern == PatternTag::class_mask);
    }
}

TEST_CASE("checkpoints keep parameters and meta") {
  Fixture f;
  const auto geom = ModelGeometry::from_encoder(f.encoder, 64, 64);
  const UniFssModel m = UniFssModel::create(geom, 2);
  TrainConfig cfg;
  auto meta = config_meta(cfg);
  meta["encoder"] = "stub";
  save_checkpoint(f.dir.path() / "c.ufss", m, meta);
  const Checkpoint c = load_checkpoint(f.dir.path() / "c.ufss");
  CHECK(c.meta.at("encoder") == "stub");
  CHECK(c.meta.at("train.pattern_group") == "class-aware-group");
  CHECK(c.model.parameters().back().var.value() == m.parameters().back().var.value());
  CHECK_THROWS_AS(load_checkpoint(f.dir.path() / "missing.ufss"), IoError);
}
