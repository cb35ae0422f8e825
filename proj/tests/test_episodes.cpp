#include <doctest.h>

#include <fstream>
#include <set>

#include "support.hpp"
#include "unifss/episodes.hpp"
#include "unifss/errors.hpp"

using namespace unifss;

TEST_CASE("fold split is contiguous blocks") {
  std::vector<int> ids(20);
  for (int i = 0; i < 20; ++i) ids[static_cast<std::size_t>(i)] = i;
  const FoldSplit f1 = split_folds(ids, 1, 4);
  CHECK(f1.novel == std::vector<int>{5, 6, 7, 8, 9});
  CHECK(f1.base.size() == 15);
  CHECK(f1.base.front() == 0);
  CHECK(f1.base[5] == 10);
  CHECK_THROWS_AS(split_folds(ids, 4, 4), ValidationError);
}

TEST_CASE("synthetic class names are pinned") {
  CHECK(synth_class_name(0) == "red-circle-solid");
  CHECK(synth_class_name(0) != synth_class_name(1));
  std::set<std::string> names;
  for (int c = 0; c < kMaxSynthClasses; ++c) names.insert(synth_class_name(c));
  CHECK(names.size() == kMaxSynthClasses);
}

TEST_CASE("synthetic rendering is deterministic and non-trivial") {
  SynthConfig cfg;
  cfg.seed = 4;
  const SynthSample a = synth_render(cfg, 3, 1), b = synth_render(cfg, 3, 1);
  CHECK(a.image == b.image);
  CHECK(a.mask == b.mask);
  CHECK(a.mask.count() > 0);
  CHECK_FALSE(a.mask.all());
  cfg.seed = 5;
  CHECK_FALSE(synth_render(cfg, 3, 1).image == a.image);
}

TEST_CASE("manifest round trip") {
  testing::ScratchDir dir("manifest");
  SynthConfig cfg;
  cfg.n_classes = 4;
  cfg.n_images_per_class = 3;
  const DatasetManifest m = synth_generate(cfg, dir.path());
  CHECK(m.records.size() == 12);
  const DatasetManifest r = read_manifest(dir.path() / "manifest.tsv");
  CHECK(r.name == m.name);
  REQUIRE(r.records.size() == m.records.size());
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    CHECK(r.records[i].image_path == m.records[i].image_path);
    CHECK(r.records[i].mask_path == m.records[i].mask_path);
    CHECK(r.records[i].class_id == m.records[i].class_id);
    CHECK(r.records[i].class_name == m.records[i].class_name);
    CHECK(r.records[i].box == tight_box(read_mask_pgm(r.mask_file(i))));
  }
  write_manifest(dir.path() / "copy.tsv", r);
  const DatasetManifest again = read_manifest(dir.path() / "copy.tsv");
  CHECK(again.records.size() == r.records.size());
  CHECK(again.class_ids() == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("malformed manifests are rejected") {
  testing::ScratchDir dir("badmanifest");
  {
    std::ofstream(dir.path() / "m.tsv") << "a.ppm\tb.pgm\tnotanint\tname\n";
  }
  CHECK_THROWS_AS(read_manifest(dir.path() / "m.tsv"), Error);
  CHECK_THROWS_AS(read_manifest(dir.path() / "missing.tsv"), IoError);
}

TEST_CASE("episode sampling") {
  testing::ScratchDir dir("episodes");
  SynthConfig cfg;
  cfg.n_classes = 4;
  cfg.n_images_per_class = 3;
  const DatasetManifest m = synth_generate(cfg, dir.path());
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Episode e = sample_episode(m, {1, 2}, 2, seed, PatternTag::box, 1);
    CHECK((e.class_id == 1 || e.class_id == 2));
    CHECK(e.supports.size() == 2);
    CHECK(e.pattern == PatternTag::box);
    std::set<std::size_t> seen{e.query};
    for (std::size_t s : e.supports) {
      CHECK(m.records[s].class_id == e.class_id);
      seen.insert(s);
    }
    CHECK(seen.size() == 3);
    CHECK(m.records[e.query].class_id == e.class_id);
  }
  const Episode a = sample_episode(m, {0, 1, 2, 3}, 1, 9, PatternTag::mask);
  const Episode b = sample_episode(m, {0, 1, 2, 3}, 1, 9, PatternTag::mask);
  CHECK(a.query == b.query);
  CHECK(a.supports == b.supports);
  try {
    (void)sample_episode(m, {2, 3}, 3, 0, PatternTag::mask);
    FAIL("expected a sampling error");
  } catch (const SamplingError& e) {
    CHECK(e.class_id() == 2);
  }
}
