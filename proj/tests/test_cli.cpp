#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "support.hpp"
#include "unifss/image.hpp"

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "unifss");
  std::ostringstream out, err;
  const int code = unifss::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(run({}).code == unifss::cli::kUsageError);
  CHECK(run({"nonsense"}).code == unifss::cli::kUsageError);
  CHECK(run({"patterns", "--no-such-flag"}).code == unifss::cli::kUsageError);
  CHECK(run({"train", "--steps", "abc"}).code == unifss::cli::kUsageError);
}

TEST_CASE("patterns lists the seven names") {
  const Outcome o = run({"patterns"});
  CHECK(o.code == 0);
  CHECK(o.out.rfind("image\timage\nmask\timage,mask\n", 0) == 0);
  CHECK(std::count(o.out.begin(), o.out.end(), '\n') == 7);
}

TEST_CASE("synth refuses to overwrite without --force and is seed-deterministic") {
  unifss::testing::ScratchDir dir("cli");
  const auto a = (dir.path() / "a").string(), b = (dir.path() / "b").string();
  const std::vector<std::string> common = {"--n-classes", "4", "--images-per-class", "2", "--seed", "3"};
  auto args = [&](const std::string& out) {
    std::vector<std::string> v{"synth", "--output", out};
    v.insert(v.end(), common.begin(), common.end());
    return v;
  };
  CHECK(run(args(a)).code == 0);
  CHECK(run(args(b)).code == 0);
  CHECK(slurp(dir.path() / "a" / "images" / "c02_0001.ppm") == slurp(dir.path() / "b" / "images" / "c02_0001.ppm"));
  const Outcome again = run(args(a));
  CHECK(again.code == unifss::cli::kValidationFailure);
  CHECK(again.err.find("--force") != std::string::npos);
  auto forced = args(a);
  forced.push_back("--force");
  CHECK(run(forced).code == 0);
}

TEST_CASE("config file precedence and validation") {
  unifss::testing::ScratchDir dir("cfg");
  const auto ds = (dir.path() / "ds").string();
  REQUIRE(run({"synth", "--output", ds, "--n-classes", "4", "--images-per-class", "2"}).code == 0);
  const auto manifest = ds + "/manifest.tsv";
  {
    std::ofstream(dir.path() / "good.cfg") << "predictor = oracle\nepisodes = 3\npattern = mask\n";
    std::ofstream(dir.path() / "bad.cfg") << "episodes = 3\nunknown_key = 1\n";
  }
  const auto good = (dir.path() / "good.cfg").string();
  const Outcome from_file = run({"eval", "--config", good, "--manifest", manifest});
  CHECK(from_file.code == 0);
  CHECK(from_file.out.find("0,mask,1,miou,1.0000") != std::string::npos);
  const Outcome overridden = run({"eval", "--config", good, "--manifest", manifest, "--pattern", "box"});
  CHECK(overridden.out.find("0,box,1,miou,1.0000") != std::string::npos);
  CHECK(run({"eval", "--config", (dir.path() / "bad.cfg").string(), "--manifest", manifest}).code ==
        unifss::cli::kValidationFailure);
  CHECK(run({"eval", "--manifest", manifest, "--predictor", "oracle", "--pattern", "blob"}).code ==
        unifss::cli::kValidationFailure);
  CHECK(run({"eval", "--manifest", manifest, "--predictor", "oracle", "--k", "0"}).code ==
        unifss::cli::kValidationFailure);
}

TEST_CASE("train, eval and predict round trip") {
  unifss::testing::ScratchDir dir("pipeline");
  const auto p = [&](const char* name) { return (dir.path() / name).string(); };
  REQUIRE(run({"synth", "--output", p("ds"), "--n-classes", "4", "--images-per-class", "3"}).code == 0);
  const auto manifest = p("ds") + "/manifest.tsv";
  const Outcome t = run({"train", "--manifest", manifest, "--output", p("run"), "--steps", "2", "--batch-size", "1",
                         "--checkpoint-every", "1", "--val-episodes", "2", "--seed", "5"});
  REQUIRE(t.code == 0);
  for (const char* f : {"checkpoint.ufss", "best.ufss", "checkpoint_step000001.ufss", "checkpoint_step000002.ufss"}) {
    CHECK(std::filesystem::exists(dir.path() / "run" / f));
  }
  CHECK(slurp(dir.path() / "run" / "loss_log.csv").rfind("step,loss\n1,", 0) == 0);
  CHECK(run({"train", "--manifest", manifest, "--output", p("run"), "--steps", "1"}).code ==
        unifss::cli::kValidationFailure);

  const auto ckpt = p("run") + "/checkpoint.ufss";
  const Outcome e = run({"eval", "--manifest", manifest, "--checkpoint", ckpt, "--episodes", "4", "--pattern", "all",
                         "--output", p("metrics.csv")});
  REQUIRE(e.code == 0);
  const std::string csv = slurp(dir.path() / "metrics.csv");
  CHECK(csv == e.out);
  CHECK(std::count(csv.begin(), csv.end(), '\n') >= 1 + 7 * 3);

  const auto img = p("ds") + "/images/c00_0000.ppm", sup = p("ds") + "/images/c00_0001.ppm";
  const auto msk = p("ds") + "/masks/c00_0001.pgm";
  const Outcome pr = run({"predict", "--checkpoint", ckpt, "--query", img, "--support", sup, "--support-mask", msk,
                          "--class-name", "red-circle-solid", "--output", p("pred.pgm")});
  CHECK(pr.code == 0);
  const unifss::BinaryMask pred = unifss::read_mask_pgm(dir.path() / "pred.pgm");
  CHECK(pred.height() == 64);
  CHECK(run({"predict", "--checkpoint", ckpt, "--query", img, "--pattern", "mask", "--support", sup, "--output",
             p("pred2.pgm")})
            .code == unifss::cli::kValidationFailure);
}
