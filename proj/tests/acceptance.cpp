// Acceptance checks, one PASS/FAIL line per criterion.
// Usage: acceptance [criterion ...] [--write-baseline]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "support.hpp"
#include "unifss/errors.hpp"
#include "unifss/reference.hpp"
#include "unifss/training.hpp"

using namespace unifss;
using testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

bool g_write_baseline = false;

const std::filesystem::path kBaseline = std::filesystem::path(UNIFSS_SOURCE_DIR) / "tests/data/overfit_trajectory.csv";

// Shared synthetic benchmark for the learning checks.
struct Benchmark {
  testing::ScratchDir dir{"acceptance"};
  DatasetManifest manifest;
  ProjectionEncoder encoder = ProjectionEncoder::stub({});
  std::unique_ptr<EpisodeData> data;

  Benchmark() {
    SynthConfig cfg;
    cfg.seed = 7;
    cfg.n_classes = 20;
    cfg.n_images_per_class = 12;
    cfg.image_size = 64;
    manifest = synth_generate(cfg, dir.path());
    data = std::make_unique<EpisodeData>(manifest, encoder, 64);
  }
  ModelGeometry geometry() const { return ModelGeometry::from_encoder(encoder, 64, 64); }
};

Benchmark& benchmark() {
  static Benchmark b;
  return b;
}

double cos_relu_oracle(const Tensor& a, std::int64_t ia, const Tensor& b, std::int64_t ib) {
  // a, b: [c x P]; scalar loop over channels.
  double dot = 0, na = 0, nb = 0;
  const std::int64_t pa = a.dim(1), pb = b.dim(1);
  for (std::int64_t c = 0; c < a.dim(0); ++c) {
    const double u = a[c * pa + ia], v = b[c * pb + ib];
    dot += u * v;
    na += u * u;
    nb += v * v;
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::max(0.0, dot / (std::max(std::sqrt(na), kernels::kNormFloor) * std::max(std::sqrt(nb), kernels::kNormFloor)));
}

Outcome criterion1() {
  const auto t0 = Clock::now();
  Rng rng(1001);
  std::uniform_int_distribution<int> dim(1, 4), ch(1, 6);
  double worst = 0.0;
  bool in_range = true;
  int cases = 0;
  for (int trial = 0; trial < 150; ++trial) {
    const int c = ch(rng), h = dim(rng), w = dim(rng), hs = dim(rng), ws = dim(rng);
    const Tensor q = random_tensor({c, h, w}, rng), s = random_tensor({c, hs, ws}, rng);
    Tensor o = random_tensor({c, hs, ws}, rng);
    if (trial % 5 == 0) o.fill(0.0);  // masked-out object
    const Tensor vv = vv_layer_correlation(q, s, o);
    const Tensor qc = q.reshaped({c, h * w}), sc = s.reshaped({c, hs * ws}), oc = o.reshaped({c, hs * ws});
    for (std::int64_t i = 0; i < h * w; ++i)
      for (std::int64_t j = 0; j < hs * ws; ++j) {
        worst = std::max(worst, std::abs(vv[i * hs * ws + j] - cos_relu_oracle(qc, i, sc, j)));
        worst = std::max(worst, std::abs(vv[h * w * hs * ws + i * hs * ws + j] - cos_relu_oracle(qc, i, oc, j)));
      }
    for (double v : vv.values()) in_range &= v >= 0.0 && v <= 1.0;

    const Tensor fv = random_tensor({c, h, w}, rng), ft = random_tensor({c}, rng);
    const Tensor vt = vt_correlation(fv, ft).map;
    const Tensor fvc = fv.reshaped({c, h * w}), ftc = ft.reshaped({c, 1});
    for (std::int64_t i = 0; i < h * w; ++i) worst = std::max(worst, std::abs(vt[i] - cos_relu_oracle(fvc, i, ftc, 0)));
    for (double v : vt.values()) in_range &= v >= 0.0 && v <= 1.0;
    cases += 2;
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-6 && in_range && t < 10.0,
          std::to_string(cases) + " cases, max |diff| " + fmt("%.2e", worst) + ", range ok " +
              (in_range ? "yes" : "no") + ", " + fmt("%.2f", t) + " s"};
}

Outcome criterion2() {
  const auto t0 = Clock::now();
  Rng rng(2002);
  double worst = 0.0;
  int comparisons = 0;
  for (int h = 1; h <= 3; ++h)
    for (int w = 1; w <= 3; ++w)
      for (int hs = 1; hs <= 3; ++hs)
        for (int ws = 1; ws <= 3; ++ws) {
          const Tensor x = random_tensor({2, h, w, hs, ws}, rng);
          for (int k = 0; k < 50; ++k) {
            const Tensor qk = random_tensor({2, 2, 3, 3}, rng), sk = random_tensor({2, 2, 3, 3}, rng);
            const Tensor qb = random_tensor({2}, rng), sb = random_tensor({2}, rng);
            const kernels::CenterPivotStride stride{1, k % 2 == 0 ? 1 : 2};
            const Tensor fast = kernels::center_pivot_conv4d(x, qk, qb, sk, sb, stride);
            Tensor bias(Shape{2});
            for (int o = 0; o < 2; ++o) bias[o] = qb[o] + sb[o];
            const Tensor dense = reference::dense_conv4d(x, reference::sparse_kernel_4d(qk, sk), bias, stride);
            worst = std::max(worst, fast.shape() == dense.shape() ? max_abs_diff(fast, dense) : 1e300);
            ++comparisons;
          }
        }
  const double t = seconds_since(t0);
  return {worst <= 1e-6 && t < 30.0, std::to_string(comparisons) + " shape/kernel pairs, max |diff| " +
                                         fmt("%.2e", worst) + ", " + fmt("%.2f", t) + " s"};
}

Outcome criterion3() {
  const auto t0 = Clock::now();
  const ModelGeometry g = benchmark().geometry();
  double identity_err = 0.0;
  for (int stage : {3, 4}) {
    Rng rng(3000 + static_cast<std::uint64_t>(stage));
    const HscuParams p = HscuParams::create(g.h(stage) * g.w(stage), rng);
    const Correlation4D v{random_tensor({2 * g.layer_count(stage), g.h(stage), g.w(stage), g.h(stage), g.w(stage)}, rng, 0, 1),
                          stage};
    identity_err = std::max(identity_err, max_abs_diff(correct(v, p).volume, v.volume));
  }
  double worst = 0.0;
  for (std::uint64_t seed : {31u, 32u, 33u}) {
    Rng rng(seed);
    const HscuParams p = HscuParams::create(4, rng, HscuParams::Init::random);
    ParameterList list;
    p.collect("hscu", list);
    const ag::Var vol = ag::Var::parameter(random_tensor({4, 2, 2, 2, 2}, rng, 0, 1));
    list.push_back({"volume", vol});
    worst = std::max(worst, testing::grad_check([&] { return testing::probe_loss(correct(vol, 4, p), seed); }, list, 8)
                                .worst_rel_error);
  }
  const double t = seconds_since(t0);
  return {identity_err <= 1e-12 && worst < 1e-3 && t < 60.0,
          "identity |diff| " + fmt("%.1e", identity_err) + ", grad rel err " + fmt("%.2e", worst) + " over 3 seeds, " +
              fmt("%.2f", t) + " s"};
}

Outcome criterion4() {
  const auto t0 = Clock::now();
  Benchmark& b = benchmark();
  const ModelGeometry g = b.geometry();
  const UniFssModel model = UniFssModel::create(g, 44);
  const FeaturePyramid& q = b.data->pyramid(0);
  const FeaturePyramid& s = b.data->pyramid(1);
  const FeaturePyramid& o = b.data->object_pyramid(1, PatternTag::mask);
  const PairFeatures pair{&q, &s, &o, b.encoder.encode_text(b.manifest.records[1].class_name).vector};
  ParameterList decoder;
  model.decoder().collect("decoder", decoder);
  const auto loss = [&] { return segmentation_loss(model.forward(pair), b.data->mask(0)); };
  const auto r = testing::grad_check(loss, decoder, 3);

  const ParameterList all = model.parameters();
  zero_grads(all);
  loss().backward();
  bool finite = true;
  for (const auto& p : all) finite &= p.var.grad().empty() || p.var.grad().all_finite();
  const double t = seconds_since(t0);
  return {r.worst_rel_error < 1e-3 && finite && r.all_finite && t < 60.0 && g.h(4) == 2 && g.w(4) == 2,
          std::to_string(decoder.size()) + " decoder tensors on a " + std::to_string(g.h(4)) + "x" +
              std::to_string(g.w(4)) + " stage-4 grid, worst rel err " + fmt("%.2e", r.worst_rel_error) + " (" +
              r.worst_name + "), all " + std::to_string(all.size()) + " gradients finite " + (finite ? "yes" : "no") +
              ", " + fmt("%.2f", t) + " s"};
}

Outcome criterion5() {
  const LossTerms t = loss_terms(Tensor::zeros({2, 2, 2}), BinaryMask(2, 2));
  const bool ce = t.cross_entropy == std::log(2.0);
  const double dice_err = std::abs(t.dice - 2.0 / 3.0);
  return {ce && dice_err <= 1e-9, "CE " + fmt("%.17g", t.cross_entropy) + (ce ? " == ln 2" : " != ln 2") +
                                      ", Dice " + fmt("%.17g", t.dice) + " (|diff| " + fmt("%.1e", dice_err) + ")"};
}

Outcome criterion6() {
  Rng rng(6006);
  std::bernoulli_distribution coin(0.5);
  auto random_mask = [&](int h, int w, double p) {
    std::bernoulli_distribution on(p);
    BinaryMask m(h, w);
    for (auto& bit : m.bits()) bit = on(rng);
    return m;
  };
  double worst = 0.0;
  bool merge_ok = true;
  for (int stream = 0; stream < 50; ++stream) {
    FoldMetrics parts[3];
    std::map<int, std::pair<long, long>> cls;
    long fg[2] = {0, 0}, bg[2] = {0, 0};
    const int n = 1 + static_cast<int>(rng() % 40);
    for (int i = 0; i < n; ++i) {
      const int c = static_cast<int>(rng() % 6);
      const double density = coin(rng) ? 0.0 : 0.4;
      const BinaryMask p = random_mask(5, 7, 0.5), gt = random_mask(5, 7, density);
      parts[rng() % 3].add(c, p, gt);
      for (std::size_t k = 0; k < p.size(); ++k) {
        const bool a = p.bits()[k], g = gt.bits()[k];
        cls[c].first += a && g;
        cls[c].second += a || g;
        fg[0] += a && g;
        fg[1] += a || g;
        bg[0] += !a && !g;
        bg[1] += !a || !g;
      }
    }
    double s = 0;
    int used = 0;
    for (const auto& [c, iu] : cls) {
      if (iu.second == 0) continue;
      s += double(iu.first) / double(iu.second);
      ++used;
    }
    const double miou = used ? s / used : 0.0;
    double fb = 0;
    int terms = 0;
    for (long* iu : {fg, bg}) {
      if (iu[1] > 0) {
        fb += double(iu[0]) / double(iu[1]);
        ++terms;
      }
    }
    fb = terms ? fb / terms : 0.0;
    const FoldMetrics all = FoldMetrics::merged(FoldMetrics::merged(parts[0], parts[1]), parts[2]);
    worst = std::max({worst, std::abs(all.miou() - miou), std::abs(all.fbiou() - fb)});
    merge_ok &= FoldMetrics::merged(parts[0], FoldMetrics::merged(parts[1], parts[2])) == all;
    merge_ok &= FoldMetrics::merged(parts[0], parts[1]) == FoldMetrics::merged(parts[1], parts[0]);
  }
  return {worst <= 1e-12 && merge_ok,
          "50 streams, max |diff| " + fmt("%.1e", worst) + ", merge associative+commutative " + (merge_ok ? "yes" : "no")};
}

Outcome criterion7() {
  Benchmark& b = benchmark();
  int normalized = 0;
  bool text_equal = true;
  std::string failure;
  for (std::size_t r = 0; r < 6; ++r) {
    RawSupport raw = b.data->raw_support(r);
    const Tensor& query = b.data->image(r + 1);
    for (PatternTag p : kAllPatterns) {
      try {
        const GuidanceSet g = normalize_guidance(p, raw, query, b.encoder);
        if (p == PatternTag::text) text_equal &= g.support_image == query;
        ++normalized;
      } catch (const std::exception& e) {
        failure = std::string(pattern_name(p)) + ": " + e.what();
      }
    }
  }
  bool hull = true;
  for (std::size_t r = 0; r < b.manifest.records.size(); ++r) {
    const BinaryMask& m = b.data->mask(r);
    const BinaryMask box = box_to_mask(b.manifest.records[r].box, m.height(), m.width());
    for (std::size_t k = 0; k < m.size(); ++k) hull &= box.bits()[k] >= m.bits()[k];
    hull &= b.manifest.records[r].box == tight_box(m);
  }
  bool vote = true;
  for (int k = 1; k <= 4; ++k) {
    const int n = 1 << k;
    std::vector<BinaryMask> preds(static_cast<std::size_t>(k), BinaryMask(1, n));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) preds[static_cast<std::size_t>(j)].set(0, i, (i >> j) & 1);
    const BinaryMask out = kshot_vote(preds);
    for (int i = 0; i < n; ++i) {
      int votes = 0;
      for (int j = 0; j < k; ++j) votes += (i >> j) & 1;
      vote &= out(0, i) == (2 * votes >= k ? 1 : 0);
    }
  }
  const bool pass = normalized == 42 && failure.empty() && text_equal && hull && vote;
  return {pass, std::to_string(normalized) + "/42 normalizations" + (failure.empty() ? "" : " (" + failure + ")") +
                    ", text support == query " + (text_equal ? "yes" : "no") + ", tight hulls over " +
                    std::to_string(b.manifest.records.size()) + " masks " + (hull ? "ok" : "violated") +
                    ", vote enumeration K<=4 " + (vote ? "ok" : "mismatch")};
}

Outcome criterion8() {
  const auto t0 = Clock::now();
  Benchmark& b = benchmark();
  const FoldSplit split = split_folds(b.manifest.class_ids(), 0, 4);
  TrainConfig cfg;
  cfg.image_size = 64;
  cfg.max_steps = 300;
  cfg.batch_size = 4;
  cfg.episode_pool = 4;
  cfg.seed = 0;
  cfg.pattern_group = PatternGroup::class_aware_group;
  UniFssModel model = UniFssModel::create(b.geometry(), cfg.seed);
  std::vector<Episode> pool;
  for (int i = 0; i < cfg.episode_pool; ++i) pool.push_back(training_episode(b.manifest, cfg, split.base, 0, 0, i));
  int reached = -1;
  double best = 0.0;
  const TrainResult result = train(model, *b.data, cfg, split.base, 0, [&](const StepRecord& r, const UniFssModel& m) {
    if ((r.step + 1) % 25 != 0 || reached > 0) return;
    ModelPredictor pred(m);
    const double miou = evaluate_episodes(pred, *b.data, pool).metrics.miou();
    best = std::max(best, miou);
    if (miou > 0.90) reached = r.step + 1;
  });
  const double t = seconds_since(t0);

  std::string baseline = "no baseline";
  bool baseline_ok = false;
  if (g_write_baseline) {
    std::filesystem::create_directories(kBaseline.parent_path());
    std::ofstream out(kBaseline);
    out << "step,loss\n";
    for (const auto& r : result.history) out << r.step + 1 << ',' << fmt("%.17g", r.loss) << '\n';
    baseline = "baseline written";
    baseline_ok = true;
  } else if (std::ifstream in(kBaseline); in) {
    std::string line;
    std::getline(in, line);
    double dev = 0.0;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      const std::size_t step = std::stoul(line.substr(0, comma));
      const double loss = std::stod(line.substr(comma + 1));
      if (step == 0 || step > result.history.size()) {
        dev = 1e300;
        break;
      }
      dev = std::max(dev, std::abs(result.history[step - 1].loss - loss) / std::max(1.0, std::abs(loss)));
      ++rows;
    }
    baseline_ok = rows == result.history.size() && dev <= 1e-9;
    baseline = "trajectory vs baseline " + fmt("%.1e", dev) + " over " + std::to_string(rows) + " steps";
  }
  return {reached > 0 && t < 300.0 && baseline_ok,
          (reached > 0 ? "train mIoU > 0.90 at step " + std::to_string(reached) : "best train mIoU " + fmt("%.3f", best)) +
              ", final loss " + fmt("%.4f", result.history.back().loss) + ", " + baseline + ", " + fmt("%.1f", t) +
              " s"};
}

Outcome criterion9() {
  const auto t0 = Clock::now();
  Benchmark& b = benchmark();
  const FoldSplit split = split_folds(b.manifest.class_ids(), 0, 4);
  std::map<PatternTag, double> miou;
  for (PatternGroup g : {PatternGroup::image_only, PatternGroup::mask_group, PatternGroup::class_aware_group}) {
    TrainConfig cfg;
    cfg.image_size = 64;
    cfg.max_steps = 200;
    cfg.batch_size = 4;
    cfg.seed = 0;
    cfg.pattern_group = g;
    UniFssModel model = UniFssModel::create(b.geometry(), cfg.seed);
    train(model, *b.data, cfg, split.base, 0);
    ModelPredictor pred(model);
    for (PatternTag p : test_patterns(g)) {
      EvalConfig ec;
      ec.episodes = 200;
      ec.pattern = p;
      ec.fold = 0;
      ec.seed = 0;
      miou[p] = 100.0 * evaluate(pred, *b.data, split.novel, ec).metrics.miou();
    }
  }
  const double cm = miou[PatternTag::class_mask], cb = miou[PatternTag::class_box], im = miou[PatternTag::image],
               tx = miou[PatternTag::text];
  const double tol = 2.0;
  const bool pass = cm - cb >= -tol && cb - im >= -tol && cm - tx >= -tol;
  std::ostringstream os;
  os << "mIoU";
  for (PatternTag p : kAllPatterns) os << ' ' << pattern_name(p) << '=' << fmt("%.2f", miou[p]);
  os << "; margins cm-cb " << fmt("%+.2f", cm - cb) << ", cb-im " << fmt("%+.2f", cb - im) << ", cm-text "
     << fmt("%+.2f", cm - tx) << ", " << fmt("%.1f", seconds_since(t0)) << " s";
  return {pass, os.str()};
}

Outcome criterion10() {
  Benchmark& b = benchmark();
  long episodes = 0, leaks = 0;
  for (int fold = 0; fold < 4; ++fold) {
    const FoldSplit split = split_folds(b.manifest.class_ids(), fold, 4);
    const std::set<int> novel(split.novel.begin(), split.novel.end());
    for (PatternGroup g : {PatternGroup::image_only, PatternGroup::mask_group, PatternGroup::class_aware_group}) {
      TrainConfig cfg;
      cfg.pattern_group = g;
      cfg.seed = static_cast<std::uint64_t>(fold);
      for (int step = 0; step < cfg.max_steps; ++step)
        for (int slot = 0; slot < cfg.batch_size; ++slot) {
          const Episode e = training_episode(b.manifest, cfg, split.base, fold, step, slot);
          bool leak = novel.count(b.manifest.records[e.query].class_id) > 0;
          for (std::size_t s : e.supports) leak |= novel.count(b.manifest.records[s].class_id) > 0;
          leaks += leak;
          ++episodes;
        }
    }
  }
  return {leaks == 0 && episodes > 0,
          std::to_string(episodes) + " training episodes over 4 folds x 3 groups, " + std::to_string(leaks) +
              " with novel-class records"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome()>> criteria = {criterion1, criterion2, criterion3, criterion4, criterion5,
                                                          criterion6, criterion7, criterion8, criterion9, criterion10};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--write-baseline") {
      g_write_baseline = true;
    } else {
      selected.insert(std::stoi(a));
    }
  }
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " | " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
