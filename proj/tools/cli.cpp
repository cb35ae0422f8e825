#include "cli.hpp"

#include <CLI11.hpp>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>

#include "unifss/errors.hpp"
#include "unifss/training.hpp"

namespace unifss::cli {
namespace {

namespace fs = std::filesystem;

struct Options {
  std::uint64_t seed = 0;
  int fold = 0;
  int n_folds = 4;
  std::string pattern = "class_mask";
  int k = 1;
  std::string output;
  bool force = false;
  std::string encoder = "stub";

  int n_classes = 20;
  int images_per_class = 12;
  int image_size = 64;

  std::string manifest;
  std::string group;
  int steps = 1000;
  int batch_size = 16;
  double lr = 5e-4;
  double weight_decay = 0.01;
  int checkpoint_every = 0;
  int val_episodes = 0;
  int log_every = 10;

  std::string checkpoint;
  std::string predictor = "model";
  int episodes = 1000;

  std::string query;
  std::vector<std::string> supports;
  std::vector<std::string> support_masks;
  std::string box;
  std::string class_name;
  std::string overlay;
};

void ensure_fresh_dir(const fs::path& dir, bool force) {
  if (dir.empty()) throw ValidationError("--output is required");
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ValidationError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force) throw ValidationError(dir.string() + " is not empty; pass --force to overwrite");
  }
  fs::create_directories(dir);
}

void ensure_fresh_file(const fs::path& file, bool force) {
  if (fs::exists(file) && !force) throw ValidationError(file.string() + " exists; pass --force to overwrite");
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

std::unique_ptr<ProjectionEncoder> make_encoder(const std::string& choice, std::uint64_t seed) {
  if (choice == "stub") {
    EncoderConfig cfg;
    cfg.seed = seed;
    return std::make_unique<ProjectionEncoder>(ProjectionEncoder::stub(cfg));
  }
  constexpr std::string_view prefix = "adapter:";
  if (choice.rfind(prefix, 0) == 0 && choice.size() > prefix.size()) {
    return std::make_unique<ProjectionEncoder>(ProjectionEncoder::load(choice.substr(prefix.size())));
  }
  throw ValidationError("--encoder must be 'stub' or 'adapter:<path>', got '" + choice + "'");
}

std::string meta_value(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw ValidationError("checkpoint lacks '" + key + "'");
  return it->second;
}

// Encoder named by the checkpoint unless --encoder was given explicitly.
std::unique_ptr<ProjectionEncoder> checkpoint_encoder(const Checkpoint& ckpt, const Options& o, bool encoder_flag) {
  if (encoder_flag) return make_encoder(o.encoder, o.seed);
  return make_encoder(meta_value(ckpt.meta, "encoder"), std::stoull(meta_value(ckpt.meta, "encoder.seed")));
}

int manifest_image_size(const DatasetManifest& m) {
  if (m.records.empty()) throw ValidationError("manifest has no records");
  const RgbImage first = read_ppm(m.image_file(0));
  if (first.height != first.width) throw ValidationError("images must be square");
  return first.height;
}

void validate_common(const Options& o) {
  if (o.k < 1) throw ValidationError("--k must be at least 1");
  if (o.n_folds < 1) throw ValidationError("--folds must be positive");
}

Box parse_box(const std::string& text) {
  std::array<int, 4> v{};
  std::istringstream is(text);
  std::string item;
  std::size_t i = 0;
  while (std::getline(is, item, ',')) {
    if (i == 4) break;
    try {
      v[i++] = std::stoi(item);
    } catch (const std::exception&) {
      throw ValidationError("--box must be x_min,y_min,x_max,y_max");
    }
  }
  if (i != 4) throw ValidationError("--box must be x_min,y_min,x_max,y_max");
  return {v[0], v[1], v[2], v[3]};
}

int cmd_patterns(std::ostream& out) {
  for (PatternTag p : kAllPatterns) out << pattern_name(p) << '\t' << required_fields(p) << '\n';
  return kOk;
}

int cmd_synth(const Options& o, std::ostream& out) {
  const fs::path dir(o.output);
  ensure_fresh_dir(dir, o.force);
  SynthConfig cfg;
  cfg.seed = o.seed;
  cfg.n_classes = o.n_classes;
  cfg.n_images_per_class = o.images_per_class;
  cfg.image_size = o.image_size;
  const DatasetManifest m = synth_generate(cfg, dir);
  out << "wrote " << m.records.size() << " records (" << cfg.n_classes << " classes) to " << (dir / "manifest.tsv").string()
      << '\n';
  return kOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  validate_common(o);
  if (o.manifest.empty()) throw ValidationError("--manifest is required");
  const DatasetManifest manifest = read_manifest(o.manifest);
  const PatternGroup group = o.group.empty() ? group_of(parse_pattern(o.pattern)) : parse_group(o.group);
  const FoldSplit split = split_folds(manifest.class_ids(), o.fold, o.n_folds);
  const int size = manifest_image_size(manifest);
  const auto encoder = make_encoder(o.encoder, o.seed);
  const fs::path dir(o.output);
  ensure_fresh_dir(dir, o.force);

  TrainConfig cfg;
  cfg.learning_rate = o.lr;
  cfg.weight_decay = o.weight_decay;
  cfg.batch_size = o.batch_size;
  cfg.image_size = size;
  cfg.max_steps = o.steps;
  cfg.seed = o.seed;
  cfg.pattern_group = group;
  cfg.n_folds = o.n_folds;
  cfg.shots = o.k;

  EpisodeData data(manifest, *encoder, size);
  UniFssModel model = UniFssModel::create(ModelGeometry::from_encoder(*encoder, size, size), o.seed);

  auto meta = config_meta(cfg);
  meta["encoder"] = o.encoder;
  meta["encoder.seed"] = std::to_string(o.seed);
  meta["train.fold"] = std::to_string(o.fold);
  meta["dataset"] = manifest.name;

  std::ofstream log(dir / "loss_log.csv");
  log << "step,loss\n";
  double best = -1.0;
  const auto on_step = [&](const StepRecord& r, const UniFssModel& m) {
    log << r.step + 1 << ',' << std::setprecision(10) << r.loss << '\n';
    const int done = r.step + 1;
    if (o.log_every > 0 && done % o.log_every == 0) out << "step " << done << " loss " << r.loss << '\n';
    if (o.checkpoint_every > 0 && done % o.checkpoint_every == 0) {
      auto step_meta = meta;
      step_meta["train.steps_done"] = std::to_string(done);
      char name[48];
      std::snprintf(name, sizeof name, "checkpoint_step%06d.ufss", done);
      save_checkpoint(dir / name, m, step_meta);
      if (o.val_episodes > 0) {
        ModelPredictor pred(m);
        EvalConfig ec;
        ec.episodes = o.val_episodes;
        ec.pattern = training_pattern(group);
        ec.fold = o.fold;
        ec.seed = o.seed + 1;
        const double miou = evaluate(pred, data, split.base, ec).metrics.miou();
        out << "step " << done << " val miou " << miou << '\n';
        if (miou > best) {
          best = miou;
          step_meta["train.val_miou"] = std::to_string(miou);
          save_checkpoint(dir / "best.ufss", m, step_meta);
        }
      }
    }
  };
  const TrainResult result = train(model, data, cfg, split.base, o.fold, on_step);
  meta["train.steps_done"] = std::to_string(result.steps);
  save_checkpoint(dir / "checkpoint.ufss", model, meta);
  if (!result.history.empty()) out << "final loss " << result.history.back().loss << '\n';
  return kOk;
}

int cmd_eval(const Options& o, bool encoder_flag, std::ostream& out, std::ostream& err) {
  validate_common(o);
  if (o.manifest.empty()) throw ValidationError("--manifest is required");
  const DatasetManifest manifest = read_manifest(o.manifest);
  const FoldSplit split = split_folds(manifest.class_ids(), o.fold, o.n_folds);

  std::optional<Checkpoint> ckpt;
  std::unique_ptr<ProjectionEncoder> encoder;
  std::unique_ptr<Predictor> predictor;
  int size = 0;
  if (o.predictor == "oracle") {
    encoder = make_encoder(o.encoder, o.seed);
    size = manifest_image_size(manifest);
    predictor = std::make_unique<OraclePredictor>();
  } else if (o.predictor == "model") {
    if (o.checkpoint.empty()) throw ValidationError("--checkpoint is required for the model predictor");
    ckpt = load_checkpoint(o.checkpoint);
    encoder = checkpoint_encoder(*ckpt, o, encoder_flag);
    size = static_cast<int>(ckpt->model.geometry().image_h);
    predictor = std::make_unique<ModelPredictor>(ckpt->model);
  } else {
    throw ValidationError("--predictor must be 'model' or 'oracle'");
  }

  std::vector<PatternTag> patterns;
  if (o.pattern == "all") {
    patterns.assign(kAllPatterns.begin(), kAllPatterns.end());
  } else {
    patterns.push_back(parse_pattern(o.pattern));
  }

  std::ofstream file;
  if (!o.output.empty()) {
    ensure_fresh_file(o.output, o.force);
    file.open(o.output);
    if (!file) throw IoError("cannot write " + o.output);
  }
  EpisodeData data(manifest, *encoder, size);
  bool header = true;
  for (PatternTag p : patterns) {
    EvalConfig ec;
    ec.episodes = o.episodes;
    ec.shots = o.k;
    ec.seed = o.seed;
    ec.pattern = p;
    ec.fold = o.fold;
    const EvalResult r = evaluate(*predictor, data, split.novel, ec);
    for (const auto& w : r.warnings) err << "warning: " << w << '\n';
    write_metrics_csv(out, o.fold, p, o.k, r.metrics, header);
    if (file.is_open()) write_metrics_csv(file, o.fold, p, o.k, r.metrics, header);
    header = false;
  }
  return kOk;
}

int cmd_predict(const Options& o, bool encoder_flag, std::ostream& out, std::ostream& err) {
  validate_common(o);
  if (o.checkpoint.empty()) throw ValidationError("--checkpoint is required");
  if (o.query.empty()) throw ValidationError("--query is required");
  if (o.output.empty()) throw ValidationError("--output is required");
  const PatternTag pattern = parse_pattern(o.pattern);
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const auto encoder = checkpoint_encoder(ckpt, o, encoder_flag);
  const auto size = ckpt.model.geometry().image_h;

  const RgbImage query_rgb = read_ppm(o.query);
  if (query_rgb.height != size || query_rgb.width != size) {
    throw ValidationError("query image must be " + std::to_string(size) + "x" + std::to_string(size));
  }
  const Tensor query = to_normalized_tensor(query_rgb);
  std::vector<RawSupport> raws;
  if (pattern == PatternTag::text) {
    RawSupport raw;
    raw.class_name = o.class_name;
    raws.push_back(raw);
  } else {
    if (o.supports.empty()) throw ValidationError("at least one --support image is required");
    if (needs_mask(pattern) && o.support_masks.size() != o.supports.size()) {
      throw ValidationError("pass one --support-mask per --support image");
    }
    for (std::size_t i = 0; i < o.supports.size(); ++i) {
      RawSupport raw;
      const RgbImage rgb = read_ppm(o.supports[i]);
      if (rgb.height != size || rgb.width != size) throw ValidationError(o.supports[i] + " has the wrong size");
      raw.image = to_normalized_tensor(rgb);
      if (needs_mask(pattern)) raw.mask = read_mask_pgm(o.support_masks[i]);
      if (!o.box.empty()) raw.box = parse_box(o.box);
      if (!o.class_name.empty()) raw.class_name = o.class_name;
      raws.push_back(std::move(raw));
    }
  }
  ensure_fresh_file(o.output, o.force);
  if (!o.overlay.empty()) ensure_fresh_file(o.overlay, o.force);

  const FeaturePyramid q = encoder->encode_image(query);
  std::vector<BinaryMask> shots;
  for (const RawSupport& raw : raws) {
    const GuidanceSet g = normalize_guidance(pattern, raw, query, *encoder);
    for (const auto& w : g.warnings) err << "warning: " << w << '\n';
    const FeaturePyramid s = encoder->encode_image(g.support_image);
    const FeaturePyramid obj = encoder->encode_image(apply_mask(g.support_image, g.support_mask));
    ag::NoGradGuard no_grad;
    shots.push_back(predict_mask(ckpt.model.forward({&q, &s, &obj, g.guidance_embedding.vector}).value()));
  }
  const BinaryMask mask = kshot_vote(shots);
  write_mask_pgm(o.output, mask);
  if (!o.overlay.empty()) {
    RgbImage overlay = query_rgb;
    for (int y = 0; y < overlay.height; ++y) {
      for (int x = 0; x < overlay.width; ++x) {
        if (!mask(y, x)) continue;
        auto* px = overlay.pixel(y, x);
        px[0] = static_cast<std::uint8_t>((px[0] + 255) / 2);
        px[1] = static_cast<std::uint8_t>(px[1] / 2);
        px[2] = static_cast<std::uint8_t>(px[2] / 2);
      }
    }
    write_ppm(o.overlay, overlay);
  }
  out << "foreground pixels " << mask.count() << " of " << mask.size() << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Universal few-shot segmentation toolkit"};
  app.set_config("--config", "", "Flat key=value file; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1, 1);

  app.add_option("--seed", o.seed, "Seed for every random choice");
  app.add_option("--fold", o.fold, "Held-out fold index");
  app.add_option("--folds", o.n_folds, "Number of folds");
  app.add_option("--pattern", o.pattern, "Guidance pattern (eval also accepts 'all')");
  app.add_option("--k", o.k, "Shots per episode");
  app.add_option("--output", o.output, "Output directory or file");
  app.add_flag("--force", o.force, "Overwrite existing outputs");
  app.add_option("--encoder", o.encoder, "stub or adapter:<archive path>");
  app.add_option("--n-classes", o.n_classes, "synth: number of classes");
  app.add_option("--images-per-class", o.images_per_class, "synth: images per class");
  app.add_option("--image-size", o.image_size, "synth: image side length");
  app.add_option("--manifest", o.manifest, "Dataset manifest");
  app.add_option("--group", o.group, "train: image-only, mask-group or class-aware-group");
  app.add_option("--steps", o.steps, "train: optimizer steps");
  app.add_option("--batch-size", o.batch_size, "train: episodes per step");
  app.add_option("--lr", o.lr, "train: learning rate");
  app.add_option("--weight-decay", o.weight_decay, "train: decoupled weight decay");
  app.add_option("--checkpoint-every", o.checkpoint_every, "train: checkpoint cadence in steps (0 = final only)");
  app.add_option("--val-episodes", o.val_episodes, "train: base-class validation episodes per checkpoint");
  app.add_option("--log-every", o.log_every, "train: progress line cadence");
  app.add_option("--checkpoint", o.checkpoint, "eval/predict: model checkpoint");
  app.add_option("--predictor", o.predictor, "eval: model or oracle");
  app.add_option("--episodes", o.episodes, "eval: episodes per pattern");
  app.add_option("--query", o.query, "predict: query image (PPM)");
  app.add_option("--support", o.supports, "predict: support image (PPM), repeat for K shots");
  app.add_option("--support-mask", o.support_masks, "predict: support mask (PGM), one per support");
  app.add_option("--box", o.box, "predict: support box x_min,y_min,x_max,y_max");
  app.add_option("--class-name", o.class_name, "predict: class text");
  app.add_option("--overlay", o.overlay, "predict: optional overlay image (PPM)");

  auto* synth = app.add_subcommand("synth", "Render the synthetic shapes dataset")->fallthrough();
  auto* train_cmd = app.add_subcommand("train", "Train one pattern group on the base classes of a fold")->fallthrough();
  auto* eval = app.add_subcommand("eval", "Evaluate on the novel classes of a fold")->fallthrough();
  auto* predict = app.add_subcommand("predict", "Segment one query image")->fallthrough();
  auto* patterns = app.add_subcommand("patterns", "List the seven guidance patterns")->fallthrough();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kValidationFailure;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsageError;
  }

  const bool encoder_flag = app.count("--encoder") > 0;
  try {
    if (*patterns) return cmd_patterns(out);
    if (*synth) return cmd_synth(o, out);
    if (*train_cmd) return cmd_train(o, out);
    if (*eval) return cmd_eval(o, encoder_flag, out, err);
    if (*predict) return cmd_predict(o, encoder_flag, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kValidationFailure;
  }
  return kUsageError;
}

}  // namespace unifss::cli
