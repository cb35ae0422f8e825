#include "unifss/training.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "unifss/errors.hpp"
#include "unifss/hashing.hpp"

namespace unifss {
namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_logits(const Tensor& logits, const BinaryMask& gt) {
  if (logits.rank() != 3 || logits.dim(0) != 2) throw ShapeError("loss expects [2 x H x W] logits");
  if (logits.dim(1) != gt.height() || logits.dim(2) != gt.width()) {
    throw ShapeError("logits " + to_string(logits.shape()) + " do not match the ground-truth mask");
  }
  if (!logits.all_finite()) throw ValidationError("logits contain NaN or infinite values");
}

double ratio(const IouCounter& c) { return static_cast<double>(c.intersection) / static_cast<double>(c.union_); }

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// Evaluation episodes draw from their own stream so they never coincide with training seeds.
constexpr std::uint64_t kEvalStream = 0x6576616cull;

}  // namespace

// ---- loss ----

LossTerms loss_terms(const Tensor& logits, const BinaryMask& gt) {
  check_logits(logits, gt);
  const std::int64_t n = logits.dim(1) * logits.dim(2);
  double ce = 0.0, inter = 0.0, psum = 0.0, gsum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = logits[n + i] - logits[i];
    const double g = gt.bits()[static_cast<std::size_t>(i)];
    ce += g > 0 ? softplus(-d) : softplus(d);
    const double p = sigmoid(d);
    inter += p * g;
    psum += p;
    gsum += g;
  }
  LossTerms t;
  t.cross_entropy = ce / static_cast<double>(n);
  t.dice = 1.0 - (2.0 * inter + kDiceSmoothing) / (psum + gsum + kDiceSmoothing);
  return t;
}

ag::Var segmentation_loss(const ag::Var& logits, const BinaryMask& gt) {
  const LossTerms terms = loss_terms(logits.value(), gt);
  return ag::custom_op(Tensor::scalar(terms.total()), {logits}, [logits, gt](ag::Node& node) {
    const Tensor& x = logits.value();
    const std::int64_t n = x.dim(1) * x.dim(2);
    std::vector<double> p(static_cast<std::size_t>(n));
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double g = gt.bits()[static_cast<std::size_t>(i)];
      p[static_cast<std::size_t>(i)] = sigmoid(x[n + i] - x[i]);
      inter += p[static_cast<std::size_t>(i)] * g;
      psum += p[static_cast<std::size_t>(i)];
      gsum += g;
    }
    const double denom = psum + gsum + kDiceSmoothing;
    const double num = 2.0 * inter + kDiceSmoothing;
    const double upstream = node.grad[0];
    Tensor dx(x.shape());
    for (std::int64_t i = 0; i < n; ++i) {
      const double pi = p[static_cast<std::size_t>(i)];
      const double g = gt.bits()[static_cast<std::size_t>(i)];
      const double d_ce = (pi - g) / static_cast<double>(n);
      const double d_dice_dp = -(2.0 * g * denom - num) / (denom * denom);
      const double dd = upstream * (d_ce + d_dice_dp * pi * (1.0 - pi));
      dx[n + i] = dd;
      dx[i] = -dd;
    }
    ag::accumulate_grad(logits, dx);
  });
}

// ---- metrics ----

void FoldMetrics::add(int class_id, const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) throw ShapeError("prediction and ground truth differ in size");
  IouCounter fg, bg;
  const auto pb = pred.bits();
  const auto gb = gt.bits();
  for (std::size_t i = 0; i < pb.size(); ++i) {
    const bool p = pb[i] != 0, g = gb[i] != 0;
    fg.intersection += p && g;
    fg.union_ += p || g;
    bg.intersection += !p && !g;
    bg.union_ += !p || !g;
  }
  auto& c = per_class_[class_id];
  c.intersection += fg.intersection;
  c.union_ += fg.union_;
  fg_.intersection += fg.intersection;
  fg_.union_ += fg.union_;
  bg_.intersection += bg.intersection;
  bg_.union_ += bg.union_;
}

void FoldMetrics::merge(const FoldMetrics& other) {
  for (const auto& [id, c] : other.per_class_) {
    auto& mine = per_class_[id];
    mine.intersection += c.intersection;
    mine.union_ += c.union_;
  }
  fg_.intersection += other.fg_.intersection;
  fg_.union_ += other.fg_.union_;
  bg_.intersection += other.bg_.intersection;
  bg_.union_ += other.bg_.union_;
}

FoldMetrics FoldMetrics::merged(FoldMetrics a, const FoldMetrics& b) {
  a.merge(b);
  return a;
}

std::map<int, double> FoldMetrics::class_iou() const {
  std::map<int, double> out;
  for (const auto& [id, c] : per_class_) {
    if (c.union_ > 0) out[id] = ratio(c);
  }
  return out;
}

std::vector<int> FoldMetrics::excluded_classes() const {
  std::vector<int> out;
  for (const auto& [id, c] : per_class_) {
    if (c.union_ == 0) out.push_back(id);
  }
  return out;
}

double FoldMetrics::miou() const {
  const auto ious = class_iou();
  if (ious.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [id, v] : ious) s += v;
  return s / static_cast<double>(ious.size());
}

double FoldMetrics::fbiou() const {
  double s = 0.0;
  int terms = 0;
  for (const IouCounter* c : {&fg_, &bg_}) {
    if (c->union_ > 0) {
      s += ratio(*c);
      ++terms;
    }
  }
  return terms ? s / terms : 0.0;
}

// ---- optimizer ----

AdamW::AdamW(ParameterList params, Options options) : params_(std::move(params)), opt_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

void AdamW::zero_grad() { zero_grads(params_); }

void AdamW::step(double grad_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ag::Var var = params_[k].var;
    const Tensor& grad = var.grad();
    Tensor& w = var.mutable_value();
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::int64_t i = 0; i < w.numel(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i] * grad_scale;
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt_.eps) + opt_.weight_decay * w[i];
      w[i] -= opt_.learning_rate * update;
    }
  }
}

// ---- data access ----

EpisodeData::EpisodeData(const DatasetManifest& manifest, const Encoder& encoder, std::int64_t image_size)
    : manifest_(manifest), encoder_(encoder), image_size_(image_size) {}

EpisodeData::Entry& EpisodeData::entry(std::size_t record) {
  auto it = cache_.find(record);
  if (it != cache_.end()) return it->second;
  if (record >= manifest_.records.size()) throw ContractError("record index out of range");
  const RgbImage rgb = read_ppm(manifest_.image_file(record));
  BinaryMask mask = read_mask_pgm(manifest_.mask_file(record));
  if (rgb.height != image_size_ || rgb.width != image_size_) {
    throw ValidationError(manifest_.records[record].image_path + " is " + std::to_string(rgb.height) + "x" +
                          std::to_string(rgb.width) + ", expected " + std::to_string(image_size_) + "x" +
                          std::to_string(image_size_));
  }
  if (mask.height() != rgb.height || mask.width() != rgb.width) {
    throw ValidationError(manifest_.records[record].mask_path + " does not match its image size");
  }
  Entry e;
  e.image = to_normalized_tensor(rgb);
  e.mask = std::move(mask);
  return cache_.emplace(record, std::move(e)).first->second;
}

const Tensor& EpisodeData::image(std::size_t record) { return entry(record).image; }
const BinaryMask& EpisodeData::mask(std::size_t record) { return entry(record).mask; }

const FeaturePyramid& EpisodeData::pyramid(std::size_t record) {
  Entry& e = entry(record);
  if (!e.pyramid) e.pyramid = std::make_unique<FeaturePyramid>(encoder_.encode_image(e.image));
  return *e.pyramid;
}

const FeaturePyramid& EpisodeData::object_pyramid(std::size_t record, PatternTag pattern) {
  Entry& e = entry(record);
  if (needs_mask(pattern)) {
    if (!e.masked) e.masked = std::make_unique<FeaturePyramid>(encoder_.encode_image(apply_mask(e.image, e.mask)));
    return *e.masked;
  }
  if (needs_box(pattern)) {
    if (!e.boxed) {
      const BinaryMask box = box_to_mask(manifest_.records[record].box, e.mask.height(), e.mask.width());
      e.boxed = std::make_unique<FeaturePyramid>(encoder_.encode_image(apply_mask(e.image, box)));
    }
    return *e.boxed;
  }
  return pyramid(record);
}

RawSupport EpisodeData::raw_support(std::size_t record) {
  Entry& e = entry(record);
  RawSupport raw;
  raw.image = e.image;
  raw.mask = e.mask;
  raw.box = manifest_.records[record].box;
  raw.class_name = manifest_.records[record].class_name;
  return raw;
}

PreparedPair prepare_pair(EpisodeData& data, const Episode& ep, std::size_t shot) {
  if (shot >= ep.supports.size()) throw ContractError("support index out of range");
  PreparedPair out;
  const Tensor& query_image = data.image(ep.query);
  out.features.query = &data.pyramid(ep.query);
  if (ep.pattern == PatternTag::text) {
    RawSupport raw;
    raw.class_name = data.manifest().records[ep.supports[shot]].class_name;
    out.guidance = normalize_guidance(ep.pattern, raw, query_image, data.encoder());
    out.features.support = out.features.query;
    out.features.object = out.features.query;
  } else {
    const std::size_t s = ep.supports[shot];
    out.features.support = &data.pyramid(s);
    out.features.object = &data.object_pyramid(s, ep.pattern);
    out.guidance = normalize_guidance(ep.pattern, data.raw_support(s), query_image, data.encoder(), out.features.support);
  }
  out.features.guidance = out.guidance.guidance_embedding.vector;
  return out;
}

// ---- predictors ----

BinaryMask ModelPredictor::predict(EpisodeData& data, const Episode& ep, std::size_t shot) {
  ag::NoGradGuard no_grad;
  const PreparedPair pair = prepare_pair(data, ep, shot);
  return predict_mask(model_.forward(pair.features).value());
}

BinaryMask OraclePredictor::predict(EpisodeData& data, const Episode& ep, std::size_t) { return data.mask(ep.query); }

// ---- training ----

Episode training_episode(const DatasetManifest& manifest, const TrainConfig& cfg, const std::vector<int>& base_classes,
                         int fold, int step, int slot) {
  return sample_episode(manifest, base_classes, cfg.shots,
                        derive_seed(cfg.seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(slot)),
                        training_pattern(cfg.pattern_group), fold);
}

TrainResult train(UniFssModel& model, EpisodeData& data, const TrainConfig& cfg, const std::vector<int>& base_classes,
                  int fold, const StepCallback& on_step) {
  if (!cfg.encoder_frozen) throw ValidationError("only frozen-encoder training is supported");
  if (cfg.batch_size < 1 || cfg.max_steps < 0 || cfg.shots < 1) throw ValidationError("invalid training schedule");
  if (data.image_size() != model.geometry().image_h) throw ValidationError("dataset and model image sizes differ");
  AdamW opt(model.parameters(), {.learning_rate = cfg.learning_rate, .weight_decay = cfg.weight_decay});

  TrainResult result;
  for (int i = 0; i < cfg.episode_pool; ++i) {
    result.pool.push_back(training_episode(data.manifest(), cfg, base_classes, fold, 0, i));
  }
  const int per_step = cfg.episode_pool > 0 ? cfg.episode_pool : cfg.batch_size;
  for (int step = 0; step < cfg.max_steps; ++step) {
    opt.zero_grad();
    double loss_sum = 0.0;
    int count = 0;
    for (int slot = 0; slot < per_step; ++slot) {
      const Episode ep = cfg.episode_pool > 0 ? result.pool[static_cast<std::size_t>(slot)]
                                              : training_episode(data.manifest(), cfg, base_classes, fold, step, slot);
      for (std::size_t shot = 0; shot < ep.supports.size(); ++shot) {
        const PreparedPair pair = prepare_pair(data, ep, shot);
        const ag::Var logits = model.forward(pair.features);
        if (!logits.value().all_finite()) {
          throw DivergenceError("non-finite logits at step " + std::to_string(step) + " (class " +
                                std::to_string(ep.class_id) + ", query record " + std::to_string(ep.query) + ")");
        }
        const ag::Var loss = segmentation_loss(logits, data.mask(ep.query));
        loss.backward();
        loss_sum += loss.value()[0];
        ++count;
      }
    }
    const double mean = loss_sum / count;
    if (!std::isfinite(mean)) throw DivergenceError("loss is not finite at step " + std::to_string(step));
    opt.step(1.0 / count);
    result.history.push_back({step, mean});
    result.steps = step + 1;
    if (on_step) on_step(result.history.back(), model);
  }
  return result;
}

// ---- evaluation ----

EvalResult evaluate_episodes(Predictor& predictor, EpisodeData& data, const std::vector<Episode>& episodes) {
  EvalResult r;
  for (const Episode& ep : episodes) {
    std::vector<BinaryMask> shots;
    for (std::size_t s = 0; s < ep.supports.size(); ++s) shots.push_back(predictor.predict(data, ep, s));
    r.metrics.add(ep.class_id, kshot_vote(shots), data.mask(ep.query));
  }
  for (int id : r.metrics.excluded_classes()) {
    r.warnings.push_back("class " + std::to_string(id) + " has zero union and is excluded from mIoU");
  }
  return r;
}

EvalResult evaluate(Predictor& predictor, EpisodeData& data, const std::vector<int>& classes, const EvalConfig& cfg) {
  if (cfg.episodes < 1) throw ValidationError("evaluation needs at least one episode");
  std::vector<Episode> episodes;
  episodes.reserve(static_cast<std::size_t>(cfg.episodes));
  for (int i = 0; i < cfg.episodes; ++i) {
    episodes.push_back(sample_episode(data.manifest(), classes, cfg.shots,
                                      derive_seed(cfg.seed ^ kEvalStream, static_cast<std::uint64_t>(cfg.fold),
                                                  static_cast<std::uint64_t>(i)),
                                      cfg.pattern, cfg.fold));
  }
  return evaluate_episodes(predictor, data, episodes);
}

void write_metrics_csv(std::ostream& out, int fold, PatternTag pattern, int k, const FoldMetrics& metrics, bool header) {
  if (header) out << "fold,pattern,K,class_id,iou\n";
  const auto prefix = [&] {
    out << fold << ',' << pattern_name(pattern) << ',' << k << ',';
  };
  out << std::fixed << std::setprecision(4);
  for (const auto& [id, iou] : metrics.class_iou()) {
    prefix();
    out << id << ',' << iou << '\n';
  }
  prefix();
  out << "miou," << metrics.miou() << '\n';
  prefix();
  out << "fbiou," << metrics.fbiou() << '\n';
  out << std::defaultfloat;
}

// ---- checkpoints ----

std::map<std::string, std::string> config_meta(const TrainConfig& c) {
  return {
      {"train.learning_rate", fmt_double(c.learning_rate)},
      {"train.weight_decay", fmt_double(c.weight_decay)},
      {"train.batch_size", std::to_string(c.batch_size)},
      {"train.image_size", std::to_string(c.image_size)},
      {"train.max_steps", std::to_string(c.max_steps)},
      {"train.seed", std::to_string(c.seed)},
      {"train.pattern_group", std::string(group_name(c.pattern_group))},
      {"train.n_folds", std::to_string(c.n_folds)},
      {"train.shots", std::to_string(c.shots)},
      {"train.episode_pool", std::to_string(c.episode_pool)},
      {"train.encoder_frozen", c.encoder_frozen ? "true" : "false"},
  };
}

void save_checkpoint(const std::filesystem::path& path, const UniFssModel& model,
                     const std::map<std::string, std::string>& meta) {
  write_archive(path, model.to_archive(meta));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const TensorArchive archive = read_archive(path);
  return {UniFssModel::from_archive(archive), archive.meta};
}

}  // namespace unifss
