#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "unifss/episodes.hpp"
#include "unifss/model.hpp"
#include "unifss/patterns.hpp"

namespace unifss {

// ---- loss ----

inline constexpr double kDiceSmoothing = 1.0;

struct LossTerms {
  double cross_entropy = 0.0;  // mean over pixels
  double dice = 0.0;           // 1 - (2 sum(p g) + eps) / (sum p + sum g + eps)
  double total() const { return cross_entropy + dice; }
};

// logits [2 x H x W] (background, foreground). Throws ValidationError on non-finite logits.
LossTerms loss_terms(const Tensor& logits, const BinaryMask& gt);
// Fused CE + Dice with an analytic backward.
ag::Var segmentation_loss(const ag::Var& logits, const BinaryMask& gt);

// ---- metrics ----

struct IouCounter {
  std::int64_t intersection = 0;
  std::int64_t union_ = 0;
  friend bool operator==(const IouCounter&, const IouCounter&) = default;
};

class FoldMetrics {
 public:
  void add(int class_id, const BinaryMask& prediction, const BinaryMask& gt);
  void merge(const FoldMetrics& other);
  static FoldMetrics merged(FoldMetrics a, const FoldMetrics& b);

  // Mean over classes with a non-zero union; classes with zero union are
  // skipped and reported by excluded_classes().
  double miou() const;
  // Mean of foreground and background IoU pooled over every added pair.
  double fbiou() const;
  std::map<int, double> class_iou() const;
  std::vector<int> excluded_classes() const;

  const std::map<int, IouCounter>& per_class() const { return per_class_; }
  const IouCounter& foreground() const { return fg_; }
  const IouCounter& background() const { return bg_; }
  friend bool operator==(const FoldMetrics&, const FoldMetrics&) = default;

 private:
  std::map<int, IouCounter> per_class_;
  IouCounter fg_;
  IouCounter bg_;
};

// ---- optimizer ----

// Adam with decoupled weight decay.
class AdamW {
 public:
  struct Options {
    double learning_rate = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };
  AdamW(ParameterList params, Options options);
  // Applies one update from the accumulated gradients, scaled by grad_scale.
  void step(double grad_scale = 1.0);
  void zero_grad();
  std::int64_t steps() const noexcept { return t_; }

 private:
  ParameterList params_;
  Options opt_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
};

// ---- data access ----

// Loads records lazily and caches normalized images, masks and encoder outputs.
// The encoder is frozen, so pyramids are computed once per (record, mask kind).
class EpisodeData {
 public:
  EpisodeData(const DatasetManifest& manifest, const Encoder& encoder, std::int64_t image_size);

  const DatasetManifest& manifest() const noexcept { return manifest_; }
  const Encoder& encoder() const noexcept { return encoder_; }
  std::int64_t image_size() const noexcept { return image_size_; }

  const Tensor& image(std::size_t record);
  const BinaryMask& mask(std::size_t record);
  const FeaturePyramid& pyramid(std::size_t record);
  // Pyramid of the record's image masked by the support mask the pattern implies.
  const FeaturePyramid& object_pyramid(std::size_t record, PatternTag pattern);
  RawSupport raw_support(std::size_t record);

 private:
  struct Entry {
    Tensor image;
    BinaryMask mask;
    std::unique_ptr<FeaturePyramid> pyramid;
    std::unique_ptr<FeaturePyramid> masked;  // by the gt mask
    std::unique_ptr<FeaturePyramid> boxed;   // by the tight box
  };
  Entry& entry(std::size_t record);

  const DatasetManifest& manifest_;
  const Encoder& encoder_;
  std::int64_t image_size_;
  std::map<std::size_t, Entry> cache_;
};

struct PreparedPair {
  GuidanceSet guidance;
  PairFeatures features;
};

// Normalizes support `shot` of the episode and gathers the cached pyramids.
PreparedPair prepare_pair(EpisodeData& data, const Episode& episode, std::size_t shot);

// ---- predictors ----

class Predictor {
 public:
  virtual ~Predictor() = default;
  // One-shot prediction of the query mask from support `shot`.
  virtual BinaryMask predict(EpisodeData& data, const Episode& episode, std::size_t shot) = 0;
};

class ModelPredictor final : public Predictor {
 public:
  explicit ModelPredictor(const UniFssModel& model) : model_(model) {}
  BinaryMask predict(EpisodeData& data, const Episode& episode, std::size_t shot) override;

 private:
  const UniFssModel& model_;
};

// Returns the query ground truth; used to validate the evaluation harness.
class OraclePredictor final : public Predictor {
 public:
  BinaryMask predict(EpisodeData& data, const Episode& episode, std::size_t shot) override;
};

// ---- training ----

struct TrainConfig {
  double learning_rate = 5e-4;
  double weight_decay = 0.01;
  int batch_size = 16;
  std::int64_t image_size = 400;
  int max_steps = 1000;
  std::uint64_t seed = 0;
  PatternGroup pattern_group = PatternGroup::class_aware_group;
  int n_folds = 4;
  int shots = 1;
  // When > 0, this many episodes are sampled once and every step trains on all of them.
  int episode_pool = 0;
  bool encoder_frozen = true;
};

struct StepRecord {
  int step = 0;
  double loss = 0.0;  // batch mean
};

struct TrainResult {
  std::vector<StepRecord> history;
  std::vector<Episode> pool;  // the fixed episodes when episode_pool > 0
  int steps = 0;
};

using StepCallback = std::function<void(const StepRecord&, const UniFssModel&)>;

// Draws training episodes only from `base_classes`. Throws DivergenceError when
// the loss stops being finite.
TrainResult train(UniFssModel& model, EpisodeData& data, const TrainConfig& config,
                  const std::vector<int>& base_classes, int fold, const StepCallback& on_step = {});

// Training episode for (step, slot); exposed so hygiene checks can enumerate them.
Episode training_episode(const DatasetManifest& manifest, const TrainConfig& config,
                         const std::vector<int>& base_classes, int fold, int step, int slot);

// ---- evaluation ----

struct EvalConfig {
  int episodes = 1000;
  int shots = 1;
  std::uint64_t seed = 0;
  PatternTag pattern = PatternTag::class_mask;
  int fold = 0;
};

struct EvalResult {
  FoldMetrics metrics;
  std::vector<std::string> warnings;
};

// K-shot episodes are predicted shot by shot and combined by kshot_vote.
EvalResult evaluate(Predictor& predictor, EpisodeData& data, const std::vector<int>& classes, const EvalConfig& config);
EvalResult evaluate_episodes(Predictor& predictor, EpisodeData& data, const std::vector<Episode>& episodes);

// Header `fold,pattern,K,class_id,iou`; one row per class, then `miou` and `fbiou` rows.
void write_metrics_csv(std::ostream& out, int fold, PatternTag pattern, int k, const FoldMetrics& metrics,
                       bool header = true);

// ---- checkpoints ----

struct Checkpoint {
  UniFssModel model;
  std::map<std::string, std::string> meta;
};

std::map<std::string, std::string> config_meta(const TrainConfig& config);
void save_checkpoint(const std::filesystem::path& path, const UniFssModel& model,
                     const std::map<std::string, std::string>& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace unifss
