#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unifss/image.hpp"
#include "unifss/patterns.hpp"

namespace unifss {

struct ManifestRecord {
  std::string image_path;  // relative to the manifest directory unless absolute
  std::string mask_path;
  int class_id = 0;
  std::string class_name;
  Box box;  // tight hull of the mask, always recomputed on load
};

struct DatasetManifest {
  std::string name;
  std::filesystem::path root;  // directory that relative paths resolve against
  std::vector<ManifestRecord> records;

  std::vector<int> class_ids() const;  // sorted, unique
  std::string class_name(int class_id) const;
  std::vector<std::size_t> records_of(int class_id) const;
  std::filesystem::path image_file(std::size_t record) const;
  std::filesystem::path mask_file(std::size_t record) const;
};

// Tab-separated lines `image_path mask_path class_id class_name`, preceded by an
// optional `# unifss-manifest dataset=<name>` line. Other `#` lines are ignored.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
// Loads every mask to derive its box; throws IoError/ValidationError on bad input.
DatasetManifest read_manifest(const std::filesystem::path& path);

struct FoldSplit {
  std::vector<int> base;
  std::vector<int> novel;
};

// Novel classes are the contiguous block [fold * m, (fold + 1) * m) of class_ids.
FoldSplit split_folds(const std::vector<int>& class_ids, int fold, int n_folds);

struct Episode {
  std::size_t query = 0;               // record index
  std::vector<std::size_t> supports;  // K record indices
  int class_id = 0;
  PatternTag pattern = PatternTag::mask;
  int fold = 0;
};

// Uniform class, then K + 1 distinct records of it. Throws SamplingError naming
// the first class with fewer than K + 1 records.
Episode sample_episode(const DatasetManifest& manifest, const std::vector<int>& classes, int k, std::uint64_t seed,
                       PatternTag pattern, int fold = 0);

struct SynthConfig {
  std::uint64_t seed = 0;
  int n_classes = 20;
  int n_images_per_class = 12;
  int image_size = 64;
  std::string name = "synthetic-shapes";
};

struct SynthSample {
  RgbImage image;
  BinaryMask mask;
  int class_id = 0;
  std::string class_name;
};

inline constexpr int kMaxSynthClasses = 90;

// Class c is the triple (shape c mod 5, colour band c mod 6, texture (c / 30) mod 3).
std::string synth_class_name(int class_id);
// One image: seeded noise background, one unlabeled clutter blob of random
// appearance, then the class instance on top. The mask is the instance support.
SynthSample synth_render(const SynthConfig& config, int class_id, int index);
// Renders every sample into out_dir/{images,masks} and writes out_dir/manifest.tsv.
DatasetManifest synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace unifss
