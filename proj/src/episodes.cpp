#include "unifss/episodes.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "unifss/errors.hpp"
#include "unifss/hashing.hpp"
#include "unifss/parameters.hpp"

namespace unifss {
namespace {

constexpr std::string_view kHeader = "# unifss-manifest dataset=";

std::filesystem::path resolve(const std::filesystem::path& root, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : root / path;
}

enum class Shape2D { circle, square, triangle, diamond, cross };
enum class Texture { solid, stripes, checker };

constexpr std::array<const char*, 5> kShapeNames = {"circle", "square", "triangle", "diamond", "cross"};
constexpr std::array<const char*, 6> kColourNames = {"red", "yellow", "green", "cyan", "blue", "magenta"};
constexpr std::array<const char*, 3> kTextureNames = {"solid", "striped", "checkered"};

bool inside(Shape2D s, double u, double v) {
  switch (s) {
    case Shape2D::circle: return u * u + v * v <= 1.0;
    case Shape2D::square: return std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
    case Shape2D::triangle: return v <= 0.8 && std::abs(u) <= (v + 1.0) / 1.8;
    case Shape2D::diamond: return std::abs(u) + std::abs(v) <= 1.0;
    case Shape2D::cross:
      return (std::abs(u) <= 0.35 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.35 && std::abs(u) <= 1.0);
  }
  return false;
}

double texture_gain(Texture t, int y, int x) {
  switch (t) {
    case Texture::solid: return 1.0;
    case Texture::stripes: return ((x + y) / 3) % 2 == 0 ? 1.0 : 0.55;
    case Texture::checker: return (x / 4 + y / 4) % 2 == 0 ? 1.0 : 0.55;
  }
  return 1.0;
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0) / 60.0;
  const double c = v * s, x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0)), m = v - c;
  std::array<double, 3> rgb{};
  switch (static_cast<int>(h)) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  for (auto& ch : rgb) ch = (ch + m) * 255.0;
  return rgb;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

struct Instance {
  Shape2D shape;
  Texture texture;
  std::array<double, 3> colour;
  double cy, cx, radius;
};

void paint(RgbImage& img, BinaryMask* mask, const Instance& in) {
  const int y0 = std::max(0, static_cast<int>(std::floor(in.cy - in.radius - 1)));
  const int y1 = std::min(img.height, static_cast<int>(std::ceil(in.cy + in.radius + 1)));
  const int x0 = std::max(0, static_cast<int>(std::floor(in.cx - in.radius - 1)));
  const int x1 = std::min(img.width, static_cast<int>(std::ceil(in.cx + in.radius + 1)));
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const double u = (x + 0.5 - in.cx) / in.radius, v = (y + 0.5 - in.cy) / in.radius;
      if (!inside(in.shape, u, v)) continue;
      const double g = texture_gain(in.texture, y, x);
      auto* px = img.pixel(y, x);
      for (int c = 0; c < 3; ++c) px[c] = to_byte(in.colour[static_cast<std::size_t>(c)] * g);
      if (mask) mask->set(y, x, true);
    }
  }
}

}  // namespace

std::vector<int> DatasetManifest::class_ids() const {
  std::set<int> ids;
  for (const auto& r : records) ids.insert(r.class_id);
  return {ids.begin(), ids.end()};
}

std::string DatasetManifest::class_name(int class_id) const {
  for (const auto& r : records) {
    if (r.class_id == class_id) return r.class_name;
  }
  throw ValidationError("class " + std::to_string(class_id) + " is not in the manifest");
}

std::vector<std::size_t> DatasetManifest::records_of(int class_id) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].class_id == class_id) out.push_back(i);
  }
  return out;
}

std::filesystem::path DatasetManifest::image_file(std::size_t i) const { return resolve(root, records.at(i).image_path); }
std::filesystem::path DatasetManifest::mask_file(std::size_t i) const { return resolve(root, records.at(i).mask_path); }

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  if (!m.name.empty()) out << kHeader << m.name << '\n';
  for (const auto& r : m.records) {
    for (const std::string* field : {&r.image_path, &r.mask_path, &r.class_name}) {
      if (field->find_first_of("\t\n") != std::string::npos) throw ValidationError("manifest fields may not hold tabs or newlines");
    }
    out << r.image_path << '\t' << r.mask_path << '\t' << r.class_id << '\t' << r.class_name << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (line.rfind(kHeader, 0) == 0) m.name = line.substr(kHeader.size());
      continue;
    }
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, '\t')) fields.push_back(f);
    if (fields.size() != 4) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected 4 tab-separated fields");
    }
    ManifestRecord r;
    r.image_path = fields[0];
    r.mask_path = fields[1];
    try {
      std::size_t used = 0;
      r.class_id = std::stoi(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": bad class id '" + fields[2] + "'");
    }
    r.class_name = fields[3];
    m.records.push_back(std::move(r));
  }
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const BinaryMask mask = read_mask_pgm(m.mask_file(i));
    try {
      m.records[i].box = tight_box(mask);
    } catch (const DegenerateMaskError&) {
      throw ValidationError("mask " + m.records[i].mask_path + " has no foreground");
    }
  }
  return m;
}

FoldSplit split_folds(const std::vector<int>& class_ids, int fold, int n_folds) {
  if (n_folds < 1 || fold < 0 || fold >= n_folds) {
    throw ValidationError("fold " + std::to_string(fold) + " is outside [0, " + std::to_string(n_folds) + ")");
  }
  if (class_ids.empty() || class_ids.size() % static_cast<std::size_t>(n_folds) != 0) {
    throw ValidationError(std::to_string(class_ids.size()) + " classes cannot be split evenly into " +
                          std::to_string(n_folds) + " folds");
  }
  const std::size_t m = class_ids.size() / static_cast<std::size_t>(n_folds);
  const std::size_t lo = static_cast<std::size_t>(fold) * m, hi = lo + m;
  FoldSplit s;
  for (std::size_t i = 0; i < class_ids.size(); ++i) (i >= lo && i < hi ? s.novel : s.base).push_back(class_ids[i]);
  return s;
}

Episode sample_episode(const DatasetManifest& manifest, const std::vector<int>& classes, int k, std::uint64_t seed,
                       PatternTag pattern, int fold) {
  if (k < 1) throw ValidationError("K must be at least 1");
  if (classes.empty()) throw ValidationError("no classes to sample from");
  std::vector<std::vector<std::size_t>> pools;
  for (int c : classes) {
    pools.push_back(manifest.records_of(c));
    if (pools.back().size() < static_cast<std::size_t>(k) + 1) {
      throw SamplingError("class " + std::to_string(c) + " has " + std::to_string(pools.back().size()) +
                              " records, fewer than K + 1 = " + std::to_string(k + 1),
                          c);
    }
  }
  Rng rng(seed);
  const std::size_t ci = std::uniform_int_distribution<std::size_t>(0, classes.size() - 1)(rng);
  auto& pool = pools[ci];
  for (std::size_t i = 0; i <= static_cast<std::size_t>(k); ++i) {
    std::swap(pool[i], pool[std::uniform_int_distribution<std::size_t>(i, pool.size() - 1)(rng)]);
  }
  Episode e;
  e.class_id = classes[ci];
  e.query = pool[0];
  e.supports.assign(pool.begin() + 1, pool.begin() + 1 + k);
  e.pattern = pattern;
  e.fold = fold;
  return e;
}

std::string synth_class_name(int c) {
  if (c < 0 || c >= kMaxSynthClasses) throw ValidationError("synthetic class ids run from 0 to 89");
  return std::string(kColourNames[static_cast<std::size_t>(c % 6)]) + "-" + kShapeNames[static_cast<std::size_t>(c % 5)] +
         "-" + kTextureNames[static_cast<std::size_t>((c / 30) % 3)];
}

SynthSample synth_render(const SynthConfig& cfg, int class_id, int index) {
  if (cfg.image_size <= 0 || cfg.image_size % 32 != 0) throw ValidationError("synthetic image size must be a multiple of 32");
  synth_class_name(class_id);
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(class_id), static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = cfg.image_size;
  const double size = n;

  SynthSample s;
  s.class_id = class_id;
  s.class_name = synth_class_name(class_id);
  s.image = RgbImage(n, n);
  s.mask = BinaryMask(n, n);

  const auto base = hsv_to_rgb(360.0 * unit(rng), 0.15 + 0.2 * unit(rng), 0.25 + 0.3 * unit(rng));
  std::normal_distribution<double> noise(0.0, 22.0);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      auto* px = s.image.pixel(y, x);
      for (int c = 0; c < 3; ++c) px[c] = to_byte(base[static_cast<std::size_t>(c)] + noise(rng));
    }
  }

  Instance target;
  target.shape = static_cast<Shape2D>(class_id % 5);
  target.texture = static_cast<Texture>((class_id / 30) % 3);
  target.colour = hsv_to_rgb(60.0 * (class_id % 6) + 16.0 * (unit(rng) - 0.5), 0.75 + 0.25 * unit(rng),
                             0.8 + 0.2 * unit(rng));
  target.radius = size * (0.16 + 0.1 * unit(rng));
  target.cy = target.radius + (size - 2 * target.radius) * unit(rng);
  target.cx = target.radius + (size - 2 * target.radius) * unit(rng);

  Instance clutter;
  clutter.shape = static_cast<Shape2D>(std::uniform_int_distribution<int>(0, 4)(rng));
  clutter.texture = static_cast<Texture>(std::uniform_int_distribution<int>(0, 2)(rng));
  clutter.colour = hsv_to_rgb(360.0 * unit(rng), 0.6 + 0.4 * unit(rng), 0.6 + 0.4 * unit(rng));
  clutter.radius = size * (0.16 + 0.1 * unit(rng));
  for (int attempt = 0; attempt < 32; ++attempt) {
    clutter.cy = clutter.radius + (size - 2 * clutter.radius) * unit(rng);
    clutter.cx = clutter.radius + (size - 2 * clutter.radius) * unit(rng);
    if (std::hypot(clutter.cy - target.cy, clutter.cx - target.cx) > 0.9 * (clutter.radius + target.radius)) break;
  }

  paint(s.image, nullptr, clutter);
  paint(s.image, &s.mask, target);
  return s;
}

DatasetManifest synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.n_classes < 1 || cfg.n_classes > kMaxSynthClasses) {
    throw ValidationError("n_classes must be between 1 and " + std::to_string(kMaxSynthClasses));
  }
  if (cfg.n_images_per_class < 1) throw ValidationError("n_images_per_class must be positive");
  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "masks");
  DatasetManifest m;
  m.name = cfg.name;
  m.root = out_dir;
  char stem[32];
  for (int c = 0; c < cfg.n_classes; ++c) {
    for (int i = 0; i < cfg.n_images_per_class; ++i) {
      const SynthSample s = synth_render(cfg, c, i);
      std::snprintf(stem, sizeof stem, "c%02d_%04d", c, i);
      ManifestRecord r;
      r.image_path = std::string("images/") + stem + ".ppm";
      r.mask_path = std::string("masks/") + stem + ".pgm";
      r.class_id = c;
      r.class_name = s.class_name;
      r.box = tight_box(s.mask);
      write_ppm(out_dir / r.image_path, s.image);
      write_mask_pgm(out_dir / r.mask_path, s.mask);
      m.records.push_back(std::move(r));
    }
  }
  write_manifest(out_dir / "manifest.tsv", m);
  return m;
}

}  // namespace unifss
