#include "unifss/image.hpp"

#include <array>
#include <cctype>
#include <fstream>
#include <numeric>
#include <string>

#include "unifss/errors.hpp"

namespace unifss {
namespace {

constexpr std::array<double, 3> kMean{0.48145466, 0.4578275, 0.40821073};
constexpr std::array<double, 3> kStd{0.26862954, 0.26130258, 0.27577711};

void write_pnm(const std::filesystem::path& path, const char* magic, int w, int h, const std::uint8_t* data,
               std::size_t bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << magic << '\n' << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw IoError("failed writing " + path.string());
}

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

std::vector<std::uint8_t> read_pnm(const std::filesystem::path& path, const std::string& magic, int channels,
                                   int& w, int& h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  if (next_token(in) != magic) throw IoError(path.string() + ": expected " + magic + " raster");
  try {
    w = std::stoi(next_token(in));
    h = std::stoi(next_token(in));
    if (std::stoi(next_token(in)) != 255) throw IoError(path.string() + ": only 8-bit rasters are supported");
  } catch (const std::logic_error&) {
    throw IoError(path.string() + ": malformed raster header");
  }
  if (w <= 0 || h <= 0) throw IoError(path.string() + ": empty raster");
  std::vector<std::uint8_t> data(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (in.gcount() != static_cast<std::streamsize>(data.size())) throw IoError(path.string() + ": truncated raster");
  return data;
}

}  // namespace

BinaryMask::BinaryMask(int height, int width, std::uint8_t fill)
    : height_(height), width_(width), bits_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {
  if (height < 0 || width < 0) throw ShapeError("negative mask dimensions");
}

std::int64_t BinaryMask::count() const noexcept {
  return std::accumulate(bits_.begin(), bits_.end(), std::int64_t{0});
}

BinaryMask resize_nearest(const BinaryMask& mask, int height, int width) {
  BinaryMask out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = static_cast<int>(static_cast<std::int64_t>(y) * mask.height() / height);
    for (int x = 0; x < width; ++x) {
      const int sx = static_cast<int>(static_cast<std::int64_t>(x) * mask.width() / width);
      out.set(y, x, mask(sy, sx) != 0);
    }
  }
  return out;
}

Tensor to_normalized_tensor(const RgbImage& image) {
  const std::int64_t h = image.height, w = image.width;
  Tensor t(Shape{3, h, w});
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const double v = image.pixel(static_cast<int>(y), static_cast<int>(x))[c] / 255.0;
        t[(c * h + y) * w + x] = (v - kMean[static_cast<std::size_t>(c)]) / kStd[static_cast<std::size_t>(c)];
      }
    }
  }
  return t;
}

Tensor apply_mask(const Tensor& image, const BinaryMask& mask) {
  if (image.rank() != 3 || image.dim(1) != mask.height() || image.dim(2) != mask.width()) {
    throw ShapeError("apply_mask: image " + to_string(image.shape()) + " vs mask " + std::to_string(mask.height()) +
                     "x" + std::to_string(mask.width()));
  }
  Tensor out = image;
  const std::int64_t plane = image.dim(1) * image.dim(2);
  for (std::int64_t c = 0; c < image.dim(0); ++c) {
    for (std::int64_t i = 0; i < plane; ++i) {
      if (!mask.bits()[static_cast<std::size_t>(i)]) out[c * plane + i] = 0.0;
    }
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  write_pnm(path, "P6", image.width, image.height, image.rgb.data(), image.rgb.size());
}

RgbImage read_ppm(const std::filesystem::path& path) {
  RgbImage img;
  img.rgb = read_pnm(path, "P6", 3, img.width, img.height);
  return img;
}

void write_mask_pgm(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> bytes(mask.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.bits()[i] ? 255 : 0;
  write_pnm(path, "P5", mask.width(), mask.height(), bytes.data(), bytes.size());
}

BinaryMask read_mask_pgm(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto bytes = read_pnm(path, "P5", 1, w, h);
  BinaryMask mask(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) mask.bits()[i] = bytes[i] >= 128 ? 1 : 0;
  return mask;
}

}  // namespace unifss
