#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "unifss/tensor.hpp"

namespace unifss {

// 8-bit interleaved RGB raster.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;  // height * width * 3

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t* pixel(int y, int x) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* pixel(int y, int x) const {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, std::uint8_t fill = 0);

  static BinaryMask ones(int height, int width) { return BinaryMask(height, width, 1); }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return bits_.size(); }

  std::uint8_t operator()(int y, int x) const { return bits_[index(y, x)]; }
  void set(int y, int x, bool on) { bits_[index(y, x)] = on ? 1 : 0; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  std::span<std::uint8_t> bits() noexcept { return bits_; }

  std::int64_t count() const noexcept;
  bool all() const noexcept { return count() == static_cast<std::int64_t>(bits_.size()); }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * width_ + x; }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Nearest-neighbour resize; source index is floor(dst * src_extent / dst_extent).
BinaryMask resize_nearest(const BinaryMask& mask, int height, int width);

// Per-channel normalization used by the vision backbone. Returns [3 x H x W].
Tensor to_normalized_tensor(const RgbImage& image);

// Elementwise I * M on a normalized [3 x H x W] tensor.
Tensor apply_mask(const Tensor& image, const BinaryMask& mask);

// Binary PPM (P6) for images, binary PGM (P5, 0/255) for masks.
void write_ppm(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_ppm(const std::filesystem::path& path);
void write_mask_pgm(const std::filesystem::path& path, const BinaryMask& mask);
BinaryMask read_mask_pgm(const std::filesystem::path& path);

}  // namespace unifss
