#pragma once

// Flat binary tensor archive shared by encoder weights and model checkpoints.
//
// Layout (all integers little-endian):
//   bytes 0..7   magic "UFSSARC1"
//   bytes 8..15  u64 manifest length N
//   next N bytes UTF-8 JSON manifest:
//                {"meta": {string: string},
//                 "tensors": [{"name", "dtype": "f64", "shape": [...],
//                              "offset", "bytes"}]}
//   payload      tensors back to back, IEEE-754 f64 little-endian, row-major;
//                "offset" counts from the start of the payload.

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "unifss/tensor.hpp"

namespace unifss {

struct TensorArchive {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path);

}  // namespace unifss
