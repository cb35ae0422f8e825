#include "unifss/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "unifss/errors.hpp"

namespace unifss {
namespace {

constexpr char kMagic[8] = {'U', 'F', 'S', 'S', 'A', 'R', 'C', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

std::uint64_t get_u64(const unsigned char* bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

const Tensor& TensorArchive::get(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw IoError("archive has no tensor named '" + name + "'");
}

bool TensorArchive::contains(const std::string& name) const {
  for (const auto& entry : tensors) {
    if (entry.first == name) return true;
  }
  return false;
}

void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  nlohmann::json manifest;
  manifest["meta"] = archive.meta;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    const std::uint64_t bytes = static_cast<std::uint64_t>(t.numel()) * 8;
    manifest["tensors"].push_back(
        {{"name", name}, {"dtype", "f64"}, {"shape", t.shape()}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kMagic, 8);
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& entry : archive.tensors) {
    for (double v : entry.second.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

TensorArchive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (raw.size() < 16 || std::memcmp(raw.data(), kMagic, 8) != 0) {
    throw IoError(path.string() + " is not a tensor archive");
  }
  const std::uint64_t manifest_len = get_u64(raw.data() + 8);
  if (16 + manifest_len > raw.size()) throw IoError(path.string() + ": truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(raw.begin() + 16, raw.begin() + 16 + static_cast<std::ptrdiff_t>(manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad manifest: " + e.what());
  }
  const std::size_t payload = 16 + manifest_len;

  TensorArchive archive;
  try {
    archive.meta = manifest.at("meta").get<std::map<std::string, std::string>>();
    for (const auto& entry : manifest.at("tensors")) {
      if (entry.at("dtype") != "f64") throw IoError(path.string() + ": unsupported dtype " + entry.at("dtype").dump());
      Shape shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto bytes = entry.at("bytes").get<std::uint64_t>();
      if (bytes != static_cast<std::uint64_t>(numel(shape)) * 8 || payload + offset + bytes > raw.size()) {
        throw IoError(path.string() + ": tensor '" + entry.at("name").get<std::string>() + "' out of bounds");
      }
      std::vector<double> data(static_cast<std::size_t>(bytes / 8));
      for (std::size_t i = 0; i < data.size(); ++i) {
        data[i] = std::bit_cast<double>(get_u64(raw.data() + payload + offset + 8 * i));
      }
      archive.tensors.emplace_back(entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad manifest: " + e.what());
  }
  return archive;
}

}  // namespace unifss
